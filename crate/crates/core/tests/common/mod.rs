//! Central finite-difference gradient checks shared by the test targets.
#![allow(dead_code)]

use aiig_core::nn::{DenseNet, GruNet, Head};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
// Gradients smaller than this are compared absolutely: their finite
// differences are dominated by rounding.
pub const FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn worst(params: &mut dyn FnMut(usize, f64) -> f64, original: &[f64], analytic: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..analytic.len() {
        let up = params(k, original[k] + H);
        let down = params(k, original[k] - H);
        params(k, original[k]);
        worst = worst.max(rel_err(analytic[k], (up - down) / (2.0 * H)));
    }
    worst
}

/// Largest relative error over all parameters of a dense net under a random
/// linear loss on its output.
pub fn dense_max_rel_err(sizes: &[usize], head: Head, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = DenseNet::new(sizes, head, &mut rng);
    let input = random_vec(sizes[0], &mut rng);
    let weights = random_vec(*sizes.last().unwrap(), &mut rng);
    let cache = net.forward(&input).unwrap();
    let mut grads = vec![0.0; net.params().len()];
    net.backward(&cache, &weights, &mut grads).unwrap();
    let original = net.params().to_vec();
    worst(
        &mut |k, v| {
            net.params_mut()[k] = v;
            net.predict(&input).iter().zip(&weights).map(|(o, w)| o * w).sum()
        },
        &original,
        &grads,
    )
}

/// Same for the GRU (12 inputs, 32 hidden) over a five-step sequence.
pub fn gru_max_rel_err(head: Head, output: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = GruNet::new(12, 32, output, head, &mut rng);
    let inputs: Vec<Vec<f64>> = (0..5).map(|_| random_vec(12, &mut rng)).collect();
    let weights: Vec<Vec<f64>> = (0..5).map(|_| random_vec(output, &mut rng)).collect();
    let cache = net.forward_sequence(&inputs).unwrap();
    let mut grads = vec![0.0; net.params().len()];
    net.backward_sequence(&cache, &weights, &mut grads).unwrap();
    let original = net.params().to_vec();
    worst(
        &mut |k, v| {
            net.params_mut()[k] = v;
            let fwd = net.forward_sequence(&inputs).unwrap();
            (0..inputs.len()).map(|t| fwd.output(t).iter().zip(&weights[t]).map(|(o, w)| o * w).sum::<f64>()).sum()
        },
        &original,
        &grads,
    )
}

/// Every architecture the learners build.
pub const DENSE_SHAPES: [(&[usize], Head, u64); 4] = [
    (&[7, 64, 64, 6], Head::Softmax, 1),
    (&[13, 64, 64, 1], Head::Linear, 2),
    (&[5, 64, 64, 4], Head::Softmax, 3),
    (&[9, 64, 64, 1], Head::Linear, 4),
];
