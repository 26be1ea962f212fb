//! Reverse-mode gradients against central finite differences (h = 1e-5) on
//! every network shape the learners use.

mod common;

use aiig_core::nn::{DenseNet, Head};
use common::{dense_max_rel_err, gru_max_rel_err, random_vec, DENSE_SHAPES, TOL};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check_dense(i: usize) {
    let (sizes, head, seed) = DENSE_SHAPES[i];
    let err = dense_max_rel_err(sizes, head, seed);
    assert!(err <= TOL, "{sizes:?}: relative error {err}");
}

#[test]
fn protagonist_actor_gradients() {
    check_dense(0);
}

#[test]
fn protagonist_critic_gradients() {
    check_dense(1);
}

#[test]
fn opponent_actor_and_critic_gradients() {
    check_dense(2);
    check_dense(3);
}

#[test]
fn dense_gradients_are_linear_in_the_output_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = DenseNet::new(&[7, 16, 16, 6], Head::Softmax, &mut rng);
    let cache = net.forward(&random_vec(7, &mut rng)).unwrap();
    for _ in 0..20 {
        let (a, b) = (random_vec(6, &mut rng), random_vec(6, &mut rng));
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let n = net.params().len();
        let (mut ga, mut gb, mut gs) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        net.backward(&cache, &a, &mut ga).unwrap();
        net.backward(&cache, &b, &mut gb).unwrap();
        net.backward(&cache, &sum, &mut gs).unwrap();
        for k in 0..n {
            assert!((ga[k] + gb[k] - gs[k]).abs() <= 1e-12 * (1.0 + gs[k].abs()));
        }
    }
}

#[test]
fn recurrent_actor_gradients() {
    let err = gru_max_rel_err(Head::Softmax, 6, 6);
    assert!(err <= TOL, "gru actor: relative error {err}");
}

#[test]
fn recurrent_critic_gradients() {
    let err = gru_max_rel_err(Head::Linear, 6, 7);
    assert!(err <= TOL, "gru critic: relative error {err}");
}
