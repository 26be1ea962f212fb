//! Small differentiable function approximators in double precision.

mod checkpoint;
mod dense;
mod gru;

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError, Tensor};
pub use dense::{DenseForward, DenseNet};
pub use gru::{GruForward, GruNet};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("forward cache is stale: parameters changed since it was recorded")]
    StaleCache,
    #[error("bad architecture descriptor `{0}`")]
    Descriptor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Linear,
    Softmax,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::Linear => "linear",
            Head::Softmax => "softmax",
        }
    }
}

impl FromStr for Head {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Head::Linear),
            "softmax" => Ok(Head::Softmax),
            _ => Err(NnError::Descriptor(s.to_string())),
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Gradient with respect to the logits given a gradient with respect to the
/// softmax output `probs`.
pub fn softmax_backward(probs: &[f64], grad: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad).map(|(p, g)| p * g).sum();
    probs.iter().zip(grad).map(|(p, g)| p * (g - dot)).collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Adaptive-moment optimizer state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter length mismatch");
        assert_eq!(grads.len(), self.m.len(), "optimizer/gradient length mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Sums per-example gradients over `items`. The work is split into a fixed
/// number of chunks whose partial sums are combined in order, so the result
/// does not depend on the thread count. Returns the gradient and the summed
/// per-example losses reported by `f`.
pub fn batch_gradient<T, F>(param_len: usize, items: &[T], f: F) -> (Vec<f64>, f64)
where
    T: Sync,
    F: Fn(&T, &mut [f64]) -> f64 + Sync + Send,
{
    const CHUNKS: usize = 8;
    let chunk = items.len().div_ceil(CHUNKS).max(1);
    let ranges: Vec<(usize, usize)> = (0..items.len()).step_by(chunk).map(|s| (s, (s + chunk).min(items.len()))).collect();
    let partials = crate::par_map(&ranges, |&(lo, hi)| {
        let mut g = vec![0.0; param_len];
        let loss: f64 = items[lo..hi].iter().map(|it| f(it, &mut g)).sum();
        (g, loss)
    });
    let mut grads = vec![0.0; param_len];
    let mut loss = 0.0;
    for (g, l) in partials {
        grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        loss += l;
    }
    (grads, loss)
}

/// `target <- tau * source + (1 - tau) * target`
pub fn soft_update(target: &mut [f64], source: &[f64], tau: f64) {
    assert_eq!(target.len(), source.len());
    for (t, s) in target.iter_mut().zip(source) {
        *t = tau * s + (1.0 - tau) * *t;
    }
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every parameter.
pub fn mutate(params: &mut [f64], sigma: f64, seed: u64) {
    assert!(sigma >= 0.0, "mutation sigma must be non-negative");
    if sigma == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    for p in params {
        *p += normal.sample(&mut rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_and_zero_lr() {
        let mut params = vec![1.0, -2.0];
        let mut opt = Adam::new(2, 1e-3);
        opt.step(&mut params, &[0.0, 0.0]);
        assert_eq!(params, vec![1.0, -2.0]);
        let mut opt = Adam::new(2, 0.0);
        opt.step(&mut params, &[0.5, -3.0]);
        assert_eq!(params, vec![1.0, -2.0]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn adam_first_step_scalar() {
        // bias-corrected moments equal g and g^2 after one step
        let g = 0.3;
        let lr = 1e-3;
        let mut p = [2.0];
        Adam::new(1, lr).step(&mut p, &[g]);
        let expected = 2.0 - lr * g / (g.abs() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_second_step_scalar() {
        let lr = 0.01;
        let mut p = [0.0];
        let mut opt = Adam::new(1, lr);
        opt.step(&mut p, &[1.0]);
        opt.step(&mut p, &[-0.5]);
        let m: f64 = 0.9 * 0.1 + 0.1 * -0.5;
        let v: f64 = 0.999 * 0.001 + 0.001 * 0.25;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64.powi(2));
        let expected = -lr * 1.0 / (1.0 + 1e-8) - lr * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn soft_update_cases() {
        let mut t = vec![0.0, 1.0];
        soft_update(&mut t, &[1.0, 3.0], 0.0);
        assert_eq!(t, vec![0.0, 1.0]);
        soft_update(&mut t, &[1.0, 3.0], 5e-3);
        assert!((t[0] - 0.005).abs() < 1e-15);
        soft_update(&mut t, &[1.0, 3.0], 1.0);
        assert_eq!(t, vec![1.0, 3.0]);
    }

    #[test]
    fn mutate_cases() {
        let base: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let mut same = base.clone();
        mutate(&mut same, 0.0, 3);
        assert_eq!(same, base);
        let mut a = base.clone();
        let mut b = base.clone();
        mutate(&mut a, 0.1, 42);
        mutate(&mut b, 0.1, 42);
        assert_eq!(a, b);
        assert_ne!(a, base);
    }

    #[test]
    fn mutation_spread() {
        let sigma = 0.05;
        let mut p = vec![0.0; 100_000];
        mutate(&mut p, sigma, 7);
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        let var = p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (p.len() - 1) as f64;
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.02);
    }

    #[test]
    fn softmax_backward_matches_jacobian() {
        let logits = [0.3, -1.0, 2.0];
        let p = softmax(&logits);
        let g = [1.0, 0.5, -2.0];
        let analytic = softmax_backward(&p, &g);
        for k in 0..3 {
            let mut up = logits;
            let mut down = logits;
            up[k] += 1e-6;
            down[k] -= 1e-6;
            let f = |l: &[f64]| softmax(l).iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
            let numeric = (f(&up) - f(&down)) / 2e-6;
            assert!((numeric - analytic[k]).abs() < 1e-8);
        }
    }
}
