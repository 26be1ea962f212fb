//! Collapses an opponent ensemble into one model per type.
//!
//! The mixture that minimizes the summed KL divergence from every member is
//! their arithmetic mean. Rather than querying every member, a single
//! network is regressed (squared error) onto the action distributions stored
//! in the shared replay, whose member mix already realizes that average.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{OpponentModelSet, ScriptedModels, UninformativeModels};
use crate::env::{AgentType, GameConfig, OpponentObs};
use crate::learner::{SharedExperience, Transition};
use crate::nn::{batch_gradient, Adam, Checkpoint, CheckpointError, DenseNet, Head};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("distillation for type {agent_type} needs at least {need} transitions, found {have}")]
    InsufficientSamples { agent_type: AgentType, have: usize, need: usize },
    #[error("cannot average an empty ensemble")]
    EmptyEnsemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of samples held out for validation.
    pub holdout: f64,
    pub min_samples: usize,
    pub hidden: Vec<usize>,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { steps: 5000, batch_size: 256, lr: 1e-3, holdout: 0.1, min_samples: 1000, hidden: vec![64, 64] }
    }
}

/// Mean of the members' action distributions at `input`.
pub fn exact_average(members: &[&DenseNet], input: &[f64]) -> Result<Vec<f64>, DistillError> {
    let first = members.first().ok_or(DistillError::EmptyEnsemble)?;
    let mut mean = vec![0.0; first.output_size()];
    for m in members {
        for (acc, p) in mean.iter_mut().zip(m.predict(input)) {
            *acc += p;
        }
    }
    let k = members.len() as f64;
    mean.iter_mut().for_each(|p| *p /= k);
    Ok(mean)
}

/// The regression data: each stored input paired with its stored action
/// distribution.
pub fn regression_pairs(shared: &SharedExperience, agent_type: AgentType) -> Vec<(&[f64], &[f64])> {
    shared
        .for_type(agent_type)
        .iter()
        .map(|t| (t.input.as_slice(), t.action_probs.as_slice()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Distilled {
    pub net: DenseNet,
    pub train_samples: usize,
    pub holdout_samples: usize,
    /// Mean squared error per sample on the held-out split.
    pub holdout_loss: f64,
    /// Network evaluations spent on fitting (forward passes).
    pub forward_passes: u64,
}

fn mse_loss(net: &DenseNet, samples: &[&Transition]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: f64 = samples
        .iter()
        .map(|t| net.predict(&t.input).iter().zip(&t.action_probs).map(|(p, q)| (p - q).powi(2)).sum::<f64>())
        .sum();
    total / samples.len() as f64
}

/// Fits one softmax network to the stored action distributions of
/// `agent_type`.
pub fn distill<R: Rng + ?Sized>(
    shared: &SharedExperience,
    agent_type: AgentType,
    cfg: &DistillConfig,
    rng: &mut R,
) -> Result<Distilled, DistillError> {
    let buffer = shared.for_type(agent_type);
    if buffer.len() < cfg.min_samples.max(2) {
        return Err(DistillError::InsufficientSamples { agent_type, have: buffer.len(), need: cfg.min_samples.max(2) });
    }
    let first = buffer.get(0);
    let mut sizes = vec![first.input.len()];
    sizes.extend(&cfg.hidden);
    sizes.push(first.action_probs.len());
    let mut net = DenseNet::new(&sizes, Head::Softmax, rng);
    let mut opt = Adam::new(net.params().len(), cfg.lr);

    let mut order: Vec<usize> = (0..buffer.len()).collect();
    order.shuffle(rng);
    let n_hold = ((buffer.len() as f64 * cfg.holdout).round() as usize).min(buffer.len() - 1);
    let (hold, train) = order.split_at(n_hold);

    let mut forward_passes = 0u64;
    for _ in 0..cfg.steps {
        let batch: Vec<&Transition> = (0..cfg.batch_size).map(|_| buffer.get(train[rng.random_range(0..train.len())])).collect();
        let scale = 2.0 / batch.len() as f64;
        let model = &net;
        let (grads, _) = batch_gradient(model.params().len(), &batch, |t, g| {
            let fwd = model.forward(&t.input).expect("distill input");
            let go: Vec<f64> = fwd.output().iter().zip(&t.action_probs).map(|(p, q)| scale * (p - q)).collect();
            model.backward(&fwd, &go, g).expect("fresh cache");
            0.0
        });
        forward_passes += batch.len() as u64;
        opt.step(net.params_mut(), &grads);
    }
    let hold_samples: Vec<&Transition> = hold.iter().map(|i| buffer.get(*i)).collect();
    Ok(Distilled {
        holdout_loss: mse_loss(&net, &hold_samples),
        net,
        train_samples: train.len(),
        holdout_samples: hold.len(),
        forward_passes,
    })
}

/// Distilled per-type models, usable directly as the belief filter's
/// likelihood.
#[derive(Debug, Clone)]
pub struct DistilledModels {
    pub nets: [DenseNet; 2],
    pub config: GameConfig,
}

impl OpponentModelSet for DistilledModels {
    fn action_probs(&self, obs: &OpponentObs) -> [f64; 4] {
        let p = self.nets[obs.own_type.index()].predict(&obs.features(&self.config));
        [p[0], p[1], p[2], p[3]]
    }
}

impl DistilledModels {
    pub fn to_checkpoint(&self, agent_type: AgentType, seed: u64, step: u64) -> Checkpoint {
        let mut ckpt = Checkpoint::new("distilled", seed, step);
        ckpt.set_meta("type", agent_type);
        ckpt.push_dense("policy", &self.nets[agent_type.index()]);
        ckpt
    }

    pub fn from_checkpoints(ally: &Checkpoint, enemy: &Checkpoint, config: GameConfig) -> Result<Self, CheckpointError> {
        Ok(Self { nets: [ally.dense("policy")?, enemy.dense("policy")?], config })
    }
}

/// Whatever opponent model the protagonist's filter is currently using.
#[derive(Debug, Clone)]
pub enum BeliefModels {
    Uninformative,
    Scripted(ScriptedModels),
    Distilled(DistilledModels),
}

impl OpponentModelSet for BeliefModels {
    fn action_probs(&self, obs: &OpponentObs) -> [f64; 4] {
        match self {
            BeliefModels::Uninformative => UninformativeModels.action_probs(obs),
            BeliefModels::Scripted(m) => m.action_probs(obs),
            BeliefModels::Distilled(m) => m.action_probs(obs),
        }
    }
}
