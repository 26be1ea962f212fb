//! Belief-free protagonist: the same twin-critic learner with GRU networks
//! trained by backpropagation through whole episodes.

use std::collections::VecDeque;

use rand::Rng;

use super::td3::{argmax, clipped_noise, sample_categorical, ActionChoice, LearnerConfig, TrainReport};
use crate::nn::{batch_gradient, soft_update, softmax, Adam, Checkpoint, CheckpointError, GruNet, Head};

/// One complete episode as seen by the recurrent protagonist. `inputs` has
/// one more entry than `actions`: the observation after the final step.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEpisode {
    pub inputs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub action_probs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl SequenceEpisode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Ring of whole episodes, bounded by the total number of steps held.
#[derive(Debug, Clone)]
pub struct EpisodeBuffer {
    episodes: VecDeque<SequenceEpisode>,
    steps: usize,
    capacity_steps: usize,
}

impl EpisodeBuffer {
    pub fn new(capacity_steps: usize) -> Self {
        assert!(capacity_steps > 0, "episode buffer capacity must be positive");
        Self { episodes: VecDeque::new(), steps: 0, capacity_steps }
    }

    pub fn push(&mut self, episode: SequenceEpisode) {
        if episode.is_empty() {
            return;
        }
        self.steps += episode.len();
        self.episodes.push_back(episode);
        while self.steps > self.capacity_steps && self.episodes.len() > 1 {
            let old = self.episodes.pop_front().unwrap();
            self.steps -= old.len();
        }
    }

    pub fn episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&SequenceEpisode> {
        (0..n).map(|_| &self.episodes[rng.random_range(0..self.episodes.len())]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentActorCritic {
    pub actor: GruNet,
    pub q1: GruNet,
    pub q2: GruNet,
    pub actor_target: GruNet,
    pub q1_target: GruNet,
    pub q2_target: GruNet,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    cfg: LearnerConfig,
    updates: u64,
}

impl RecurrentActorCritic {
    pub fn new<R: Rng + ?Sized>(input: usize, n_actions: usize, cfg: &LearnerConfig, rng: &mut R) -> Self {
        let h = cfg.recurrent_hidden;
        let actor = GruNet::new(input, h, n_actions, Head::Softmax, rng);
        let q1 = GruNet::new(input, h, n_actions, Head::Linear, rng);
        let q2 = GruNet::new(input, h, n_actions, Head::Linear, rng);
        Self::assemble(actor, q1, q2, cfg)
    }

    fn assemble(actor: GruNet, q1: GruNet, q2: GruNet, cfg: &LearnerConfig) -> Self {
        Self {
            actor_opt: Adam::new(actor.params().len(), cfg.actor_lr),
            q1_opt: Adam::new(q1.params().len(), cfg.critic_lr),
            q2_opt: Adam::new(q2.params().len(), cfg.critic_lr),
            actor_target: actor.clone(),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            cfg: cfg.clone(),
            updates: 0,
        }
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        self.actor.initial_hidden()
    }

    /// Advances the actor's hidden state by one observation and picks an action.
    pub fn act<R: Rng + ?Sized>(&self, hidden: &mut Vec<f64>, input: &[f64], explore: bool, rng: &mut R) -> ActionChoice {
        let policy_probs = self.actor.step(hidden, input).expect("recurrent input size");
        let probs = if explore {
            let noisy: Vec<f64> = policy_probs
                .iter()
                .map(|p| p.max(1e-300).ln() + clipped_noise(self.cfg.exploration_noise_std, self.cfg.noise_clip, rng))
                .collect();
            softmax(&noisy)
        } else {
            policy_probs.clone()
        };
        let action = sample_categorical(&probs, rng);
        ActionChoice { action, probs, policy_probs }
    }

    /// Per-step clipped double-Q targets for one episode. The final step is
    /// terminal.
    pub fn targets<R: Rng + ?Sized>(&self, ep: &SequenceEpisode, smoothing: bool, rng: &mut R) -> Vec<f64> {
        let pi = self.actor_target.forward_sequence(&ep.inputs).expect("recurrent input size");
        let q1 = self.q1_target.forward_sequence(&ep.inputs).expect("recurrent input size");
        let q2 = self.q2_target.forward_sequence(&ep.inputs).expect("recurrent input size");
        (0..ep.len())
            .map(|t| {
                if t + 1 == ep.len() {
                    return ep.rewards[t];
                }
                let logits: Vec<f64> = pi
                    .output(t + 1)
                    .iter()
                    .map(|p| {
                        let noise = if smoothing {
                            clipped_noise(self.cfg.exploration_noise_std, self.cfg.noise_clip, rng)
                        } else {
                            0.0
                        };
                        p.max(1e-300).ln() + noise
                    })
                    .collect();
                let a = argmax(&logits);
                ep.rewards[t] + self.cfg.gamma * q1.output(t + 1)[a].min(q2.output(t + 1)[a])
            })
            .collect()
    }

    fn update_critic(critic: &mut GruNet, opt: &mut Adam, batch: &[(&SequenceEpisode, Vec<f64>)], total: usize) -> f64 {
        let net = &*critic;
        let n_actions = net.output_size();
        let (grads, loss) = batch_gradient(net.params().len(), batch, |(ep, targets), g| {
            let fwd = net.forward_sequence(&ep.inputs[..ep.len()]).expect("recurrent input size");
            let mut loss = 0.0;
            let grad_out: Vec<Vec<f64>> = (0..ep.len())
                .map(|t| {
                    let err = fwd.output(t)[ep.actions[t]] - targets[t];
                    loss += err * err;
                    let mut go = vec![0.0; n_actions];
                    go[ep.actions[t]] = 2.0 * err / total as f64;
                    go
                })
                .collect();
            net.backward_sequence(&fwd, &grad_out, g).expect("fresh cache");
            loss
        });
        opt.step(critic.params_mut(), &grads);
        loss / total as f64
    }

    fn update_actor(&mut self, batch: &[(&SequenceEpisode, Vec<f64>)], total: usize) -> f64 {
        let this = &*self;
        let (grads, objective) = batch_gradient(this.actor.params().len(), batch, |(ep, _), g| {
            let inputs = &ep.inputs[..ep.len()];
            let q = this.q1.forward_sequence(inputs).expect("recurrent input size");
            let fwd = this.actor.forward_sequence(inputs).expect("recurrent input size");
            let mut objective = 0.0;
            let grad_out: Vec<Vec<f64>> = (0..ep.len())
                .map(|t| {
                    objective += fwd.output(t).iter().zip(q.output(t)).map(|(p, q)| p * q).sum::<f64>();
                    q.output(t).iter().map(|q| -q / total as f64).collect()
                })
                .collect();
            this.actor.backward_sequence(&fwd, &grad_out, g).expect("fresh cache");
            objective
        });
        self.actor_opt.step(self.actor.params_mut(), &grads);
        -objective / total as f64
    }

    pub fn train_on_episodes<R: Rng + ?Sized>(&mut self, episodes: &[&SequenceEpisode], step_index: u64, rng: &mut R) -> TrainReport {
        let batch: Vec<(&SequenceEpisode, Vec<f64>)> =
            episodes.iter().map(|ep| (*ep, self.targets(ep, true, rng))).collect();
        let total: usize = episodes.iter().map(|e| e.len()).sum();
        let l1 = Self::update_critic(&mut self.q1, &mut self.q1_opt, &batch, total);
        let l2 = Self::update_critic(&mut self.q2, &mut self.q2_opt, &batch, total);
        let actor_loss = if step_index % self.cfg.policy_delay == 0 {
            let loss = self.update_actor(&batch, total);
            let tau = self.cfg.tau;
            soft_update(self.actor_target.params_mut(), self.actor.params(), tau);
            soft_update(self.q1_target.params_mut(), self.q1.params(), tau);
            soft_update(self.q2_target.params_mut(), self.q2.params(), tau);
            Some(loss)
        } else {
            None
        };
        self.updates += 1;
        TrainReport::Updated { critic_loss: 0.5 * (l1 + l2), actor_loss }
    }

    /// One gradient step on a sample of whole episodes, using the internal
    /// update counter for the actor delay.
    pub fn train<R: Rng + ?Sized>(&mut self, buffer: &EpisodeBuffer, rng: &mut R) -> TrainReport {
        if buffer.steps() < self.cfg.batch_size {
            return TrainReport::WarmingUp { have: buffer.steps(), need: self.cfg.batch_size };
        }
        let episodes = buffer.sample(self.cfg.recurrent_batch_episodes, rng);
        self.train_on_episodes(&episodes, self.updates, rng)
    }

    pub fn all_params(&self) -> Vec<f64> {
        [&self.actor, &self.q1, &self.q2, &self.actor_target, &self.q1_target, &self.q2_target]
            .iter()
            .flat_map(|n| n.params().iter().copied())
            .collect()
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ckpt = Checkpoint::new("recurrent-td3", seed, self.updates);
        ckpt.set_meta("gamma", self.cfg.gamma);
        for (name, net) in [
            ("actor", &self.actor),
            ("q1", &self.q1),
            ("q2", &self.q2),
            ("actor_target", &self.actor_target),
            ("q1_target", &self.q1_target),
            ("q2_target", &self.q2_target),
        ] {
            ckpt.push_gru(name, net);
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &LearnerConfig) -> Result<Self, CheckpointError> {
        let gamma: f64 = ckpt
            .meta("gamma")?
            .parse()
            .map_err(|_| CheckpointError::Parse { line: 0, reason: "bad gamma".into() })?;
        let mut ac = Self::assemble(ckpt.gru("actor")?, ckpt.gru("q1")?, ckpt.gru("q2")?, &cfg.with_gamma(gamma));
        ac.actor_target = ckpt.gru("actor_target")?;
        ac.q1_target = ckpt.gru("q1_target")?;
        ac.q2_target = ckpt.gru("q2_target")?;
        ac.updates = ckpt.step;
        Ok(ac)
    }
}
