//! Twin-critic delayed actor-critic over a discrete action set.
//!
//! The actor is categorical. Gaussian noise (clipped) is added to its logits
//! both for exploration and for target-policy smoothing; the target action is
//! the argmax of the perturbed target logits. Because the action set is tiny
//! the actor objective is the exact expectation of Q1 under the softmax.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::replay::{ReplayBuffer, Transition};
use super::LearnerError;
use crate::nn::{batch_gradient, soft_update, softmax, Adam, Checkpoint, CheckpointError, DenseNet, Head};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub exploration_noise_std: f64,
    pub noise_clip: f64,
    pub policy_delay: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    pub recurrent_hidden: usize,
    /// Whole episodes per recurrent gradient step.
    pub recurrent_batch_episodes: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            actor_lr: 5e-5,
            critic_lr: 1e-3,
            tau: 5e-3,
            exploration_noise_std: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            batch_size: 128,
            buffer_capacity: ReplayBuffer::DEFAULT_CAPACITY,
            hidden: vec![64, 64],
            recurrent_hidden: 32,
            recurrent_batch_episodes: 4,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |key: &'static str, reason: &str| Err(LearnerError::Config { key, reason: reason.to_string() });
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", "must lie in (0, 1)");
        }
        if !(self.noise_clip > 0.0) {
            return bad("noise_clip", "must be positive");
        }
        if !(self.exploration_noise_std >= 0.0) {
            return bad("exploration_noise_std", "must be non-negative");
        }
        if !(self.actor_lr >= 0.0 && self.critic_lr >= 0.0) {
            return bad("actor_lr", "learning rates must be non-negative");
        }
        if !(self.tau >= 0.0 && self.tau <= 1.0) {
            return bad("tau", "must lie in [0, 1]");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay", "must be at least 1");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.recurrent_batch_episodes == 0 {
            return bad("batch_size", "batch sizes and capacity must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.recurrent_hidden == 0 {
            return bad("hidden", "layer sizes must be positive");
        }
        Ok(())
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..self.clone() }
    }
}

/// Result of one policy query.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChoice {
    pub action: usize,
    /// Distribution the action was sampled from (noisy when exploring).
    pub probs: Vec<f64>,
    /// Noiseless policy distribution; this is what the replay stores.
    pub policy_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainReport {
    WarmingUp { have: usize, need: usize },
    Updated { critic_loss: f64, actor_loss: Option<f64> },
}

pub fn clipped_noise<R: Rng + ?Sized>(std: f64, clip: f64, rng: &mut R) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, std).unwrap().sample(rng).clamp(-clip, clip)
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn one_hot_concat(input: &[f64], action: usize, n_actions: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(input.len() + n_actions);
    x.extend_from_slice(input);
    x.extend((0..n_actions).map(|a| if a == action { 1.0 } else { 0.0 }));
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: DenseNet,
    pub q1: DenseNet,
    pub q2: DenseNet,
    pub actor_target: DenseNet,
    pub q1_target: DenseNet,
    pub q2_target: DenseNet,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    cfg: LearnerConfig,
    n_actions: usize,
    updates: u64,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(input: usize, n_actions: usize, cfg: &LearnerConfig, rng: &mut R) -> Self {
        let mut actor_sizes = vec![input];
        actor_sizes.extend(&cfg.hidden);
        actor_sizes.push(n_actions);
        let mut critic_sizes = vec![input + n_actions];
        critic_sizes.extend(&cfg.hidden);
        critic_sizes.push(1);
        let actor = DenseNet::new(&actor_sizes, Head::Softmax, rng);
        let q1 = DenseNet::new(&critic_sizes, Head::Linear, rng);
        let q2 = DenseNet::new(&critic_sizes, Head::Linear, rng);
        Self::assemble(actor, q1, q2, cfg)
    }

    fn assemble(actor: DenseNet, q1: DenseNet, q2: DenseNet, cfg: &LearnerConfig) -> Self {
        let n_actions = actor.output_size();
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
            n_actions,
            updates: 0,
        }
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn gamma(&self) -> f64 {
        self.cfg.gamma
    }

    pub fn input_size(&self) -> usize {
        self.actor.input_size()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Gradient steps taken so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Noiseless policy distribution.
    pub fn policy(&self, input: &[f64]) -> Vec<f64> {
        self.actor.predict(input)
    }

    pub fn act<R: Rng + ?Sized>(&self, input: &[f64], explore: bool, rng: &mut R) -> ActionChoice {
        let logits = self.actor.logits(input);
        let policy_probs = softmax(&logits);
        let probs = if explore {
            let noisy: Vec<f64> = logits
                .iter()
                .map(|l| l + clipped_noise(self.cfg.exploration_noise_std, self.cfg.noise_clip, rng))
                .collect();
            softmax(&noisy)
        } else {
            policy_probs.clone()
        };
        let action = sample_categorical(&probs, rng);
        ActionChoice { action, probs, policy_probs }
    }

    /// Q-values of every action under `critic`.
    pub fn q_values(&self, critic: &DenseNet, input: &[f64]) -> Vec<f64> {
        (0..self.n_actions)
            .map(|a| critic.predict(&one_hot_concat(input, a, self.n_actions))[0])
            .collect()
    }

    /// Clipped double-Q targets `r + gamma (1 - done) min(Q1', Q2')` at a
    /// smoothed target action. `smoothing = false` drops the logit noise.
    pub fn critic_targets<R: Rng + ?Sized>(&self, batch: &[&Transition], smoothing: bool, rng: &mut R) -> Vec<f64> {
        batch
            .iter()
            .map(|t| {
                if t.done {
                    return t.reward;
                }
                let logits = self.actor_target.logits(&t.next_input);
                let perturbed: Vec<f64> = if smoothing {
                    logits
                        .iter()
                        .map(|l| l + clipped_noise(self.cfg.exploration_noise_std, self.cfg.noise_clip, rng))
                        .collect()
                } else {
                    logits
                };
                let x = one_hot_concat(&t.next_input, argmax(&perturbed), self.n_actions);
                let q = self.q1_target.predict(&x)[0].min(self.q2_target.predict(&x)[0]);
                t.reward + self.cfg.gamma * q
            })
            .collect()
    }

    /// Mean squared error of both critics against fixed targets.
    pub fn critic_loss(&self, batch: &[&Transition], targets: &[f64]) -> f64 {
        let mut total = 0.0;
        for (t, y) in batch.iter().zip(targets) {
            let x = one_hot_concat(&t.input, t.action, self.n_actions);
            total += (self.q1.predict(&x)[0] - y).powi(2) + (self.q2.predict(&x)[0] - y).powi(2);
        }
        total / batch.len() as f64
    }

    fn update_critic(critic: &mut DenseNet, opt: &mut Adam, batch: &[&Transition], targets: &[f64], n_actions: usize) -> f64 {
        let scale = 2.0 / batch.len() as f64;
        let pairs: Vec<(&Transition, f64)> = batch.iter().copied().zip(targets.iter().copied()).collect();
        let net = &*critic;
        let (grads, loss) = batch_gradient(net.params().len(), &pairs, |(t, y), g| {
            let fwd = net.forward(&one_hot_concat(&t.input, t.action, n_actions)).expect("critic input");
            let err = fwd.output()[0] - y;
            net.backward(&fwd, &[scale * err], g).expect("fresh cache");
            err * err
        });
        opt.step(critic.params_mut(), &grads);
        loss / batch.len() as f64
    }

    fn update_actor(&mut self, batch: &[&Transition]) -> f64 {
        let scale = 1.0 / batch.len() as f64;
        let this = &*self;
        let (grads, objective) = batch_gradient(this.actor.params().len(), batch, |t, g| {
            let q = this.q_values(&this.q1, &t.input);
            let fwd = this.actor.forward(&t.input).expect("actor input");
            let grad: Vec<f64> = q.iter().map(|q| -scale * q).collect();
            this.actor.backward(&fwd, &grad, g).expect("fresh cache");
            fwd.output().iter().zip(&q).map(|(p, q)| p * q).sum::<f64>()
        });
        self.actor_opt.step(self.actor.params_mut(), &grads);
        -objective / batch.len() as f64
    }

    pub fn soft_update_targets(&mut self) {
        let tau = self.cfg.tau;
        soft_update(self.actor_target.params_mut(), self.actor.params(), tau);
        soft_update(self.q1_target.params_mut(), self.q1.params(), tau);
        soft_update(self.q2_target.params_mut(), self.q2.params(), tau);
    }

    /// One update on a given batch: both critics, then on every
    /// `policy_delay`-th step the actor and all target networks.
    pub fn train_on_batch<R: Rng + ?Sized>(&mut self, batch: &[&Transition], step_index: u64, rng: &mut R) -> TrainReport {
        let targets = self.critic_targets(batch, true, rng);
        let n = self.n_actions;
        let l1 = Self::update_critic(&mut self.q1, &mut self.q1_opt, batch, &targets, n);
        let l2 = Self::update_critic(&mut self.q2, &mut self.q2_opt, batch, &targets, n);
        let actor_loss = if step_index % self.cfg.policy_delay == 0 {
            let loss = self.update_actor(batch);
            self.soft_update_targets();
            Some(loss)
        } else {
            None
        };
        self.updates += 1;
        TrainReport::Updated { critic_loss: 0.5 * (l1 + l2), actor_loss }
    }

    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, step_index: u64, rng: &mut R) -> TrainReport {
        if buffer.len() < self.cfg.batch_size {
            return TrainReport::WarmingUp { have: buffer.len(), need: self.cfg.batch_size };
        }
        let batch = buffer.sample(self.cfg.batch_size, rng);
        self.train_on_batch(&batch, step_index, rng)
    }

    /// `train_step` with the internal update counter as the step index.
    pub fn train<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> TrainReport {
        self.train_step(buffer, self.updates, rng)
    }

    /// Replaces the actor (and its target) parameters, e.g. with a mutant's.
    pub fn set_actor_params(&mut self, params: &[f64]) {
        self.actor.params_mut().copy_from_slice(params);
        self.actor_target.params_mut().copy_from_slice(params);
    }

    /// Every parameter of all six networks, for equality checks.
    pub fn all_params(&self) -> Vec<f64> {
        [&self.actor, &self.q1, &self.q2, &self.actor_target, &self.q1_target, &self.q2_target]
            .iter()
            .flat_map(|n| n.params().iter().copied())
            .collect()
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ckpt = Checkpoint::new("td3", seed, self.updates);
        ckpt.set_meta("gamma", self.cfg.gamma);
        for (name, net) in [
            ("actor", &self.actor),
            ("q1", &self.q1),
            ("q2", &self.q2),
            ("actor_target", &self.actor_target),
            ("q1_target", &self.q1_target),
            ("q2_target", &self.q2_target),
        ] {
            ckpt.push_dense(name, net);
        }
        ckpt
    }

    /// Restores networks from a checkpoint; optimizer moments restart from zero.
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &LearnerConfig) -> Result<Self, CheckpointError> {
        let gamma: f64 = ckpt
            .meta("gamma")?
            .parse()
            .map_err(|_| CheckpointError::Parse { line: 0, reason: "bad gamma".into() })?;
        let mut ac = Self::assemble(ckpt.dense("actor")?, ckpt.dense("q1")?, ckpt.dense("q2")?, &cfg.with_gamma(gamma));
        ac.actor_target = ckpt.dense("actor_target")?;
        ac.q1_target = ckpt.dense("q1_target")?;
        ac.q2_target = ckpt.dense("q2_target")?;
        ac.updates = ckpt.step;
        Ok(ac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::AgentType;
    use crate::learner::replay::{MemberTag, Role, Source};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> LearnerConfig {
        LearnerConfig { hidden: vec![16, 16], batch_size: 8, ..LearnerConfig::default() }
    }

    fn transition(rng: &mut ChaCha8Rng, done: bool) -> Transition {
        let input: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        Transition {
            next_input: input.iter().map(|x| 1.0 - x).collect(),
            input,
            action: rng.random_range(0..4),
            action_probs: vec![0.25; 4],
            reward: rng.random::<f64>() * 2.0 - 1.0,
            done,
            tag: MemberTag { role: Role::Opponent, agent_type: AgentType::Enemy, member: Some(0), source: Source::Learner },
        }
    }

    #[test]
    fn greedy_logits_dominate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ac = ActorCritic::new(3, 4, &small_cfg(), &mut rng);
        // zero the actor, then bias the first logit to 10
        let actor = ac.actor.params_mut();
        actor.iter_mut().for_each(|p| *p = 0.0);
        let n = actor.len();
        actor[n - 4] = 10.0;
        let hits = (0..1000).filter(|_| ac.act(&[0.1, 0.2, 0.3], false, &mut rng).action == 0).count();
        assert!(hits >= 990, "{hits}");
    }

    #[test]
    fn zero_actor_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ac = ActorCritic::new(3, 4, &small_cfg(), &mut rng);
        ac.actor.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[ac.act(&[0.5, 0.5, 0.5], false, &mut rng).action] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.25).abs() <= 0.03, "{counts:?}");
        }
    }

    #[test]
    fn act_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ac = ActorCritic::new(3, 4, &small_cfg(), &mut rng);
        let a = ac.act(&[0.3, 0.1, 0.9], true, &mut ChaCha8Rng::seed_from_u64(77));
        let b = ac.act(&[0.3, 0.1, 0.9], true, &mut ChaCha8Rng::seed_from_u64(77));
        assert_eq!(a, b);
    }

    #[test]
    fn targets_terminal_and_discount() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ac = ActorCritic::new(3, 4, &small_cfg(), &mut rng);
        let done = transition(&mut rng, true);
        assert_eq!(ac.critic_targets(&[&done], true, &mut rng), vec![done.reward]);
        let mut zero = ac.clone();
        zero.cfg.gamma = 0.0;
        let live = transition(&mut rng, false);
        assert_eq!(zero.critic_targets(&[&live], true, &mut rng), vec![live.reward]);
    }

    #[test]
    fn targets_use_min_of_twin_critics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ac = ActorCritic::new(3, 4, &small_cfg(), &mut rng);
        // constant critics: zero weights, output bias 2 and 3
        for (net, value) in [(&mut ac.q1_target, 2.0), (&mut ac.q2_target, 3.0)] {
            let p = net.params_mut();
            p.iter_mut().for_each(|x| *x = 0.0);
            let n = p.len();
            p[n - 1] = value;
        }
        let mut t = transition(&mut rng, false);
        t.reward = 1.0;
        let y = ac.critic_targets(&[&t], false, &mut rng);
        assert!((y[0] - 2.98).abs() < 1e-12);
    }

    #[test]
    fn critic_step_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ac = ActorCritic::new(3, 4, &small_cfg(), &mut rng);
        let owned: Vec<Transition> = (0..32).map(|_| transition(&mut rng, false)).collect();
        let batch: Vec<&Transition> = owned.iter().collect();
        let targets = ac.critic_targets(&batch, false, &mut rng);
        let before = ac.critic_loss(&batch, &targets);
        let n = ac.n_actions;
        ActorCritic::update_critic(&mut ac.q1, &mut ac.q1_opt, &batch, &targets, n);
        ActorCritic::update_critic(&mut ac.q2, &mut ac.q2_opt, &batch, &targets, n);
        assert!(ac.critic_loss(&batch, &targets) <= before);
    }

    #[test]
    fn actor_moves_only_on_delayed_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut ac = ActorCritic::new(3, 4, &small_cfg(), &mut rng);
        let owned: Vec<Transition> = (0..16).map(|_| transition(&mut rng, false)).collect();
        let batch: Vec<&Transition> = owned.iter().collect();
        for step in 0..6u64 {
            let actor_before = ac.actor.params().to_vec();
            let target_before = ac.q1_target.params().to_vec();
            ac.train_on_batch(&batch, step, &mut rng);
            let moved = ac.actor.params() != &actor_before[..];
            assert_eq!(moved, step % 2 == 0, "step {step}");
            assert_eq!(ac.q1_target.params() != &target_before[..], step % 2 == 0);
        }
    }

    #[test]
    fn soft_update_closes_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ac = ActorCritic::new(3, 4, &small_cfg(), &mut rng);
        ac.q1.params_mut().iter_mut().for_each(|p| *p += 1.0);
        let gap = |ac: &ActorCritic| {
            ac.q1.params().iter().zip(ac.q1_target.params()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let before = gap(&ac);
        ac.soft_update_targets();
        assert!(gap(&ac) < before);
    }

    #[test]
    fn warming_up_without_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ac = ActorCritic::new(3, 4, &small_cfg(), &mut rng);
        let buf = ReplayBuffer::new(100);
        assert_eq!(ac.train(&buf, &mut rng), TrainReport::WarmingUp { have: 0, need: 8 });
        assert_eq!(ac.updates(), 0);
    }

    #[test]
    fn actor_outputs_stay_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ac = ActorCritic::new(3, 4, &small_cfg(), &mut rng);
        let mut buf = ReplayBuffer::new(100);
        for _ in 0..64 {
            buf.push(transition(&mut rng, false));
        }
        for _ in 0..50 {
            ac.train(&buf, &mut rng);
        }
        for t in buf.iter() {
            let p = ac.policy(&t.input);
            assert!(p.iter().all(|x| *x >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = small_cfg().with_gamma(0.997);
        let ac = ActorCritic::new(3, 4, &cfg, &mut rng);
        let text = ac.to_checkpoint(10).to_text();
        let back = ActorCritic::from_checkpoint(&Checkpoint::from_text(&text).unwrap(), &small_cfg()).unwrap();
        assert_eq!(back.all_params(), ac.all_params());
        assert_eq!(back.gamma(), 0.997);
    }
}
