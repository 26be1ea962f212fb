//! Robustness scoring of a trained protagonist and simulated annealing over
//! which ensemble members are active.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::OpponentModelSet;
use crate::env::{AgentType, GameConfig};
use crate::learner::{
    run_episode, ActorCritic, EpisodeSpec, LearnedOpponent, LearnerConfig, ProtagonistLearner, SharedExperience, Source,
};
use crate::par_map;

#[derive(Debug, Error, PartialEq)]
pub enum MetaError {
    #[error("invalid meta setting `{key}`: {reason}")]
    Config { key: &'static str, reason: String },
    #[error("no valid proposal: the ensemble has one member and nothing is deactivated")]
    Saturated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    /// Weight on the evaluation opponent's reward.
    pub lambda1: f64,
    /// Weight on the ensemble size.
    pub lambda2: f64,
    pub t0: f64,
    pub t_min: f64,
    pub decay: f64,
    pub proposals: usize,
    /// Environment steps used to train the evaluation opponent.
    pub eval_steps: usize,
    pub eval_episodes: usize,
    pub eval_gamma: f64,
    /// Rollouts per training round of the evaluation opponent.
    pub eval_batch_episodes: usize,
    /// Gradient steps per training round of the evaluation opponent.
    pub eval_grad_steps: usize,
    /// Self-play epochs run against a proposed ensemble before it is scored.
    pub epochs_per_proposal: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 1.0,
            t0: 30.0,
            t_min: 0.2,
            decay: 0.975,
            proposals: 20,
            eval_steps: 20_000,
            eval_episodes: 200,
            eval_gamma: 0.99,
            eval_batch_episodes: 20,
            eval_grad_steps: 64,
            epochs_per_proposal: 2,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<(), MetaError> {
        let bad = |key: &'static str, reason: &str| Err(MetaError::Config { key, reason: reason.to_string() });
        if !(self.t_min > 0.0) {
            return bad("t_min", "must be positive");
        }
        if !(self.t0 > self.t_min) {
            return bad("t0", "must exceed t_min");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad("decay", "must lie in (0, 1)");
        }
        if !(self.eval_gamma > 0.0 && self.eval_gamma < 1.0) {
            return bad("eval_gamma", "must lie in (0, 1)");
        }
        if self.eval_episodes == 0 || self.eval_batch_episodes == 0 {
            return bad("eval_episodes", "must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub r_p: f64,
    pub r_o: f64,
    pub k: usize,
    pub rho: f64,
}

impl RobustnessReport {
    /// `rho = -r_p + lambda1 * r_o + lambda2 * k`; lower is better.
    pub fn new(r_p: f64, r_o: f64, k: usize, lambda1: f64, lambda2: f64) -> Self {
        Self { r_p, r_o, k, rho: -r_p + lambda1 * r_o + lambda2 * k as f64 }
    }
}

/// One evaluation episode's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub episode: usize,
    pub seed: u64,
    pub opponent_type: AgentType,
    pub steps: u32,
    pub protagonist_return: f64,
    pub opponent_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: RobustnessReport,
    pub episodes: Vec<EvalEpisode>,
    /// Mean evaluation-opponent reward over enemy-type episodes only.
    pub r_o_enemy: Option<f64>,
    pub eval_gamma: f64,
    pub training_steps: usize,
}

/// Scores a frozen protagonist: a fresh evaluation opponent is trained
/// against it, then both play greedy evaluation episodes. The protagonist
/// and its belief models are only read.
pub fn evaluate_ensemble(
    protagonist: &ProtagonistLearner,
    models: &(dyn OpponentModelSet + Sync),
    game: &GameConfig,
    learner: &LearnerConfig,
    meta: &MetaConfig,
    k: usize,
    seed: u64,
) -> Evaluation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval_cfg = learner.with_gamma(meta.eval_gamma);
    let mut nets = [
        ActorCritic::new(crate::env::OPPONENT_FEATURES, 4, &eval_cfg, &mut rng),
        ActorCritic::new(crate::env::OPPONENT_FEATURES, 4, &eval_cfg, &mut rng),
    ];
    let mut experience = SharedExperience::new(learner.buffer_capacity);
    let policy = protagonist.policy();
    let mut steps = 0;
    while steps < meta.eval_steps {
        let specs: Vec<EpisodeSpec> = (0..meta.eval_batch_episodes)
            .map(|_| {
                let t = crate::learner::draw_type(&mut rng);
                EpisodeSpec { explore_protagonist: false, ..EpisodeSpec::training(rng.random(), t, None) }
            })
            .collect();
        let results = {
            let opponent = LearnedOpponent { nets: [&nets[0], &nets[1]], config: game, source: Source::Evaluator };
            par_map(&specs, |s| run_episode(game, &policy, &opponent, models, s))
        };
        for r in results {
            steps += r.steps as usize;
            experience.extend(r.opponent_transitions);
        }
        crate::learner::train_opponents(&mut nets, &experience, meta.eval_grad_steps, &mut rng);
    }

    let seeds: Vec<u64> = (0..meta.eval_episodes).map(|_| rng.random()).collect();
    let results = {
        let opponent = LearnedOpponent { nets: [&nets[0], &nets[1]], config: game, source: Source::Evaluator };
        par_map(&seeds, |s| run_episode(game, &policy, &opponent, models, &EpisodeSpec::evaluation(*s, None)))
    };
    let episodes: Vec<EvalEpisode> = results
        .iter()
        .zip(&seeds)
        .enumerate()
        .map(|(i, (r, s))| EvalEpisode {
            episode: i,
            seed: *s,
            opponent_type: r.opponent_type,
            steps: r.steps,
            protagonist_return: r.protagonist_return,
            opponent_return: r.opponent_return,
        })
        .collect();
    let n = episodes.len() as f64;
    let r_p = episodes.iter().map(|e| e.protagonist_return).sum::<f64>() / n;
    let r_o = episodes.iter().map(|e| e.opponent_return).sum::<f64>() / n;
    let enemy: Vec<f64> =
        episodes.iter().filter(|e| e.opponent_type == AgentType::Enemy).map(|e| e.opponent_return).collect();
    Evaluation {
        report: RobustnessReport::new(r_p, r_o, k, meta.lambda1, meta.lambda2),
        r_o_enemy: (!enemy.is_empty()).then(|| enemy.iter().sum::<f64>() / enemy.len() as f64),
        episodes,
        eval_gamma: meta.eval_gamma,
        training_steps: steps,
    }
}

/// Active ensemble plus the deactivation set.
#[derive(Debug, Clone, PartialEq)]
pub struct Population<T> {
    pub active: Vec<T>,
    pub deactivated: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Pop,
    Append,
    Exchange,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Pop => "pop",
            OpKind::Append => "append",
            OpKind::Exchange => "exchange",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An undoable change to a population.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Proposal {
    /// Move `active[index]` to the end of the deactivation set.
    Pop { index: usize },
    /// Move `deactivated[index]` to the end of the active set.
    Append { index: usize },
    /// Swap `active[active]` with `deactivated[deactivated]` in place.
    Exchange { active: usize, deactivated: usize },
}

impl Proposal {
    pub fn kind(&self) -> OpKind {
        match self {
            Proposal::Pop { .. } => OpKind::Pop,
            Proposal::Append { .. } => OpKind::Append,
            Proposal::Exchange { .. } => OpKind::Exchange,
        }
    }
}

impl<T> Population<T> {
    pub fn new(active: Vec<T>) -> Self {
        assert!(!active.is_empty(), "population needs an active member");
        Self { active, deactivated: Vec::new() }
    }

    pub fn k(&self) -> usize {
        self.active.len()
    }

    pub fn apply(&mut self, p: &Proposal) {
        match *p {
            Proposal::Pop { index } => {
                let m = self.active.remove(index);
                self.deactivated.push(m);
            }
            Proposal::Append { index } => {
                let m = self.deactivated.remove(index);
                self.active.push(m);
            }
            Proposal::Exchange { active, deactivated } => {
                std::mem::swap(&mut self.active[active], &mut self.deactivated[deactivated]);
            }
        }
    }

    pub fn undo(&mut self, p: &Proposal) {
        match *p {
            Proposal::Pop { index } => {
                let m = self.deactivated.pop().expect("undo of an applied pop");
                self.active.insert(index, m);
            }
            Proposal::Append { index } => {
                let m = self.active.pop().expect("undo of an applied append");
                self.deactivated.insert(index, m);
            }
            Proposal::Exchange { .. } => self.apply(p),
        }
    }
}

/// Picks uniformly among the valid operations, then uniformly among the
/// members it can touch. Never proposes an empty ensemble.
pub fn propose<R: Rng + ?Sized>(active: usize, deactivated: usize, rng: &mut R) -> Result<Proposal, MetaError> {
    let mut ops = Vec::with_capacity(3);
    if active >= 2 {
        ops.push(OpKind::Pop);
    }
    if deactivated >= 1 {
        ops.push(OpKind::Append);
        if active >= 1 {
            ops.push(OpKind::Exchange);
        }
    }
    if ops.is_empty() {
        return Err(MetaError::Saturated);
    }
    Ok(match ops[rng.random_range(0..ops.len())] {
        OpKind::Pop => Proposal::Pop { index: rng.random_range(0..active) },
        OpKind::Append => Proposal::Append { index: rng.random_range(0..deactivated) },
        OpKind::Exchange => {
            Proposal::Exchange { active: rng.random_range(0..active), deactivated: rng.random_range(0..deactivated) }
        }
    })
}

/// Metropolis rule: accept with probability `exp(min(0, rho_old - rho_new) / t)`.
pub fn accept<R: Rng + ?Sized>(rho_old: f64, rho_new: f64, t: f64, rng: &mut R) -> bool {
    assert!(t > 0.0, "temperature must be positive");
    let p = ((rho_old - rho_new).min(0.0) / t).exp();
    rng.random::<f64>() < p
}

/// One line of the annealing log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub proposal_index: usize,
    /// `pop`, `append`, `exchange` or `saturated`.
    pub op: String,
    pub k_before: usize,
    pub k_after: usize,
    pub rho_old: f64,
    pub rho_new: Option<f64>,
    /// Temperature the acceptance test used.
    pub temperature: f64,
    pub accepted: bool,
}

/// Annealing state, split into `begin` and `resolve` so that arbitrary work
/// (such as further training) can happen between proposing and scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Annealer {
    t: f64,
    t_min: f64,
    decay: f64,
    rho: f64,
    index: usize,
}

impl Annealer {
    pub fn new(cfg: &MetaConfig, initial_rho: f64) -> Self {
        Self { t: cfg.t0, t_min: cfg.t_min, decay: cfg.decay, rho: initial_rho, index: 0 }
    }

    pub fn temperature(&self) -> f64 {
        self.t
    }

    /// Score of the last accepted population.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn proposals(&self) -> usize {
        self.index
    }

    fn cool(&mut self) {
        self.t = (self.t * self.decay).max(self.t_min);
        self.index += 1;
    }

    /// Proposes and applies a change. A saturated population is logged and
    /// still counts as a proposal.
    pub fn begin<T, R: Rng + ?Sized>(&mut self, pop: &mut Population<T>, rng: &mut R) -> Result<Proposal, TraceRow> {
        match propose(pop.active.len(), pop.deactivated.len(), rng) {
            Ok(p) => {
                pop.apply(&p);
                Ok(p)
            }
            Err(_) => {
                let row = TraceRow {
                    proposal_index: self.index,
                    op: "saturated".into(),
                    k_before: pop.k(),
                    k_after: pop.k(),
                    rho_old: self.rho,
                    rho_new: None,
                    temperature: self.t,
                    accepted: false,
                };
                log::info!("proposal {} skipped: population saturated", self.index);
                self.cool();
                Err(row)
            }
        }
    }

    /// Accepts or undoes an applied proposal given its score.
    pub fn resolve<T, R: Rng + ?Sized>(&mut self, pop: &mut Population<T>, p: &Proposal, rho_new: f64, rng: &mut R) -> TraceRow {
        let k_after = pop.k();
        let k_before = match p.kind() {
            OpKind::Pop => k_after + 1,
            OpKind::Append => k_after - 1,
            OpKind::Exchange => k_after,
        };
        let accepted = accept(self.rho, rho_new, self.t, rng);
        let row = TraceRow {
            proposal_index: self.index,
            op: p.kind().name().into(),
            k_before,
            k_after: if accepted { k_after } else { k_before },
            rho_old: self.rho,
            rho_new: Some(rho_new),
            temperature: self.t,
            accepted,
        };
        if accepted {
            self.rho = rho_new;
        } else {
            pop.undo(p);
        }
        self.cool();
        row
    }
}

/// Runs `cfg.proposals` annealing steps with an injected scoring function.
pub fn anneal<T, R: Rng + ?Sized>(
    pop: &mut Population<T>,
    cfg: &MetaConfig,
    evaluator: &mut dyn FnMut(&Population<T>) -> f64,
    rng: &mut R,
) -> Vec<TraceRow> {
    let mut annealer = Annealer::new(cfg, evaluator(pop));
    let mut trace = Vec::with_capacity(cfg.proposals);
    for _ in 0..cfg.proposals {
        match annealer.begin(pop, rng) {
            Ok(p) => {
                let rho_new = evaluator(pop);
                trace.push(annealer.resolve(pop, &p, rho_new, rng));
            }
            Err(row) => trace.push(row),
        }
    }
    trace
}
