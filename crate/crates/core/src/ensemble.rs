//! Ensemble self-play: several opponent learners with different discount
//! factors plus neuroevolved mutants, all feeding one shared replay.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{OpponentModelSet, UninformativeModels};
use crate::distill::{distill, BeliefModels, DistillConfig, DistilledModels};
use crate::env::{AgentType, GameConfig, OPPONENT_FEATURES};
use crate::learner::{
    draw_type, run_episode, train_protagonist, ActorCritic, EpisodeResult, EpisodeSpec, LearnedOpponent, LearnerConfig,
    LearnerError, Mode, ProtagonistLearner, RoundStats, SharedExperience, Source,
};
use crate::meta::{evaluate_ensemble, Annealer, MetaConfig, MetaError, Population, Proposal, TraceRow};
use crate::nn::{mutate, Checkpoint, CheckpointError};
use crate::par_map;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid ensemble setting `{key}`: {reason}")]
    Config { key: &'static str, reason: String },
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub gammas: Vec<f64>,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub grad_steps: usize,
    /// Mutants per evolution step.
    pub evo_population: usize,
    pub evo_sigma: f64,
    /// Evaluation episodes per mutant.
    pub evo_episodes: usize,
    /// Reward margin a mutant must clear to replace its parent.
    pub evo_margin: f64,
    /// Epochs between distillation refreshes; 0 disables distillation.
    pub distill_cadence: usize,
    pub distill: DistillConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            gammas: vec![0.9, 0.99, 0.997, 0.9995],
            epochs: 50,
            episodes_per_epoch: 20,
            grad_steps: 64,
            evo_population: 8,
            evo_sigma: 0.05,
            evo_episodes: 3,
            evo_margin: 0.5,
            distill_cadence: 10,
            distill: DistillConfig::default(),
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        let bad = |key: &'static str, reason: &str| Err(EnsembleError::Config { key, reason: reason.to_string() });
        if self.gammas.is_empty() {
            return bad("gammas", "needs at least one discount factor");
        }
        if self.gammas.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return bad("gammas", "every discount factor must lie in (0, 1)");
        }
        let mut sorted = self.gammas.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return bad("gammas", "discount factors must be distinct");
        }
        if self.episodes_per_epoch == 0 {
            return bad("episodes_per_epoch", "must be positive");
        }
        if !(self.evo_sigma >= 0.0) {
            return bad("evo_sigma", "must be non-negative");
        }
        if self.evo_population > 0 && self.evo_episodes == 0 {
            return bad("evo_episodes", "must be positive when evolution is on");
        }
        Ok(())
    }
}

/// One opponent learner: a network pair per opponent type sharing a discount.
#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub id: usize,
    pub gamma: f64,
    pub nets: [ActorCritic; 2],
    /// Exponential moving average of this member's episode reward.
    pub running_reward: Option<f64>,
}

impl EnsembleMember {
    pub fn new<R: Rng + ?Sized>(id: usize, gamma: f64, learner: &LearnerConfig, rng: &mut R) -> Self {
        let cfg = learner.with_gamma(gamma);
        let nets = [ActorCritic::new(OPPONENT_FEATURES, 4, &cfg, rng), ActorCritic::new(OPPONENT_FEATURES, 4, &cfg, rng)];
        Self { id, gamma, nets, running_reward: None }
    }

    pub fn record_reward(&mut self, reward: f64) {
        self.running_reward = Some(match self.running_reward {
            None => reward,
            Some(r) => 0.9 * r + 0.1 * reward,
        });
    }

    pub fn opponent<'a>(&'a self, game: &'a GameConfig) -> LearnedOpponent<'a> {
        LearnedOpponent { nets: [&self.nets[0], &self.nets[1]], config: game, source: Source::Learner }
    }

    pub fn to_checkpoint(&self, agent_type: AgentType, seed: u64) -> Checkpoint {
        let mut ckpt = self.nets[agent_type.index()].to_checkpoint(seed);
        ckpt.set_meta("member", self.id);
        ckpt.set_meta("type", agent_type);
        ckpt
    }

    pub fn from_checkpoints(ally: &Checkpoint, enemy: &Checkpoint, learner: &LearnerConfig) -> Result<Self, CheckpointError> {
        let id = ally
            .meta("member")?
            .parse()
            .map_err(|_| CheckpointError::Parse { line: 0, reason: "bad member id".into() })?;
        let nets = [ActorCritic::from_checkpoint(ally, learner)?, ActorCritic::from_checkpoint(enemy, learner)?];
        Ok(Self { id, gamma: nets[0].gamma(), nets, running_reward: None })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub stats: RoundStats,
    /// Mean opponent return per member id among this epoch's episodes.
    pub member_returns: BTreeMap<usize, f64>,
    /// Episodes per member id.
    pub member_counts: BTreeMap<usize, usize>,
}

fn record_results(
    protagonist: &mut ProtagonistLearner,
    shared: &mut SharedExperience,
    results: &mut [EpisodeResult],
) {
    for r in results {
        protagonist.record(r);
        shared.extend(std::mem::take(&mut r.opponent_transitions));
    }
}

/// `episodes_per_epoch` rollouts, each against a uniformly drawn active
/// member and opponent type, then `grad_steps` updates for the protagonist
/// and for every member that played.
pub fn self_play_epoch<R: Rng + ?Sized>(
    protagonist: &mut ProtagonistLearner,
    pop: &mut Population<EnsembleMember>,
    shared: &mut SharedExperience,
    models: &(dyn OpponentModelSet + Sync),
    game: &GameConfig,
    cfg: &EnsembleConfig,
    rng: &mut R,
) -> EpochReport {
    let k = pop.k();
    let jobs: Vec<(usize, EpisodeSpec)> = (0..cfg.episodes_per_epoch)
        .map(|_| {
            let member = if k > 1 { rng.random_range(0..k) } else { 0 };
            let t = draw_type(rng);
            (member, EpisodeSpec::training(rng.random(), t, Some(pop.active[member].id)))
        })
        .collect();
    let mut results = {
        let policy = protagonist.policy();
        let opponents: Vec<LearnedOpponent<'_>> = pop.active.iter().map(|m| m.opponent(game)).collect();
        par_map(&jobs, |(m, spec)| run_episode(game, &policy, &opponents[*m], models, spec))
    };
    let stats = RoundStats::from_results(&results);
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for ((m, _), r) in jobs.iter().zip(&results) {
        let e = sums.entry(*m).or_insert((0.0, 0));
        e.0 += r.opponent_return;
        e.1 += 1;
        pop.active[*m].record_reward(r.opponent_return);
    }
    record_results(protagonist, shared, &mut results);

    let critic_loss = train_protagonist(protagonist, cfg.grad_steps, rng);
    for m in sums.keys() {
        crate::learner::train_opponents(&mut pop.active[*m].nets, shared, cfg.grad_steps, rng);
    }
    let ids: Vec<usize> = pop.active.iter().map(|m| m.id).collect();
    EpochReport {
        stats: RoundStats { critic_loss, ..stats },
        member_returns: sums.iter().map(|(m, (s, n))| (ids[*m], s / *n as f64)).collect(),
        member_counts: sums.iter().map(|(m, (_, n))| (ids[*m], *n)).collect(),
    }
}

/// Perturbs parameters in place given a noise scale and a seed.
pub type Mutator<'a> = &'a (dyn Fn(&mut [f64], f64, u64) + Sync);

/// The default mutation: i.i.d. Gaussian noise.
pub fn gaussian_mutator() -> Mutator<'static> {
    &mutate
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replacement {
    pub member: usize,
    pub agent_type: AgentType,
    pub mutant_reward: f64,
    pub parent_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvolutionReport {
    pub mutants: usize,
    pub transitions_added: usize,
    pub replacements: Vec<Replacement>,
}

/// Mutates actors of randomly chosen (member, type) pairs, plays each
/// mutant against the frozen protagonist, stores the mutant trajectories,
/// and lets a mutant replace its parent's actor when it beats the parent on
/// the same episode seeds by more than `evo_margin`.
#[allow(clippy::too_many_arguments)]
pub fn evolution_step<R: Rng + ?Sized>(
    pop: &mut Population<EnsembleMember>,
    protagonist: &ProtagonistLearner,
    shared: &mut SharedExperience,
    models: &(dyn OpponentModelSet + Sync),
    game: &GameConfig,
    cfg: &EnsembleConfig,
    mutator: Mutator<'_>,
    rng: &mut R,
) -> EvolutionReport {
    let k = pop.k();
    struct Job {
        member: usize,
        agent_type: AgentType,
        seeds: Vec<u64>,
        mutant: ActorCritic,
    }
    let jobs: Vec<Job> = (0..cfg.evo_population)
        .map(|_| {
            let member = if k > 1 { rng.random_range(0..k) } else { 0 };
            let agent_type = draw_type(rng);
            let mutation_seed: u64 = rng.random();
            let seeds = (0..cfg.evo_episodes).map(|_| rng.random()).collect();
            let mut mutant = pop.active[member].nets[agent_type.index()].clone();
            let mut params = mutant.actor.params().to_vec();
            mutator(&mut params, cfg.evo_sigma, mutation_seed);
            mutant.set_actor_params(&params);
            Job { member, agent_type, seeds, mutant }
        })
        .collect();

    let policy = protagonist.policy();
    let play = |job: &Job, net: &ActorCritic, source: Source| -> Vec<EpisodeResult> {
        let parent = &pop.active[job.member];
        let mut nets = [&parent.nets[0], &parent.nets[1]];
        nets[job.agent_type.index()] = net;
        let opponent = LearnedOpponent { nets, config: game, source };
        job.seeds
            .iter()
            .map(|s| {
                let spec = EpisodeSpec { member: Some(parent.id), ..EpisodeSpec::evaluation(*s, Some(job.agent_type)) };
                run_episode(game, &policy, &opponent, models, &spec)
            })
            .collect()
    };
    let outcomes: Vec<(Vec<EpisodeResult>, f64)> = par_map(&jobs, |job| {
        let mutant = play(job, &job.mutant, Source::Mutant);
        let parent = play(job, &pop.active[job.member].nets[job.agent_type.index()], Source::Learner);
        let mean = |rs: &[EpisodeResult]| rs.iter().map(|r| r.opponent_return).sum::<f64>() / rs.len() as f64;
        let parent_mean = mean(&parent);
        (mutant, parent_mean)
    });

    let mut report = EvolutionReport { mutants: jobs.len(), ..EvolutionReport::default() };
    let mut best: BTreeMap<(usize, usize), (usize, f64, f64)> = BTreeMap::new();
    for (j, (job, (results, parent_mean))) in jobs.iter().zip(outcomes).enumerate() {
        let mutant_mean = results.iter().map(|r| r.opponent_return).sum::<f64>() / results.len() as f64;
        for r in results {
            report.transitions_added += r.opponent_transitions.len();
            shared.extend(r.opponent_transitions);
        }
        if mutant_mean > parent_mean + cfg.evo_margin {
            let key = (job.member, job.agent_type.index());
            if best.get(&key).is_none_or(|b| mutant_mean > b.1) {
                best.insert(key, (j, mutant_mean, parent_mean));
            }
        }
    }
    for ((member, t), (j, mutant_mean, parent_mean)) in best {
        let params = jobs[j].mutant.actor.params().to_vec();
        let m = &mut pop.active[member];
        m.nets[t].set_actor_params(&params);
        report.replacements.push(Replacement {
            member: m.id,
            agent_type: AgentType::from_index(t),
            mutant_reward: mutant_mean,
            parent_reward: parent_mean,
        });
    }
    report
}

/// Everything `train_full` needs.
#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub game: GameConfig,
    pub learner: LearnerConfig,
    pub ensemble: EnsembleConfig,
    /// Discount of each initial member; the length is the ensemble size.
    pub member_gammas: Vec<f64>,
    pub evolution: bool,
    /// Interleaved ensemble annealing, if enabled.
    pub meta: Option<MetaConfig>,
    pub mode: Mode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Cumulative environment steps (self-play and mutant rollouts).
    pub env_steps: usize,
    pub protagonist_return: f64,
    pub protagonist_belief_return: f64,
    pub opponent_return: f64,
    /// Mean opponent return per member id this epoch.
    pub member_returns: BTreeMap<usize, f64>,
    pub buffer_size: usize,
    pub active_k: usize,
    pub evo_replacements: usize,
    pub critic_loss: f64,
    pub rho: Option<f64>,
    pub distilled: bool,
}

pub struct TrainState {
    pub protagonist: ProtagonistLearner,
    pub population: Population<EnsembleMember>,
    pub models: BeliefModels,
    pub shared: SharedExperience,
    pub metrics: Vec<EpochMetrics>,
    pub meta_trace: Vec<TraceRow>,
}

impl TrainState {
    /// Initial networks, drawn from the plan's seed in a fixed order:
    /// protagonist first, then members in order.
    pub fn new<R: Rng + ?Sized>(plan: &TrainPlan, rng: &mut R) -> Self {
        let protagonist = ProtagonistLearner::new(plan.mode, &plan.learner, rng);
        let members =
            plan.member_gammas.iter().enumerate().map(|(i, g)| EnsembleMember::new(i, *g, &plan.learner, rng)).collect();
        Self {
            protagonist,
            population: Population::new(members),
            models: BeliefModels::Uninformative,
            shared: SharedExperience::new(plan.learner.buffer_capacity),
            metrics: Vec::new(),
            meta_trace: Vec::new(),
        }
    }

    fn models(&self) -> &(dyn OpponentModelSet + Sync) {
        match self.protagonist.mode() {
            Mode::Belief => &self.models,
            Mode::Recurrent => &UninformativeModels,
        }
    }
}

/// Refits both per-type models from the shared replay. Types without
/// enough data keep their previous model.
pub fn refresh_models(
    current: &BeliefModels,
    shared: &SharedExperience,
    game: &GameConfig,
    cfg: &DistillConfig,
    seed: u64,
) -> Option<BeliefModels> {
    let fits = par_map(&AgentType::ALL, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t.index() as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
        distill(shared, *t, cfg, &mut rng)
    });
    let previous = match current {
        BeliefModels::Distilled(d) => Some(d.nets.clone()),
        _ => None,
    };
    let mut nets = Vec::with_capacity(2);
    for (t, fit) in AgentType::ALL.iter().zip(fits) {
        match (fit, &previous) {
            (Ok(d), _) => nets.push(d.net),
            (Err(e), Some(prev)) => {
                log::info!("keeping previous {t} model: {e}");
                nets.push(prev[t.index()].clone());
            }
            (Err(e), None) => {
                log::info!("distillation skipped: {e}");
                return None;
            }
        }
    }
    let enemy = nets.pop().unwrap();
    let ally = nets.pop().unwrap();
    Some(BeliefModels::Distilled(DistilledModels { nets: [ally, enemy], config: game.clone() }))
}

/// Alternates self-play and evolution for `plan.ensemble.epochs` epochs,
/// refreshing the belief models and (if enabled) running one annealing
/// proposal every `epochs_per_proposal` epochs. `on_epoch` sees the state
/// after every epoch, e.g. to write metrics and checkpoints.
pub fn train_full(
    plan: &TrainPlan,
    on_epoch: &mut dyn FnMut(&EpochMetrics, &TrainState),
) -> Result<TrainState, EnsembleError> {
    plan.learner.validate()?;
    plan.ensemble.validate()?;
    plan.game.validate().map_err(|e| EnsembleError::Config { key: "env", reason: e.to_string() })?;
    if plan.member_gammas.is_empty() {
        return Err(EnsembleError::Config { key: "gammas", reason: "the ensemble needs a member".into() });
    }
    if let Some(meta) = &plan.meta {
        meta.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut state = TrainState::new(plan, &mut rng);
    let mut env_steps = 0;
    let mut annealer: Option<Annealer> = None;
    let mut pending: Option<Proposal> = None;

    for epoch in 0..plan.ensemble.epochs {
        let report = {
            let models: &(dyn OpponentModelSet + Sync) = match plan.mode {
                Mode::Belief => &state.models,
                Mode::Recurrent => &UninformativeModels,
            };
            self_play_epoch(
                &mut state.protagonist,
                &mut state.population,
                &mut state.shared,
                models,
                &plan.game,
                &plan.ensemble,
                &mut rng,
            )
        };
        env_steps += report.stats.env_steps;

        let mut evo = EvolutionReport::default();
        if plan.evolution && plan.ensemble.evo_population > 0 {
            let models = match plan.mode {
                Mode::Belief => state.models.clone(),
                Mode::Recurrent => BeliefModels::Uninformative,
            };
            evo = evolution_step(
                &mut state.population,
                &state.protagonist,
                &mut state.shared,
                &models,
                &plan.game,
                &plan.ensemble,
                gaussian_mutator(),
                &mut rng,
            );
            env_steps += evo.transitions_added;
        }

        let mut distilled = false;
        let cadence = plan.ensemble.distill_cadence;
        if plan.mode == Mode::Belief && cadence > 0 && (epoch + 1) % cadence == 0 {
            let seed = plan.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            if let Some(m) = refresh_models(&state.models, &state.shared, &plan.game, &plan.ensemble.distill, seed) {
                state.models = m;
                distilled = true;
            }
        }

        let mut rho = None;
        if let Some(meta) = &plan.meta {
            let every = meta.epochs_per_proposal.max(1);
            let last = epoch + 1 == plan.ensemble.epochs;
            if (epoch + 1) % every == 0 || (last && pending.is_some()) {
                let eval_seed: u64 = rng.random();
                let eval = evaluate_ensemble(
                    &state.protagonist,
                    state.models(),
                    &plan.game,
                    &plan.learner,
                    meta,
                    state.population.k(),
                    eval_seed,
                );
                rho = Some(eval.report.rho);
                match (&mut annealer, pending.take()) {
                    (None, _) => annealer = Some(Annealer::new(meta, eval.report.rho)),
                    (Some(a), Some(p)) => {
                        let row = a.resolve(&mut state.population, &p, eval.report.rho, &mut rng);
                        state.meta_trace.push(row);
                    }
                    (Some(_), None) => {}
                }
                let a = annealer.as_mut().unwrap();
                if !last && a.proposals() < meta.proposals {
                    match a.begin(&mut state.population, &mut rng) {
                        Ok(p) => pending = Some(p),
                        Err(row) => state.meta_trace.push(row),
                    }
                }
            }
        }

        let metrics = EpochMetrics {
            epoch,
            env_steps,
            protagonist_return: report.stats.protagonist_return,
            protagonist_belief_return: report.stats.protagonist_belief_return,
            opponent_return: report.stats.opponent_return,
            member_returns: report.member_returns,
            buffer_size: state.shared.len(),
            active_k: state.population.k(),
            evo_replacements: evo.replacements.len(),
            critic_loss: report.stats.critic_loss,
            rho,
            distilled,
        };
        state.metrics.push(metrics.clone());
        on_epoch(&metrics, &state);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ProtagonistAction;
    use crate::learner::{selfplay_round, ProtagonistPolicy};
    use crate::nn::DenseNet;

    fn learner() -> LearnerConfig {
        LearnerConfig { hidden: vec![16, 16], batch_size: 32, recurrent_hidden: 8, ..LearnerConfig::default() }
    }

    fn small() -> EnsembleConfig {
        EnsembleConfig {
            epochs: 3,
            episodes_per_epoch: 6,
            grad_steps: 4,
            evo_population: 3,
            distill_cadence: 0,
            ..EnsembleConfig::default()
        }
    }

    fn population(gammas: &[f64], rng: &mut ChaCha8Rng) -> Population<EnsembleMember> {
        Population::new(gammas.iter().enumerate().map(|(i, g)| EnsembleMember::new(i, *g, &learner(), rng)).collect())
    }

    #[test]
    fn member_selection_is_uniform_and_tagged() {
        let game = GameConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pop = population(&[0.9, 0.99, 0.997, 0.9995], &mut rng);
        let mut protagonist = ProtagonistLearner::new(Mode::Belief, &learner(), &mut rng);
        let mut shared = SharedExperience::new(200_000);
        let cfg = EnsembleConfig { episodes_per_epoch: 1000, grad_steps: 0, ..small() };
        let report = self_play_epoch(&mut protagonist, &mut pop, &mut shared, &UninformativeModels, &game, &cfg, &mut rng);
        let n = 1000.0;
        let p = 0.25;
        for c in report.member_counts.values() {
            assert!((*c as f64 - n * p).abs() <= 3.0 * (n * p * (1.0 - p)).sqrt(), "{:?}", report.member_counts);
        }
        assert_eq!(shared.len(), report.stats.env_steps);
        // per-member transition counts match the rollouts credited to them
        let mut by_member: BTreeMap<usize, usize> = BTreeMap::new();
        for t in AgentType::ALL {
            for tr in shared.for_type(t).iter() {
                assert_eq!(tr.tag.source, Source::Learner);
                *by_member.entry(tr.tag.member.unwrap()).or_default() += 1;
            }
        }
        assert_eq!(by_member.len(), 4);
    }

    #[test]
    fn zero_sigma_never_replaces() {
        let game = GameConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pop = population(&[0.9, 0.99], &mut rng);
        let protagonist = ProtagonistLearner::new(Mode::Belief, &learner(), &mut rng);
        let mut shared = SharedExperience::new(10_000);
        let cfg = EnsembleConfig { evo_sigma: 0.0, evo_population: 4, ..small() };
        let before: Vec<Vec<f64>> = pop.active.iter().map(|m| m.nets[1].all_params()).collect();
        let report = evolution_step(&mut pop, &protagonist, &mut shared, &UninformativeModels, &game, &cfg, gaussian_mutator(), &mut rng);
        assert!(report.replacements.is_empty());
        assert_eq!(shared.len(), report.transitions_added);
        assert!(report.transitions_added > 0);
        let after: Vec<Vec<f64>> = pop.active.iter().map(|m| m.nets[1].all_params()).collect();
        assert_eq!(before, after);
        assert_eq!(shared.census().get("mutant"), Some(&report.transitions_added));
    }

    /// Actor for an opponent that walks right until x = 7, then up: the
    /// enemy's fastest route home.
    fn rush_actor() -> Vec<f64> {
        let mut net = DenseNet::zeros(&[5, 16, 16, 4], Head::Softmax);
        let p = net.params_mut();
        // layer 0 (16x5 weights then 16 biases)
        p[2] = -1.0; // h0 = relu(0.8125 - x_o / 8)
        p[80] = 0.8125;
        p[81] = 1.0; // h1 = relu(1)
        // layer 1 starts at 96: identity on the first two units
        let l1 = 96;
        p[l1] = 1.0;
        p[l1 + 16 + 1] = 1.0;
        // layer 2 starts at 96 + 272; rows are MoveLeft, MoveRight, MoveUp, MoveDown
        let l2 = l1 + 16 * 16 + 16;
        p[l2 + 16] = 1000.0;
        p[l2 + 2 * 16 + 1] = 20.0;
        p.to_vec()
    }

    use crate::nn::Head;

    #[test]
    fn rigged_rush_mutant_replaces_parent() {
        let game = GameConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pop = population(&[0.99], &mut rng);
        let protagonist = ProtagonistLearner::new(Mode::Belief, &learner(), &mut rng);
        // sanity: the hand-built actor reaches the enemy base
        let mut rushing = pop.active[0].nets[1].clone();
        rushing.set_actor_params(&rush_actor());
        let opp = LearnedOpponent { nets: [&rushing, &rushing], config: &game, source: Source::Mutant };
        let r = run_episode(&game, &ProtagonistPolicy::Fixed(ProtagonistAction::MoveLeft), &opp, &UninformativeModels, &EpisodeSpec::evaluation(0, Some(AgentType::Enemy)));
        assert_eq!(r.outcome, crate::env::Outcome::OpponentHome);

        let rig = |params: &mut [f64], _sigma: f64, _seed: u64| params.copy_from_slice(&rush_actor());
        let mut shared = SharedExperience::new(10_000);
        let cfg = EnsembleConfig { evo_population: 8, ..small() };
        let report = evolution_step(&mut pop, &protagonist, &mut shared, &UninformativeModels, &game, &cfg, &rig, &mut rng);
        assert!(report.replacements.iter().any(|r| r.agent_type == AgentType::Enemy), "{report:?}");
        assert_eq!(pop.active[0].nets[1].actor.params(), &rush_actor()[..]);
    }

    #[test]
    fn evolution_keeps_protagonist_frozen() {
        let game = GameConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pop = population(&[0.9, 0.99], &mut rng);
        let protagonist = ProtagonistLearner::new(Mode::Belief, &learner(), &mut rng);
        let before = protagonist.all_params();
        let mut shared = SharedExperience::new(10_000);
        evolution_step(&mut pop, &protagonist, &mut shared, &UninformativeModels, &game, &small(), gaussian_mutator(), &mut rng);
        assert_eq!(protagonist.all_params(), before);
    }

    fn plan(mode: Mode) -> TrainPlan {
        TrainPlan {
            game: GameConfig::default(),
            learner: learner(),
            ensemble: small(),
            member_gammas: vec![0.9, 0.99, 0.997, 0.9995],
            evolution: true,
            meta: None,
            mode,
            seed: 11,
        }
    }

    #[test]
    fn single_member_without_evolution_is_plain_selfplay() {
        let mut p = plan(Mode::Belief);
        p.member_gammas = vec![0.99];
        p.evolution = false;
        p.ensemble.epochs = 4;
        let trained = train_full(&p, &mut |_, _| {}).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let mut protagonist = ProtagonistLearner::new(Mode::Belief, &p.learner, &mut rng);
        let member = EnsembleMember::new(0, 0.99, &p.learner, &mut rng);
        let mut nets = member.nets;
        let mut shared = SharedExperience::new(p.learner.buffer_capacity);
        for _ in 0..4 {
            selfplay_round(&p.game, &mut protagonist, &mut nets, &mut shared, &UninformativeModels, p.ensemble.episodes_per_epoch, p.ensemble.grad_steps, &mut rng);
        }
        assert_eq!(trained.protagonist.all_params(), protagonist.all_params());
        assert_eq!(trained.population.active[0].nets[0].all_params(), nets[0].all_params());
        assert_eq!(trained.population.active[0].nets[1].all_params(), nets[1].all_params());
        assert_eq!(trained.shared.len(), shared.len());
    }

    #[test]
    fn full_cycle_mixes_sources_and_keeps_gammas() {
        let mut rows = 0;
        let trained = train_full(&plan(Mode::Belief), &mut |_, _| rows += 1).unwrap();
        assert_eq!(rows, 3);
        assert_eq!(trained.metrics.len(), 3);
        let census = trained.shared.census();
        assert!(census.get("learner").copied().unwrap_or(0) > 0);
        assert!(census.get("mutant").copied().unwrap_or(0) > 0);
        let mut gammas: Vec<f64> = trained.population.active.iter().map(|m| m.gamma).collect();
        gammas.dedup();
        assert_eq!(gammas.len(), 4);
        for m in &trained.population.active {
            assert_eq!(m.nets[0].gamma(), m.gamma);
        }
    }

    #[test]
    fn training_is_reproducible() {
        let a = train_full(&plan(Mode::Recurrent), &mut |_, _| {}).unwrap();
        let b = train_full(&plan(Mode::Recurrent), &mut |_, _| {}).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.protagonist.all_params(), b.protagonist.all_params());
    }

    #[test]
    fn distillation_refreshes_models() {
        let mut p = plan(Mode::Belief);
        p.ensemble.distill_cadence = 2;
        p.ensemble.epochs = 2;
        p.ensemble.episodes_per_epoch = 20;
        p.ensemble.distill = DistillConfig { steps: 20, min_samples: 100, ..DistillConfig::default() };
        let trained = train_full(&p, &mut |_, _| {}).unwrap();
        assert!(trained.metrics[1].distilled);
        assert!(matches!(trained.models, BeliefModels::Distilled(_)));
    }

    #[test]
    fn interleaved_annealing_logs_proposals() {
        let mut p = plan(Mode::Belief);
        p.ensemble.epochs = 6;
        p.ensemble.evo_population = 0;
        p.meta = Some(MetaConfig {
            epochs_per_proposal: 1,
            proposals: 10,
            eval_steps: 100,
            eval_episodes: 4,
            eval_batch_episodes: 2,
            eval_grad_steps: 2,
            ..MetaConfig::default()
        });
        let trained = train_full(&p, &mut |_, _| {}).unwrap();
        assert_eq!(trained.meta_trace.len(), 5);
        assert!(trained.population.k() >= 1);
        assert_eq!(trained.population.k() + trained.population.deactivated.len(), 4);
        assert!(trained.metrics.iter().all(|m| m.rho.is_some()));
    }
}
