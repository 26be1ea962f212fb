use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::recurrent::{EpisodeBuffer, RecurrentActorCritic, SequenceEpisode};
use super::replay::{MemberTag, ReplayBuffer, Role, SharedExperience, Source, Transition};
use super::td3::{ActionChoice, ActorCritic, LearnerConfig, TrainReport};
use super::LearnerError;
use crate::belief::{belief_reward, encode_protagonist_input, Belief, OpponentModelSet, BELIEF_FEATURES};
use crate::env::{
    scripted_distribution, scripted_opponent, AgentType, GameConfig, OpponentAction, OpponentObs, Outcome,
    ProtagonistAction, ProtagonistObs, ScriptedKind, TagGame, TraceStep, RAW_FEATURES,
};
use crate::nn::{Checkpoint, CheckpointError};
use crate::par_map;

/// Protagonist architecture: belief-conditioned feed-forward, or recurrent
/// over raw observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Belief,
    Recurrent,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Belief => "belief",
            Mode::Recurrent => "recurrent",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = LearnerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "belief" => Ok(Mode::Belief),
            "recurrent" => Ok(Mode::Recurrent),
            _ => Err(LearnerError::Mode(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ProtagonistPolicy<'a> {
    Belief(&'a ActorCritic),
    Recurrent(&'a RecurrentActorCritic),
    /// Uniform over all six actions; uses the belief pipeline.
    Uniform,
    Fixed(ProtagonistAction),
}

impl ProtagonistPolicy<'_> {
    pub fn mode(&self) -> Mode {
        match self {
            ProtagonistPolicy::Recurrent(_) => Mode::Recurrent,
            _ => Mode::Belief,
        }
    }
}

pub trait OpponentPolicy: Sync {
    fn choose(&self, obs: &OpponentObs, explore: bool, rng: &mut ChaCha8Rng) -> ActionChoice;

    fn source(&self) -> Source;
}

#[derive(Debug, Clone)]
pub struct ScriptedOpponent {
    pub kind: ScriptedKind,
    pub config: GameConfig,
}

impl OpponentPolicy for ScriptedOpponent {
    fn choose(&self, obs: &OpponentObs, _explore: bool, rng: &mut ChaCha8Rng) -> ActionChoice {
        let probs = scripted_distribution(self.kind, obs, &self.config).to_vec();
        let action = scripted_opponent(self.kind, obs, &self.config, rng).index();
        ActionChoice { action, policy_probs: probs.clone(), probs }
    }

    fn source(&self) -> Source {
        Source::Scripted
    }
}

/// Per-type learned opponent networks.
#[derive(Debug, Clone, Copy)]
pub struct LearnedOpponent<'a> {
    pub nets: [&'a ActorCritic; 2],
    pub config: &'a GameConfig,
    pub source: Source,
}

impl OpponentPolicy for LearnedOpponent<'_> {
    fn choose(&self, obs: &OpponentObs, explore: bool, rng: &mut ChaCha8Rng) -> ActionChoice {
        self.nets[obs.own_type.index()].act(&obs.features(self.config), explore, rng)
    }

    fn source(&self) -> Source {
        self.source
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub seed: u64,
    /// Fixed opponent type, or `None` to draw it from the seed.
    pub opponent_type: Option<AgentType>,
    pub explore_protagonist: bool,
    pub explore_opponent: bool,
    /// Ensemble member that controls the opponent, for replay tags.
    pub member: Option<usize>,
    pub record_trace: bool,
}

impl EpisodeSpec {
    pub fn training(seed: u64, opponent_type: AgentType, member: Option<usize>) -> Self {
        Self {
            seed,
            opponent_type: Some(opponent_type),
            explore_protagonist: true,
            explore_opponent: true,
            member,
            record_trace: false,
        }
    }

    pub fn evaluation(seed: u64, opponent_type: Option<AgentType>) -> Self {
        Self {
            seed,
            opponent_type,
            explore_protagonist: false,
            explore_opponent: false,
            member: None,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub opponent_type: AgentType,
    pub outcome: Outcome,
    pub steps: u32,
    /// Sum of true environment rewards.
    pub protagonist_return: f64,
    /// Sum of belief-space rewards (equal to the true return in recurrent mode).
    pub protagonist_belief_return: f64,
    pub opponent_return: f64,
    pub final_belief: Belief,
    pub trace: Vec<TraceStep>,
    pub protagonist_transitions: Vec<Transition>,
    pub protagonist_episode: Option<SequenceEpisode>,
    pub opponent_transitions: Vec<Transition>,
}

fn agent_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15)
}

fn uniform_choice(rng: &mut ChaCha8Rng) -> ActionChoice {
    let probs = vec![1.0 / ProtagonistAction::COUNT as f64; ProtagonistAction::COUNT];
    ActionChoice { action: rng.random_range(0..ProtagonistAction::COUNT), policy_probs: probs.clone(), probs }
}

fn fixed_choice(action: ProtagonistAction) -> ActionChoice {
    let mut probs = vec![0.0; ProtagonistAction::COUNT];
    probs[action.index()] = 1.0;
    ActionChoice { action: action.index(), policy_probs: probs.clone(), probs }
}

fn protagonist_input(mode: Mode, obs: &ProtagonistObs, belief: &Belief, config: &GameConfig) -> Vec<f64> {
    match mode {
        Mode::Belief => encode_protagonist_input(obs, belief, config).to_vec(),
        Mode::Recurrent => obs.raw_features(config).to_vec(),
    }
}

/// Plays one episode. All agent randomness comes from `spec.seed`, so the
/// same inputs always give the same result.
///
/// The belief is updated from the opponent's observed move (judged against
/// its pre-move observation) and then from the probe reading, if any. In
/// belief mode the protagonist is trained on the belief-space reward taken
/// under the belief it acted on.
pub fn run_episode(
    config: &GameConfig,
    protagonist: &ProtagonistPolicy<'_>,
    opponent: &dyn OpponentPolicy,
    models: &dyn OpponentModelSet,
    spec: &EpisodeSpec,
) -> EpisodeResult {
    let mode = protagonist.mode();
    let (mut game, mut p_obs, mut o_obs) = match spec.opponent_type {
        Some(t) => TagGame::reset_with_type(config.clone(), spec.seed, t),
        None => TagGame::reset(config.clone(), spec.seed),
    };
    let opponent_type = game.state().opponent_type;
    let mut rng = agent_rng(spec.seed);
    let mut belief = Belief::uniform();
    let mut hidden = match protagonist {
        ProtagonistPolicy::Recurrent(net) => net.initial_hidden(),
        _ => Vec::new(),
    };
    let opp_tag = MemberTag { role: Role::Opponent, agent_type: opponent_type, member: spec.member, source: opponent.source() };
    let pro_tag = MemberTag { role: Role::Protagonist, ..opp_tag };

    let mut result = EpisodeResult {
        opponent_type,
        outcome: Outcome::Running,
        steps: 0,
        protagonist_return: 0.0,
        protagonist_belief_return: 0.0,
        opponent_return: 0.0,
        final_belief: belief,
        trace: Vec::new(),
        protagonist_transitions: Vec::new(),
        protagonist_episode: None,
        opponent_transitions: Vec::new(),
    };
    let mut sequence = SequenceEpisode { inputs: Vec::new(), actions: Vec::new(), action_probs: Vec::new(), rewards: Vec::new() };

    loop {
        let p_input = protagonist_input(mode, &p_obs, &belief, config);
        let p_choice = match protagonist {
            ProtagonistPolicy::Belief(net) => net.act(&p_input, spec.explore_protagonist, &mut rng),
            ProtagonistPolicy::Recurrent(net) => net.act(&mut hidden, &p_input, spec.explore_protagonist, &mut rng),
            ProtagonistPolicy::Uniform => uniform_choice(&mut rng),
            ProtagonistPolicy::Fixed(a) => fixed_choice(*a),
        };
        let o_input = o_obs.features(config).to_vec();
        let o_choice = opponent.choose(&o_obs, spec.explore_opponent, &mut rng);
        let a_p = ProtagonistAction::from_index(p_choice.action);
        let a_o = OpponentAction::from_index(o_choice.action);
        let out = game.step(a_p, a_o).expect("episode loop stops at done");

        let mut next_belief = belief.predict().update_action(&o_obs, a_o, models);
        if let Some(reading) = out.protagonist_obs.probe_reading {
            next_belief = next_belief.update_probe(reading, config.probe_accuracy);
        }
        let r_belief = belief_reward(&belief, &out.events, config);
        let next_p_input = protagonist_input(mode, &out.protagonist_obs, &next_belief, config);

        result.protagonist_return += out.protagonist_reward;
        result.opponent_return += out.opponent_reward;
        match mode {
            Mode::Belief => {
                result.protagonist_belief_return += r_belief;
                result.protagonist_transitions.push(Transition {
                    input: p_input,
                    action: p_choice.action,
                    action_probs: p_choice.policy_probs,
                    reward: r_belief,
                    next_input: next_p_input,
                    done: out.done,
                    tag: pro_tag,
                });
            }
            Mode::Recurrent => {
                result.protagonist_belief_return += out.protagonist_reward;
                sequence.inputs.push(p_input);
                sequence.actions.push(p_choice.action);
                sequence.action_probs.push(p_choice.policy_probs);
                sequence.rewards.push(out.protagonist_reward);
                if out.done {
                    sequence.inputs.push(next_p_input);
                }
            }
        }
        result.opponent_transitions.push(Transition {
            input: o_input,
            action: o_choice.action,
            action_probs: o_choice.policy_probs,
            reward: out.opponent_reward,
            next_input: out.opponent_obs.features(config).to_vec(),
            done: out.done,
            tag: opp_tag,
        });
        if spec.record_trace {
            let state = game.state();
            result.trace.push(TraceStep {
                step: state.step,
                protagonist_pos: state.protagonist_pos,
                opponent_pos: state.opponent_pos,
                protagonist_action: a_p,
                opponent_action: a_o,
                protagonist_reward: out.protagonist_reward,
                opponent_reward: out.opponent_reward,
                probe_reading: out.protagonist_obs.probe_reading,
                prior_belief: (mode == Mode::Belief).then(|| belief.probs()),
                belief: (mode == Mode::Belief).then(|| next_belief.probs()),
            });
        }

        belief = next_belief;
        p_obs = out.protagonist_obs;
        o_obs = out.opponent_obs;
        if out.done {
            break;
        }
    }
    let state = game.state();
    result.outcome = state.outcome;
    result.steps = state.step;
    result.final_belief = belief;
    if mode == Mode::Recurrent {
        result.protagonist_episode = Some(sequence);
    }
    result
}

/// A trainable protagonist together with its own replay storage.
#[derive(Debug, Clone)]
pub enum ProtagonistLearner {
    Belief { net: ActorCritic, buffer: ReplayBuffer },
    Recurrent { net: RecurrentActorCritic, buffer: EpisodeBuffer },
}

impl ProtagonistLearner {
    pub fn new<R: Rng + ?Sized>(mode: Mode, cfg: &LearnerConfig, rng: &mut R) -> Self {
        match mode {
            Mode::Belief => ProtagonistLearner::Belief {
                net: ActorCritic::new(BELIEF_FEATURES, ProtagonistAction::COUNT, cfg, rng),
                buffer: ReplayBuffer::new(cfg.buffer_capacity),
            },
            Mode::Recurrent => ProtagonistLearner::Recurrent {
                net: RecurrentActorCritic::new(RAW_FEATURES, ProtagonistAction::COUNT, cfg, rng),
                buffer: EpisodeBuffer::new(cfg.buffer_capacity),
            },
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            ProtagonistLearner::Belief { .. } => Mode::Belief,
            ProtagonistLearner::Recurrent { .. } => Mode::Recurrent,
        }
    }

    pub fn policy(&self) -> ProtagonistPolicy<'_> {
        match self {
            ProtagonistLearner::Belief { net, .. } => ProtagonistPolicy::Belief(net),
            ProtagonistLearner::Recurrent { net, .. } => ProtagonistPolicy::Recurrent(net),
        }
    }

    /// Moves the protagonist's experience out of `result` into its buffer.
    pub fn record(&mut self, result: &mut EpisodeResult) {
        match self {
            ProtagonistLearner::Belief { buffer, .. } => buffer.extend(std::mem::take(&mut result.protagonist_transitions)),
            ProtagonistLearner::Recurrent { buffer, .. } => {
                if let Some(ep) = result.protagonist_episode.take() {
                    buffer.push(ep);
                }
            }
        }
    }

    pub fn train<R: Rng + ?Sized>(&mut self, rng: &mut R) -> TrainReport {
        match self {
            ProtagonistLearner::Belief { net, buffer } => net.train(buffer, rng),
            ProtagonistLearner::Recurrent { net, buffer } => net.train(buffer, rng),
        }
    }

    pub fn updates(&self) -> u64 {
        match self {
            ProtagonistLearner::Belief { net, .. } => net.updates(),
            ProtagonistLearner::Recurrent { net, .. } => net.updates(),
        }
    }

    pub fn all_params(&self) -> Vec<f64> {
        match self {
            ProtagonistLearner::Belief { net, .. } => net.all_params(),
            ProtagonistLearner::Recurrent { net, .. } => net.all_params(),
        }
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        match self {
            ProtagonistLearner::Belief { net, .. } => net.to_checkpoint(seed),
            ProtagonistLearner::Recurrent { net, .. } => net.to_checkpoint(seed),
        }
    }

    /// Rebuilds a learner (with an empty buffer) from a saved checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &LearnerConfig) -> Result<Self, CheckpointError> {
        Ok(match ckpt.arch.as_str() {
            "recurrent-td3" => ProtagonistLearner::Recurrent {
                net: RecurrentActorCritic::from_checkpoint(ckpt, cfg)?,
                buffer: EpisodeBuffer::new(cfg.buffer_capacity),
            },
            _ => ProtagonistLearner::Belief {
                net: ActorCritic::from_checkpoint(ckpt, cfg)?,
                buffer: ReplayBuffer::new(cfg.buffer_capacity),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RoundStats {
    pub episodes: usize,
    pub env_steps: usize,
    pub protagonist_return: f64,
    pub protagonist_belief_return: f64,
    pub opponent_return: f64,
    pub critic_loss: f64,
}

impl RoundStats {
    /// Sums returns over `results` and divides by the episode count.
    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a EpisodeResult>) -> Self {
        let mut s = RoundStats::default();
        for r in results {
            s.episodes += 1;
            s.env_steps += r.steps as usize;
            s.protagonist_return += r.protagonist_return;
            s.protagonist_belief_return += r.protagonist_belief_return;
            s.opponent_return += r.opponent_return;
        }
        if s.episodes > 0 {
            let n = s.episodes as f64;
            s.protagonist_return /= n;
            s.protagonist_belief_return /= n;
            s.opponent_return /= n;
        }
        s
    }
}

pub(crate) fn draw_type<R: Rng + ?Sized>(rng: &mut R) -> AgentType {
    if rng.random_bool(0.5) {
        AgentType::Enemy
    } else {
        AgentType::Ally
    }
}

pub(crate) fn train_opponents<R: Rng + ?Sized>(
    nets: &mut [ActorCritic; 2],
    shared: &SharedExperience,
    grad_steps: usize,
    rng: &mut R,
) {
    for t in AgentType::ALL {
        for _ in 0..grad_steps {
            nets[t.index()].train(shared.for_type(t), rng);
        }
    }
}

pub(crate) fn train_protagonist<R: Rng + ?Sized>(protagonist: &mut ProtagonistLearner, grad_steps: usize, rng: &mut R) -> f64 {
    let mut loss = 0.0;
    let mut n = 0;
    for _ in 0..grad_steps {
        if let TrainReport::Updated { critic_loss, .. } = protagonist.train(rng) {
            loss += critic_loss;
            n += 1;
        }
    }
    if n > 0 {
        loss / n as f64
    } else {
        0.0
    }
}

/// Plain two-player self-play with a single opponent pair: `episodes`
/// rollouts, then `grad_steps` updates for every learner.
#[allow(clippy::too_many_arguments)]
pub fn selfplay_round<R: Rng + ?Sized>(
    config: &GameConfig,
    protagonist: &mut ProtagonistLearner,
    opponents: &mut [ActorCritic; 2],
    shared: &mut SharedExperience,
    models: &(dyn OpponentModelSet + Sync),
    episodes: usize,
    grad_steps: usize,
    rng: &mut R,
) -> RoundStats {
    let specs: Vec<EpisodeSpec> = (0..episodes)
        .map(|_| {
            let t = draw_type(rng);
            EpisodeSpec::training(rng.random(), t, Some(0))
        })
        .collect();
    let mut results = {
        let policy = protagonist.policy();
        let opponent = LearnedOpponent { nets: [&opponents[0], &opponents[1]], config, source: Source::Learner };
        par_map(&specs, |spec| run_episode(config, &policy, &opponent, models, spec))
    };
    let mut stats = RoundStats::from_results(&results);
    for r in &mut results {
        protagonist.record(r);
        shared.extend(std::mem::take(&mut r.opponent_transitions));
    }
    stats.critic_loss = train_protagonist(protagonist, grad_steps, rng);
    train_opponents(opponents, shared, grad_steps, rng);
    stats
}

/// Trains the protagonist alone against a fixed opponent until at least
/// `env_steps` environment steps have been played. Returns the steps used.
#[allow(clippy::too_many_arguments)]
pub fn train_against<R: Rng + ?Sized>(
    config: &GameConfig,
    protagonist: &mut ProtagonistLearner,
    opponent: &dyn OpponentPolicy,
    opponent_type: Option<AgentType>,
    models: &(dyn OpponentModelSet + Sync),
    episodes_per_round: usize,
    grad_steps: usize,
    env_steps: usize,
    rng: &mut R,
) -> usize {
    let mut used = 0;
    while used < env_steps {
        let specs: Vec<EpisodeSpec> = (0..episodes_per_round)
            .map(|_| {
                let t = opponent_type.unwrap_or_else(|| draw_type(rng));
                EpisodeSpec::training(rng.random(), t, None)
            })
            .collect();
        let mut results = {
            let policy = protagonist.policy();
            par_map(&specs, |spec| run_episode(config, &policy, opponent, models, spec))
        };
        for r in &mut results {
            used += r.steps as usize;
            protagonist.record(r);
        }
        train_protagonist(protagonist, grad_steps, rng);
    }
    used
}

/// Mean true protagonist return over `episodes` greedy episodes.
pub fn mean_return(
    config: &GameConfig,
    protagonist: &ProtagonistPolicy<'_>,
    opponent: &dyn OpponentPolicy,
    opponent_type: Option<AgentType>,
    models: &(dyn OpponentModelSet + Sync),
    episodes: usize,
    seed: u64,
) -> f64 {
    let seeds: Vec<u64> = (0..episodes as u64).map(|i| seed.wrapping_mul(1_000_003).wrapping_add(i)).collect();
    let returns = par_map(&seeds, |s| {
        run_episode(config, protagonist, opponent, models, &EpisodeSpec::evaluation(*s, opponent_type)).protagonist_return
    });
    returns.iter().sum::<f64>() / episodes as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{ScriptedModels, UninformativeModels};

    fn cfg() -> LearnerConfig {
        LearnerConfig { hidden: vec![16, 16], batch_size: 16, recurrent_hidden: 8, ..LearnerConfig::default() }
    }

    fn rush() -> ScriptedOpponent {
        ScriptedOpponent { kind: ScriptedKind::Rush, config: GameConfig::default() }
    }

    #[test]
    fn episodes_are_deterministic() {
        let game = GameConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = ActorCritic::new(BELIEF_FEATURES, 6, &cfg(), &mut rng);
        let spec = EpisodeSpec { record_trace: true, ..EpisodeSpec::training(5, AgentType::Enemy, None) };
        let a = run_episode(&game, &ProtagonistPolicy::Belief(&net), &rush(), &UninformativeModels, &spec);
        let b = run_episode(&game, &ProtagonistPolicy::Belief(&net), &rush(), &UninformativeModels, &spec);
        assert_eq!(a, b);
        assert_eq!(a.trace.len() as u32, a.steps);
        assert_eq!(a.opponent_transitions.len() as u32, a.steps);
        assert!(a.opponent_transitions.last().unwrap().done);
    }

    #[test]
    fn passive_protagonist_sees_rush_get_home() {
        let game = GameConfig::default();
        let spec = EpisodeSpec::evaluation(1, Some(AgentType::Enemy));
        let r = run_episode(&game, &ProtagonistPolicy::Fixed(ProtagonistAction::MoveLeft), &rush(), &UninformativeModels, &spec);
        assert_eq!(r.outcome, Outcome::OpponentHome);
        assert_eq!(r.steps, 10);
    }

    #[test]
    fn exact_models_identify_deceiver_only_after_crossing() {
        let game = GameConfig::default();
        let deceive = ScriptedOpponent { kind: ScriptedKind::Deceive, config: game.clone() };
        let models = ScriptedModels { kind: ScriptedKind::Deceive, config: game.clone() };
        let spec = EpisodeSpec { record_trace: true, ..EpisodeSpec::evaluation(3, Some(AgentType::Enemy)) };
        let r = run_episode(&game, &ProtagonistPolicy::Fixed(ProtagonistAction::MoveLeft), &deceive, &models, &spec);
        let first = r.trace[0].belief.unwrap();
        assert!((first[0] - 0.5).abs() < 1e-12, "{first:?}");
        assert!(r.final_belief.prob(AgentType::Enemy) > 0.99);
    }

    #[test]
    fn belief_reward_uses_decision_belief() {
        let game = GameConfig::default();
        let spec = EpisodeSpec::evaluation(2, Some(AgentType::Ally));
        let r = run_episode(&game, &ProtagonistPolicy::Fixed(ProtagonistAction::Probe), &rush(), &UninformativeModels, &spec);
        // first probe under a uniform belief: only distance and probe cost
        let d = Position::new(4.0, 4.0).distance(Position::new(4.0, 1.0));
        let expected = game.distance_penalty(d) - game.probe_cost_unit;
        assert!((r.protagonist_transitions[0].reward - expected).abs() < 1e-12);
    }

    #[test]
    fn recurrent_episode_shapes() {
        let game = GameConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let learner = ProtagonistLearner::new(Mode::Recurrent, &cfg(), &mut rng);
        let r = run_episode(&game, &learner.policy(), &rush(), &UninformativeModels, &EpisodeSpec::training(9, AgentType::Ally, None));
        let ep = r.protagonist_episode.unwrap();
        assert_eq!(ep.len() as u32, r.steps);
        assert_eq!(ep.inputs.len(), ep.len() + 1);
        assert!(r.protagonist_transitions.is_empty());
        assert!(r.trace.is_empty());
    }

    #[test]
    fn selfplay_round_fills_buffers() {
        let game = GameConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = cfg();
        let mut protagonist = ProtagonistLearner::new(Mode::Belief, &c, &mut rng);
        let mut opponents = [ActorCritic::new(5, 4, &c, &mut rng), ActorCritic::new(5, 4, &c, &mut rng)];
        let mut shared = SharedExperience::new(10_000);
        let stats = selfplay_round(&game, &mut protagonist, &mut opponents, &mut shared, &UninformativeModels, 8, 3, &mut rng);
        assert_eq!(stats.episodes, 8);
        assert_eq!(shared.len(), stats.env_steps);
        assert_eq!(protagonist.updates(), 3);
    }

    use crate::env::Position;
}
