//! Two-player asymmetric tag game.
//!
//! The protagonist (an officer) shares an 8x8 continuous square with one
//! opponent whose type, ally or enemy, is hidden from the protagonist. The
//! opponent starts at the bottom middle and tries to reach the base of its
//! own type on the far side of the river. The protagonist may tag the
//! opponent while it is still on the near bank, and may probe for a noisy
//! reading of its type at an escalating cost.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called on a finished episode (outcome {0:?})")]
    EpisodeDone(Outcome),
    #[error("invalid game config `{key}`: {reason}")]
    InvalidConfig { key: &'static str, reason: String },
    #[error("unknown {what} `{value}`")]
    Parse { what: &'static str, value: String },
}

/// Hidden type of the opponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentType {
    Ally,
    Enemy,
}

impl AgentType {
    /// Canonical ordering used by every probability vector over types.
    pub const ALL: [AgentType; 2] = [AgentType::Ally, AgentType::Enemy];

    pub fn index(self) -> usize {
        match self {
            AgentType::Ally => 0,
            AgentType::Enemy => 1,
        }
    }

    pub fn from_index(index: usize) -> Self {
        match index {
            0 => AgentType::Ally,
            1 => AgentType::Enemy,
            _ => panic!("agent type index {index} out of range"),
        }
    }

    pub fn other(self) -> Self {
        match self {
            AgentType::Ally => AgentType::Enemy,
            AgentType::Enemy => AgentType::Ally,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentType::Ally => "ally",
            AgentType::Enemy => "enemy",
        }
    }
}

impl fmt::Display for AgentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentType {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ally" => Ok(AgentType::Ally),
            "enemy" => Ok(AgentType::Enemy),
            _ => Err(EnvError::Parse { what: "agent type", value: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn clamped(self, size: f64) -> Self {
        Self { x: self.x.clamp(0.0, size), y: self.y.clamp(0.0, size) }
    }

    fn shifted(self, (dx, dy): (f64, f64), step: f64) -> Self {
        Self { x: self.x + dx * step, y: self.y + dy * step }
    }
}

/// Game geometry, reward constants and episode limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameConfig {
    pub world_size: f64,
    pub tag_range: f64,
    pub probe_accuracy: f64,
    pub reward_tag_enemy: f64,
    pub reward_tag_ally: f64,
    pub reward_tagged: f64,
    pub tag_cost: f64,
    pub probe_cost_unit: f64,
    pub distance_coeff: f64,
    pub distance_exponent: f64,
    /// Lower edge of the river band; the opponent cannot be tagged above it.
    pub river_y_min: f64,
    pub ally_base: Position,
    pub enemy_base: Position,
    pub base_epsilon: f64,
    pub max_steps: u32,
    pub move_step: f64,
    pub protagonist_start: Position,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            world_size: 8.0,
            tag_range: 2.5,
            probe_accuracy: 0.8,
            reward_tag_enemy: 10.0,
            reward_tag_ally: -20.0,
            reward_tagged: -10.0,
            tag_cost: -0.2,
            probe_cost_unit: 0.25,
            distance_coeff: 0.25,
            distance_exponent: 0.4,
            river_y_min: 6.0,
            ally_base: Position::new(1.0, 7.5),
            enemy_base: Position::new(7.0, 7.5),
            base_epsilon: 0.5,
            max_steps: 60,
            move_step: 1.0,
            protagonist_start: Position::new(4.0, 4.0),
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let positive = [
            ("world_size", self.world_size),
            ("tag_range", self.tag_range),
            ("probe_cost_unit", self.probe_cost_unit),
            ("distance_coeff", self.distance_coeff),
            ("distance_exponent", self.distance_exponent),
            ("river_y_min", self.river_y_min),
            ("base_epsilon", self.base_epsilon),
            ("move_step", self.move_step),
        ];
        for (key, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(EnvError::InvalidConfig { key, reason: format!("must be positive, got {value}") });
            }
        }
        if !(self.probe_accuracy > 0.5 && self.probe_accuracy <= 1.0) {
            return Err(EnvError::InvalidConfig {
                key: "probe_accuracy",
                reason: format!("must lie in (0.5, 1], got {}", self.probe_accuracy),
            });
        }
        if self.river_y_min >= self.world_size {
            return Err(EnvError::InvalidConfig {
                key: "river_y_min",
                reason: "river band must lie inside the world".into(),
            });
        }
        for (key, base) in [("ally_base", self.ally_base), ("enemy_base", self.enemy_base)] {
            let inside = base.x >= 0.0 && base.x <= self.world_size;
            if !inside || base.y <= self.river_y_min || base.y > self.world_size {
                return Err(EnvError::InvalidConfig { key, reason: "base must lie inside the river band".into() });
            }
        }
        let start = self.protagonist_start;
        if start.clamped(self.world_size) != start {
            return Err(EnvError::InvalidConfig {
                key: "protagonist_start",
                reason: "must lie inside the world".into(),
            });
        }
        if self.max_steps == 0 {
            return Err(EnvError::InvalidConfig { key: "max_steps", reason: "must be at least 1".into() });
        }
        Ok(())
    }

    pub fn base(&self, agent: AgentType) -> Position {
        match agent {
            AgentType::Ally => self.ally_base,
            AgentType::Enemy => self.enemy_base,
        }
    }

    pub fn opponent_start(&self) -> Position {
        Position::new(self.world_size / 2.0, 0.0)
    }

    /// `-coeff * d^exponent`, the shaping term shared by both agents.
    pub fn distance_penalty(&self, distance: f64) -> f64 {
        -self.distance_coeff * distance.powf(self.distance_exponent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtagonistAction {
    MoveLeft,
    MoveRight,
    MoveUp,
    MoveDown,
    Tag,
    Probe,
}

impl ProtagonistAction {
    pub const ALL: [ProtagonistAction; 6] = [
        ProtagonistAction::MoveLeft,
        ProtagonistAction::MoveRight,
        ProtagonistAction::MoveUp,
        ProtagonistAction::MoveDown,
        ProtagonistAction::Tag,
        ProtagonistAction::Probe,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|a| *a == self).unwrap()
    }

    pub fn from_index(index: usize) -> Self {
        Self::ALL[index]
    }

    fn delta(self) -> Option<(f64, f64)> {
        match self {
            ProtagonistAction::MoveLeft => Some((-1.0, 0.0)),
            ProtagonistAction::MoveRight => Some((1.0, 0.0)),
            ProtagonistAction::MoveUp => Some((0.0, 1.0)),
            ProtagonistAction::MoveDown => Some((0.0, -1.0)),
            ProtagonistAction::Tag | ProtagonistAction::Probe => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpponentAction {
    MoveLeft,
    MoveRight,
    MoveUp,
    MoveDown,
}

impl OpponentAction {
    pub const ALL: [OpponentAction; 4] = [
        OpponentAction::MoveLeft,
        OpponentAction::MoveRight,
        OpponentAction::MoveUp,
        OpponentAction::MoveDown,
    ];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Self {
        Self::ALL[index]
    }

    fn delta(self) -> (f64, f64) {
        match self {
            OpponentAction::MoveLeft => (-1.0, 0.0),
            OpponentAction::MoveRight => (1.0, 0.0),
            OpponentAction::MoveUp => (0.0, 1.0),
            OpponentAction::MoveDown => (0.0, -1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Running,
    Tagged,
    OpponentHome,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub protagonist_pos: Position,
    pub opponent_pos: Position,
    pub opponent_type: AgentType,
    pub step: u32,
    pub probe_count: u32,
    pub done: bool,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtagonistObs {
    pub protagonist_pos: Position,
    pub opponent_pos: Position,
    pub last_opponent_action: Option<OpponentAction>,
    pub probe_reading: Option<AgentType>,
    pub probe_count: u32,
    pub step: u32,
}

/// Length of [`ProtagonistObs::raw_features`].
pub const RAW_FEATURES: usize = 12;

impl ProtagonistObs {
    /// Belief-free encoding used by the recurrent protagonist: positions,
    /// one-hot last opponent move, one-hot probe reading, probe count, clock.
    pub fn raw_features(&self, config: &GameConfig) -> [f64; RAW_FEATURES] {
        let s = config.world_size;
        let mut f = [0.0; RAW_FEATURES];
        f[0] = self.protagonist_pos.x / s;
        f[1] = self.protagonist_pos.y / s;
        f[2] = self.opponent_pos.x / s;
        f[3] = self.opponent_pos.y / s;
        if let Some(a) = self.last_opponent_action {
            f[4 + a.index()] = 1.0;
        }
        if let Some(t) = self.probe_reading {
            f[8 + t.index()] = 1.0;
        }
        f[10] = (self.probe_count as f64 / 10.0).min(1.0);
        f[11] = self.step as f64 / config.max_steps as f64;
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpponentObs {
    pub protagonist_pos: Position,
    pub opponent_pos: Position,
    pub own_type: AgentType,
    pub step: u32,
}

/// Length of [`OpponentObs::features`].
pub const OPPONENT_FEATURES: usize = 5;

impl OpponentObs {
    /// Network input for opponent policies. The type is not encoded: each
    /// type has its own network.
    pub fn features(&self, config: &GameConfig) -> [f64; OPPONENT_FEATURES] {
        let s = config.world_size;
        [
            self.protagonist_pos.x / s,
            self.protagonist_pos.y / s,
            self.opponent_pos.x / s,
            self.opponent_pos.y / s,
            self.step as f64 / config.max_steps as f64,
        ]
    }

    pub fn with_type(&self, own_type: AgentType) -> Self {
        Self { own_type, ..self.clone() }
    }
}

/// Physical outcome of one protagonist action, independent of the hidden type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepEvents {
    pub action: ProtagonistAction,
    pub tag_success: bool,
    /// Probe count after this step, so a probe counts itself.
    pub probe_count: u32,
    /// Protagonist-opponent distance after the move.
    pub opponent_distance: f64,
}

/// Protagonist reward had the opponent been of type `hypothetical`.
pub fn protagonist_reward_given_type(events: &StepEvents, hypothetical: AgentType, config: &GameConfig) -> f64 {
    let mut reward = config.distance_penalty(events.opponent_distance);
    match events.action {
        ProtagonistAction::Tag => {
            reward += config.tag_cost;
            if events.tag_success {
                reward += match hypothetical {
                    AgentType::Enemy => config.reward_tag_enemy,
                    AgentType::Ally => config.reward_tag_ally,
                };
            }
        }
        ProtagonistAction::Probe => reward -= config.probe_cost_unit * events.probe_count as f64,
        _ => {}
    }
    reward
}

/// Opponent reward in `state`: distance-to-own-base shaping plus the tag penalty.
pub fn opponent_reward(state: &WorldState, tagged: bool, config: &GameConfig) -> f64 {
    let d = state.opponent_pos.distance(config.base(state.opponent_type));
    let mut reward = config.distance_penalty(d);
    if tagged {
        reward += config.reward_tagged;
    }
    reward
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub protagonist_obs: ProtagonistObs,
    pub opponent_obs: OpponentObs,
    pub protagonist_reward: f64,
    pub opponent_reward: f64,
    pub done: bool,
    pub events: StepEvents,
}

/// One running game with its own random stream (used for probe noise and
/// type sampling).
#[derive(Debug, Clone)]
pub struct TagGame {
    config: GameConfig,
    state: WorldState,
    rng: ChaCha8Rng,
}

impl TagGame {
    /// Starts an episode with the opponent type drawn uniformly from `seed`.
    pub fn reset(config: GameConfig, seed: u64) -> (Self, ProtagonistObs, OpponentObs) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let opponent_type = if rng.random_bool(0.5) { AgentType::Enemy } else { AgentType::Ally };
        Self::start(config, rng, opponent_type)
    }

    /// Starts an episode with a fixed opponent type.
    pub fn reset_with_type(config: GameConfig, seed: u64, opponent_type: AgentType) -> (Self, ProtagonistObs, OpponentObs) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // keep the probe stream aligned with `reset`
        let _ = rng.random_bool(0.5);
        Self::start(config, rng, opponent_type)
    }

    fn start(config: GameConfig, rng: ChaCha8Rng, opponent_type: AgentType) -> (Self, ProtagonistObs, OpponentObs) {
        let state = WorldState {
            protagonist_pos: config.protagonist_start,
            opponent_pos: config.opponent_start(),
            opponent_type,
            step: 0,
            probe_count: 0,
            done: false,
            outcome: Outcome::Running,
        };
        let game = Self { config, state, rng };
        let p_obs = game.protagonist_obs(None, None);
        let o_obs = game.opponent_obs();
        (game, p_obs, o_obs)
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    pub fn opponent_obs(&self) -> OpponentObs {
        OpponentObs {
            protagonist_pos: self.state.protagonist_pos,
            opponent_pos: self.state.opponent_pos,
            own_type: self.state.opponent_type,
            step: self.state.step,
        }
    }

    fn protagonist_obs(&self, last: Option<OpponentAction>, reading: Option<AgentType>) -> ProtagonistObs {
        ProtagonistObs {
            protagonist_pos: self.state.protagonist_pos,
            opponent_pos: self.state.opponent_pos,
            last_opponent_action: last,
            probe_reading: reading,
            probe_count: self.state.probe_count,
            step: self.state.step,
        }
    }

    /// Advances both agents by one simultaneous tick.
    pub fn step(&mut self, a_p: ProtagonistAction, a_o: OpponentAction) -> Result<StepOutcome, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeDone(self.state.outcome));
        }
        let cfg = &self.config;
        let size = cfg.world_size;
        let opponent_before = self.state.opponent_pos;

        let mut tag_success = false;
        let mut reading = None;
        match a_p {
            ProtagonistAction::Tag => {
                let d = self.state.protagonist_pos.distance(opponent_before);
                tag_success = d < cfg.tag_range && opponent_before.y <= cfg.river_y_min;
            }
            ProtagonistAction::Probe => {
                self.state.probe_count += 1;
                let truth = self.state.opponent_type;
                reading = Some(if self.rng.random_bool(cfg.probe_accuracy) { truth } else { truth.other() });
            }
            _ => {
                let delta = a_p.delta().unwrap();
                self.state.protagonist_pos = self.state.protagonist_pos.shifted(delta, cfg.move_step).clamped(size);
            }
        }

        // a tagged opponent is caught before it can move
        if !tag_success {
            self.state.opponent_pos = opponent_before.shifted(a_o.delta(), cfg.move_step).clamped(size);
        }
        self.state.step += 1;

        let home = self.state.opponent_pos.distance(cfg.base(self.state.opponent_type)) <= cfg.base_epsilon;
        self.state.outcome = if tag_success {
            Outcome::Tagged
        } else if home {
            Outcome::OpponentHome
        } else if self.state.step >= cfg.max_steps {
            Outcome::Timeout
        } else {
            Outcome::Running
        };
        self.state.done = self.state.outcome != Outcome::Running;

        let events = StepEvents {
            action: a_p,
            tag_success,
            probe_count: self.state.probe_count,
            opponent_distance: self.state.protagonist_pos.distance(self.state.opponent_pos),
        };
        let protagonist_reward = protagonist_reward_given_type(&events, self.state.opponent_type, cfg);
        let opponent_reward = opponent_reward(&self.state, tag_success, cfg);
        Ok(StepOutcome {
            protagonist_obs: self.protagonist_obs(Some(a_o), reading),
            opponent_obs: self.opponent_obs(),
            protagonist_reward,
            opponent_reward,
            done: self.state.done,
            events,
        })
    }
}

/// Hand-written opponents for tests, benchmarks and trace inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptedKind {
    /// Greedy toward its own base.
    Rush,
    /// Toward the ally base until across the river, then toward its own base.
    Deceive,
    /// Uniform over moves.
    Random,
}

impl FromStr for ScriptedKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rush" => Ok(ScriptedKind::Rush),
            "deceive" => Ok(ScriptedKind::Deceive),
            "random" => Ok(ScriptedKind::Random),
            _ => Err(EnvError::Parse { what: "scripted opponent", value: s.to_string() }),
        }
    }
}

/// Greedy unit move: the axis with the larger gap wins, vertical on ties.
pub fn greedy_move(from: Position, target: Position) -> OpponentAction {
    let dx = target.x - from.x;
    let dy = target.y - from.y;
    if dy.abs() >= dx.abs() {
        if dy >= 0.0 {
            OpponentAction::MoveUp
        } else {
            OpponentAction::MoveDown
        }
    } else if dx > 0.0 {
        OpponentAction::MoveRight
    } else {
        OpponentAction::MoveLeft
    }
}

/// Action distribution of a scripted opponent (one-hot unless `Random`).
pub fn scripted_distribution(kind: ScriptedKind, obs: &OpponentObs, config: &GameConfig) -> [f64; 4] {
    let target = match kind {
        ScriptedKind::Random => return [0.25; 4],
        ScriptedKind::Rush => config.base(obs.own_type),
        ScriptedKind::Deceive if obs.opponent_pos.y > config.river_y_min => config.base(obs.own_type),
        ScriptedKind::Deceive => config.ally_base,
    };
    let mut probs = [0.0; 4];
    probs[greedy_move(obs.opponent_pos, target).index()] = 1.0;
    probs
}

pub fn scripted_opponent<R: Rng + ?Sized>(
    kind: ScriptedKind,
    obs: &OpponentObs,
    config: &GameConfig,
    rng: &mut R,
) -> OpponentAction {
    match kind {
        ScriptedKind::Random => OpponentAction::from_index(rng.random_range(0..OpponentAction::COUNT)),
        _ => {
            let probs = scripted_distribution(kind, obs, config);
            OpponentAction::from_index(probs.iter().position(|p| *p == 1.0).unwrap())
        }
    }
}

/// One line of an exported episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: u32,
    pub protagonist_pos: Position,
    pub opponent_pos: Position,
    pub protagonist_action: ProtagonistAction,
    pub opponent_action: OpponentAction,
    pub protagonist_reward: f64,
    pub opponent_reward: f64,
    pub probe_reading: Option<AgentType>,
    /// Belief the protagonist acted on, ordered `[ally, enemy]`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prior_belief: Option<[f64; 2]>,
    /// Belief after this step.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub belief: Option<[f64; 2]>,
}

/// Writes one JSON object per line.
pub fn write_trace_jsonl<W: Write>(mut out: W, steps: &[TraceStep]) -> std::io::Result<()> {
    for step in steps {
        serde_json::to_writer(&mut out, step)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
