//! Posterior over the opponent's hidden type.
//!
//! Physical state is fully observed, so the filter only tracks the type
//! marginal. Types never change within an episode, which makes the
//! prediction step the identity; each observed opponent move and each probe
//! reading multiplies in a likelihood.

use serde::{Deserialize, Serialize};

use crate::env::{
    protagonist_reward_given_type, AgentType, GameConfig, OpponentAction, OpponentObs, ProtagonistObs, ScriptedKind,
    StepEvents, scripted_distribution,
};

/// Lower bound applied to every likelihood before normalization.
pub const LIKELIHOOD_FLOOR: f64 = 1e-6;

/// Length of [`encode_protagonist_input`].
pub const BELIEF_FEATURES: usize = 7;

/// Probability vector over [`AgentType::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief {
    probs: [f64; 2],
}

impl Default for Belief {
    fn default() -> Self {
        Self::uniform()
    }
}

impl Belief {
    pub fn uniform() -> Self {
        Self { probs: [0.5, 0.5] }
    }

    pub fn point_mass(agent: AgentType) -> Self {
        let mut probs = [0.0; 2];
        probs[agent.index()] = 1.0;
        Self { probs }
    }

    /// Normalizes non-negative weights. Returns `None` if they are not a
    /// usable unnormalized distribution.
    pub fn from_weights(weights: [f64; 2]) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || total <= 0.0 {
            return None;
        }
        Some(Self { probs: [weights[0] / total, weights[1] / total] })
    }

    pub fn probs(&self) -> [f64; 2] {
        self.probs
    }

    pub fn prob(&self, agent: AgentType) -> f64 {
        self.probs[agent.index()]
    }

    /// Type persistence: the prediction step leaves the type marginal unchanged.
    pub fn predict(&self) -> Self {
        *self
    }

    fn reweight(&self, likelihood: impl Fn(AgentType) -> f64) -> Self {
        let mut weights = [0.0; 2];
        for agent in AgentType::ALL {
            weights[agent.index()] = likelihood(agent).max(LIKELIHOOD_FLOOR) * self.prob(agent);
        }
        Self::from_weights(weights).expect("floored likelihoods keep a valid belief normalizable")
    }

    /// Bayes update on an observed opponent move. `obs` is the opponent's
    /// pre-move observation; its `own_type` is ignored and replaced by each
    /// hypothesis in turn.
    pub fn update_action(&self, obs: &OpponentObs, action: OpponentAction, models: &dyn OpponentModelSet) -> Self {
        self.reweight(|agent| models.action_probs(&obs.with_type(agent))[action.index()])
    }

    /// Bayes update on a noisy probe reading.
    pub fn update_probe(&self, reading: AgentType, accuracy: f64) -> Self {
        self.reweight(|agent| if agent == reading { accuracy } else { 1.0 - accuracy })
    }

    /// Expected protagonist reward under this belief, holding the physical
    /// outcome of the step fixed.
    pub fn expected_reward(&self, events: &StepEvents, config: &GameConfig) -> f64 {
        AgentType::ALL
            .iter()
            .map(|&agent| self.prob(agent) * protagonist_reward_given_type(events, agent, config))
            .sum()
    }
}

/// Belief-space reward of one step.
pub fn belief_reward(belief: &Belief, events: &StepEvents, config: &GameConfig) -> f64 {
    belief.expected_reward(events, config)
}

/// Feed-forward protagonist input: positions scaled to the unit square, the
/// enemy probability, probe count over ten (saturating) and the clock.
pub fn encode_protagonist_input(obs: &ProtagonistObs, belief: &Belief, config: &GameConfig) -> [f64; BELIEF_FEATURES] {
    let s = config.world_size;
    [
        obs.protagonist_pos.x / s,
        obs.protagonist_pos.y / s,
        obs.opponent_pos.x / s,
        obs.opponent_pos.y / s,
        belief.prob(AgentType::Enemy),
        (obs.probe_count as f64 / 10.0).min(1.0),
        obs.step as f64 / config.max_steps as f64,
    ]
}

/// Per-type opponent policy used as the likelihood inside the filter.
pub trait OpponentModelSet {
    /// Action distribution of an opponent of type `obs.own_type`.
    fn action_probs(&self, obs: &OpponentObs) -> [f64; 4];
}

impl<F> OpponentModelSet for F
where
    F: Fn(&OpponentObs) -> [f64; 4],
{
    fn action_probs(&self, obs: &OpponentObs) -> [f64; 4] {
        self(obs)
    }
}

/// Models that carry no information; the filter then only learns from probes.
#[derive(Debug, Clone, Copy, Default)]
pub struct UninformativeModels;

impl OpponentModelSet for UninformativeModels {
    fn action_probs(&self, _obs: &OpponentObs) -> [f64; 4] {
        [0.25; 4]
    }
}

/// Exact models of a scripted opponent.
#[derive(Debug, Clone)]
pub struct ScriptedModels {
    pub kind: ScriptedKind,
    pub config: GameConfig,
}

impl OpponentModelSet for ScriptedModels {
    fn action_probs(&self, obs: &OpponentObs) -> [f64; 4] {
        scripted_distribution(self.kind, obs, &self.config)
    }
}
