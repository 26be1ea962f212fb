//! Off-policy actor-critic learners, replay storage and episode rollouts.

mod recurrent;
mod replay;
mod rollout;
mod td3;

use thiserror::Error;

pub use recurrent::{EpisodeBuffer, RecurrentActorCritic, SequenceEpisode};
pub use replay::{MemberTag, ReplayBuffer, Role, SharedExperience, SharedReplayBuffer, Source, Transition};
pub use rollout::{
    mean_return, run_episode, selfplay_round, train_against, EpisodeResult, EpisodeSpec, LearnedOpponent, Mode, OpponentPolicy, ProtagonistLearner,
    ProtagonistPolicy, RoundStats, ScriptedOpponent,
};
pub(crate) use rollout::{draw_type, train_opponents, train_protagonist};
pub use td3::{clipped_noise, sample_categorical, ActionChoice, ActorCritic, LearnerConfig, TrainReport};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid learner setting `{key}`: {reason}")]
    Config { key: &'static str, reason: String },
    #[error("unknown mode `{0}` (expected belief or recurrent)")]
    Mode(String),
    #[error(transparent)]
    Checkpoint(#[from] crate::nn::CheckpointError),
}
