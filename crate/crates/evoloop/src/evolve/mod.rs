//! The orchestrated self-evolution loop: rollout groups, judging,
//! comparison mining and buffer insertion, gated retrieval and teacher
//! re-scoring, the combined loss, and one parameter update per step, with
//! checkpointing and full-run determinism.
//!
//! Randomness is derived statelessly: the rollout for prompt slot `j` of
//! step `s` uses seed `run_seed + s·10_000 + j·100 + rollout_index`, so the
//! persistent "rng state" is just the run seed and the step counter, and a
//! resumed run replays the uninterrupted one bit for bit.

mod checkpoint;
mod config;
mod step;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ExperienceSection, GrpoSection, RunConfig, SdlSection};
pub use step::{run_evolution, run_step, write_run_outputs, EvolutionState};

#[derive(Debug, thiserror::Error)]
pub enum EvolveError {
    #[error("config error: {0}")]
    Config(String),
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl EvolveError {
    /// Process exit code: 2 for config errors, 3 for fixture errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            EvolveError::Config(_) => 2,
            EvolveError::Fixture(_) => 3,
            _ => 1,
        }
    }
}

impl From<crate::environment::EnvError> for EvolveError {
    fn from(e: crate::environment::EnvError) -> Self {
        use crate::environment::EnvError as E;
        match e {
            E::FixtureInvalid(_) | E::UnknownPrompt(_) => EvolveError::Fixture(e.to_string()),
            E::GroupTooSmall(_) => EvolveError::Config(e.to_string()),
            other => EvolveError::Internal(other.to_string()),
        }
    }
}

impl From<crate::policy::PolicyError> for EvolveError {
    fn from(e: crate::policy::PolicyError) -> Self {
        EvolveError::Internal(e.to_string())
    }
}

impl From<crate::optimize::OptimizeError> for EvolveError {
    fn from(e: crate::optimize::OptimizeError) -> Self {
        EvolveError::Internal(e.to_string())
    }
}

impl From<crate::experience::ExperienceError> for EvolveError {
    fn from(e: crate::experience::ExperienceError) -> Self {
        EvolveError::Internal(e.to_string())
    }
}

impl From<std::io::Error> for EvolveError {
    fn from(e: std::io::Error) -> Self {
        EvolveError::Io(e.to_string())
    }
}
