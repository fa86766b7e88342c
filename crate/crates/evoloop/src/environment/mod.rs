//! Deterministic mock world behind the three tools, plus seeded rollout and
//! group sampling so the full loop runs without external services.

mod rollout;
#[cfg(test)]
mod tests;
mod tools;
mod world;

pub use rollout::{
    judge_rollout, run_group, run_rollout, RolloutConfig, RolloutGroup, TokenTrace, TraceStep,
};
pub use tools::{execute_tool, BudgetState};
pub use world::{
    load_world, render_outcome, FactEntry, GroundTruthSpec, PromptCase, RenderedOutcome,
    ResolvedReference, World, WorldImage,
};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("fixture invalid: {0}")]
    FixtureInvalid(String),
    #[error("tool budget exhausted")]
    BudgetExhausted,
    #[error("unknown skill: {0}")]
    UnknownSkill(String),
    #[error("unknown prompt: {0}")]
    UnknownPrompt(String),
    #[error("group too small: K={0}, need K >= 2")]
    GroupTooSmall(usize),
}
