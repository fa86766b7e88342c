//! Pluggable adapters for external judge, summarizer, and embedder
//! services: strict record schemas, rate limiting over a simulated or real
//! clock, and builtin fallbacks. Transport is caller-provided; nothing here
//! opens a connection, and the acceptance path never leaves the builtins.

use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::VecDeque;

use crate::environment::{GroundTruthSpec, RenderedOutcome};
use crate::protocol::PromptReferenceProgram;
use crate::reward::{JudgeOutput, RubricScores};

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("adapter timed out after {0} s")]
    Timeout(f64),
    #[error("rate cap of {0} calls per minute exceeded")]
    RateLimited(u32),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("transport: {0}")]
    Transport(String),
}

/// What to do when the external call fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    UseBuiltin,
    Fail,
}

/// Adapter configuration; defaults mirror the summarizer service limits
/// (90 s timeout, 80 requests per minute).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub endpoint: String,
    pub timeout_secs: f64,
    pub requests_per_minute: u32,
    pub retries: u32,
    pub fallback: Fallback,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            endpoint: "builtin".into(),
            timeout_secs: 90.0,
            requests_per_minute: 80,
            retries: 0,
            fallback: Fallback::UseBuiltin,
        }
    }
}

/// Monotonic clock abstraction so rate limiting is testable with a
/// simulated clock.
pub trait Clock {
    fn now_secs(&self) -> f64;
}

/// Wall clock.
#[derive(Debug, Default)]
pub struct SystemClock {
    start: std::sync::OnceLock<std::time::Instant>,
}

impl Clock for SystemClock {
    fn now_secs(&self) -> f64 {
        let start = self.start.get_or_init(std::time::Instant::now);
        start.elapsed().as_secs_f64()
    }
}

/// Manually advanced clock for tests.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: RefCell<f64>,
}

impl ManualClock {
    pub fn advance(&self, secs: f64) {
        *self.now.borrow_mut() += secs;
    }
}

impl Clock for ManualClock {
    fn now_secs(&self) -> f64 {
        *self.now.borrow()
    }
}

/// Sliding-window rate limiter: over any 60-second window, issued calls
/// stay at or below the cap.
#[derive(Debug)]
pub struct RateLimiter {
    cap: u32,
    issued: RefCell<VecDeque<f64>>,
}

impl RateLimiter {
    pub fn new(cap: u32) -> RateLimiter {
        RateLimiter {
            cap,
            issued: RefCell::new(VecDeque::new()),
        }
    }

    pub fn try_acquire(&self, clock: &dyn Clock) -> Result<(), AdapterError> {
        let now = clock.now_secs();
        let mut issued = self.issued.borrow_mut();
        while issued.front().is_some_and(|&t| now - t >= 60.0) {
            issued.pop_front();
        }
        if issued.len() as u32 >= self.cap {
            return Err(AdapterError::RateLimited(self.cap));
        }
        issued.push_back(now);
        Ok(())
    }
}

/// Judge request record, serialized field-for-field from the engine state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub program: PromptReferenceProgram,
    pub outcome: RenderedOutcome,
    pub ground_truth: GroundTruthSpec,
}

/// Transport result: either the judge's raw output record, a timeout, or a
/// transport failure. The caller supplies the transport.
pub trait JudgeTransport {
    fn call(&self, request: &JudgeRequest) -> Result<JudgeOutput, AdapterError>;
}

impl<F> JudgeTransport for F
where
    F: Fn(&JudgeRequest) -> Result<JudgeOutput, AdapterError>,
{
    fn call(&self, request: &JudgeRequest) -> Result<JudgeOutput, AdapterError> {
        self(request)
    }
}

/// External judge adapter with rate limiting and builtin fallback.
pub struct JudgeAdapter<'a> {
    pub config: AdapterConfig,
    limiter: RateLimiter,
    clock: &'a dyn Clock,
}

impl<'a> JudgeAdapter<'a> {
    pub fn new(config: AdapterConfig, clock: &'a dyn Clock) -> JudgeAdapter<'a> {
        let limiter = RateLimiter::new(config.requests_per_minute);
        JudgeAdapter {
            config,
            limiter,
            clock,
        }
    }

    /// Issue one judge call: rate-limit, call the transport (with retries),
    /// validate the response against the 3-level scale, and fall back to
    /// the builtin judge when configured to.
    pub fn call_judge(
        &self,
        transport: &dyn JudgeTransport,
        request: &JudgeRequest,
    ) -> Result<RubricScores, AdapterError> {
        self.limiter.try_acquire(self.clock)?;
        let mut last_error: Option<AdapterError> = None;
        for _ in 0..=self.config.retries {
            match transport.call(request) {
                Ok(output) => return validate_output(output),
                Err(e) => last_error = Some(e),
            }
        }
        let error = last_error.unwrap_or(AdapterError::Transport("no attempt made".into()));
        match self.config.fallback {
            Fallback::UseBuiltin => Ok(crate::reward::judge_image(
                &request.program,
                &request.outcome,
                &request.ground_truth,
            )),
            Fallback::Fail => Err(error),
        }
    }
}

/// Snap-check an external judge output against the builtin schema rules.
fn validate_output(output: JudgeOutput) -> Result<RubricScores, AdapterError> {
    let rubric = RubricScores {
        faithfulness: output.faithfulness,
        visual_correctness: output.visual_correctness,
        text_accuracy: output.text_accuracy,
        aesthetics: output.aesthetics,
        text_na: false,
        failure_tags: output.failure_tags,
        skill_diagnostics: output.skill_diagnostics,
    };
    if !rubric.on_scale() {
        return Err(AdapterError::SchemaViolation(format!(
            "subscores {:?} outside {{0, 0.5, 1}}",
            rubric.subscores()
        )));
    }
    Ok(rubric)
}
