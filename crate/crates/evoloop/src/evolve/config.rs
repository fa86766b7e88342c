//! Run configuration. Every externally-named knob keeps its canonical
//! config key (`GEN_REWARD_TEXT_COEF`, `EXPERIENCE_MIN_REWARD_GAP`,
//! `SDL_TOP_K_FRAC`, `sdl_is_clip`, `sdl_loss_coef`, `n`,
//! `train_batch_size`, ...); defaults mirror the reference settings.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::environment::RolloutConfig;
use crate::experience::ExperienceBuffer;
use crate::optimize::{Aggregation, GrpoConfig, SdlConfig};
use crate::policy::ColdStartConfig;

use super::EvolveError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub world: PathBuf,
    #[serde(default = "d_steps")]
    pub steps: u64,
    #[serde(default)]
    pub seed: u64,
    /// Prompts per step.
    #[serde(rename = "train_batch_size", default = "d_batch")]
    pub prompts_per_step: usize,
    /// Rollouts per prompt (GRPO group size).
    #[serde(rename = "n", default = "d_group")]
    pub group_size: usize,
    /// Mixing weight of the text reward.
    #[serde(rename = "GEN_REWARD_TEXT_COEF", default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_temperature")]
    pub temperature: f64,
    /// Checkpoint cadence in steps; 0 disables checkpointing.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Output directory for metrics, snapshots, and checkpoints.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Runtime call cap including the answer turn; the tool budget is one
    /// less.
    #[serde(rename = "MAX_LLM_CALL_PER_RUN", default = "d_llm_calls")]
    pub max_llm_calls: u32,
    /// Generator-facing reference cap.
    #[serde(rename = "QWEN_EDIT_MAX_REF_IMAGES", default = "d_max_refs")]
    pub max_ref_images: usize,
    #[serde(default = "d_prior")]
    pub protocol_prior: f64,
    #[serde(default = "d_gain")]
    pub guidance_gain: f64,
    #[serde(default)]
    pub grpo: GrpoSection,
    #[serde(default)]
    pub sdl: SdlSection,
    #[serde(default)]
    pub experience: ExperienceSection,
}

fn d_steps() -> u64 {
    200
}
fn d_batch() -> usize {
    8
}
fn d_group() -> usize {
    6
}
fn d_alpha() -> f64 {
    0.5
}
fn d_lr() -> f64 {
    1e-2
}
fn d_temperature() -> f64 {
    0.7
}
fn d_llm_calls() -> u32 {
    11
}
fn d_max_refs() -> usize {
    2
}
fn d_prior() -> f64 {
    3.0
}
fn d_gain() -> f64 {
    0.35
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrpoSection {
    #[serde(default = "d_eps_low")]
    pub eps_low: f64,
    #[serde(default = "d_eps_high")]
    pub eps_high: f64,
    #[serde(rename = "kl_coef", default = "d_kl_coef")]
    pub beta_ref: f64,
    #[serde(rename = "use_kl_loss", default)]
    pub use_reference_kl: bool,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default = "d_eps_adv")]
    pub epsilon_adv: f64,
}

fn d_eps_low() -> f64 {
    0.20
}
fn d_eps_high() -> f64 {
    0.28
}
fn d_kl_coef() -> f64 {
    1e-3
}
fn d_eps_adv() -> f64 {
    1e-4
}

impl Default for GrpoSection {
    fn default() -> Self {
        GrpoSection {
            eps_low: d_eps_low(),
            eps_high: d_eps_high(),
            beta_ref: d_kl_coef(),
            use_reference_kl: false,
            aggregation: Aggregation::default(),
            epsilon_adv: d_eps_adv(),
        }
    }
}

impl GrpoSection {
    pub fn to_config(&self) -> GrpoConfig {
        GrpoConfig {
            eps_low: self.eps_low,
            eps_high: self.eps_high,
            beta_ref: self.beta_ref,
            use_reference_kl: self.use_reference_kl,
            aggregation: self.aggregation,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdlSection {
    #[serde(rename = "sdl_loss_coef", default = "d_lambda")]
    pub lambda_sdl: f64,
    #[serde(rename = "sdl_is_clip", default = "d_rho_max")]
    pub rho_max: f64,
    #[serde(rename = "SDL_TOP_K_FRAC", default = "d_top_k")]
    pub top_k_frac: f64,
    #[serde(default = "d_ell_clamp")]
    pub ell_clamp: (f64, f64),
    /// Per-token cap; defaults to `k3(ell_clamp.0)` when absent, making the
    /// cap inactive after clamping.
    #[serde(default)]
    pub token_cap: Option<f64>,
}

fn d_lambda() -> f64 {
    2.0
}
fn d_rho_max() -> f64 {
    2.0
}
fn d_top_k() -> f64 {
    0.1
}
fn d_ell_clamp() -> (f64, f64) {
    (-10.0, 10.0)
}

impl Default for SdlSection {
    fn default() -> Self {
        SdlSection {
            lambda_sdl: d_lambda(),
            rho_max: d_rho_max(),
            top_k_frac: d_top_k(),
            ell_clamp: d_ell_clamp(),
            token_cap: None,
        }
    }
}

impl SdlSection {
    pub fn to_config(&self) -> SdlConfig {
        SdlConfig {
            rho_max: self.rho_max,
            ell_clamp: self.ell_clamp,
            top_k_frac: self.top_k_frac,
            lambda_sdl: self.lambda_sdl,
            token_cap: self
                .token_cap
                .unwrap_or_else(|| crate::optimize::k3(self.ell_clamp.0)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperienceSection {
    #[serde(rename = "EXPERIENCE_BUFFER_CAPACITY", default = "d_capacity")]
    pub capacity: usize,
    #[serde(rename = "EXPERIENCE_MIN_REWARD_GAP", default = "d_delta_min")]
    pub delta_min: f64,
    #[serde(rename = "EXPERIENCE_MAX_COMPARISONS", default = "d_max_comparisons")]
    pub max_comparisons_per_step: usize,
    #[serde(rename = "EXPERIENCE_MIN_RETRIEVAL_SIM", default = "d_gate")]
    pub gate: f64,
}

fn d_capacity() -> usize {
    500
}
fn d_delta_min() -> f64 {
    0.20
}
fn d_max_comparisons() -> usize {
    8
}
fn d_gate() -> f64 {
    0.84
}

impl Default for ExperienceSection {
    fn default() -> Self {
        ExperienceSection {
            capacity: d_capacity(),
            delta_min: d_delta_min(),
            max_comparisons_per_step: d_max_comparisons(),
            gate: d_gate(),
        }
    }
}

impl ExperienceSection {
    pub fn to_buffer(&self) -> ExperienceBuffer {
        ExperienceBuffer::new(
            self.capacity,
            self.gate,
            self.delta_min,
            self.max_comparisons_per_step,
        )
    }
}

impl RunConfig {
    /// A default configuration over a world fixture (library/test entry).
    pub fn for_world(world: impl Into<PathBuf>) -> RunConfig {
        let text = format!("world = {:?}", world.into().display().to_string());
        toml::from_str(&text).expect("minimal config parses")
    }

    pub fn load(path: &Path) -> Result<RunConfig, EvolveError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EvolveError::Config(format!("{}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| EvolveError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), EvolveError> {
        if self.group_size < 2 {
            return Err(EvolveError::Config(format!(
                "n (group size) must be at least 2, got {}",
                self.group_size
            )));
        }
        if self.prompts_per_step == 0 || self.prompts_per_step > 100 {
            return Err(EvolveError::Config(
                "train_batch_size must be in 1..=100".into(),
            ));
        }
        if self.group_size > 100 {
            return Err(EvolveError::Config("n must be at most 100".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(EvolveError::Config(
                "GEN_REWARD_TEXT_COEF must lie in [0, 1]".into(),
            ));
        }
        if self.max_llm_calls < 2 {
            return Err(EvolveError::Config(
                "MAX_LLM_CALL_PER_RUN must allow at least one tool call and the answer".into(),
            ));
        }
        if self.max_ref_images == 0 || self.max_ref_images > 5 {
            return Err(EvolveError::Config(
                "QWEN_EDIT_MAX_REF_IMAGES must be in 1..=5".into(),
            ));
        }
        if self.temperature <= 0.0 {
            return Err(EvolveError::Config("temperature must be positive".into()));
        }
        if !(0.0 < self.sdl.top_k_frac && self.sdl.top_k_frac <= 1.0) {
            return Err(EvolveError::Config(
                "SDL_TOP_K_FRAC must lie in (0, 1]".into(),
            ));
        }
        if self.sdl.rho_max < 1.0 {
            return Err(EvolveError::Config("sdl_is_clip must be >= 1".into()));
        }
        if !(0.0 < self.grpo.eps_low && self.grpo.eps_low < 1.0)
            || !(0.0 < self.grpo.eps_high && self.grpo.eps_high < 1.0)
        {
            return Err(EvolveError::Config("clip ratios must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn rollout_config(&self) -> RolloutConfig {
        RolloutConfig {
            tool_budget: self.max_llm_calls - 1,
            max_ref_images: self.max_ref_images,
        }
    }

    pub fn cold_start_config(&self) -> ColdStartConfig {
        ColdStartConfig {
            protocol_prior: self.protocol_prior,
            guidance_gain: self.guidance_gain,
        }
    }
}
