//! Group-relative advantages, the clipped surrogate, the sampled-token
//! reverse-KL distillation loss, the combined objective, and a
//! finite-difference gradient oracle.
//!
//! Losses are computed over batches of recorded rollout sequences. The
//! student's log-probabilities are recomputed from the current parameters;
//! sampling-time (`logp_old`) and teacher (`logp_teacher`) values are
//! constants. All analytic gradients flow through the per-token
//! `d loss / d log p` scalars into the flattened parameter vector.

use serde::{Deserialize, Serialize};

use crate::policy::{Context, PolicyParameters, TokenBatch, TokenId};

#[derive(Debug, thiserror::Error)]
pub enum OptimizeError {
    #[error("group too small: K={0}, need K >= 2")]
    GroupTooSmall(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
}

/// Group rewards normalized to advantages by the population statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub epsilon_adv: f64,
}

/// `A_i = (R_i - mean) / (population std + ε)`.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<AdvantageSet, OptimizeError> {
    let k = rewards.len();
    if k < 2 {
        return Err(OptimizeError::GroupTooSmall(k));
    }
    let mean = rewards.iter().sum::<f64>() / k as f64;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / k as f64;
    let std = variance.sqrt();
    let advantages = rewards.iter().map(|r| (r - mean) / (std + epsilon)).collect();
    Ok(AdvantageSet {
        rewards: rewards.to_vec(),
        advantages,
        epsilon_adv: epsilon,
    })
}

/// Token aggregation for the surrogate; per-sequence sum of token terms,
/// arithmetic mean over sequences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    SeqMeanTokenSum,
}

/// Clipped-surrogate configuration. `beta_ref` scales the optional
/// reference-policy regularizer, which is disabled by default.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    pub beta_ref: f64,
    pub use_reference_kl: bool,
    pub aggregation: Aggregation,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            eps_low: 0.20,
            eps_high: 0.28,
            beta_ref: 1e-3,
            use_reference_kl: false,
            aggregation: Aggregation::SeqMeanTokenSum,
        }
    }
}

/// Distillation configuration. The log-ratio is clamped to `ell_clamp`
/// before the estimator; `token_cap` defaults to `k3(ell_clamp.0)` so the
/// cap is inactive once the clamp has applied.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SdlConfig {
    pub rho_max: f64,
    pub ell_clamp: (f64, f64),
    pub top_k_frac: f64,
    pub lambda_sdl: f64,
    pub token_cap: f64,
}

impl Default for SdlConfig {
    fn default() -> Self {
        let ell_clamp = (-10.0, 10.0);
        SdlConfig {
            rho_max: 2.0,
            ell_clamp,
            top_k_frac: 0.1,
            lambda_sdl: 2.0,
            token_cap: k3(ell_clamp.0),
        }
    }
}

/// Per-token clipped surrogate terms with their derivatives in the
/// student log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct GrpoTokenTerms {
    pub terms: Vec<f64>,
    pub dterm_dlogp: Vec<f64>,
}

/// `term = min(u·A, clip(u, 1-ε_l, 1+ε_h)·A)` with `u = exp(logp_new -
/// logp_old)`; the loss contribution is the negative of each term.
pub fn grpo_token_terms(
    logp_new: &[f64],
    logp_old: &[f64],
    advantage: f64,
    cfg: &GrpoConfig,
) -> Result<GrpoTokenTerms, OptimizeError> {
    if logp_new.len() != logp_old.len() {
        return Err(OptimizeError::LengthMismatch(format!(
            "logp_new={} logp_old={}",
            logp_new.len(),
            logp_old.len()
        )));
    }
    let lo = 1.0 - cfg.eps_low;
    let hi = 1.0 + cfg.eps_high;
    let mut terms = Vec::with_capacity(logp_new.len());
    let mut dterm_dlogp = Vec::with_capacity(logp_new.len());
    for (&new, &old) in logp_new.iter().zip(logp_old) {
        let ratio = (new - old).exp();
        let unclipped = ratio * advantage;
        let clipped = ratio.clamp(lo, hi) * advantage;
        if unclipped <= clipped {
            terms.push(unclipped);
            dterm_dlogp.push(ratio * advantage);
        } else {
            terms.push(clipped);
            // The clipped branch is active only when the ratio sits outside
            // the clip range, where the clamp has zero derivative.
            dterm_dlogp.push(0.0);
        }
    }
    Ok(GrpoTokenTerms { terms, dterm_dlogp })
}

/// Sampled-token reverse-KL estimator `k3(ℓ) = exp(-ℓ) - 1 + ℓ`.
pub fn k3(ell: f64) -> f64 {
    (-ell).exp() - 1.0 + ell
}

/// Derivative `k3'(ℓ) = 1 - exp(-ℓ)`.
fn k3_prime(ell: f64) -> f64 {
    1.0 - (-ell).exp()
}

/// Within one sequence, keep the `⌈frac·n⌉` decision tokens with the
/// largest teacher/student gaps (at least one when any decision token
/// exists). Ties break toward the earlier token index.
pub fn select_sdl_tokens(gaps: &[f64], decision_mask: &[u8], frac: f64) -> Vec<u8> {
    let mut candidates: Vec<(usize, f64)> = gaps
        .iter()
        .zip(decision_mask)
        .enumerate()
        .filter(|(_, (_, &m))| m == 1)
        .map(|(i, (&g, _))| (i, g))
        .collect();
    let mut mask = vec![0u8; gaps.len()];
    let n = candidates.len();
    if n == 0 {
        return mask;
    }
    let keep = ((frac * n as f64).ceil() as usize).max(1).min(n);
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(index, _) in candidates.iter().take(keep) {
        mask[index] = 1;
    }
    mask
}

/// Importance-weighted sampled-token reverse-KL loss over one flat token
/// list, plus its derivative in the student log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SdlValue {
    pub loss: f64,
    pub dloss_dstudent: Vec<f64>,
}

/// `loss = (Σ m·min(ρ·k3(ℓ), c_tok)) / (Σ m)` with `ℓ` clamped,
/// `ρ = min(exp(logp_student - logp_old), ρ_max)`, and teacher/old values
/// treated as constants. A fully-masked row contributes zero loss and zero
/// gradient.
pub fn sdl_loss(
    logp_student: &[f64],
    logp_teacher_detached: &[f64],
    logp_old_detached: &[f64],
    sdl_mask: &[u8],
    cfg: &SdlConfig,
) -> Result<SdlValue, OptimizeError> {
    let n = logp_student.len();
    if logp_teacher_detached.len() != n || logp_old_detached.len() != n || sdl_mask.len() != n {
        return Err(OptimizeError::LengthMismatch(format!(
            "student={} teacher={} old={} mask={}",
            n,
            logp_teacher_detached.len(),
            logp_old_detached.len(),
            sdl_mask.len()
        )));
    }
    let mask_total: f64 = sdl_mask.iter().map(|&m| m as f64).sum();
    if mask_total == 0.0 {
        return Ok(SdlValue {
            loss: 0.0,
            dloss_dstudent: vec![0.0; n],
        });
    }
    let mut loss = 0.0;
    let mut dloss = vec![0.0; n];
    for i in 0..n {
        if sdl_mask[i] == 0 {
            continue;
        }
        let raw_ell = logp_student[i] - logp_teacher_detached[i];
        let ell = raw_ell.clamp(cfg.ell_clamp.0, cfg.ell_clamp.1);
        let ell_active = raw_ell > cfg.ell_clamp.0 && raw_ell < cfg.ell_clamp.1;
        let raw_rho = (logp_student[i] - logp_old_detached[i]).exp();
        let rho = raw_rho.min(cfg.rho_max);
        let rho_active = raw_rho < cfg.rho_max;
        let term_raw = rho * k3(ell);
        let (term, mut dterm) = if term_raw < cfg.token_cap {
            let mut d = 0.0;
            if rho_active {
                d += rho * k3(ell);
            }
            if ell_active {
                d += rho * k3_prime(ell);
            }
            (term_raw, d)
        } else {
            (cfg.token_cap, 0.0)
        };
        dterm /= mask_total;
        loss += term / mask_total;
        dloss[i] = dterm;
    }
    Ok(SdlValue {
        loss,
        dloss_dstudent: dloss,
    })
}

/// Teacher-side view of one sequence: the same sampled tokens scored under
/// the experience-patched context, detached.
#[derive(Debug, Clone)]
pub struct TeacherView {
    pub logp_teacher: Vec<f64>,
}

/// One rollout sequence prepared for the combined objective.
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    pub contexts: Vec<Context>,
    pub tokens: Vec<TokenId>,
    /// Sampling-time log-probabilities (constants).
    pub logp_old: Vec<f64>,
    /// Tokens optimized by the surrogate.
    pub assistant_mask: Vec<u8>,
    /// Tokens eligible for distillation (tool, skill, image-id, ordinal).
    pub decision_mask: Vec<u8>,
    pub advantage: f64,
    pub teacher: Option<TeacherView>,
}

impl SequenceBatch {
    fn token_batch(&self) -> TokenBatch {
        TokenBatch {
            contexts: self.contexts.clone(),
            tokens: self.tokens.clone(),
            mask: vec![1; self.tokens.len()],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub sequences: Vec<SequenceBatch>,
}

/// Optional reference-policy regularizer hook: given new and old log-probs
/// of one sequence, return the penalty value and its derivative per token.
pub trait ReferenceKl {
    fn penalty(&self, logp_new: &[f64], logp_old: &[f64]) -> (f64, Vec<f64>);
}

/// Value and parameter gradient of one objective.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Combined objective with its components broken out for metrics.
#[derive(Debug, Clone)]
pub struct CombinedLossValue {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// The surrogate part (including any reference regularizer).
    pub grpo_component: f64,
    /// The unscaled distillation part.
    pub sdl_component: f64,
}

/// Clipped-surrogate loss, aggregated per-sequence sum / mean over
/// sequences, with analytic parameter gradient.
pub fn grpo_loss(
    params: &PolicyParameters,
    batch: &RolloutBatch,
    cfg: &GrpoConfig,
    reference_kl: Option<&dyn ReferenceKl>,
) -> Result<LossValue, OptimizeError> {
    let combined =
        combined_objective(params, batch, cfg, &SdlConfig::default(), reference_kl, false)?;
    Ok(LossValue {
        value: combined.value,
        gradient: combined.gradient,
    })
}

/// Distillation-only loss (unscaled by `lambda_sdl`).
pub fn sdl_batch_loss(
    params: &PolicyParameters,
    batch: &RolloutBatch,
    cfg: &SdlConfig,
) -> Result<LossValue, OptimizeError> {
    let (loss, grad) = sdl_component(params, batch, cfg)?;
    Ok(LossValue {
        value: loss,
        gradient: grad,
    })
}

/// `L = L_GRPO + λ_SDL · L_SDL`, teacher branch detached.
pub fn combined_loss(
    params: &PolicyParameters,
    batch: &RolloutBatch,
    grpo_cfg: &GrpoConfig,
    sdl_cfg: &SdlConfig,
    reference_kl: Option<&dyn ReferenceKl>,
) -> Result<CombinedLossValue, OptimizeError> {
    combined_objective(params, batch, grpo_cfg, sdl_cfg, reference_kl, true)
}

fn combined_objective(
    params: &PolicyParameters,
    batch: &RolloutBatch,
    grpo_cfg: &GrpoConfig,
    sdl_cfg: &SdlConfig,
    reference_kl: Option<&dyn ReferenceKl>,
    include_sdl: bool,
) -> Result<CombinedLossValue, OptimizeError> {
    let mut value = 0.0;
    let mut gradient = vec![0.0; params.len()];
    let n_seq = batch.sequences.len();
    if n_seq == 0 {
        return Ok(CombinedLossValue {
            value,
            gradient,
            grpo_component: 0.0,
            sdl_component: 0.0,
        });
    }

    for seq in &batch.sequences {
        let logp_new = crate::policy::score_tokens(params, &seq.token_batch())?;
        let grpo = grpo_token_terms(&logp_new, &seq.logp_old, seq.advantage, grpo_cfg)?;
        if seq.assistant_mask.len() != seq.tokens.len() {
            return Err(OptimizeError::LengthMismatch("assistant_mask".into()));
        }
        // Per-sequence token sum, mean over sequences, negated.
        let scale = -1.0 / n_seq as f64;
        for (i, (&term, &m)) in grpo.terms.iter().zip(&seq.assistant_mask).enumerate() {
            if m == 0 {
                continue;
            }
            value += scale * term;
            let coeff = scale * grpo.dterm_dlogp[i];
            if coeff != 0.0 {
                params.accumulate_logp_grad(&seq.contexts[i], seq.tokens[i], coeff, &mut gradient);
            }
        }
        if grpo_cfg.use_reference_kl {
            if let Some(hook) = reference_kl {
                let (penalty, dpenalty) = hook.penalty(&logp_new, &seq.logp_old);
                value += grpo_cfg.beta_ref * penalty / n_seq as f64;
                for (i, &dp) in dpenalty.iter().enumerate() {
                    let coeff = grpo_cfg.beta_ref * dp / n_seq as f64;
                    if coeff != 0.0 {
                        params.accumulate_logp_grad(
                            &seq.contexts[i],
                            seq.tokens[i],
                            coeff,
                            &mut gradient,
                        );
                    }
                }
            }
        }
    }

    let grpo_component = value;
    let mut sdl_value = 0.0;
    if include_sdl {
        let (sdl, sdl_grad) = sdl_component(params, batch, sdl_cfg)?;
        sdl_value = sdl;
        value += sdl_cfg.lambda_sdl * sdl;
        for (g, s) in gradient.iter_mut().zip(sdl_grad) {
            *g += sdl_cfg.lambda_sdl * s;
        }
    }

    Ok(CombinedLossValue {
        value,
        gradient,
        grpo_component,
        sdl_component: sdl_value,
    })
}

/// The distillation component over all sequences: token masks are chosen
/// per sequence from the stored (sampling-time) student scores, then the
/// masked terms are averaged over every selected token in the batch.
fn sdl_component(
    params: &PolicyParameters,
    batch: &RolloutBatch,
    cfg: &SdlConfig,
) -> Result<(f64, Vec<f64>), OptimizeError> {
    struct Row {
        seq: usize,
        index: usize,
        teacher: f64,
    }
    let mut rows: Vec<Row> = Vec::new();
    for (seq_index, seq) in batch.sequences.iter().enumerate() {
        let Some(teacher) = &seq.teacher else { continue };
        if teacher.logp_teacher.len() != seq.tokens.len() {
            return Err(OptimizeError::LengthMismatch("teacher view".into()));
        }
        let gaps: Vec<f64> = teacher
            .logp_teacher
            .iter()
            .zip(&seq.logp_old)
            .map(|(t, s)| (t - s).abs())
            .collect();
        let mask = select_sdl_tokens(&gaps, &seq.decision_mask, cfg.top_k_frac);
        for (i, &m) in mask.iter().enumerate() {
            if m == 1 {
                rows.push(Row {
                    seq: seq_index,
                    index: i,
                    teacher: teacher.logp_teacher[i],
                });
            }
        }
    }

    let mut gradient = vec![0.0; params.len()];
    if rows.is_empty() {
        return Ok((0.0, gradient));
    }

    let mut students = Vec::with_capacity(rows.len());
    for row in &rows {
        let seq = &batch.sequences[row.seq];
        let mut tb = TokenBatch::default();
        tb.push(seq.contexts[row.index].clone(), seq.tokens[row.index], 1);
        students.push(crate::policy::score_tokens(params, &tb)?[0]);
    }
    let teachers: Vec<f64> = rows.iter().map(|r| r.teacher).collect();
    let olds: Vec<f64> = rows
        .iter()
        .map(|r| batch.sequences[r.seq].logp_old[r.index])
        .collect();
    let mask = vec![1u8; rows.len()];
    let sdl = sdl_loss(&students, &teachers, &olds, &mask, cfg)?;
    for (row, &coeff) in rows.iter().zip(&sdl.dloss_dstudent) {
        if coeff != 0.0 {
            let seq = &batch.sequences[row.seq];
            params.accumulate_logp_grad(
                &seq.contexts[row.index],
                seq.tokens[row.index],
                coeff,
                &mut gradient,
            );
        }
    }
    Ok((sdl.loss, gradient))
}

/// Central finite differences, coordinate-wise.
pub fn finite_diff_gradient(
    loss_fn: impl Fn(&[f64]) -> f64,
    params: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; params.len()];
    let mut probe = params.to_vec();
    for i in 0..params.len() {
        let original = probe[i];
        probe[i] = original + h;
        let up = loss_fn(&probe);
        probe[i] = original - h;
        let down = loss_fn(&probe);
        probe[i] = original;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// One plain gradient step: `params - lr · gradient`.
pub fn apply_step(
    params: &PolicyParameters,
    gradient: &[f64],
    learning_rate: f64,
) -> Result<PolicyParameters, OptimizeError> {
    if gradient.len() != params.len() {
        return Err(OptimizeError::ShapeMismatch(format!(
            "gradient has {} coordinates, params have {}",
            gradient.len(),
            params.len()
        )));
    }
    let flat: Vec<f64> = params
        .to_vec()
        .iter()
        .zip(gradient)
        .map(|(p, g)| p - learning_rate * g)
        .collect();
    Ok(params.from_vec(&flat)?)
}

#[cfg(test)]
mod tests;
