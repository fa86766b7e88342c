//! Token-level teacher/student analysis and training-curve export.

use serde::{Deserialize, Serialize};

use crate::policy::TokenId;

#[derive(Debug, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("distribution sums to {0}, expected 1 within 1e-6")]
    UnnormalizedDistribution(f64),
}

/// How the teacher relates to the student at one sampled token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenEffectClass {
    /// The teacher concentrates its mass elsewhere and marks the sampled
    /// token down.
    Oppose,
    /// Teacher and student agree on the sampled top-1 token and the teacher
    /// boosts it.
    Support,
    Neutral,
}

/// Classification record for one sampled token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEffect {
    pub token: TokenId,
    pub p_student: f64,
    pub p_teacher: f64,
    pub student_top1: TokenId,
    pub teacher_top1: TokenId,
    pub class: TokenEffectClass,
    pub delta_logp: f64,
}

/// Classification thresholds: `eta` in nats on the sampled token's log-prob
/// drop, `eta_prime` on the probability boost.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EffectThresholds {
    pub eta: f64,
    pub eta_prime: f64,
}

impl Default for EffectThresholds {
    fn default() -> Self {
        EffectThresholds {
            eta: 0.1,
            eta_prime: 0.01,
        }
    }
}

fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

fn check_normalized(dist: &[f64]) -> Result<(), DiagnosticsError> {
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(DiagnosticsError::UnnormalizedDistribution(total));
    }
    Ok(())
}

/// Classify the teacher's effect on one sampled token.
///
/// Oppose: the teacher's top-1 differs from the sampled token and the
/// sampled token's log-probability drops by more than `eta` nats. Support:
/// teacher and student share the sampled token as top-1 and the teacher
/// boosts it by more than `eta_prime`. Everything else is neutral.
pub fn classify_token_effect(
    student_dist: &[f64],
    teacher_dist: &[f64],
    sampled_token: TokenId,
    thresholds: &EffectThresholds,
) -> Result<TokenEffect, DiagnosticsError> {
    check_normalized(student_dist)?;
    check_normalized(teacher_dist)?;
    let p_student = student_dist[sampled_token];
    let p_teacher = teacher_dist[sampled_token];
    let student_top1 = argmax(student_dist);
    let teacher_top1 = argmax(teacher_dist);
    let delta_logp = p_teacher.ln() - p_student.ln();

    let class = if teacher_top1 != sampled_token && delta_logp < -thresholds.eta {
        TokenEffectClass::Oppose
    } else if teacher_top1 == sampled_token
        && student_top1 == sampled_token
        && p_teacher > p_student + thresholds.eta_prime
    {
        TokenEffectClass::Support
    } else {
        TokenEffectClass::Neutral
    };

    Ok(TokenEffect {
        token: sampled_token,
        p_student,
        p_teacher,
        student_top1,
        teacher_top1,
        class,
        delta_logp,
    })
}

/// One training step's metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub mean_reward: f64,
    pub sdl_loss: f64,
    pub grpo_loss: f64,
    pub buffer_size: usize,
    pub comparisons_mined: usize,
}

/// A step record with the trailing moving average of the mean reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: u64,
    pub mean_reward: f64,
    pub reward_moving_avg: f64,
    pub sdl_loss: f64,
    pub grpo_loss: f64,
    pub buffer_size: usize,
    pub comparisons_mined: usize,
}

pub const CURVE_WINDOW: usize = 25;

/// One row per step plus a trailing moving average (window 25, shrinking
/// at the start while fewer steps are available).
pub fn export_curves(records: &[StepRecord]) -> Vec<CurveRow> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let start = (i + 1).saturating_sub(CURVE_WINDOW);
            let window = &records[start..=i];
            let avg = window.iter().map(|w| w.mean_reward).sum::<f64>() / window.len() as f64;
            CurveRow {
                step: r.step,
                mean_reward: r.mean_reward,
                reward_moving_avg: avg,
                sdl_loss: r.sdl_loss,
                grpo_loss: r.grpo_loss,
                buffer_size: r.buffer_size,
                comparisons_mined: r.comparisons_mined,
            }
        })
        .collect()
}

/// Comma-separated rendering of the curve rows (header always included).
pub fn curves_to_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(
        "step,mean_reward,reward_moving_avg,sdl_loss,grpo_loss,buffer_size,comparisons_mined\n",
    );
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.step,
            row.mean_reward,
            row.reward_moving_avg,
            row.sdl_loss,
            row.grpo_loss,
            row.buffer_size,
            row.comparisons_mined
        ));
    }
    out
}
