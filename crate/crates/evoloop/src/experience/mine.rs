//! Best-worst comparison mining over one rollout group.

use crate::environment::RolloutGroup;
use crate::protocol::Trajectory;
use crate::reward::RewardReport;

/// One side of a comparison.
#[derive(Debug, Clone)]
pub struct ComparisonSide {
    pub trajectory: Trajectory,
    pub report: RewardReport,
}

/// A best-worst pair with its reward gap.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub prompt_id: String,
    pub best: ComparisonSide,
    pub worst: ComparisonSide,
    pub delta: f64,
}

/// Identify the best and worst trajectories of a group by mixed reward
/// (ties break toward the lower index). Returns nothing when the gap is
/// below `delta_min` or when either side is a protocol failure, since such
/// pairs carry no reusable strategy.
pub fn mine_comparison(group: &RolloutGroup, delta_min: f64) -> Option<Comparison> {
    if group.rewards.is_empty() {
        return None;
    }
    let mut best = 0;
    let mut worst = 0;
    for (i, report) in group.rewards.iter().enumerate() {
        if report.mixed > group.rewards[best].mixed {
            best = i;
        }
        if report.mixed < group.rewards[worst].mixed {
            worst = i;
        }
    }
    let delta = group.rewards[best].mixed - group.rewards[worst].mixed;
    if delta < delta_min {
        return None;
    }
    if group.rewards[best].protocol_failed || group.rewards[worst].protocol_failed {
        return None;
    }
    Some(Comparison {
        prompt_id: group.prompt_id.clone(),
        best: ComparisonSide {
            trajectory: group.trajectories[best].clone(),
            report: group.rewards[best].clone(),
        },
        worst: ComparisonSide {
            trajectory: group.trajectories[worst].clone(),
            report: group.rewards[worst].clone(),
        },
        delta,
    })
}
