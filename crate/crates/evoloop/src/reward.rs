//! Deterministic rubric judge over fixture ground truth, weighted image
//! score with N/A renormalization, the 5-bin program-sufficiency judge, and
//! the mixed reward.
//!
//! The image score weights faithfulness, visual correctness, text accuracy,
//! and aesthetics 0.1 / 0.4 / 0.4 / 0.1. When the prompt has no readable
//! text requirement the text dimension is dropped and the remaining three
//! weights are renormalized to sum to one.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::environment::{GroundTruthSpec, RenderedOutcome};
use crate::protocol::{
    check_hard_filters, ordinal_positions, FilterConfig, PromptReferenceProgram, SkillName,
    Trajectory,
};

const WEIGHTS: [f64; 4] = [0.1, 0.4, 0.4, 0.1];

/// Per-skill outcome recorded by the judge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillDiagnostic {
    Pass,
    Partial,
    Fail,
}

/// Rubric subscores on the strict 3-level scale, plus diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricScores {
    pub faithfulness: f64,
    pub visual_correctness: f64,
    pub text_accuracy: f64,
    pub aesthetics: f64,
    pub text_na: bool,
    pub failure_tags: Vec<String>,
    pub skill_diagnostics: BTreeMap<SkillName, SkillDiagnostic>,
}

impl RubricScores {
    pub fn zeroed() -> RubricScores {
        RubricScores {
            faithfulness: 0.0,
            visual_correctness: 0.0,
            text_accuracy: 0.0,
            aesthetics: 0.0,
            text_na: false,
            failure_tags: Vec::new(),
            skill_diagnostics: BTreeMap::new(),
        }
    }

    pub fn subscores(&self) -> [f64; 4] {
        [
            self.faithfulness,
            self.visual_correctness,
            self.text_accuracy,
            self.aesthetics,
        ]
    }

    /// True when every subscore sits on the 3-level scale.
    pub fn on_scale(&self) -> bool {
        self.subscores()
            .iter()
            .all(|s| [0.0, 0.5, 1.0].contains(s))
    }
}

/// Judge output in the external serialization layout (`overall` carries the
/// weighted image score).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeOutput {
    pub faithfulness: f64,
    pub visual_correctness: f64,
    pub text_accuracy: f64,
    pub aesthetics: f64,
    pub overall: f64,
    pub failure_tags: Vec<String>,
    pub skill_diagnostics: BTreeMap<SkillName, SkillDiagnostic>,
}

impl JudgeOutput {
    pub fn from_rubric(rubric: &RubricScores) -> JudgeOutput {
        JudgeOutput {
            faithfulness: rubric.faithfulness,
            visual_correctness: rubric.visual_correctness,
            text_accuracy: rubric.text_accuracy,
            aesthetics: rubric.aesthetics,
            overall: compute_kscore(rubric),
            failure_tags: rubric.failure_tags.clone(),
            skill_diagnostics: rubric.skill_diagnostics.clone(),
        }
    }
}

/// Full reward record for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub rubric: RubricScores,
    pub kscore: f64,
    pub text_score: f64,
    pub mixed: f64,
    pub protocol_failed: bool,
}

impl RewardReport {
    /// Reward for a trajectory rejected by the hard structural checks.
    pub fn protocol_failure() -> RewardReport {
        RewardReport {
            rubric: RubricScores::zeroed(),
            kscore: 0.0,
            text_score: 0.0,
            mixed: 0.0,
            protocol_failed: true,
        }
    }
}

/// Pluggable judge interface; the builtin rule judge is the default and the
/// acceptance path never requires an external one.
pub trait Judge {
    fn judge_image(
        &self,
        program: &PromptReferenceProgram,
        outcome: &RenderedOutcome,
        gt: &GroundTruthSpec,
    ) -> RubricScores;

    fn judge_text(&self, program: &PromptReferenceProgram, gt: &GroundTruthSpec) -> f64;
}

/// Deterministic rule-based judge over fixture ground truth.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleJudge;

impl Judge for RuleJudge {
    fn judge_image(
        &self,
        program: &PromptReferenceProgram,
        outcome: &RenderedOutcome,
        gt: &GroundTruthSpec,
    ) -> RubricScores {
        judge_image(program, outcome, gt)
    }

    fn judge_text(&self, program: &PromptReferenceProgram, gt: &GroundTruthSpec) -> f64 {
        judge_text(program, gt)
    }
}

fn content_tokens(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.len() >= 5)
        .map(str::to_string)
        .collect()
}

fn three_level(top: bool, partial: bool) -> f64 {
    if top {
        1.0
    } else if partial {
        0.5
    } else {
        0.0
    }
}

/// Rule-based image judging against ground truth.
pub fn judge_image(
    program: &PromptReferenceProgram,
    outcome: &RenderedOutcome,
    gt: &GroundTruthSpec,
) -> RubricScores {
    let prompt_lower = program.gen_prompt.to_lowercase();
    let mut failure_tags = BTreeSet::new();

    // Faithfulness: coverage of the request's content words.
    let request_tokens = content_tokens(&outcome.request_text);
    let coverage = if request_tokens.is_empty() {
        1.0
    } else {
        let hit = request_tokens
            .iter()
            .filter(|t| prompt_lower.contains(t.as_str()))
            .count();
        hit as f64 / request_tokens.len() as f64
    };
    let faithfulness = three_level(coverage >= 0.7, coverage >= 0.3);
    if faithfulness < 1.0 {
        failure_tags.insert("low_faithfulness".to_string());
    }

    // Visual correctness: references within the correct set, and the
    // grounded fact carried into the prompt.
    let refs_ok = !program.reference_images.is_empty()
        && program
            .reference_images
            .iter()
            .all(|r| gt.correct_img_ids.contains(&r.img_id));
    let fact_ok = match &gt.required_fact_token {
        Some(token) => prompt_lower.contains(&token.to_lowercase()),
        None => true,
    };
    let visual_correctness = three_level(refs_ok && fact_ok, refs_ok || fact_ok);
    if !refs_ok {
        failure_tags.insert("wrong_reference".to_string());
    }
    if !fact_ok {
        failure_tags.insert("missing_fact".to_string());
    }

    // Text accuracy: the required token must be quoted to render.
    let (text_accuracy, text_na) = match &gt.required_text_token {
        Some(token) => {
            let quoted = program.gen_prompt.contains(&format!("\"{token}\""));
            let present = program.gen_prompt.contains(token.as_str());
            if !quoted {
                failure_tags.insert(if present {
                    "unquoted_text".to_string()
                } else {
                    "missing_text".to_string()
                });
            }
            (three_level(quoted, present), false)
        }
        None => (0.0, true),
    };

    // Aesthetics: required skill activation.
    let selected: BTreeSet<SkillName> = program.selected_skills.iter().copied().collect();
    let required = &gt.required_skills;
    let aesthetics = if required.is_empty() {
        1.0
    } else {
        let hits = required.intersection(&selected).count();
        three_level(hits == required.len(), hits > 0)
    };
    let mut skill_diagnostics = BTreeMap::new();
    for skill in required {
        let diag = if selected.contains(skill) {
            SkillDiagnostic::Pass
        } else {
            failure_tags.insert(format!("missing_skill_{skill}"));
            SkillDiagnostic::Fail
        };
        skill_diagnostics.insert(*skill, diag);
    }
    for skill in selected.difference(required) {
        skill_diagnostics.insert(*skill, SkillDiagnostic::Partial);
    }

    RubricScores {
        faithfulness,
        visual_correctness,
        text_accuracy,
        aesthetics,
        text_na,
        failure_tags: failure_tags.into_iter().collect(),
        skill_diagnostics,
    }
}

/// Weighted image score. With `text_na` the weights (0.1, 0.4, 0.1) over the
/// remaining dimensions are renormalized to sum to one.
pub fn compute_kscore(rubric: &RubricScores) -> f64 {
    if rubric.text_na {
        let weights = [WEIGHTS[0], WEIGHTS[1], WEIGHTS[3]];
        let total: f64 = weights.iter().sum();
        let values = [rubric.faithfulness, rubric.visual_correctness, rubric.aesthetics];
        values
            .iter()
            .zip(weights)
            .map(|(v, w)| v * w)
            .sum::<f64>()
            / total
    } else {
        rubric
            .subscores()
            .iter()
            .zip(WEIGHTS)
            .map(|(v, w)| v * w)
            .sum()
    }
}

/// Program-sufficiency judge: the fraction of the four checks satisfied,
/// snapped onto {0, 0.25, 0.5, 0.75, 1}.
pub fn judge_text(program: &PromptReferenceProgram, gt: &GroundTruthSpec) -> f64 {
    let prompt_lower = program.gen_prompt.to_lowercase();

    let fact_grounded = match &gt.required_fact_token {
        Some(token) => prompt_lower.contains(&token.to_lowercase()),
        None => true,
    };

    let count = program.reference_images.len();
    let ordinals_valid = count >= 1
        && count <= 5
        && ordinal_positions(&program.gen_prompt) == (1..=count).collect();

    let selected: BTreeSet<SkillName> = program.selected_skills.iter().copied().collect();
    let skills_reflected = gt.required_skills.iter().all(|s| selected.contains(s));

    let refs_executable = (1..=5).contains(&count)
        && program
            .reference_images
            .iter()
            .all(|r| well_formed_img_id(&r.img_id))
        && program
            .reference_images
            .windows(2)
            .all(|w| w[0].img_id < w[1].img_id);

    let satisfied = [fact_grounded, ordinals_valid, skills_reflected, refs_executable]
        .iter()
        .filter(|&&c| c)
        .count();
    satisfied as f64 / 4.0
}

fn well_formed_img_id(id: &str) -> bool {
    id.strip_prefix("IMG_")
        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
}

/// The affine mix `R = (1 - α)·R_img + α·R_text`.
pub fn mixed_reward(r_img: f64, r_text: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * r_img + alpha * r_text
}

/// Judge one trajectory end to end: hard filters first (failures earn a
/// zero reward and the `protocol_failed` flag), then rubric, kscore, text
/// bin, and the mixed reward.
pub fn judge_trajectory(
    judge: &dyn Judge,
    trajectory: &Trajectory,
    outcome: &RenderedOutcome,
    gt: &GroundTruthSpec,
    alpha: f64,
    filter_config: &FilterConfig,
) -> RewardReport {
    let report = check_hard_filters(trajectory, filter_config);
    let Some(program) = trajectory.final_program() else {
        return RewardReport::protocol_failure();
    };
    if !report.keep {
        return RewardReport::protocol_failure();
    }
    let rubric = judge.judge_image(program, outcome, gt);
    let kscore = compute_kscore(&rubric);
    let text_score = judge.judge_text(program, gt);
    RewardReport {
        mixed: mixed_reward(kscore, text_score, alpha),
        rubric,
        kscore,
        text_score,
        protocol_failed: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::ReferenceSelection;

    fn gt() -> GroundTruthSpec {
        GroundTruthSpec {
            required_fact_key: Some("2023 snooker champion nationality".into()),
            required_fact_token: Some("belgian".into()),
            correct_img_ids: ["IMG_001".to_string()].into_iter().collect(),
            required_skills: [SkillName::CreativeDrawing, SkillName::TextRendering]
                .into_iter()
                .collect(),
            required_text_token: Some("147".into()),
        }
    }

    fn outcome() -> RenderedOutcome {
        RenderedOutcome {
            prompt_id: "p01".into(),
            request_text: "rework the crucible stage with champion flag stripes".into(),
            resolved_refs: Vec::new(),
        }
    }

    fn satisfying_program() -> PromptReferenceProgram {
        PromptReferenceProgram {
            gen_prompt: "rework the crucible stage with champion flag stripes, belgian colors, \
                         following the first reference image, showing \"147\""
                .into(),
            reference_images: vec![ReferenceSelection {
                img_id: "IMG_001".into(),
                note: "stage".into(),
            }],
            selected_skills: vec![SkillName::CreativeDrawing, SkillName::TextRendering],
            rationale: "grounded".into(),
        }
    }

    #[test]
    fn satisfying_program_scores_perfect() {
        let rubric = judge_image(&satisfying_program(), &outcome(), &gt());
        assert_eq!(rubric.subscores(), [1.0, 1.0, 1.0, 1.0]);
        assert!(!rubric.text_na);
        assert!(rubric.failure_tags.is_empty());
        assert_eq!(compute_kscore(&rubric), 1.0);
        assert_eq!(judge_text(&satisfying_program(), &gt()), 1.0);
    }

    #[test]
    fn wrong_fact_zeroes_visual_correctness_half() {
        let mut program = satisfying_program();
        program.gen_prompt = program.gen_prompt.replace("belgian", "chinese");
        let rubric = judge_image(&program, &outcome(), &gt());
        // References still correct, fact wrong: partial credit.
        assert_eq!(rubric.visual_correctness, 0.5);
        assert!(rubric.failure_tags.contains(&"missing_fact".to_string()));
        let mut wrong_refs = program.clone();
        wrong_refs.reference_images[0].img_id = "IMG_009".into();
        let rubric = judge_image(&wrong_refs, &outcome(), &gt());
        assert_eq!(rubric.visual_correctness, 0.0);
    }

    #[test]
    fn no_text_requirement_marks_na() {
        let mut spec = gt();
        spec.required_text_token = None;
        let rubric = judge_image(&satisfying_program(), &outcome(), &spec);
        assert!(rubric.text_na);
    }

    #[test]
    fn kscore_examples() {
        let mut rubric = RubricScores::zeroed();
        rubric.faithfulness = 1.0;
        rubric.visual_correctness = 1.0;
        rubric.text_accuracy = 1.0;
        rubric.aesthetics = 1.0;
        assert!((compute_kscore(&rubric) - 1.0).abs() < 1e-15);

        rubric.faithfulness = 0.5;
        rubric.text_accuracy = 0.0;
        assert!((compute_kscore(&rubric) - 0.55).abs() < 1e-15);

        let na = RubricScores {
            faithfulness: 1.0,
            visual_correctness: 0.5,
            text_accuracy: 0.0,
            aesthetics: 1.0,
            text_na: true,
            ..RubricScores::zeroed()
        };
        assert!((compute_kscore(&na) - 0.4 / 0.6).abs() < 1e-12);
    }

    #[test]
    fn kscore_is_monotone_and_bounded() {
        let levels = [0.0, 0.5, 1.0];
        for &f in &levels {
            for &v in &levels {
                for &t in &levels {
                    for &a in &levels {
                        let rubric = RubricScores {
                            faithfulness: f,
                            visual_correctness: v,
                            text_accuracy: t,
                            aesthetics: a,
                            ..RubricScores::zeroed()
                        };
                        let k = compute_kscore(&rubric);
                        assert!((0.0..=1.0).contains(&k));
                        let mut bumped = rubric.clone();
                        bumped.visual_correctness = (v + 0.5).min(1.0);
                        assert!(compute_kscore(&bumped) >= k);
                    }
                }
            }
        }
    }

    #[test]
    fn text_bins() {
        let gt = gt();
        let mut program = satisfying_program();
        assert_eq!(judge_text(&program, &gt), 1.0);
        // Drop one required skill: three of four checks remain.
        program.selected_skills = vec![SkillName::CreativeDrawing];
        assert_eq!(judge_text(&program, &gt), 0.75);
        // Break everything.
        program.gen_prompt = "nothing here".into();
        program.reference_images.clear();
        assert_eq!(judge_text(&program, &gt), 0.0);
    }

    #[test]
    fn mixed_reward_paper_pairs() {
        assert_eq!(mixed_reward(1.0, 1.0, 0.5), 1.0);
        assert_eq!(mixed_reward(0.45, 0.0, 0.5), 0.225);
        assert_eq!(mixed_reward(0.05, 0.75, 0.5), 0.4);
        for alpha in [0.0, 0.25, 0.5, 1.0] {
            assert!((mixed_reward(0.7, 0.7, alpha) - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn judge_output_serialization_layout() {
        let rubric = judge_image(&satisfying_program(), &outcome(), &gt());
        let output = JudgeOutput::from_rubric(&rubric);
        let json = serde_json::to_value(&output).unwrap();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            vec![
                "faithfulness",
                "visual_correctness",
                "text_accuracy",
                "aesthetics",
                "overall",
                "failure_tags",
                "skill_diagnostics"
            ]
        );
    }
}
