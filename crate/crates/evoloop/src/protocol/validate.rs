//! Program validation and the hard trajectory filters.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use super::{
    AnswerPayload, ObservationPayload, PromptReferenceProgram, SkillName, ToolName, Trajectory,
};

/// Ordinal words accepted in reference phrases, in binding order.
pub const ORDINAL_WORDS: [&str; 5] = ["first", "second", "third", "fourth", "fifth"];

/// Program-level rule violations. Violations are data, not errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    UnsortedRefs,
    RawIdLeak,
    UrlLeak,
    OrdinalMismatch,
    UnknownImgId,
    RefCountOutOfRange,
    EmptyPrompt,
}

/// Sorted set of violations; `pass` iff empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: BTreeSet<Violation>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// True when `text` contains a raw retrieval id (`IMG_` followed by a digit).
pub fn contains_raw_img_id(text: &str) -> bool {
    let bytes = text.as_bytes();
    text.match_indices("IMG_")
        .any(|(i, _)| bytes.get(i + 4).is_some_and(|b| b.is_ascii_digit()))
}

/// True when `text` contains a URL scheme prefix.
pub fn contains_url(text: &str) -> bool {
    text.contains("http://") || text.contains("https://")
}

/// Ordinal positions (1-based) referenced by phrases of the form
/// "the Nth reference image" in `text`.
pub fn ordinal_positions(text: &str) -> BTreeSet<usize> {
    ORDINAL_WORDS
        .iter()
        .enumerate()
        .filter(|(_, word)| text.contains(&format!("the {word} reference image")))
        .map(|(i, _)| i + 1)
        .collect()
}

fn ordinals_bind(text: &str, ref_count: usize) -> bool {
    let used = ordinal_positions(text);
    ref_count >= 1 && ref_count <= ORDINAL_WORDS.len() && used == (1..=ref_count).collect()
}

/// Check a program against every structural rule, given the trajectory that
/// produced it (for the set of observed image ids).
pub fn validate_program(
    program: &PromptReferenceProgram,
    trajectory: &Trajectory,
) -> ValidationReport {
    let mut violations = BTreeSet::new();

    if program.gen_prompt.trim().is_empty() {
        violations.insert(Violation::EmptyPrompt);
    }
    let count = program.reference_images.len();
    if !(1..=5).contains(&count) {
        violations.insert(Violation::RefCountOutOfRange);
    }
    let sorted = program
        .reference_images
        .windows(2)
        .all(|w| w[0].img_id < w[1].img_id);
    if !sorted {
        violations.insert(Violation::UnsortedRefs);
    }
    if contains_raw_img_id(&program.gen_prompt) {
        violations.insert(Violation::RawIdLeak);
    }
    if contains_url(&program.gen_prompt) {
        violations.insert(Violation::UrlLeak);
    }
    if !ordinals_bind(&program.gen_prompt, count) {
        violations.insert(Violation::OrdinalMismatch);
    }
    let observed: BTreeSet<&str> = trajectory.observed_img_ids().into_iter().collect();
    if program
        .reference_images
        .iter()
        .any(|r| !observed.contains(r.img_id.as_str()))
    {
        violations.insert(Violation::UnknownImgId);
    }

    ValidationReport { violations }
}

/// Reasons a trajectory is discarded by the hard filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    IncompleteLoop,
    NoImageSearch,
    InvalidRefCount,
    UnparseableAnswer,
    InvalidSkillName,
    MissingOrdinalWording,
    UrlOrIdLeak,
    OverBudget,
}

/// Keep/discard decision plus every reason that fired.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub keep: bool,
    pub reasons: BTreeSet<FilterReason>,
}

/// Caps enforced by the hard filters.
///
/// The tool budget counts tool calls only; the answer turn is exempt (the
/// runtime call cap of eleven includes it).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FilterConfig {
    pub max_tool_calls: u32,
    pub max_refs: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_tool_calls: 10,
            max_refs: 5,
        }
    }
}

/// Apply the hard programmatic checks that gate training data.
pub fn check_hard_filters(trajectory: &Trajectory, config: &FilterConfig) -> FilterReport {
    let mut reasons = BTreeSet::new();

    if !trajectory.protocol_status.is_ok() || trajectory.final_answer().is_none() {
        reasons.insert(FilterReason::IncompleteLoop);
    }
    let image_searches = trajectory
        .tool_calls()
        .filter(|c| c.tool_name == ToolName::ImageSearch)
        .count();
    if image_searches == 0 {
        reasons.insert(FilterReason::NoImageSearch);
    }
    if trajectory.tool_call_count > config.max_tool_calls {
        reasons.insert(FilterReason::OverBudget);
    }
    match trajectory.final_answer() {
        Some(AnswerPayload::Program(program)) => {
            let count = program.reference_images.len();
            if count == 0 || count > config.max_refs {
                reasons.insert(FilterReason::InvalidRefCount);
            }
            if ordinal_positions(&program.gen_prompt).is_empty() {
                reasons.insert(FilterReason::MissingOrdinalWording);
            }
            if contains_raw_img_id(&program.gen_prompt) || contains_url(&program.gen_prompt) {
                reasons.insert(FilterReason::UrlOrIdLeak);
            }
        }
        Some(AnswerPayload::Unparseable(raw)) => {
            reasons.insert(classify_unparseable(raw));
        }
        None => {}
    }

    FilterReport {
        keep: reasons.is_empty(),
        reasons,
    }
}

/// Distinguish an answer that is program-shaped except for a bad skill name
/// from one that is structurally off-schema.
fn classify_unparseable(raw: &serde_json::Value) -> FilterReason {
    let Some(object) = raw.as_object() else {
        return FilterReason::UnparseableAnswer;
    };
    let shape_ok = object.get("gen_prompt").is_some_and(|v| v.is_string())
        && object
            .get("reference_images")
            .and_then(|v| v.as_array())
            .is_some_and(|refs| {
                refs.iter().all(|r| {
                    r.get("img_id").is_some_and(|v| v.is_string())
                        && r.get("note").is_some_and(|v| v.is_string())
                })
            });
    if !shape_ok {
        return FilterReason::UnparseableAnswer;
    }
    let has_bad_skill = object
        .get("selected_skills")
        .and_then(|v| v.as_array())
        .is_some_and(|skills| {
            skills.iter().any(|s| {
                s.as_str()
                    .map_or(true, |name| SkillName::from_str_opt(name).is_none())
            })
        });
    if has_bad_skill {
        FilterReason::InvalidSkillName
    } else {
        FilterReason::UnparseableAnswer
    }
}

/// Count the image observations of a trajectory (used by fixtures/tests).
#[cfg(test)]
pub(crate) fn image_observation_count(trajectory: &Trajectory) -> usize {
    trajectory
        .turns
        .iter()
        .filter_map(|t| t.observation.as_ref())
        .filter(|o| matches!(o.payload, ObservationPayload::Images(_)))
        .count()
}
