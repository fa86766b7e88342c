//! Trajectory and program data types plus every structural rule of the
//! agent contract.
//!
//! A trajectory is serialized as one JSON record per line. Parsing is
//! two-stage: the raw record is checked for shape (hard errors for
//! unparseable records and unknown tool/skill enums), then structural
//! invariants are checked and recoverable violations are recorded in
//! `protocol_status` instead of failing the parse.

mod dedup;
mod parse;
mod validate;

pub use dedup::{check_duplicates, DedupReport, DuplicateGroup, ImageCandidate, SubjectAnnotations};
pub use parse::{parse_trajectory, to_log_line};
pub use validate::{
    check_hard_filters, contains_raw_img_id, contains_url, ordinal_positions, validate_program,
    FilterConfig, FilterReason, FilterReport, ValidationReport, Violation, ORDINAL_WORDS,
};

use serde::{Deserialize, Serialize};
use std::fmt;

/// The three tool families available to the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolName {
    Search,
    ImageSearch,
    QueryKnowledge,
}

impl ToolName {
    pub const ALL: [ToolName; 3] = [ToolName::Search, ToolName::ImageSearch, ToolName::QueryKnowledge];

    pub fn as_str(&self) -> &'static str {
        match self {
            ToolName::Search => "search",
            ToolName::ImageSearch => "image_search",
            ToolName::QueryKnowledge => "query_knowledge",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<ToolName> {
        Self::ALL.iter().copied().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for ToolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The eight callable generation skills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillName {
    SpatialLayout,
    AestheticDrawing,
    TextRendering,
    CreativeDrawing,
    AnatomyBodyCoherence,
    AttributeBinding,
    PhysicalMaterialConsistency,
    QuantityCounting,
}

impl SkillName {
    pub const ALL: [SkillName; 8] = [
        SkillName::SpatialLayout,
        SkillName::AestheticDrawing,
        SkillName::TextRendering,
        SkillName::CreativeDrawing,
        SkillName::AnatomyBodyCoherence,
        SkillName::AttributeBinding,
        SkillName::PhysicalMaterialConsistency,
        SkillName::QuantityCounting,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SkillName::SpatialLayout => "spatial_layout",
            SkillName::AestheticDrawing => "aesthetic_drawing",
            SkillName::TextRendering => "text_rendering",
            SkillName::CreativeDrawing => "creative_drawing",
            SkillName::AnatomyBodyCoherence => "anatomy_body_coherence",
            SkillName::AttributeBinding => "attribute_binding",
            SkillName::PhysicalMaterialConsistency => "physical_material_consistency",
            SkillName::QuantityCounting => "quantity_counting",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<SkillName> {
        Self::ALL.iter().copied().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for SkillName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tool arguments; the field names make the variants unambiguous on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ToolArguments {
    Search { queries: Vec<String> },
    ImageSearch { query: String },
    QueryKnowledge { skill_name: String },
}

/// One tool invocation emitted by the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool_name: ToolName,
    pub arguments: ToolArguments,
    pub turn_index: u32,
}

/// A single image result returned by `image_search`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub img_id: String,
    pub title: String,
    pub cached_path: String,
    pub source_tag: String,
}

/// Observation payload, keyed by the producing tool family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationPayload {
    Snippets(Vec<String>),
    Images(Vec<ImageResult>),
    Guidance(String),
}

/// A tool observation appended to the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub source_tool: ToolName,
    pub payload: ObservationPayload,
}

/// One selected reference image in the final program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSelection {
    pub img_id: String,
    pub note: String,
}

/// The agent's final output: a generation instruction plus ordered
/// reference selections and the skills it activated along the way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptReferenceProgram {
    pub gen_prompt: String,
    pub reference_images: Vec<ReferenceSelection>,
    #[serde(default)]
    pub selected_skills: Vec<SkillName>,
    #[serde(default)]
    pub rationale: String,
}

/// Final answer content. Records whose answer does not match the program
/// schema keep the raw value so serialization round-trips byte-for-byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerPayload {
    Program(PromptReferenceProgram),
    Unparseable(serde_json::Value),
}

impl AnswerPayload {
    pub fn program(&self) -> Option<&PromptReferenceProgram> {
        match self {
            AnswerPayload::Program(p) => Some(p),
            AnswerPayload::Unparseable(_) => None,
        }
    }
}

/// One turn: a thought plus either a tool call (with observation) or the
/// final answer. Exactly one of `tool_call` / `final_answer` is present in
/// a well-formed record; violations are recorded in the trajectory status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub thought: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<AnswerPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
}

impl Turn {
    pub fn tool(thought: impl Into<String>, call: ToolCall, observation: Observation) -> Turn {
        Turn {
            thought: thought.into(),
            tool_call: Some(call),
            final_answer: None,
            observation: Some(observation),
        }
    }

    pub fn answer(thought: impl Into<String>, answer: AnswerPayload) -> Turn {
        Turn {
            thought: thought.into(),
            tool_call: None,
            final_answer: Some(answer),
            observation: None,
        }
    }
}

/// Recoverable structural violations recorded during parsing or rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolViolation {
    MultipleAnswers,
    MissingFinalAnswer,
    AnswerNotLast,
    MissingObservation,
    DanglingObservation,
    ToolCountMismatch,
    TurnIndexMismatch,
    DuplicateImgId,
    MalformedAction,
}

/// Why a trajectory failed: a structural violation found while parsing, or
/// a hard-filter reason stamped after rollout. The two reason sets have
/// disjoint names, so both serialize as bare strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProtocolFailure {
    Structural(ProtocolViolation),
    Filter(FilterReason),
}

/// Structural health of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolStatus {
    Ok,
    Failed(ProtocolFailure),
}

impl ProtocolStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ProtocolStatus::Ok)
    }

    pub fn structural(violation: ProtocolViolation) -> ProtocolStatus {
        ProtocolStatus::Failed(ProtocolFailure::Structural(violation))
    }

    pub fn filtered(reason: FilterReason) -> ProtocolStatus {
        ProtocolStatus::Failed(ProtocolFailure::Filter(reason))
    }
}

/// A full multi-turn record of one generation attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt_id: String,
    pub request_text: String,
    pub turns: Vec<Turn>,
    pub tool_call_count: u32,
    pub protocol_status: ProtocolStatus,
}

impl Trajectory {
    /// The final program, if the last answer parsed into one.
    pub fn final_program(&self) -> Option<&PromptReferenceProgram> {
        self.final_answer().and_then(AnswerPayload::program)
    }

    pub fn final_answer(&self) -> Option<&AnswerPayload> {
        self.turns.iter().rev().find_map(|t| t.final_answer.as_ref())
    }

    /// All image ids observed through `image_search` results, in order.
    pub fn observed_img_ids(&self) -> Vec<&str> {
        let mut ids = Vec::new();
        for turn in &self.turns {
            if let Some(obs) = &turn.observation {
                if let ObservationPayload::Images(images) = &obs.payload {
                    ids.extend(images.iter().map(|r| r.img_id.as_str()));
                }
            }
        }
        ids
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = &ToolCall> {
        self.turns.iter().filter_map(|t| t.tool_call.as_ref())
    }

    /// Skills queried via `query_knowledge`, deduplicated in call order.
    pub fn skills_called(&self) -> Vec<SkillName> {
        let mut seen = Vec::new();
        for call in self.tool_calls() {
            if let ToolArguments::QueryKnowledge { skill_name } = &call.arguments {
                if let Some(skill) = SkillName::from_str_opt(skill_name) {
                    if !seen.contains(&skill) {
                        seen.push(skill);
                    }
                }
            }
        }
        seen
    }

    /// Query strings issued per tool family, in call order.
    pub fn queries_for(&self, tool: ToolName) -> Vec<&str> {
        let mut out = Vec::new();
        for call in self.tool_calls() {
            match (&call.arguments, tool) {
                (ToolArguments::Search { queries }, ToolName::Search) => {
                    out.extend(queries.iter().map(String::as_str));
                }
                (ToolArguments::ImageSearch { query }, ToolName::ImageSearch) => {
                    out.push(query.as_str());
                }
                _ => {}
            }
        }
        out
    }
}

/// Hard parse errors; anything less severe becomes a `ProtocolStatus`.
#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("unknown tool: {0}")]
    UnknownTool(String),
    #[error("unknown skill: {0}")]
    UnknownSkill(String),
}
