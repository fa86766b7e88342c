//! Two-stage trajectory parsing: shape first, structural invariants second.

use serde::Deserialize;
use serde_json::Value;

use super::{
    AnswerPayload, Observation, ObservationPayload, PromptReferenceProgram, ProtocolError,
    ProtocolStatus, ProtocolViolation, SkillName, ToolArguments, ToolCall, ToolName, Trajectory,
    Turn,
};

#[derive(Deserialize)]
struct RawTrajectory {
    prompt_id: String,
    request_text: String,
    turns: Vec<RawTurn>,
    tool_call_count: u32,
    protocol_status: ProtocolStatus,
}

#[derive(Deserialize)]
struct RawTurn {
    thought: String,
    #[serde(default)]
    tool_call: Option<RawToolCall>,
    #[serde(default)]
    final_answer: Option<Value>,
    #[serde(default)]
    observation: Option<RawObservation>,
}

#[derive(Deserialize)]
struct RawToolCall {
    tool_name: String,
    arguments: Value,
    turn_index: u32,
}

#[derive(Deserialize)]
struct RawObservation {
    source_tool: String,
    payload: Value,
}

/// Serialize a trajectory as one compact JSON log line (no trailing newline).
pub fn to_log_line(trajectory: &Trajectory) -> String {
    serde_json::to_string(trajectory).expect("trajectory serialization cannot fail")
}

/// Parse one trajectory log line.
///
/// Unparseable records and unknown tool/skill enums are hard errors.
/// Structural invariant violations (multiple answers, missing observations,
/// stale counters, duplicate image ids) are recoverable: the trajectory is
/// returned with `protocol_status = failed(reason)`. A status already marked
/// failed in the record is preserved so round-trips are stable.
pub fn parse_trajectory(line: &str) -> Result<Trajectory, ProtocolError> {
    let raw: RawTrajectory = serde_json::from_str(line)
        .map_err(|e| ProtocolError::MalformedRecord(e.to_string()))?;

    let mut turns = Vec::with_capacity(raw.turns.len());
    for raw_turn in raw.turns {
        turns.push(convert_turn(raw_turn)?);
    }

    let status = match raw.protocol_status {
        ProtocolStatus::Failed(reason) => ProtocolStatus::Failed(reason),
        ProtocolStatus::Ok => structural_status(&turns, raw.tool_call_count),
    };

    Ok(Trajectory {
        prompt_id: raw.prompt_id,
        request_text: raw.request_text,
        turns,
        tool_call_count: raw.tool_call_count,
        protocol_status: status,
    })
}

fn convert_turn(raw: RawTurn) -> Result<Turn, ProtocolError> {
    let (tool_call, final_answer) = match (raw.tool_call, raw.final_answer) {
        (Some(call), None) => (Some(convert_tool_call(call)?), None),
        (None, Some(answer)) => (None, Some(convert_answer(answer))),
        (None, None) => {
            return Err(ProtocolError::MalformedRecord(
                "turn carries neither tool_call nor final_answer".into(),
            ))
        }
        (Some(_), Some(_)) => {
            return Err(ProtocolError::MalformedRecord(
                "turn carries both tool_call and final_answer".into(),
            ))
        }
    };
    let observation = raw.observation.map(convert_observation).transpose()?;
    Ok(Turn {
        thought: raw.thought,
        tool_call,
        final_answer,
        observation,
    })
}

fn convert_tool_call(raw: RawToolCall) -> Result<ToolCall, ProtocolError> {
    let tool_name = ToolName::from_str_opt(&raw.tool_name)
        .ok_or_else(|| ProtocolError::UnknownTool(raw.tool_name.clone()))?;
    let arguments = match tool_name {
        ToolName::Search => {
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct A {
                queries: Vec<String>,
            }
            let a: A = from_value(raw.arguments, "search arguments")?;
            ToolArguments::Search { queries: a.queries }
        }
        ToolName::ImageSearch => {
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct A {
                query: String,
            }
            let a: A = from_value(raw.arguments, "image_search arguments")?;
            ToolArguments::ImageSearch { query: a.query }
        }
        ToolName::QueryKnowledge => {
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct A {
                skill_name: String,
            }
            let a: A = from_value(raw.arguments, "query_knowledge arguments")?;
            if SkillName::from_str_opt(&a.skill_name).is_none() {
                return Err(ProtocolError::UnknownSkill(a.skill_name));
            }
            ToolArguments::QueryKnowledge {
                skill_name: a.skill_name,
            }
        }
    };
    Ok(ToolCall {
        tool_name,
        arguments,
        turn_index: raw.turn_index,
    })
}

fn convert_observation(raw: RawObservation) -> Result<Observation, ProtocolError> {
    let source_tool = ToolName::from_str_opt(&raw.source_tool)
        .ok_or_else(|| ProtocolError::UnknownTool(raw.source_tool.clone()))?;
    let payload: ObservationPayload = from_value(raw.payload, "observation payload")?;
    let compatible = matches!(
        (source_tool, &payload),
        (ToolName::Search, ObservationPayload::Snippets(_))
            | (ToolName::ImageSearch, ObservationPayload::Images(_))
            | (ToolName::QueryKnowledge, ObservationPayload::Guidance(_))
    );
    if !compatible {
        return Err(ProtocolError::MalformedRecord(format!(
            "observation payload does not match source tool {source_tool}"
        )));
    }
    Ok(Observation {
        source_tool,
        payload,
    })
}

fn convert_answer(value: Value) -> AnswerPayload {
    match PromptReferenceProgram::deserialize(value.clone()) {
        Ok(program) => AnswerPayload::Program(program),
        Err(_) => AnswerPayload::Unparseable(value),
    }
}

fn from_value<'de, T: Deserialize<'de>>(value: Value, what: &str) -> Result<T, ProtocolError> {
    T::deserialize(value).map_err(|e| ProtocolError::MalformedRecord(format!("{what}: {e}")))
}

/// Check the structural invariants of an already-typed turn list and report
/// the first violation, in a fixed precedence order.
pub(crate) fn structural_status(turns: &[Turn], tool_call_count: u32) -> ProtocolStatus {
    use ProtocolViolation as V;

    let answer_positions: Vec<usize> = turns
        .iter()
        .enumerate()
        .filter(|(_, t)| t.final_answer.is_some())
        .map(|(i, _)| i)
        .collect();

    if answer_positions.len() > 1 {
        return ProtocolStatus::structural(V::MultipleAnswers);
    }
    if answer_positions.is_empty() {
        return ProtocolStatus::structural(V::MissingFinalAnswer);
    }
    if answer_positions[0] + 1 != turns.len() {
        return ProtocolStatus::structural(V::AnswerNotLast);
    }
    for turn in turns {
        if turn.tool_call.is_some() && turn.observation.is_none() {
            return ProtocolStatus::structural(V::MissingObservation);
        }
        if turn.final_answer.is_some() && turn.observation.is_some() {
            return ProtocolStatus::structural(V::DanglingObservation);
        }
    }
    let actual_tool_calls = turns.iter().filter(|t| t.tool_call.is_some()).count() as u32;
    if actual_tool_calls != tool_call_count {
        return ProtocolStatus::structural(V::ToolCountMismatch);
    }
    for (index, turn) in turns.iter().enumerate() {
        if let Some(call) = &turn.tool_call {
            if call.turn_index as usize != index {
                return ProtocolStatus::structural(V::TurnIndexMismatch);
            }
        }
    }
    let mut seen_ids = std::collections::BTreeSet::new();
    for turn in turns {
        if let Some(obs) = &turn.observation {
            if let ObservationPayload::Images(images) = &obs.payload {
                for record in images {
                    if !seen_ids.insert(record.img_id.clone()) {
                        return ProtocolStatus::structural(V::DuplicateImgId);
                    }
                }
            }
        }
    }
    ProtocolStatus::Ok
}
