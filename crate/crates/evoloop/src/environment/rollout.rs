//! The seeded rollout state machine.
//!
//! A rollout alternates policy decisions and tool executions until the
//! policy emits the final answer or the tool budget runs out (which forces
//! an answer turn). Every sampled token is recorded with its plain context
//! and log-probability so the optimizer can re-score the identical tokens
//! later, under plain or patched contexts.
//!
//! Decision slots and how ill-formed samples are interpreted:
//!
//! - `Action`: a tool token invokes that tool; the final-answer token (or an
//!   exhausted budget) moves to the answer phase; any other token ends the
//!   trajectory as a malformed action.
//! - `SearchQuery` / `ImageQuery`: a query token issues its canned phrase;
//!   any other token issues its surface form literally, which typically
//!   matches nothing and returns an empty observation.
//! - `SkillArg`: a skill token queries that skill; anything else is a
//!   malformed action (skill names are a closed enum on the wire).
//! - `RefSelect`: an observed, unselected image id selects it; the stop
//!   token ends selection; anything else is skipped.
//! - `OrdinalChoice`: an ordinal token binds the phrase for one position;
//!   anything else leaves the position unbound.
//! - `TextDecision`: the quote token copies the request's quoted span into
//!   the generation prompt; anything else skips it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::policy::{
    sample_action, Context, ControlToken, PolicyParameters, SlotKind, TokenClass, TokenId, Vocab,
};
use crate::protocol::{
    AnswerPayload, FilterConfig, ImageResult, ObservationPayload, PromptReferenceProgram,
    ProtocolStatus, ProtocolViolation, ReferenceSelection, SkillName, ToolArguments, ToolCall,
    ToolName, Trajectory, Turn,
};
use crate::reward::{Judge, RewardReport};

use super::tools::{execute_tool, BudgetState};
use super::world::{render_outcome, PromptCase, World};
use super::EnvError;

/// Rollout knobs; the protocol-level reference cap stays at five while the
/// generator-facing cap is configurable.
#[derive(Debug, Clone, Copy)]
pub struct RolloutConfig {
    pub tool_budget: u32,
    pub max_ref_images: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            tool_budget: 10,
            max_ref_images: 2,
        }
    }
}

impl RolloutConfig {
    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            max_tool_calls: self.tool_budget,
            max_refs: 5,
        }
    }
}

/// One recorded policy decision.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub context: Context,
    pub slot: SlotKind,
    pub token: TokenId,
    pub logp: f64,
}

/// All decisions of one rollout, in sampling order.
#[derive(Debug, Clone, Default)]
pub struct TokenTrace {
    pub steps: Vec<TraceStep>,
    /// Count of samples drawn under a patched context; the student never
    /// samples from the teacher view, so this stays zero.
    pub patched_samples: u32,
}

/// K rollouts of one prompt with their rewards.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub trajectories: Vec<Trajectory>,
    pub traces: Vec<TokenTrace>,
    pub rewards: Vec<RewardReport>,
    pub seed: u64,
}

struct RolloutState<'a> {
    world: &'a World,
    case: &'a PromptCase,
    params: &'a PolicyParameters,
    vocab: &'a Vocab,
    rng: ChaCha8Rng,
    trace: TokenTrace,
    turns: Vec<Turn>,
    budget: BudgetState,
    observed: Vec<ImageResult>,
    facts_found: Vec<String>,
    skills_called: Vec<SkillName>,
    searched: bool,
    imaged: bool,
}

impl<'a> RolloutState<'a> {
    fn build_context(&self, slot: SlotKind, extra: &[(String, f64)]) -> Context {
        let mut c = Context::plain(self.params.dims.d_main, self.params.dims.d_guid);
        let pid = &self.case.prompt_id;
        c.bump(slot.feature_key(), 1.0);
        c.bump(&format!("prompt:{pid}"), 1.0);
        c.bump(&format!("joint:{}:{pid}", slot.feature_key()), 1.0);
        let progress = format!(
            "s{}i{}k{}",
            self.searched as u8,
            self.imaged as u8,
            self.skills_called.len().min(3)
        );
        c.bump(&format!("state:{progress}"), 1.0);
        c.bump(&format!("jstate:{}:{pid}:{progress}", slot.feature_key()), 1.0);
        for step in &self.trace.steps {
            c.bump(&format!("hist:{}", self.vocab.token(step.token).name), 0.25);
        }
        for (key, weight) in extra {
            c.bump(key, *weight);
        }
        c
    }

    fn sample(&mut self, slot: SlotKind, extra: &[(String, f64)]) -> TokenId {
        let context = self.build_context(slot, extra);
        if context.is_patched() {
            self.trace.patched_samples += 1;
        }
        let (token, logp) = sample_action(self.params, &context, &mut self.rng);
        self.trace.steps.push(TraceStep {
            context,
            slot,
            token,
            logp,
        });
        token
    }

    fn push_tool_turn(&mut self, thought: String, arguments: ToolArguments) {
        let tool_name = ToolName::of_arguments(&arguments);
        let call = ToolCall {
            tool_name,
            arguments,
            turn_index: self.turns.len() as u32,
        };
        let observation = execute_tool(self.world, &call, &mut self.budget)
            .expect("rollout only calls tools with budget and valid skills");
        let observation = match observation.payload {
            // Keep observed image ids globally unique within the trajectory.
            ObservationPayload::Images(records) => {
                let fresh: Vec<ImageResult> = records
                    .into_iter()
                    .filter(|r| !self.observed.iter().any(|o| o.img_id == r.img_id))
                    .collect();
                self.observed.extend(fresh.iter().cloned());
                crate::protocol::Observation {
                    source_tool: call.tool_name,
                    payload: ObservationPayload::Images(fresh),
                }
            }
            ObservationPayload::Snippets(snippets) => {
                self.facts_found.extend(snippets.iter().cloned());
                crate::protocol::Observation {
                    source_tool: call.tool_name,
                    payload: ObservationPayload::Snippets(snippets),
                }
            }
            payload => crate::protocol::Observation {
                source_tool: call.tool_name,
                payload,
            },
        };
        self.turns.push(Turn::tool(thought, call, observation));
    }
}

fn quoted_span(text: &str) -> Option<&str> {
    let start = text.find('"')?;
    let rest = &text[start + 1..];
    let end = rest.find('"')?;
    Some(&rest[..end])
}

/// Drive one rollout of `prompt_id` under the given seed.
pub fn run_rollout(
    world: &World,
    params: &PolicyParameters,
    vocab: &Vocab,
    prompt_id: &str,
    seed: u64,
    cfg: &RolloutConfig,
) -> Result<(Trajectory, TokenTrace), EnvError> {
    let case = world
        .prompt(prompt_id)
        .ok_or_else(|| EnvError::UnknownPrompt(prompt_id.to_string()))?;
    let mut state = RolloutState {
        world,
        case,
        params,
        vocab,
        rng: ChaCha8Rng::seed_from_u64(seed),
        trace: TokenTrace::default(),
        turns: Vec::new(),
        budget: BudgetState::new(cfg.tool_budget),
        observed: Vec::new(),
        facts_found: Vec::new(),
        skills_called: Vec::new(),
        searched: false,
        imaged: false,
    };

    let mut failure: Option<ProtocolViolation> = None;
    loop {
        if state.budget.exhausted() {
            answer_phase(&mut state, cfg, true);
            break;
        }
        let token = state.sample(SlotKind::Action, &[]);
        match state.vocab.class(token).clone() {
            TokenClass::Tool(ToolName::Search) => {
                let query = sampled_query(&mut state, SlotKind::SearchQuery);
                state.searched = true;
                state.push_tool_turn(
                    "gather a missing fact".into(),
                    ToolArguments::Search {
                        queries: vec![query],
                    },
                );
            }
            TokenClass::Tool(ToolName::ImageSearch) => {
                let query = sampled_query(&mut state, SlotKind::ImageQuery);
                state.imaged = true;
                state.push_tool_turn(
                    "retrieve candidate references".into(),
                    ToolArguments::ImageSearch { query },
                );
            }
            TokenClass::Tool(ToolName::QueryKnowledge) => {
                let skill_token = state.sample(SlotKind::SkillArg, &[]);
                match state.vocab.class(skill_token) {
                    TokenClass::Skill(skill) => {
                        let skill = *skill;
                        if !state.skills_called.contains(&skill) {
                            state.skills_called.push(skill);
                        }
                        state.push_tool_turn(
                            "activate generation knowledge".into(),
                            ToolArguments::QueryKnowledge {
                                skill_name: skill.as_str().to_string(),
                            },
                        );
                    }
                    _ => {
                        failure = Some(ProtocolViolation::MalformedAction);
                        break;
                    }
                }
            }
            TokenClass::Control(ControlToken::FinalAnswer) => {
                answer_phase(&mut state, cfg, false);
                break;
            }
            _ => {
                failure = Some(ProtocolViolation::MalformedAction);
                break;
            }
        }
    }

    let tool_call_count = state.turns.iter().filter(|t| t.tool_call.is_some()).count() as u32;
    let mut trajectory = Trajectory {
        prompt_id: case.prompt_id.clone(),
        request_text: case.request_text.clone(),
        turns: state.turns,
        tool_call_count,
        protocol_status: match failure {
            Some(violation) => ProtocolStatus::structural(violation),
            None => ProtocolStatus::Ok,
        },
    };
    if trajectory.protocol_status.is_ok() {
        let report = crate::protocol::check_hard_filters(&trajectory, &cfg.filter_config());
        if let Some(reason) = report.reasons.into_iter().next() {
            trajectory.protocol_status = ProtocolStatus::filtered(reason);
        }
    }
    Ok((trajectory, state.trace))
}

fn sampled_query(state: &mut RolloutState, slot: SlotKind) -> String {
    let token = state.sample(slot, &[]);
    // Non-query tokens issue their surface form literally; such queries
    // usually miss the overlap gate and come back empty.
    state.vocab.token(token).surface.clone()
}

fn answer_phase(state: &mut RolloutState, cfg: &RolloutConfig, forced: bool) {
    // Reference selection: up to five draws, capped at the generator limit.
    let mut selected: Vec<ImageResult> = Vec::new();
    for _ in 0..5 {
        if selected.len() >= cfg.max_ref_images || state.observed.is_empty() {
            break;
        }
        let mut extra: Vec<(String, f64)> = Vec::new();
        for img in &state.observed {
            extra.push((format!("obs:{}", img.img_id), 1.0));
            extra.push((format!("jobs:{}:{}", state.case.prompt_id, img.img_id), 1.0));
        }
        for img in &selected {
            extra.push((format!("picked:{}", img.img_id), 1.0));
        }
        extra.push((format!("picked_n:{}", selected.len()), 1.0));
        let token = state.sample(SlotKind::RefSelect, &extra);
        match state.vocab.class(token) {
            TokenClass::ImgId(id) => {
                if let Some(img) = state.observed.iter().find(|o| &o.img_id == id) {
                    if !selected.iter().any(|s| s.img_id == img.img_id) {
                        selected.push(img.clone());
                    }
                }
            }
            TokenClass::Control(ControlToken::EndRefs) => break,
            _ => {}
        }
    }
    selected.sort_by(|a, b| a.img_id.cmp(&b.img_id));

    // Ordinal bindings, one decision per selected reference.
    let mut ordinal_phrases: Vec<String> = Vec::new();
    for position in 0..selected.len() {
        let extra = vec![(format!("ordpos:{position}"), 1.0)];
        let token = state.sample(SlotKind::OrdinalChoice, &extra);
        if let TokenClass::Ordinal(_) = state.vocab.class(token) {
            ordinal_phrases.push(format!(
                "Follow {} closely.",
                state.vocab.token(token).surface
            ));
        }
    }

    // Literal-text decision, only when the request quotes a span.
    let mut quoted = None;
    if let Some(span) = quoted_span(&state.case.request_text) {
        let token = state.sample(SlotKind::TextDecision, &[]);
        if matches!(
            state.vocab.class(token),
            TokenClass::Control(ControlToken::QuoteText)
        ) {
            quoted = Some(span.to_string());
        }
    }

    let mut parts: Vec<String> = Vec::new();
    parts.push(state.case.request_text.replace('"', "").trim().to_string());
    for fact in &state.facts_found {
        parts.push(fact.clone());
    }
    parts.extend(ordinal_phrases);
    for skill in &state.skills_called {
        parts.push(format!("Apply {skill} guidance."));
    }
    if let Some(span) = &quoted {
        parts.push(format!("Render the text \"{span}\" exactly."));
    }

    let program = PromptReferenceProgram {
        gen_prompt: parts.join(" "),
        reference_images: selected
            .iter()
            .map(|img| ReferenceSelection {
                img_id: img.img_id.clone(),
                note: format!("copy {}", img.title),
            })
            .collect(),
        selected_skills: state.skills_called.clone(),
        rationale: format!(
            "{} facts, {} references, {} skills",
            state.facts_found.len(),
            selected.len(),
            state.skills_called.len()
        ),
    };
    let thought = if forced {
        "final step reached, composing the program".to_string()
    } else {
        "compose the final program".to_string()
    };
    state
        .turns
        .push(Turn::answer(thought, AnswerPayload::Program(program)));
}

/// Sample K independent rollouts with derived sub-seeds `seed + i` and judge
/// each one.
#[allow(clippy::too_many_arguments)]
pub fn run_group(
    world: &World,
    params: &PolicyParameters,
    vocab: &Vocab,
    prompt_id: &str,
    k: usize,
    seed: u64,
    cfg: &RolloutConfig,
    judge: &dyn Judge,
    alpha: f64,
) -> Result<RolloutGroup, EnvError> {
    if k < 2 {
        return Err(EnvError::GroupTooSmall(k));
    }
    let mut trajectories = Vec::with_capacity(k);
    let mut traces = Vec::with_capacity(k);
    let mut rewards = Vec::with_capacity(k);
    for i in 0..k {
        let (trajectory, trace) =
            run_rollout(world, params, vocab, prompt_id, seed + i as u64, cfg)?;
        rewards.push(judge_rollout(world, judge, &trajectory, alpha, cfg));
        trajectories.push(trajectory);
        traces.push(trace);
    }
    Ok(RolloutGroup {
        prompt_id: prompt_id.to_string(),
        trajectories,
        traces,
        rewards,
        seed,
    })
}

/// Judge one rollout against its prompt's ground truth.
pub fn judge_rollout(
    world: &World,
    judge: &dyn Judge,
    trajectory: &Trajectory,
    alpha: f64,
    cfg: &RolloutConfig,
) -> RewardReport {
    let Some(case) = world.prompt(&trajectory.prompt_id) else {
        return RewardReport::protocol_failure();
    };
    let Some(program) = trajectory.final_program() else {
        return RewardReport::protocol_failure();
    };
    let outcome = render_outcome(world, trajectory, program);
    crate::reward::judge_trajectory(
        judge,
        trajectory,
        &outcome,
        &case.ground_truth,
        alpha,
        &cfg.filter_config(),
    )
}
