//! Bundle construction from one best-worst comparison.
//!
//! The default summarizer is a deterministic template: guidance bullets are
//! derived from structural diffs between the two trajectories (tool plan,
//! queries, skills, references, program fields, and the worst side's
//! failure tags). Where best and worst do not differ, the bullet falls back
//! to the best trajectory's behaviour and carries the literal prefix
//! `Standard:`. Bullets opening with `Avoid` are read as negative guidance
//! when the bundle is featurized for the teacher.

use std::collections::BTreeSet;

use crate::protocol::{ordinal_positions, SkillName, ToolName, Trajectory, ORDINAL_WORDS};

use super::{
    embed_prompt, Comparison, DecisionGuidance, ExperienceBundle, ExperienceError, RetrievalKey,
};

/// The summarizer's part of a bundle; bookkeeping fields are filled by
/// [`summarize_bundle`] and the buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleContent {
    pub retrieval_key: RetrievalKey,
    pub decision_guidance: DecisionGuidance,
}

/// Pluggable comparison summarizer (the real system drives an external
/// model through this interface).
pub trait Summarizer {
    fn summarize(&self, comparison: &Comparison) -> Result<BundleContent, ExperienceError>;
}

/// Build one bundle from a comparison: summarizer content plus the source
/// prompt embedding and reward gap.
pub fn summarize_bundle(
    comparison: &Comparison,
    summarizer: &dyn Summarizer,
) -> Result<ExperienceBundle, ExperienceError> {
    let content = summarizer.summarize(comparison)?;
    let source_embedding = embed_prompt(&comparison.best.trajectory.request_text)?;
    Ok(ExperienceBundle {
        retrieval_key: content.retrieval_key,
        decision_guidance: content.decision_guidance,
        source_prompt_id: comparison.prompt_id.clone(),
        source_embedding,
        reward_gap: comparison.delta,
        insertion_index: 0,
    })
}

/// The bundled deterministic summarizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateSummarizer;

fn tool_plan(trajectory: &Trajectory) -> Vec<ToolName> {
    let mut plan = Vec::new();
    for call in trajectory.tool_calls() {
        if plan.last() != Some(&call.tool_name) {
            plan.push(call.tool_name);
        }
    }
    plan
}

fn plan_phrase(plan: &[ToolName]) -> String {
    if plan.is_empty() {
        "give the final answer directly".to_string()
    } else {
        let names: Vec<&str> = plan.iter().map(ToolName::as_str).collect();
        format!("call tools in the order: {}, then give the final answer", names.join(", "))
    }
}

fn query_set(trajectory: &Trajectory, tool: ToolName) -> BTreeSet<String> {
    trajectory
        .queries_for(tool)
        .into_iter()
        .map(str::to_string)
        .collect()
}

fn skill_set(trajectory: &Trajectory) -> BTreeSet<SkillName> {
    trajectory.skills_called().into_iter().collect()
}

fn ref_ids(trajectory: &Trajectory) -> BTreeSet<String> {
    trajectory
        .final_program()
        .map(|p| p.reference_images.iter().map(|r| r.img_id.clone()).collect())
        .unwrap_or_default()
}

fn has_quoted_text(trajectory: &Trajectory) -> bool {
    trajectory
        .final_program()
        .is_some_and(|p| p.gen_prompt.contains('"'))
}

fn ordinals_valid(trajectory: &Trajectory) -> bool {
    trajectory.final_program().is_some_and(|p| {
        let k = p.reference_images.len();
        k >= 1 && ordinal_positions(&p.gen_prompt) == (1..=k).collect()
    })
}

fn ordinal_binding_phrase(ref_count: usize) -> String {
    let k = ref_count.clamp(1, ORDINAL_WORDS.len());
    let phrases: Vec<String> = ORDINAL_WORDS[..k]
        .iter()
        .map(|w| format!("the {w} reference image"))
        .collect();
    format!("Bind each reference with its ordinal phrase, using {}.", phrases.join(" and "))
}

/// First content words of the request, for the retrieval-key summary.
fn summary_words(text: &str, limit: usize) -> String {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.len() >= 3)
        .take(limit)
        .collect::<Vec<_>>()
        .join(" ")
}

impl Summarizer for TemplateSummarizer {
    fn summarize(&self, comparison: &Comparison) -> Result<BundleContent, ExperienceError> {
        let best = &comparison.best.trajectory;
        let worst = &comparison.worst.trajectory;

        let best_plan = tool_plan(best);
        let worst_plan = tool_plan(worst);
        let mut recommended_tool_plan = Vec::new();
        if best_plan != worst_plan {
            recommended_tool_plan.push(format!("{}.", capitalize(&plan_phrase(&best_plan))));
            if !worst_plan.contains(&ToolName::ImageSearch) {
                recommended_tool_plan
                    .push("Always call image_search at least once before answering.".to_string());
            }
        } else {
            recommended_tool_plan.push(format!("Standard: {}.", plan_phrase(&best_plan)));
        }

        let mut search_query_guidance = Vec::new();
        for tool in [ToolName::Search, ToolName::ImageSearch] {
            let best_queries = query_set(best, tool);
            let worst_queries = query_set(worst, tool);
            for q in best_queries.difference(&worst_queries) {
                search_query_guidance
                    .push(format!("Issue {tool}(\"{q}\") before composing the final prompt."));
            }
            for q in worst_queries.difference(&best_queries) {
                search_query_guidance.push(format!("Avoid {tool}(\"{q}\"); it grounded nothing useful."));
            }
            if best_queries == worst_queries {
                for q in &best_queries {
                    search_query_guidance.push(format!(
                        "Standard: issue {tool}(\"{q}\") before composing the final prompt."
                    ));
                }
            }
        }

        let best_skills = skill_set(best);
        let worst_skills = skill_set(worst);
        let mut skill_routing_guidance = Vec::new();
        for skill in best_skills.difference(&worst_skills) {
            skill_routing_guidance.push(format!("Call query_knowledge with skill {skill}."));
        }
        for skill in worst_skills.difference(&best_skills) {
            skill_routing_guidance.push(format!("Avoid activating skill {skill}; it did not pay off."));
        }
        if best_skills == worst_skills {
            for skill in &best_skills {
                skill_routing_guidance
                    .push(format!("Standard: call query_knowledge with skill {skill}."));
            }
        }

        let best_refs = ref_ids(best);
        let worst_refs = ref_ids(worst);
        let mut reference_selection_guidance = Vec::new();
        for id in best_refs.difference(&worst_refs) {
            reference_selection_guidance.push(format!("Select reference {id}."));
        }
        for id in worst_refs.difference(&best_refs) {
            reference_selection_guidance.push(format!("Avoid reference {id}; it matched the wrong subject."));
        }
        if best_refs == worst_refs {
            for id in &best_refs {
                reference_selection_guidance.push(format!("Standard: select reference {id}."));
            }
        }

        let mut prompt_program_guidance = Vec::new();
        let quote_bullet =
            "Quote the required text verbatim inside double quotes in the final prompt.";
        if has_quoted_text(best) && !has_quoted_text(worst) {
            prompt_program_guidance.push(quote_bullet.to_string());
        }
        if ordinals_valid(best) && !ordinals_valid(worst) {
            prompt_program_guidance.push(ordinal_binding_phrase(best_refs.len()));
        }
        if prompt_program_guidance.is_empty() {
            if has_quoted_text(best) {
                prompt_program_guidance.push(format!("Standard: {}", lowercase_first(quote_bullet)));
            }
            if ordinals_valid(best) {
                prompt_program_guidance.push(format!(
                    "Standard: {}",
                    lowercase_first(&ordinal_binding_phrase(best_refs.len()))
                ));
            }
        }

        let mut failure_guards: Vec<String> = comparison
            .worst
            .report
            .rubric
            .failure_tags
            .iter()
            .map(|tag| format!("Guard against {tag}."))
            .collect();
        if failure_guards.is_empty() {
            failure_guards.push(
                "Standard: keep references sorted by id and stay within the tool budget."
                    .to_string(),
            );
        }

        let decision_focus = if query_set(best, ToolName::Search) != query_set(worst, ToolName::Search)
        {
            "Target the decisive search query before composing the final prompt.".to_string()
        } else if best_skills != worst_skills {
            "Activate the generation skills the request actually needs.".to_string()
        } else if best_refs != worst_refs {
            "Select the reference that matches the requested subject.".to_string()
        } else if best_plan != worst_plan {
            "Order tool calls so evidence arrives before the final prompt.".to_string()
        } else {
            "Reinforce the full decision pattern of the stronger trajectory.".to_string()
        };

        let trigger = format!(
            "When a request like this needs grounded evidence and exact rendering, follow this guide before answering (gap {:.2}).",
            comparison.delta
        );
        let source_prompt_summary = format!(
            "request about: {}",
            summary_words(&best.request_text, 10)
        );

        Ok(BundleContent {
            retrieval_key: RetrievalKey {
                trigger,
                source_prompt_summary,
            },
            decision_guidance: DecisionGuidance {
                decision_focus,
                recommended_tool_plan,
                search_query_guidance,
                skill_routing_guidance,
                reference_selection_guidance,
                prompt_program_guidance,
                failure_guards,
            },
        })
    }
}

fn capitalize(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

fn lowercase_first(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(first) => first.to_lowercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}
