//! Tool execution against the mock world.
//!
//! Queries resolve by normalized token-set overlap: the best-matching
//! fixture key wins when its Jaccard similarity is at least 0.5, otherwise
//! the observation carries an empty payload. This makes noisy-query failure
//! modes reproducible.

use std::collections::BTreeSet;

use crate::protocol::{
    ImageResult, Observation, ObservationPayload, SkillName, ToolArguments, ToolCall, ToolName,
};

use super::world::World;
use super::EnvError;

/// Remaining tool-call allowance for one rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetState {
    pub used: u32,
    pub cap: u32,
}

impl BudgetState {
    pub fn new(cap: u32) -> BudgetState {
        BudgetState { used: 0, cap }
    }

    pub fn exhausted(&self) -> bool {
        self.used >= self.cap
    }
}

fn normalized_tokens(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let intersection = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    intersection / union
}

/// Best fixture key for a query, if any reaches the 0.5 overlap gate.
/// Ties resolve to the lexicographically smallest key.
pub(crate) fn best_match<'a>(
    query: &str,
    keys: impl Iterator<Item = &'a String>,
) -> Option<&'a String> {
    let query_tokens = normalized_tokens(query);
    let mut best: Option<(&'a String, f64)> = None;
    for key in keys {
        let score = jaccard(&query_tokens, &normalized_tokens(key));
        let better = match best {
            None => true,
            Some((bk, bs)) => score > bs || (score == bs && key < bk),
        };
        if better {
            best = Some((key, score));
        }
    }
    best.filter(|&(_, score)| score >= 0.5).map(|(key, _)| key)
}

/// Execute one tool call, decrementing the budget on success.
pub fn execute_tool(
    world: &World,
    call: &ToolCall,
    budget: &mut BudgetState,
) -> Result<Observation, EnvError> {
    if budget.exhausted() {
        return Err(EnvError::BudgetExhausted);
    }
    let payload = match &call.arguments {
        ToolArguments::Search { queries } => {
            let mut snippets = Vec::new();
            for query in queries {
                if let Some(key) = best_match(query, world.facts.keys()) {
                    snippets.push(world.facts[key].text.clone());
                }
            }
            ObservationPayload::Snippets(snippets)
        }
        ToolArguments::ImageSearch { query } => {
            let records = match best_match(query, world.images.keys()) {
                Some(key) => world.images[key]
                    .iter()
                    .map(|img| ImageResult {
                        img_id: img.img_id.clone(),
                        title: img.title.clone(),
                        cached_path: img.cached_path.clone(),
                        source_tag: img.source_tag.clone(),
                    })
                    .collect(),
                None => Vec::new(),
            };
            ObservationPayload::Images(records)
        }
        ToolArguments::QueryKnowledge { skill_name } => {
            let skill = SkillName::from_str_opt(skill_name)
                .ok_or_else(|| EnvError::UnknownSkill(skill_name.clone()))?;
            let text = world
                .skills
                .get(&skill)
                .cloned()
                .unwrap_or_else(|| format!("no guidance available for {skill}"));
            ObservationPayload::Guidance(text)
        }
    };
    budget.used += 1;
    Ok(Observation {
        source_tool: call.tool_name,
        payload,
    })
}

impl ToolName {
    pub(crate) fn of_arguments(arguments: &ToolArguments) -> ToolName {
        match arguments {
            ToolArguments::Search { .. } => ToolName::Search,
            ToolArguments::ImageSearch { .. } => ToolName::ImageSearch,
            ToolArguments::QueryKnowledge { .. } => ToolName::QueryKnowledge,
        }
    }
}
