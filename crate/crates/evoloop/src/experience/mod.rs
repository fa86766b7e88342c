//! Best-worst comparison mining, bundle construction, the capacity-bounded
//! prompt-keyed buffer, deterministic embeddings, gated retrieval, and
//! teacher context patching.

mod embed;
mod mine;
mod patch;
mod summarize;

pub use embed::{embed_prompt, EMBED_DIM};
pub use mine::{mine_comparison, Comparison, ComparisonSide};
pub use patch::{guidance_features, patch_context, render_injection};
pub use summarize::{summarize_bundle, BundleContent, Summarizer, TemplateSummarizer};

use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ExperienceError {
    #[error("empty text")]
    EmptyText,
    #[error("summarizer failure: {0}")]
    SummarizerFailure(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

/// Embedding key of a bundle: when to retrieve it and what kind of request
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalKey {
    pub trigger: String,
    pub source_prompt_summary: String,
}

/// The six imperative guidance lists plus the single most important pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionGuidance {
    pub decision_focus: String,
    pub recommended_tool_plan: Vec<String>,
    pub search_query_guidance: Vec<String>,
    pub skill_routing_guidance: Vec<String>,
    pub reference_selection_guidance: Vec<String>,
    pub prompt_program_guidance: Vec<String>,
    pub failure_guards: Vec<String>,
}

impl DecisionGuidance {
    /// The guidance lists in injection order.
    pub fn lists(&self) -> [(&'static str, &[String]); 6] {
        [
            ("Recommended Tool Plan", &self.recommended_tool_plan),
            ("Search Query Guidance", &self.search_query_guidance),
            ("Skill Routing Guidance", &self.skill_routing_guidance),
            (
                "Reference Selection Guidance",
                &self.reference_selection_guidance,
            ),
            ("Prompt-Program Guidance", &self.prompt_program_guidance),
            ("Failure Guards", &self.failure_guards),
        ]
    }
}

/// One distilled best-worst lesson, keyed by its source prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceBundle {
    pub retrieval_key: RetrievalKey,
    pub decision_guidance: DecisionGuidance,
    pub source_prompt_id: String,
    pub source_embedding: Vec<f64>,
    pub reward_gap: f64,
    pub insertion_index: u64,
}

/// Capacity-bounded prompt-keyed buffer with reward-gap eviction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceBuffer {
    pub entries: Vec<ExperienceBundle>,
    pub capacity: usize,
    /// Retrieval similarity gate.
    pub gate: f64,
    /// Minimum best-worst reward gap worth keeping.
    pub delta_min: f64,
    pub max_comparisons_per_step: usize,
    next_insertion_index: u64,
}

impl Default for ExperienceBuffer {
    fn default() -> Self {
        ExperienceBuffer::new(500, 0.84, 0.20, 8)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl ExperienceBuffer {
    pub fn new(
        capacity: usize,
        gate: f64,
        delta_min: f64,
        max_comparisons_per_step: usize,
    ) -> ExperienceBuffer {
        ExperienceBuffer {
            entries: Vec::new(),
            capacity,
            gate,
            delta_min,
            max_comparisons_per_step,
            next_insertion_index: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Append a bundle; over capacity, evict the entry with the smallest
    /// reward gap, oldest first on ties.
    pub fn insert_bundle(&mut self, mut bundle: ExperienceBundle) {
        bundle.insertion_index = self.next_insertion_index;
        self.next_insertion_index += 1;
        self.entries.push(bundle);
        if self.entries.len() > self.capacity {
            let evict = self
                .entries
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    a.reward_gap
                        .partial_cmp(&b.reward_gap)
                        .unwrap()
                        .then(a.insertion_index.cmp(&b.insertion_index))
                })
                .map(|(i, _)| i)
                .expect("buffer cannot be empty here");
            self.entries.remove(evict);
        }
    }

    /// Nearest entry by cosine over source embeddings, returned only when
    /// the similarity reaches the gate. Ties resolve to the oldest entry.
    pub fn retrieve_bundle(&self, query_embedding: &[f64], gate: f64) -> Option<&ExperienceBundle> {
        let mut best: Option<(&ExperienceBundle, f64)> = None;
        for entry in &self.entries {
            let sim = cosine(query_embedding, &entry.source_embedding);
            let better = match best {
                None => true,
                Some((current, best_sim)) => {
                    sim > best_sim
                        || (sim == best_sim && entry.insertion_index < current.insertion_index)
                }
            };
            if better {
                best = Some((entry, sim));
            }
        }
        best.filter(|&(_, sim)| sim >= gate).map(|(entry, _)| entry)
    }

    /// Retrieve with the buffer's own gate.
    pub fn retrieve(&self, query_embedding: &[f64]) -> Option<&ExperienceBundle> {
        self.retrieve_bundle(query_embedding, self.gate)
    }

    /// Write the buffer as one JSON bundle per line.
    pub fn save_snapshot(&self, path: &Path) -> Result<(), ExperienceError> {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("bundle serialization"));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| ExperienceError::Snapshot(e.to_string()))
    }

    /// Load a snapshot written by [`ExperienceBuffer::save_snapshot`],
    /// keeping this buffer's configuration.
    pub fn load_snapshot(&mut self, path: &Path) -> Result<(), ExperienceError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ExperienceError::Snapshot(e.to_string()))?;
        let mut entries = Vec::new();
        let mut max_index = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let bundle: ExperienceBundle =
                serde_json::from_str(line).map_err(|e| ExperienceError::Snapshot(e.to_string()))?;
            max_index = max_index.max(bundle.insertion_index + 1);
            entries.push(bundle);
        }
        self.entries = entries;
        self.next_insertion_index = max_index;
        Ok(())
    }
}
