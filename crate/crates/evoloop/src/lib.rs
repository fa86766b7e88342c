//! Deterministic, desk-scale self-evolution loop for a tool-orchestrated
//! generation agent.
//!
//! The crate is organized around the stages of one evolution step:
//!
//! - [`protocol`] — trajectory and program data types, parsing, structural
//!   validation, hard filters, and duplicate-reference grouping.
//! - [`environment`] — a mock world implementing the three tools (`search`,
//!   `image_search`, `query_knowledge`), budget enforcement, and seeded
//!   rollout/group sampling.
//! - [`policy`] — a context-conditioned softmax policy over a small action
//!   vocabulary with exact scoring, sampling, and analytic gradients.
//! - [`reward`] — rule-based rubric judge, weighted image score with N/A
//!   renormalization, program-sufficiency bins, and the mixed reward.
//! - [`optimize`] — group-relative advantages, clipped surrogate, the
//!   sampled-token reverse-KL distillation loss, and a finite-difference
//!   gradient oracle.
//! - [`experience`] — best-worst comparison mining, bundle summarization,
//!   the capacity-bounded prompt-keyed buffer, hashed embeddings, gated
//!   retrieval, and teacher context patching.
//! - [`diagnostics`] — token-level teacher/student analysis and training
//!   curve export.
//! - [`evolve`] — the orchestrated training step, run configuration,
//!   checkpointing, and resume.
//! - [`adapters`] — pluggable judge/summarizer/embedder adapters with rate
//!   limiting and fallbacks.
//!
//! Everything is seedable and deterministic: the same world, parameters,
//! and seed produce bit-identical trajectories, metrics, and snapshots.

pub mod adapters;
pub mod diagnostics;
pub mod environment;
pub mod evolve;
pub mod experience;
pub mod optimize;
pub mod policy;
pub mod protocol;
pub mod reward;
