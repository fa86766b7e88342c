//! Context-conditioned softmax policy over a small action vocabulary.
//!
//! The policy scores one token at a time:
//!
//! ```text
//! logits(c) = W_out (E · c.main) + G · c.guidance
//! log p     = log_softmax(logits / temperature)
//! ```
//!
//! `E` is the embedding matrix over the hash-folded context features,
//! `W_out` the output matrix over the vocabulary, and `G` a read-in for the
//! dedicated guidance sub-vector that is non-zero only in patched (teacher)
//! contexts. Student contexts always carry an all-zero guidance block, so
//! `G` receives no gradient through any training loss.
//!
//! All scoring is exact (no truncation), sampling is inverse-CDF from the
//! same log-softmax, and every loss exposes an analytic gradient over the
//! flattened `[E, W_out, G]` parameter vector.

mod checkpoint;
mod params;
mod vocab;

pub use checkpoint::{load_params, save_params};
pub use params::{ColdStartConfig, PolicyDims, PolicyParameters};
pub use vocab::{ControlToken, SlotKind, TokenClass, TokenId, Vocab, GUIDANCE_HASH_CELLS};

use serde::{Deserialize, Serialize};

/// One scoring context: hash-folded history features plus the dedicated
/// patched-guidance sub-vector (all zeros for the plain student view).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub main: Vec<f64>,
    pub guidance: Vec<f64>,
}

impl Context {
    pub fn plain(d_main: usize, d_guid: usize) -> Context {
        Context {
            main: vec![0.0; d_main],
            guidance: vec![0.0; d_guid],
        }
    }

    /// Fold a named feature into the main block (FNV-1a modulo width).
    pub fn bump(&mut self, key: &str, weight: f64) {
        let idx = (fnv1a64(key.as_bytes()) % self.main.len() as u64) as usize;
        self.main[idx] += weight;
    }

    pub fn is_patched(&self) -> bool {
        self.guidance.iter().any(|&g| g != 0.0)
    }

    /// Drop the guidance block, recovering the plain student view.
    pub fn strip_guidance(&self) -> Context {
        Context {
            main: self.main.clone(),
            guidance: vec![0.0; self.guidance.len()],
        }
    }
}

/// FNV-1a 64-bit hash; the folding function for all feature lookups.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// A batch of (context, sampled token, mask) rows.
#[derive(Debug, Clone, Default)]
pub struct TokenBatch {
    pub contexts: Vec<Context>,
    pub tokens: Vec<TokenId>,
    pub mask: Vec<u8>,
}

impl TokenBatch {
    pub fn push(&mut self, context: Context, token: TokenId, mask: u8) {
        self.contexts.push(context);
        self.tokens.push(token);
        self.mask.push(mask);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("token id {0} outside vocabulary of size {1}")]
    TokenOutOfVocab(TokenId, usize),
    #[error("mask selects no tokens")]
    EmptyMask,
    #[error("batch length mismatch: {0}")]
    LengthMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Exact per-token log-probabilities of `batch.tokens` under `params`.
pub fn score_tokens(
    params: &PolicyParameters,
    batch: &TokenBatch,
) -> Result<Vec<f64>, PolicyError> {
    check_batch(params, batch)?;
    let mut out = Vec::with_capacity(batch.len());
    for (context, &token) in batch.contexts.iter().zip(&batch.tokens) {
        out.push(params.log_probs(context)[token]);
    }
    Ok(out)
}

/// Sample one token by inverse CDF over the softmax at the configured
/// temperature. The returned log-probability is bit-identical to what
/// [`score_tokens`] reports for the same (context, token) pair.
pub fn sample_action(
    params: &PolicyParameters,
    context: &Context,
    rng: &mut impl rand::Rng,
) -> (TokenId, f64) {
    let log_probs = params.log_probs(context);
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut chosen = log_probs.len() - 1;
    for (token, lp) in log_probs.iter().enumerate() {
        cumulative += lp.exp();
        if u < cumulative {
            chosen = token;
            break;
        }
    }
    (chosen, log_probs[chosen])
}

/// Masked mean negative log-likelihood with analytic gradient.
///
/// `loss = -(Σ m·log p) / (Σ m)`.
pub fn sft_loss(
    params: &PolicyParameters,
    batch: &TokenBatch,
) -> Result<(f64, Vec<f64>), PolicyError> {
    check_batch(params, batch)?;
    let mask_total: f64 = batch.mask.iter().map(|&m| m as f64).sum();
    if mask_total == 0.0 {
        return Err(PolicyError::EmptyMask);
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for ((context, &token), &m) in batch.contexts.iter().zip(&batch.tokens).zip(&batch.mask) {
        if m == 0 {
            continue;
        }
        let coeff = -1.0 / mask_total;
        let logp = params.accumulate_logp_grad(context, token, coeff, &mut grad);
        loss -= logp / mask_total;
    }
    Ok((loss, grad))
}

fn check_batch(params: &PolicyParameters, batch: &TokenBatch) -> Result<(), PolicyError> {
    if batch.contexts.len() != batch.tokens.len() || batch.tokens.len() != batch.mask.len() {
        return Err(PolicyError::LengthMismatch(format!(
            "contexts={} tokens={} mask={}",
            batch.contexts.len(),
            batch.tokens.len(),
            batch.mask.len()
        )));
    }
    for &token in &batch.tokens {
        if token >= params.dims.vocab_size {
            return Err(PolicyError::TokenOutOfVocab(token, params.dims.vocab_size));
        }
    }
    for context in &batch.contexts {
        params.check_context(context)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
