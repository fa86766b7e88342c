//! Deterministic feature-hashed text embedding, L2-normalized. Identical
//! texts map to identical vectors; the interface is pluggable so an external
//! embedder can replace it.

use crate::policy::fnv1a64;

use super::ExperienceError;

pub const EMBED_DIM: usize = 64;

/// Hash token counts into a unit vector.
pub fn embed_prompt(text: &str) -> Result<Vec<f64>, ExperienceError> {
    let tokens: Vec<String> = text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    if tokens.is_empty() {
        return Err(ExperienceError::EmptyText);
    }
    let mut v = vec![0.0f64; EMBED_DIM];
    for token in &tokens {
        let idx = (fnv1a64(token.as_bytes()) % EMBED_DIM as u64) as usize;
        v[idx] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

/// Indices a text's tokens hash to; used by tests to pick collision-free
/// fixtures.
#[cfg(test)]
pub(crate) fn hashed_support(text: &str) -> std::collections::BTreeSet<usize> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| (fnv1a64(t.as_bytes()) % EMBED_DIM as u64) as usize)
        .collect()
}
