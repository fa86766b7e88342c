//! Teacher context patching.
//!
//! A retrieved bundle is rendered into the fixed injection layout (trigger,
//! summary, focus, then the six guidance lists) and folded into the
//! dedicated guidance sub-vector of the context: one always-set header
//! cell, one signed mention cell per vocabulary token, and a hashed tail of
//! the rendered text. The plain (student) bits of the context are never
//! touched, so stripping the guidance block recovers the student view.

use crate::policy::{fnv1a64, Context, Vocab, GUIDANCE_HASH_CELLS};

use super::ExperienceBundle;

/// Render the bundle in injection order.
pub fn render_injection(bundle: &ExperienceBundle) -> String {
    let mut out = String::from("## Current-Task Decision Guide\n");
    out.push_str("### Trigger\n");
    out.push_str(&bundle.retrieval_key.trigger);
    out.push_str("\n### Source-Prompt Summary\n");
    out.push_str(&bundle.retrieval_key.source_prompt_summary);
    out.push_str("\n### Decision Focus\n");
    out.push_str(&bundle.decision_guidance.decision_focus);
    for (heading, bullets) in bundle.decision_guidance.lists() {
        out.push_str("\n### ");
        out.push_str(heading);
        for bullet in bullets {
            out.push_str("\n- ");
            out.push_str(bullet);
        }
    }
    out.push('\n');
    out
}

/// Count mentions of `surface` in `text` (both lowercase): word-boundary
/// token equality for single words, substring containment for phrases.
fn mention_count(text: &str, tokens: &[&str], surface: &str) -> usize {
    if surface.contains(' ') {
        text.match_indices(surface).count()
    } else {
        tokens.iter().filter(|&&t| t == surface).count()
    }
}

/// Fold a bundle into the guidance sub-vector layout expected by the
/// policy: `[header, per-token signed mentions, hashed text cells]`.
/// Bullets opening with `Avoid` count their mentions negatively.
pub fn guidance_features(bundle: &ExperienceBundle, vocab: &Vocab) -> Vec<f64> {
    let mut g = vec![0.0; vocab.guidance_dim()];
    g[0] = 1.0;

    let mut signed_texts: Vec<(f64, String)> = vec![
        (1.0, bundle.retrieval_key.trigger.to_lowercase()),
        (1.0, bundle.retrieval_key.source_prompt_summary.to_lowercase()),
        (1.0, bundle.decision_guidance.decision_focus.to_lowercase()),
    ];
    for (_, bullets) in bundle.decision_guidance.lists() {
        for bullet in bullets {
            let sign = if bullet.trim_start().starts_with("Avoid") {
                -1.0
            } else {
                1.0
            };
            signed_texts.push((sign, bullet.to_lowercase()));
        }
    }

    for (sign, text) in &signed_texts {
        let tokens: Vec<&str> = text
            .split(|c: char| !(c.is_alphanumeric() || c == '_'))
            .filter(|t| !t.is_empty())
            .collect();
        for (id, info) in vocab.tokens().iter().enumerate() {
            let surface = info.surface.to_lowercase();
            let count = mention_count(text, &tokens, &surface);
            if count > 0 {
                g[1 + id] += sign * count as f64;
            }
        }
    }
    for cell in g[1..=vocab.len()].iter_mut() {
        *cell = cell.clamp(-3.0, 3.0);
    }

    let rendered = render_injection(bundle);
    for token in rendered
        .to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
    {
        let idx = (fnv1a64(token.as_bytes()) % GUIDANCE_HASH_CELLS as u64) as usize;
        g[1 + vocab.len() + idx] += 0.1;
    }
    g
}

/// Extend a plain context with the bundle's guidance block. Teacher-only:
/// sampling never sees patched contexts.
pub fn patch_context(plain: &Context, bundle: &ExperienceBundle, vocab: &Vocab) -> Context {
    Context {
        main: plain.main.clone(),
        guidance: guidance_features(bundle, vocab),
    }
}
