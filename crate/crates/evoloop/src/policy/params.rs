//! Parameter storage, initialization, and the shared score/gradient kernel.

use serde::{Deserialize, Serialize};

use super::vocab::{SlotKind, Vocab};
use super::{Context, PolicyError, TokenId};

/// Matrix shapes of one policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDims {
    pub vocab_size: usize,
    /// Width of the hash-folded main feature block.
    pub d_main: usize,
    /// Embedding width (rows of `E`).
    pub hidden: usize,
    /// Width of the guidance sub-vector.
    pub d_guid: usize,
}

impl PolicyDims {
    pub fn for_vocab(vocab: &Vocab) -> PolicyDims {
        PolicyDims {
            vocab_size: vocab.len(),
            d_main: 160,
            hidden: 160,
            d_guid: vocab.guidance_dim(),
        }
    }
}

/// Cold-start initialization knobs.
///
/// `protocol_prior` seeds the output matrix so that, at each decision slot,
/// tokens of the classes the slot admits start with a logit head start. This
/// plays the role of the supervised cold start: the initial policy mostly
/// emits well-formed actions while every content decision (which query,
/// which skill, which references) starts uniform. `guidance_gain` is the
/// weight with which the teacher reads signed token mentions out of the
/// patched guidance block.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ColdStartConfig {
    pub protocol_prior: f64,
    pub guidance_gain: f64,
}

impl Default for ColdStartConfig {
    fn default() -> Self {
        ColdStartConfig {
            protocol_prior: 3.0,
            guidance_gain: 0.35,
        }
    }
}

/// Flat parameter storage: `E` (hidden × d_main), `W_out` (vocab × hidden),
/// `G` (vocab × d_guid), all row-major, plus the sampling temperature.
/// The temperature is configuration, not a trained coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParameters {
    pub dims: PolicyDims,
    pub embed: Vec<f64>,
    pub output: Vec<f64>,
    pub guidance_read: Vec<f64>,
    pub temperature: f64,
}

impl PolicyParameters {
    pub fn zeros(dims: PolicyDims, temperature: f64) -> PolicyParameters {
        PolicyParameters {
            dims,
            embed: vec![0.0; dims.hidden * dims.d_main],
            output: vec![0.0; dims.vocab_size * dims.hidden],
            guidance_read: vec![0.0; dims.vocab_size * dims.d_guid],
            temperature,
        }
    }

    /// Deterministic cold start: identity embedding, slot-validity prior in
    /// the output matrix, identity guidance read-in on the mention block.
    pub fn cold_start(vocab: &Vocab, temperature: f64, cfg: &ColdStartConfig) -> PolicyParameters {
        let dims = PolicyDims::for_vocab(vocab);
        let mut params = PolicyParameters::zeros(dims, temperature);
        for i in 0..dims.hidden.min(dims.d_main) {
            params.embed[i * dims.d_main + i] = 1.0;
        }
        for slot in SlotKind::ALL {
            let col = feature_index(slot.feature_key(), dims.d_main);
            for token in vocab.ids_in_slot(slot) {
                params.output[token * dims.hidden + col] += cfg.protocol_prior;
            }
        }
        for token in 0..dims.vocab_size {
            params.guidance_read[token * dims.d_guid + 1 + token] = cfg.guidance_gain;
        }
        params
    }

    /// Number of trainable coordinates.
    pub fn len(&self) -> usize {
        self.embed.len() + self.output.len() + self.guidance_read.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flatten the trainable coordinates as `[E, W_out, G]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.embed);
        v.extend_from_slice(&self.output);
        v.extend_from_slice(&self.guidance_read);
        v
    }

    /// Rebuild parameters from a flat vector, keeping this policy's dims
    /// and temperature.
    pub fn from_vec(&self, flat: &[f64]) -> Result<PolicyParameters, PolicyError> {
        if flat.len() != self.len() {
            return Err(PolicyError::ShapeMismatch(format!(
                "expected {} coordinates, got {}",
                self.len(),
                flat.len()
            )));
        }
        let (embed, rest) = flat.split_at(self.embed.len());
        let (output, guidance) = rest.split_at(self.output.len());
        Ok(PolicyParameters {
            dims: self.dims,
            embed: embed.to_vec(),
            output: output.to_vec(),
            guidance_read: guidance.to_vec(),
            temperature: self.temperature,
        })
    }

    pub(crate) fn check_context(&self, context: &Context) -> Result<(), PolicyError> {
        if context.main.len() != self.dims.d_main || context.guidance.len() != self.dims.d_guid {
            return Err(PolicyError::ShapeMismatch(format!(
                "context dims ({}, {}) do not match policy dims ({}, {})",
                context.main.len(),
                context.guidance.len(),
                self.dims.d_main,
                self.dims.d_guid
            )));
        }
        Ok(())
    }

    /// Hidden representation `E · main`, exploiting feature sparsity.
    fn hidden(&self, context: &Context) -> Vec<f64> {
        let d = self.dims.d_main;
        let mut h = vec![0.0; self.dims.hidden];
        for (j, &x) in context.main.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (i, hi) in h.iter_mut().enumerate() {
                *hi += self.embed[i * d + j] * x;
            }
        }
        h
    }

    fn logits(&self, context: &Context, hidden: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.dims.vocab_size];
        for (v, zv) in z.iter_mut().enumerate() {
            let row = &self.output[v * self.dims.hidden..(v + 1) * self.dims.hidden];
            let mut acc = 0.0;
            for (w, h) in row.iter().zip(hidden) {
                acc += w * h;
            }
            *zv = acc;
        }
        for (j, &g) in context.guidance.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (v, zv) in z.iter_mut().enumerate() {
                *zv += self.guidance_read[v * self.dims.d_guid + j] * g;
            }
        }
        z
    }

    /// Full log-softmax over the vocabulary at this context.
    pub fn log_probs(&self, context: &Context) -> Vec<f64> {
        let hidden = self.hidden(context);
        let z = self.logits(context, &hidden);
        log_softmax_scaled(&z, self.temperature)
    }

    /// Compute `log p(token | context)` and add `coeff · ∂ log p / ∂ θ`
    /// into `grad` (flat `[E, W_out, G]` layout). Returns the log-prob.
    pub(crate) fn accumulate_logp_grad(
        &self,
        context: &Context,
        token: TokenId,
        coeff: f64,
        grad: &mut [f64],
    ) -> f64 {
        let dims = self.dims;
        let hidden = self.hidden(context);
        let z = self.logits(context, &hidden);
        let log_probs = log_softmax_scaled(&z, self.temperature);
        let logp = log_probs[token];
        if coeff == 0.0 {
            return logp;
        }

        // dz[v] = coeff · (1{v=token} − p_v) / T
        let inv_t = 1.0 / self.temperature;
        let mut dz: Vec<f64> = log_probs.iter().map(|lp| -lp.exp() * coeff * inv_t).collect();
        dz[token] += coeff * inv_t;

        let (grad_e, rest) = grad.split_at_mut(self.embed.len());
        let (grad_w, grad_g) = rest.split_at_mut(self.output.len());

        // W_out: outer(dz, hidden)
        for (v, &dzv) in dz.iter().enumerate() {
            if dzv == 0.0 {
                continue;
            }
            let row = &mut grad_w[v * dims.hidden..(v + 1) * dims.hidden];
            for (g, h) in row.iter_mut().zip(&hidden) {
                *g += dzv * h;
            }
        }
        // E: outer(W_outᵀ dz, main)
        let mut dh = vec![0.0; dims.hidden];
        for (v, &dzv) in dz.iter().enumerate() {
            if dzv == 0.0 {
                continue;
            }
            let row = &self.output[v * dims.hidden..(v + 1) * dims.hidden];
            for (d, w) in dh.iter_mut().zip(row) {
                *d += dzv * w;
            }
        }
        for (j, &x) in context.main.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (i, &dhi) in dh.iter().enumerate() {
                grad_e[i * dims.d_main + j] += dhi * x;
            }
        }
        // G: outer(dz, guidance) — only non-zero for patched contexts.
        for (j, &g) in context.guidance.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (v, &dzv) in dz.iter().enumerate() {
                grad_g[v * dims.d_guid + j] += dzv * g;
            }
        }
        logp
    }
}

/// Stable log-softmax of `z / temperature`.
fn log_softmax_scaled(z: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = z.iter().map(|&x| x / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = scaled.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    scaled.iter().map(|&x| x - log_sum).collect()
}

/// Fold a feature key into a main-block column index.
pub(crate) fn feature_index(key: &str, d_main: usize) -> usize {
    (super::fnv1a64(key.as_bytes()) % d_main as u64) as usize
}
