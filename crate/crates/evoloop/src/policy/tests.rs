use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_dims(vocab: usize) -> PolicyDims {
    PolicyDims {
        vocab_size: vocab,
        d_main: 6,
        hidden: 6,
        d_guid: 4,
    }
}

fn ctx(params: &PolicyParameters, features: &[(usize, f64)]) -> Context {
    let mut c = Context::plain(params.dims.d_main, params.dims.d_guid);
    for &(i, w) in features {
        c.main[i] = w;
    }
    c
}

/// Deterministic pseudo-random parameters for tests.
fn randomized(dims: PolicyDims, temperature: f64, seed: u64) -> PolicyParameters {
    let mut params = PolicyParameters::zeros(dims, temperature);
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    for v in params
        .embed
        .iter_mut()
        .chain(&mut params.output)
        .chain(&mut params.guidance_read)
    {
        *v = next();
    }
    params
}

#[test]
fn uniform_params_score_uniformly() {
    let params = PolicyParameters::zeros(tiny_dims(8), 0.7);
    let mut batch = TokenBatch::default();
    for token in 0..8 {
        batch.push(ctx(&params, &[(0, 1.0)]), token, 1);
    }
    let scores = score_tokens(&params, &batch).unwrap();
    for s in scores {
        assert!((s - (-(8f64).ln())).abs() < 1e-15);
    }
}

#[test]
fn infinite_temperature_limits_to_uniform() {
    let params = randomized(tiny_dims(8), 1e12, 3);
    let mut batch = TokenBatch::default();
    batch.push(ctx(&params, &[(1, 1.0), (3, 2.0)]), 5, 1);
    let scores = score_tokens(&params, &batch).unwrap();
    assert!((scores[0] - (-(8f64).ln())).abs() < 1e-9);
}

#[test]
fn probabilities_normalize() {
    let params = randomized(tiny_dims(11), 0.7, 9);
    let context = ctx(&params, &[(0, 1.0), (2, -1.5), (5, 0.25)]);
    let total: f64 = params.log_probs(&context).iter().map(|lp| lp.exp()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn out_of_vocab_token_is_rejected() {
    let params = PolicyParameters::zeros(tiny_dims(4), 1.0);
    let mut batch = TokenBatch::default();
    batch.push(ctx(&params, &[]), 4, 1);
    assert!(matches!(
        score_tokens(&params, &batch),
        Err(PolicyError::TokenOutOfVocab(4, 4))
    ));
}

#[test]
fn degenerate_logit_dominates_sampling() {
    let mut params = PolicyParameters::zeros(tiny_dims(5), 1.0);
    // Feature 0 passes through E[0,0] and drives token 2's logit to +50.
    params.embed[0] = 1.0;
    params.output[2 * params.dims.hidden] = 50.0;
    let context = ctx(&params, &[(0, 1.0)]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let (token, _) = sample_action(&params, &context, &mut rng);
        assert_eq!(token, 2);
    }
}

#[test]
fn sampling_is_reproducible_and_consistent_with_scoring() {
    let params = randomized(tiny_dims(9), 0.7, 21);
    let context = ctx(&params, &[(1, 1.0), (4, 1.0)]);
    let mut a = ChaCha8Rng::seed_from_u64(77);
    let mut b = ChaCha8Rng::seed_from_u64(77);
    let (tok_a, lp_a) = sample_action(&params, &context, &mut a);
    let (tok_b, lp_b) = sample_action(&params, &context, &mut b);
    assert_eq!(tok_a, tok_b);
    assert_eq!(lp_a.to_bits(), lp_b.to_bits());
    let mut batch = TokenBatch::default();
    batch.push(context, tok_a, 1);
    let scored = score_tokens(&params, &batch).unwrap();
    assert_eq!(scored[0].to_bits(), lp_a.to_bits());
}

#[test]
fn empirical_frequencies_match_softmax() {
    let params = randomized(tiny_dims(8), 0.7, 5);
    let context = ctx(&params, &[(0, 1.0), (3, 0.5)]);
    let probs: Vec<f64> = params.log_probs(&context).iter().map(|lp| lp.exp()).collect();
    let n = 100_000;
    let mut counts = vec![0usize; 8];
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for _ in 0..n {
        let (token, _) = sample_action(&params, &context, &mut rng);
        counts[token] += 1;
    }
    for (token, &p) in probs.iter().enumerate() {
        let freq = counts[token] as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            (freq - p).abs() <= 3.0 * sigma,
            "token {token}: freq {freq} vs p {p} (3σ = {})",
            3.0 * sigma
        );
    }
}

#[test]
fn scoring_is_pure() {
    let params = randomized(tiny_dims(7), 0.7, 8);
    let mut batch = TokenBatch::default();
    batch.push(ctx(&params, &[(2, 1.0)]), 3, 1);
    let a = score_tokens(&params, &batch).unwrap();
    let b = score_tokens(&params, &batch).unwrap();
    assert_eq!(a[0].to_bits(), b[0].to_bits());
}

#[test]
fn sft_loss_single_halved_token() {
    // Two tokens, logits arranged so p(token 0) = 0.5.
    let params = PolicyParameters::zeros(tiny_dims(2), 1.0);
    let mut batch = TokenBatch::default();
    batch.push(ctx(&params, &[]), 0, 1);
    let (loss, _) = sft_loss(&params, &batch).unwrap();
    assert!((loss - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn sft_loss_rejects_empty_mask() {
    let params = PolicyParameters::zeros(tiny_dims(4), 1.0);
    let mut batch = TokenBatch::default();
    batch.push(ctx(&params, &[]), 0, 0);
    assert!(matches!(sft_loss(&params, &batch), Err(PolicyError::EmptyMask)));
}

#[test]
fn sft_loss_is_mean_invariant_under_duplication() {
    let params = randomized(tiny_dims(6), 0.9, 17);
    let mut batch = TokenBatch::default();
    batch.push(ctx(&params, &[(0, 1.0)]), 1, 1);
    batch.push(ctx(&params, &[(1, 1.0)]), 4, 1);
    let (loss, _) = sft_loss(&params, &batch).unwrap();
    let mut doubled = batch.clone();
    for i in 0..batch.len() {
        doubled.push(batch.contexts[i].clone(), batch.tokens[i], batch.mask[i]);
    }
    let (loss2, _) = sft_loss(&params, &doubled).unwrap();
    assert!((loss - loss2).abs() < 1e-12);
}

#[test]
fn patched_context_changes_scores() {
    let vocab = Vocab::new(vec!["query one".into()], vec!["IMG_001".into()]);
    let params = PolicyParameters::cold_start(&vocab, 0.7, &ColdStartConfig::default());
    let plain = Context::plain(params.dims.d_main, params.dims.d_guid);
    let mut patched = plain.clone();
    patched.guidance[0] = 1.0;
    patched.guidance[1] = 1.0; // mention of token 0
    let mut batch = TokenBatch::default();
    batch.push(plain.clone(), 0, 1);
    batch.push(patched.clone(), 0, 1);
    let scores = score_tokens(&params, &batch).unwrap();
    assert!(scores[1] > scores[0]);
    assert!(patched.is_patched() && !plain.is_patched());
    assert_eq!(patched.strip_guidance(), plain);
}

#[test]
fn cold_start_prefers_slot_valid_tokens() {
    let vocab = Vocab::new(
        vec!["alpha".into(), "beta".into()],
        vec!["IMG_001".into(), "IMG_002".into()],
    );
    let params = PolicyParameters::cold_start(&vocab, 0.7, &ColdStartConfig::default());
    let mut context = Context::plain(params.dims.d_main, params.dims.d_guid);
    context.bump(SlotKind::Action.feature_key(), 1.0);
    let log_probs = params.log_probs(&context);
    let valid: f64 = vocab
        .ids_in_slot(SlotKind::Action)
        .iter()
        .map(|&t| log_probs[t].exp())
        .sum();
    assert!(valid > 0.8, "valid-class mass {valid}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.bin");
    let params = randomized(tiny_dims(10), 0.7, 33);
    save_params(&params, &path).unwrap();
    let loaded = load_params(&path).unwrap();
    assert_eq!(loaded, params);
    for (a, b) in params.to_vec().iter().zip(loaded.to_vec()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn flat_round_trip_preserves_parameters() {
    let params = randomized(tiny_dims(5), 0.7, 2);
    let rebuilt = params.from_vec(&params.to_vec()).unwrap();
    assert_eq!(params, rebuilt);
    assert!(params.from_vec(&[0.0]).is_err());
}

#[test]
fn vocab_layout_is_deterministic() {
    let a = Vocab::new(
        vec!["b query".into(), "a query".into()],
        vec!["IMG_002".into(), "IMG_001".into()],
    );
    let b = Vocab::new(
        vec!["a query".into(), "b query".into()],
        vec!["IMG_001".into(), "IMG_002".into()],
    );
    assert_eq!(a, b);
    assert!(a.len() >= 8);
    assert_eq!(a.find_img("IMG_001"), Some(a.len() - 2));
    assert!(a.find_query("a query").is_some());
    // Decision-token taxonomy: tools, skills, image ids, ordinals.
    assert!(a.class(0).is_decision());
    assert!(!a
        .class(a.find("ctl:final_answer").unwrap())
        .is_decision());
}
