use super::*;
use crate::policy::{sft_loss, Context, PolicyDims, PolicyParameters, TokenBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_params(vocab: usize, seed: u64) -> PolicyParameters {
    let dims = PolicyDims {
        vocab_size: vocab,
        d_main: 10,
        hidden: 7,
        d_guid: 5,
    };
    let mut params = PolicyParameters::zeros(dims, 0.7);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in params
        .embed
        .iter_mut()
        .chain(&mut params.output)
        .chain(&mut params.guidance_read)
    {
        *v = rng.random_range(-0.5..0.5);
    }
    params
}

fn random_context(params: &PolicyParameters, rng: &mut ChaCha8Rng) -> Context {
    let mut c = Context::plain(params.dims.d_main, params.dims.d_guid);
    for slot in c.main.iter_mut() {
        if rng.random_bool(0.4) {
            *slot = rng.random_range(-1.0..1.0);
        }
    }
    c
}

fn random_batch(params: &PolicyParameters, seq_len: usize, seqs: usize, seed: u64) -> RolloutBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = RolloutBatch::default();
    for _ in 0..seqs {
        let mut contexts = Vec::new();
        let mut tokens = Vec::new();
        let mut logp_old = Vec::new();
        let mut decision_mask = Vec::new();
        for _ in 0..seq_len {
            contexts.push(random_context(params, &mut rng));
            tokens.push(rng.random_range(0..params.dims.vocab_size));
            logp_old.push(rng.random_range(-3.0..-0.1));
            decision_mask.push(rng.random_bool(0.7) as u8);
        }
        let teacher = if rng.random_bool(0.75) {
            Some(TeacherView {
                logp_teacher: (0..seq_len).map(|_| rng.random_range(-3.0..-0.1)).collect(),
            })
        } else {
            None
        };
        batch.sequences.push(SequenceBatch {
            contexts,
            tokens,
            logp_old,
            assistant_mask: vec![1; seq_len],
            decision_mask,
            advantage: rng.random_range(-1.5..1.5),
            teacher,
        });
    }
    batch
}

fn assert_grad_close(analytic: &[f64], numeric: &[f64], tolerance: f64) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let denom = a.abs().max(n.abs()).max(1.0);
        assert!(
            (a - n).abs() / denom <= tolerance,
            "coordinate {i}: analytic {a} vs numeric {n}"
        );
    }
}

#[test]
fn advantages_of_equal_rewards_are_zero() {
    let set = group_advantages(&[0.4, 0.4, 0.4, 0.4], 1e-4).unwrap();
    assert!(set.advantages.iter().all(|&a| a == 0.0));
}

#[test]
fn advantages_binary_rewards() {
    let set = group_advantages(&[1.0, 0.0], 1e-4).unwrap();
    assert!((set.advantages[0] - 0.5 / 0.5001).abs() < 1e-12);
    assert_eq!(format!("{:.4}", set.advantages[0]), "0.9998");
    assert_eq!(format!("{:.4}", set.advantages[1]), "-0.9998");
}

#[test]
fn advantages_paper_case_rewards() {
    let set = group_advantages(&[1.0, 0.225], 1e-4).unwrap();
    assert_eq!(format!("{:.5}", set.advantages[0]), "0.99974");
    assert_eq!(format!("{:.5}", set.advantages[1]), "-0.99974");
}

#[test]
fn advantages_sum_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let k = rng.random_range(2..12);
        let rewards: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let set = group_advantages(&rewards, 1e-4).unwrap();
        let total: f64 = set.advantages.iter().sum();
        assert!(total.abs() <= k as f64 * 1e-9);
    }
}

#[test]
fn advantages_identity_invariant_under_shift() {
    let rewards = [0.9, 0.1, 0.5, 0.7];
    let base = group_advantages(&rewards, 1e-4).unwrap();
    let shifted: Vec<f64> = rewards.iter().map(|r| r + 0.37).collect();
    let moved = group_advantages(&shifted, 1e-4).unwrap();
    let argmax = |v: &[f64]| {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0
    };
    assert_eq!(argmax(&base.advantages), argmax(&moved.advantages));
    for (a, b) in base.advantages.iter().zip(&moved.advantages) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn advantages_reject_singletons() {
    assert!(matches!(
        group_advantages(&[1.0], 1e-4),
        Err(OptimizeError::GroupTooSmall(1))
    ));
}

#[test]
fn grpo_terms_unit_ratio_is_advantage() {
    let cfg = GrpoConfig::default();
    let out = grpo_token_terms(&[-1.0], &[-1.0], 0.7, &cfg).unwrap();
    assert_eq!(out.terms, vec![0.7]);
}

#[test]
fn grpo_terms_clip_high() {
    let cfg = GrpoConfig::default();
    let out = grpo_token_terms(&[(1.5f64).ln()], &[0.0], 1.0, &cfg).unwrap();
    assert!((out.terms[0] - 1.28).abs() < 1e-12);
    assert_eq!(out.dterm_dlogp[0], 0.0);
}

#[test]
fn grpo_terms_clip_low_negative_advantage() {
    let cfg = GrpoConfig::default();
    let out = grpo_token_terms(&[(0.5f64).ln()], &[0.0], -1.0, &cfg).unwrap();
    assert!((out.terms[0] - (-0.8)).abs() < 1e-12);
}

#[test]
fn grpo_terms_identity_inside_clip_range() {
    let cfg = GrpoConfig::default();
    for u in [0.81, 0.95, 1.0, 1.1, 1.27] {
        for adv in [-1.0, 0.5, 2.0] {
            let out = grpo_token_terms(&[(u as f64).ln()], &[0.0], adv, &cfg).unwrap();
            assert!((out.terms[0] - u * adv).abs() < 1e-12);
        }
    }
}

#[test]
fn grpo_terms_length_mismatch() {
    let cfg = GrpoConfig::default();
    assert!(matches!(
        grpo_token_terms(&[0.0], &[0.0, 0.0], 1.0, &cfg),
        Err(OptimizeError::LengthMismatch(_))
    ));
}

#[test]
fn k3_reference_values() {
    assert_eq!(k3(0.0), 0.0);
    assert!((k3(1.0) - (-1f64).exp()).abs() < 1e-15);
    assert!((k3(-1.0) - (1f64.exp() - 2.0)).abs() < 1e-15);
}

#[test]
fn k3_nonnegative_and_convex() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..=200 {
        let ell = -10.0 + i as f64 * 0.1;
        let v = k3(ell);
        assert!(v >= 0.0);
        if ell != 0.0 {
            assert!(v > 0.0);
        }
    }
    for _ in 0..200 {
        let a = rng.random_range(-10.0..10.0);
        let b = rng.random_range(-10.0..10.0);
        assert!(k3((a + b) / 2.0) <= (k3(a) + k3(b)) / 2.0 + 1e-12);
    }
}

#[test]
fn select_keeps_ceil_fraction() {
    let gaps: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let mask = select_sdl_tokens(&gaps, &[1; 10], 0.1);
    assert_eq!(mask.iter().map(|&m| m as usize).sum::<usize>(), 1);
    assert_eq!(mask[9], 1);
}

#[test]
fn select_breaks_ties_toward_earlier_index() {
    let mask = select_sdl_tokens(&[0.5; 6], &[1; 6], 0.1);
    assert_eq!(mask[0], 1);
    assert_eq!(mask.iter().map(|&m| m as usize).sum::<usize>(), 1);
}

#[test]
fn select_without_decision_tokens_is_empty() {
    let mask = select_sdl_tokens(&[1.0, 2.0], &[0, 0], 0.5);
    assert_eq!(mask, vec![0, 0]);
}

#[test]
fn sdl_loss_zero_when_teacher_matches_student() {
    let cfg = SdlConfig::default();
    let lp = [-0.5, -1.2, -2.0];
    let out = sdl_loss(&lp, &lp, &lp, &[1, 1, 1], &cfg).unwrap();
    assert_eq!(out.loss, 0.0);
}

#[test]
fn sdl_loss_paper_token() {
    // Student 0.527 vs teacher 0.961, on-policy.
    let cfg = SdlConfig::default();
    let student = (0.527f64).ln();
    let teacher = (0.961f64).ln();
    let out = sdl_loss(&[student], &[teacher], &[student], &[1], &cfg).unwrap();
    let ell = student - teacher;
    assert!((ell - (-0.6008)).abs() < 1e-4);
    assert!((out.loss - 0.2227).abs() < 1e-4);
    assert!((out.loss - k3(ell)).abs() < 1e-15);
}

#[test]
fn sdl_ratio_clips_at_rho_max() {
    let cfg = SdlConfig::default();
    let student = (3.0f64).ln() - 1.0;
    let old = -1.0;
    let teacher = student - 1.0;
    let out = sdl_loss(&[student], &[teacher], &[old], &[1], &cfg).unwrap();
    assert!((out.loss - 2.0 * k3(1.0)).abs() < 1e-12);
    // Capped ratio: only the k3' branch contributes to the derivative.
    assert!((out.dloss_dstudent[0] - 2.0 * (1.0 - (-1.0f64).exp())).abs() < 1e-12);
}

#[test]
fn sdl_clamp_and_cap_are_exact() {
    let cfg = SdlConfig::default();
    // ℓ far below the clamp floor: value pinned at k3(-10), which equals
    // the default token cap.
    let out = sdl_loss(&[-30.0], &[-1.0], &[-30.0], &[1], &cfg).unwrap();
    assert_eq!(out.loss, k3(-10.0));
    assert_eq!(out.loss, cfg.token_cap);
    // ℓ far above the clamp ceiling: value pinned at k3(10).
    let out = sdl_loss(&[-0.1], &[-25.0], &[-0.1], &[1], &cfg).unwrap();
    assert_eq!(out.loss, k3(10.0));
    // A tighter cap truncates the term and kills the gradient.
    let tight = SdlConfig {
        token_cap: 0.1,
        ..SdlConfig::default()
    };
    let out = sdl_loss(&[-0.1], &[-25.0], &[-0.1], &[1], &tight).unwrap();
    assert_eq!(out.loss, 0.1);
    assert_eq!(out.dloss_dstudent[0], 0.0);
}

#[test]
fn sdl_empty_mask_is_zero_signal() {
    let cfg = SdlConfig::default();
    let out = sdl_loss(&[-0.5], &[-1.0], &[-0.5], &[0], &cfg).unwrap();
    assert_eq!(out.loss, 0.0);
    assert_eq!(out.dloss_dstudent, vec![0.0]);
}

#[test]
fn combined_reduces_to_grpo_when_lambda_zero() {
    let params = small_params(8, 1);
    let batch = random_batch(&params, 6, 3, 2);
    let grpo_cfg = GrpoConfig::default();
    let sdl_cfg = SdlConfig {
        lambda_sdl: 0.0,
        ..SdlConfig::default()
    };
    let combined = combined_loss(&params, &batch, &grpo_cfg, &sdl_cfg, None).unwrap();
    let grpo_only = grpo_loss(&params, &batch, &grpo_cfg, None).unwrap();
    assert!((combined.value - grpo_only.value).abs() < 1e-15);
    for (a, b) in combined.gradient.iter().zip(&grpo_only.gradient) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn combined_reduces_to_grpo_without_teachers() {
    let params = small_params(8, 3);
    let mut batch = random_batch(&params, 5, 3, 4);
    for seq in &mut batch.sequences {
        seq.teacher = None;
    }
    let combined = combined_loss(
        &params,
        &batch,
        &GrpoConfig::default(),
        &SdlConfig::default(),
        None,
    )
    .unwrap();
    let grpo_only = grpo_loss(&params, &batch, &GrpoConfig::default(), None).unwrap();
    assert_eq!(combined.value, grpo_only.value);
}

#[test]
fn sdl_zero_signal_when_contexts_coincide() {
    // Teacher scores equal the student's sampling scores: every gap is zero,
    // the selected tokens carry ℓ = 0, and both value and gradient vanish.
    let params = small_params(8, 5);
    let mut batch = random_batch(&params, 6, 2, 6);
    for seq in &mut batch.sequences {
        let tb = TokenBatch {
            contexts: seq.contexts.clone(),
            tokens: seq.tokens.clone(),
            mask: vec![1; seq.tokens.len()],
        };
        let scores = crate::policy::score_tokens(&params, &tb).unwrap();
        seq.logp_old = scores.clone();
        seq.teacher = Some(TeacherView {
            logp_teacher: scores,
        });
    }
    let sdl = sdl_batch_loss(&params, &batch, &SdlConfig::default()).unwrap();
    assert_eq!(sdl.value, 0.0);
    assert!(sdl.gradient.iter().all(|&g| g == 0.0));
}

#[test]
fn hand_computed_combined_value() {
    // One sequence, two tokens, constructed so every piece is hand-checkable.
    let params = small_params(6, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let contexts = vec![
        random_context(&params, &mut rng),
        random_context(&params, &mut rng),
    ];
    let tokens = vec![2, 4];
    let tb = TokenBatch {
        contexts: contexts.clone(),
        tokens: tokens.clone(),
        mask: vec![1, 1],
    };
    let logp_now = crate::policy::score_tokens(&params, &tb).unwrap();
    let logp_old = vec![logp_now[0] - 0.05, logp_now[1] + 0.02];
    let teacher = vec![logp_now[0] - 0.9, logp_now[1] + 0.4];
    let advantage = 0.8;
    let batch = RolloutBatch {
        sequences: vec![SequenceBatch {
            contexts,
            tokens,
            logp_old: logp_old.clone(),
            assistant_mask: vec![1, 1],
            decision_mask: vec![1, 1],
            advantage,
            teacher: Some(TeacherView {
                logp_teacher: teacher.clone(),
            }),
        }],
    };
    let grpo_cfg = GrpoConfig::default();
    let sdl_cfg = SdlConfig {
        top_k_frac: 0.5,
        ..SdlConfig::default()
    };

    let mut expected_grpo = 0.0;
    for i in 0..2 {
        let u = (logp_now[i] - logp_old[i]).exp();
        let clipped = u.clamp(0.8, 1.28);
        expected_grpo -= (u * advantage).min(clipped * advantage);
    }
    // top_k_frac 0.5 over two decision tokens keeps the single largest gap:
    // token 0 (gap 0.9 vs 0.4 after the old-score offsets).
    let ell = (logp_now[0] - teacher[0]).clamp(-10.0, 10.0);
    let rho = (logp_now[0] - logp_old[0]).exp().min(2.0);
    let expected_sdl = rho * k3(ell);
    let expected = expected_grpo + sdl_cfg.lambda_sdl * expected_sdl;

    let got = combined_loss(&params, &batch, &grpo_cfg, &sdl_cfg, None).unwrap();
    assert!(
        (got.value - expected).abs() < 1e-12,
        "value {} vs hand {expected}",
        got.value
    );
}

#[test]
fn finite_diff_on_quadratic() {
    let grad = finite_diff_gradient(|x| x[0] * x[0], &[3.0], 1e-5);
    assert!((grad[0] - 6.0).abs() < 1e-6);
}

#[test]
fn sft_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let params = small_params(10, 100 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let mut batch = TokenBatch::default();
        for _ in 0..6 {
            batch.push(
                random_context(&params, &mut rng),
                rng.random_range(0..10),
                rng.random_bool(0.8) as u8,
            );
        }
        if batch.mask.iter().all(|&m| m == 0) {
            batch.mask[0] = 1;
        }
        let (_, analytic) = sft_loss(&params, &batch).unwrap();
        let numeric = finite_diff_gradient(
            |flat| {
                let p = params.from_vec(flat).unwrap();
                sft_loss(&p, &batch).unwrap().0
            },
            &params.to_vec(),
            1e-5,
        );
        assert_grad_close(&analytic, &numeric, 1e-5);
    }
}

#[test]
fn combined_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let params = small_params(8, 300 + seed);
        let batch = random_batch(&params, 5, 2, 400 + seed);
        let grpo_cfg = GrpoConfig::default();
        let sdl_cfg = SdlConfig::default();
        let analytic = combined_loss(&params, &batch, &grpo_cfg, &sdl_cfg, None).unwrap();
        let numeric = finite_diff_gradient(
            |flat| {
                let p = params.from_vec(flat).unwrap();
                combined_loss(&p, &batch, &grpo_cfg, &sdl_cfg, None)
                    .unwrap()
                    .value
            },
            &params.to_vec(),
            1e-5,
        );
        assert_grad_close(&analytic.gradient, &numeric, 1e-4);
    }
}

#[test]
fn apply_step_identities() {
    let params = small_params(6, 50);
    let zero = vec![0.0; params.len()];
    let stepped = apply_step(&params, &zero, 0.1).unwrap();
    assert_eq!(stepped, params);
    let grad: Vec<f64> = (0..params.len()).map(|i| i as f64).collect();
    let frozen = apply_step(&params, &grad, 0.0).unwrap();
    assert_eq!(frozen, params);
    assert!(apply_step(&params, &[1.0], 0.1).is_err());
}

#[test]
fn repeated_sft_steps_descend() {
    let params = small_params(9, 60);
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut batch = TokenBatch::default();
    for _ in 0..8 {
        batch.push(random_context(&params, &mut rng), rng.random_range(0..9), 1);
    }
    let mut current = params;
    let mut losses = Vec::new();
    for _ in 0..11 {
        let (loss, grad) = sft_loss(&current, &batch).unwrap();
        losses.push(loss);
        current = apply_step(&current, &grad, 0.5).unwrap();
    }
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "loss did not strictly decrease: {losses:?}");
    }
}
