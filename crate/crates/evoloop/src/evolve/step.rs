//! One evolution step and the full run driver.

use crate::diagnostics::StepRecord;
use crate::environment::{load_world, run_group, RolloutGroup, World};
use crate::experience::{
    embed_prompt, mine_comparison, patch_context, summarize_bundle, ExperienceBuffer,
    TemplateSummarizer,
};
use crate::optimize::{
    apply_step, combined_loss, group_advantages, RolloutBatch, SequenceBatch, TeacherView,
};
use crate::policy::{score_tokens, PolicyParameters, TokenBatch, Vocab};
use crate::reward::RuleJudge;

use super::{save_checkpoint, EvolveError, RunConfig};

/// Everything one run carries between steps.
#[derive(Debug, Clone)]
pub struct EvolutionState {
    pub config: RunConfig,
    pub world: World,
    pub vocab: Vocab,
    pub params: PolicyParameters,
    pub buffer: ExperienceBuffer,
    pub step: u64,
    pub metrics: Vec<StepRecord>,
    /// Total samples drawn under a patched context; stays zero because the
    /// student only ever samples the plain view.
    pub patched_samples: u64,
}

impl EvolutionState {
    /// Fresh state: load the world, derive the vocabulary, cold-start the
    /// policy, and size the buffer.
    pub fn initialize(config: RunConfig) -> Result<EvolutionState, EvolveError> {
        config.validate()?;
        let world = load_world(&config.world)?;
        let vocab = world.vocab();
        let params = PolicyParameters::cold_start(
            &vocab,
            config.temperature,
            &config.cold_start_config(),
        );
        let buffer = config.experience.to_buffer();
        Ok(EvolutionState {
            config,
            world,
            vocab,
            params,
            buffer,
            step: 0,
            metrics: Vec::new(),
            patched_samples: 0,
        })
    }

    /// Seed of the group sampled for prompt slot `j` of this step.
    pub fn group_seed(&self, slot: usize) -> u64 {
        self.config.seed + self.step * 10_000 + slot as u64 * 100
    }
}

/// Run one self-evolution step: sample and judge a group per prompt, mine
/// and insert comparisons (capped per step), retrieve and patch teacher
/// contexts, take one combined-loss gradient step, and record metrics.
pub fn run_step(state: &mut EvolutionState) -> Result<(), EvolveError> {
    if state.world.prompts.is_empty() {
        return Err(EvolveError::Fixture("world has no prompts".into()));
    }
    let rollout_cfg = state.config.rollout_config();
    let grpo_cfg = state.config.grpo.to_config();
    let sdl_cfg = state.config.sdl.to_config();
    let judge = RuleJudge;

    // Phase 1: rollouts, judging, mining, insertion (round-robin prompts).
    let prompt_count = state.world.prompts.len();
    let mut groups: Vec<RolloutGroup> = Vec::with_capacity(state.config.prompts_per_step);
    let mut comparisons_mined = 0usize;
    for slot in 0..state.config.prompts_per_step {
        let index = (state.step as usize * state.config.prompts_per_step + slot) % prompt_count;
        let prompt_id = state.world.prompts[index].prompt_id.clone();
        let group = run_group(
            &state.world,
            &state.params,
            &state.vocab,
            &prompt_id,
            state.config.group_size,
            state.group_seed(slot),
            &rollout_cfg,
            &judge,
            state.config.alpha,
        )?;
        for trace in &group.traces {
            state.patched_samples += trace.patched_samples as u64;
        }
        if comparisons_mined < state.buffer.max_comparisons_per_step {
            if let Some(comparison) = mine_comparison(&group, state.buffer.delta_min) {
                let bundle = summarize_bundle(&comparison, &TemplateSummarizer)?;
                state.buffer.insert_bundle(bundle);
                comparisons_mined += 1;
            }
        }
        groups.push(group);
    }

    // Phase 2: retrieval, teacher re-scoring of the identical sampled
    // tokens under the patched context (current params, detached), and the
    // training batch.
    let mut batch = RolloutBatch::default();
    let mut reward_sum = 0.0;
    let mut reward_count = 0usize;
    for group in &groups {
        let advantages =
            group_advantages(&mixed_rewards(group), state.config.grpo.epsilon_adv)?;
        let request_text = &group.trajectories[0].request_text;
        let query = embed_prompt(request_text)?;
        let bundle = state.buffer.retrieve(&query).cloned();
        for (i, trace) in group.traces.iter().enumerate() {
            reward_sum += group.rewards[i].mixed;
            reward_count += 1;
            let contexts: Vec<_> = trace.steps.iter().map(|s| s.context.clone()).collect();
            let tokens: Vec<_> = trace.steps.iter().map(|s| s.token).collect();
            let logp_old: Vec<_> = trace.steps.iter().map(|s| s.logp).collect();
            let decision_mask: Vec<u8> = tokens
                .iter()
                .map(|&t| state.vocab.class(t).is_decision() as u8)
                .collect();
            let teacher = match &bundle {
                Some(bundle) => {
                    let patched: Vec<_> = contexts
                        .iter()
                        .map(|c| patch_context(c, bundle, &state.vocab))
                        .collect();
                    let tb = TokenBatch {
                        contexts: patched,
                        tokens: tokens.clone(),
                        mask: vec![1; tokens.len()],
                    };
                    Some(TeacherView {
                        logp_teacher: score_tokens(&state.params, &tb)?,
                    })
                }
                None => None,
            };
            batch.sequences.push(SequenceBatch {
                contexts,
                tokens,
                logp_old,
                assistant_mask: vec![1; trace.steps.len()],
                decision_mask,
                advantage: advantages.advantages[i],
                teacher,
            });
        }
    }

    // Phase 3: one gradient step on the combined objective.
    let loss = combined_loss(&state.params, &batch, &grpo_cfg, &sdl_cfg, None)?;
    state.params = apply_step(&state.params, &loss.gradient, state.config.learning_rate)?;

    state.metrics.push(StepRecord {
        step: state.step,
        mean_reward: reward_sum / reward_count.max(1) as f64,
        sdl_loss: loss.sdl_component,
        grpo_loss: loss.grpo_component,
        buffer_size: state.buffer.len(),
        comparisons_mined,
    });
    state.step += 1;
    Ok(())
}

fn mixed_rewards(group: &RolloutGroup) -> Vec<f64> {
    group.rewards.iter().map(|r| r.mixed).collect()
}

/// Drive a full run: `steps` iterations of [`run_step`] with optional
/// checkpointing, then write metrics and the buffer snapshot when an
/// output directory is configured.
pub fn run_evolution(config: RunConfig) -> Result<EvolutionState, EvolveError> {
    let mut state = EvolutionState::initialize(config)?;
    let total = state.config.steps;
    for _ in 0..total {
        run_step(&mut state)?;
        let cadence = state.config.checkpoint_every;
        if cadence > 0 && state.step % cadence == 0 {
            if let Some(out_dir) = state.config.out_dir.clone() {
                let dir = out_dir.join(format!("checkpoint_{:06}", state.step));
                if let Err(e) = save_checkpoint(&state, &dir) {
                    // Leave a resumable state file before giving up.
                    let emergency = out_dir.join("emergency_state.json");
                    let _ = save_checkpoint(&state, &out_dir.join("emergency_checkpoint"));
                    let _ = std::fs::write(
                        &emergency,
                        format!("{{\"failed_checkpoint\":\"{}\",\"step\":{}}}", dir.display(), state.step),
                    );
                    return Err(e);
                }
            }
        }
    }
    if let Some(out_dir) = state.config.out_dir.clone() {
        write_run_outputs(&state, &out_dir)?;
    }
    Ok(state)
}

/// Write `metrics.csv` and `buffer.jsonl` into `out_dir`.
pub fn write_run_outputs(
    state: &EvolutionState,
    out_dir: &std::path::Path,
) -> Result<(), EvolveError> {
    std::fs::create_dir_all(out_dir)?;
    let rows = crate::diagnostics::export_curves(&state.metrics);
    std::fs::write(
        out_dir.join("metrics.csv"),
        crate::diagnostics::curves_to_csv(&rows),
    )?;
    state
        .buffer
        .save_snapshot(&out_dir.join("buffer.jsonl"))
        .map_err(|e| EvolveError::Io(e.to_string()))?;
    Ok(())
}
