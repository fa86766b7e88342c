//! Command-line entry points: run a self-evolution training loop, roll out
//! a single trajectory, validate trajectory logs, inspect an experience
//! buffer snapshot, and summarize a finished run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use evoloop::diagnostics::{classify_token_effect, EffectThresholds, TokenEffectClass};
use evoloop::environment::{load_world, run_rollout, RolloutConfig};
use evoloop::evolve::{load_checkpoint, run_evolution, EvolveError, RunConfig};
use evoloop::experience::{embed_prompt, patch_context, ExperienceBuffer};
use evoloop::policy::{load_params, ColdStartConfig, PolicyParameters};
use evoloop::protocol::{check_hard_filters, parse_trajectory, to_log_line, FilterConfig};

#[derive(Parser)]
#[command(name = "evoloop", version, about = "Self-evolution loop for a tool-orchestrated generation agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full training loop from a TOML config file.
    Evolve {
        #[arg(long)]
        config: PathBuf,
        /// Resume from a checkpoint directory instead of a cold start.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample one trajectory and print its log line.
    Rollout {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional parameter checkpoint; defaults to a cold start.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Validate a trajectory log file line by line.
    Validate {
        #[arg(long)]
        trajectories: PathBuf,
    },
    /// Print a buffer snapshot sorted by reward gap.
    InspectBuffer {
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Summarize a finished run directory and dump token effects.
    Diagnose {
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), EvolveError> {
    match command {
        Command::Evolve { config, resume } => cmd_evolve(&config, resume.as_deref()),
        Command::Rollout {
            world,
            prompt,
            seed,
            params,
        } => cmd_rollout(&world, &prompt, seed, params.as_deref()),
        Command::Validate { trajectories } => cmd_validate(&trajectories),
        Command::InspectBuffer { snapshot } => cmd_inspect_buffer(&snapshot),
        Command::Diagnose { run } => cmd_diagnose(&run),
    }
}

fn cmd_evolve(config_path: &std::path::Path, resume: Option<&std::path::Path>) -> Result<(), EvolveError> {
    let state = match resume {
        Some(dir) => {
            let mut state = load_checkpoint(dir)?;
            let remaining = state.config.steps.saturating_sub(state.step);
            println!(
                "resuming at step {} ({remaining} steps remaining)",
                state.step
            );
            for _ in 0..remaining {
                evoloop::evolve::run_step(&mut state)?;
            }
            if let Some(out_dir) = state.config.out_dir.clone() {
                evoloop::evolve::write_run_outputs(&state, &out_dir)?;
            }
            state
        }
        None => {
            let config = RunConfig::load(config_path)?;
            run_evolution(config)?
        }
    };
    let last = state.metrics.last();
    println!(
        "finished {} steps; mean reward {}; buffer size {}",
        state.step,
        last.map_or(f64::NAN, |r| r.mean_reward),
        state.buffer.len()
    );
    if let Some(out_dir) = &state.config.out_dir {
        println!("outputs in {}", out_dir.display());
    }
    Ok(())
}

fn cmd_rollout(
    world_path: &std::path::Path,
    prompt: &str,
    seed: u64,
    params_path: Option<&std::path::Path>,
) -> Result<(), EvolveError> {
    let world = load_world(world_path)?;
    let vocab = world.vocab();
    let params = match params_path {
        Some(path) => load_params(path).map_err(|e| EvolveError::Io(e.to_string()))?,
        None => PolicyParameters::cold_start(&vocab, 0.7, &ColdStartConfig::default()),
    };
    let (trajectory, _) = run_rollout(
        &world,
        &params,
        &vocab,
        prompt,
        seed,
        &RolloutConfig::default(),
    )?;
    println!("{}", to_log_line(&trajectory));
    Ok(())
}

fn cmd_validate(path: &std::path::Path) -> Result<(), EvolveError> {
    let text = std::fs::read_to_string(path)?;
    let filter_config = FilterConfig::default();
    for (number, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_trajectory(line) {
            Ok(trajectory) => {
                let filters = check_hard_filters(&trajectory, &filter_config);
                let validation = trajectory
                    .final_program()
                    .map(|p| evoloop::protocol::validate_program(p, &trajectory));
                let verdict = if filters.keep { "keep" } else { "discard" };
                let violations = match &validation {
                    Some(report) if !report.pass() => format!(" violations={:?}", report.violations),
                    Some(_) => " violations=none".to_string(),
                    None => String::new(),
                };
                println!(
                    "line {}: {} status={:?} reasons={:?}{}",
                    number + 1,
                    verdict,
                    trajectory.protocol_status,
                    filters.reasons,
                    violations
                );
            }
            Err(e) => println!("line {}: parse error: {e}", number + 1),
        }
    }
    Ok(())
}

fn cmd_inspect_buffer(path: &std::path::Path) -> Result<(), EvolveError> {
    let mut buffer = ExperienceBuffer::default();
    buffer
        .load_snapshot(path)
        .map_err(|e| EvolveError::Io(e.to_string()))?;
    let mut entries = buffer.entries.clone();
    entries.sort_by(|a, b| {
        b.reward_gap
            .partial_cmp(&a.reward_gap)
            .unwrap()
            .then(a.insertion_index.cmp(&b.insertion_index))
    });
    println!("{} bundles", entries.len());
    for entry in entries {
        println!(
            "gap {:.3} prompt {} (inserted #{}) focus: {}",
            entry.reward_gap,
            entry.source_prompt_id,
            entry.insertion_index,
            entry.decision_guidance.decision_focus
        );
    }
    Ok(())
}

fn cmd_diagnose(run_dir: &std::path::Path) -> Result<(), EvolveError> {
    let metrics_path = run_dir.join("metrics.csv");
    let metrics = std::fs::read_to_string(&metrics_path)?;
    let rewards: Vec<f64> = metrics
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(1)?.parse().ok())
        .collect();
    if rewards.is_empty() {
        println!("no steps recorded in {}", metrics_path.display());
        return Ok(());
    }
    let head = &rewards[..rewards.len().min(20)];
    let tail = &rewards[rewards.len().saturating_sub(20)..];
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    println!(
        "steps {}; first-20 mean reward {:.4}; last-20 mean reward {:.4}",
        rewards.len(),
        mean(head),
        mean(tail)
    );

    // Token effects against the newest checkpoint, when one exists.
    let Some(checkpoint) = newest_checkpoint(run_dir)? else {
        println!("no checkpoints found; skipping token-effect analysis");
        return Ok(());
    };
    let state = load_checkpoint(&checkpoint)?;
    let mut effects = [0usize; 3];
    let mut dump = String::new();
    for case in &state.world.prompts {
        let (_, trace) = run_rollout(
            &state.world,
            &state.params,
            &state.vocab,
            &case.prompt_id,
            state.config.seed,
            &state.config.rollout_config(),
        )?;
        let query = embed_prompt(&case.request_text)?;
        let Some(bundle) = state.buffer.retrieve(&query).cloned() else {
            continue;
        };
        for step in &trace.steps {
            let student: Vec<f64> = state
                .params
                .log_probs(&step.context)
                .iter()
                .map(|lp| lp.exp())
                .collect();
            let patched = patch_context(&step.context, &bundle, &state.vocab);
            let teacher: Vec<f64> = state
                .params
                .log_probs(&patched)
                .iter()
                .map(|lp| lp.exp())
                .collect();
            let effect = classify_token_effect(
                &student,
                &teacher,
                step.token,
                &EffectThresholds::default(),
            )
            .map_err(|e| EvolveError::Internal(e.to_string()))?;
            let index = match effect.class {
                TokenEffectClass::Oppose => 0,
                TokenEffectClass::Support => 1,
                TokenEffectClass::Neutral => 2,
            };
            effects[index] += 1;
            dump.push_str(&serde_json::to_string(&effect).unwrap());
            dump.push('\n');
        }
    }
    println!(
        "token effects vs newest checkpoint: oppose {} / support {} / neutral {}",
        effects[0], effects[1], effects[2]
    );
    let dump_path = run_dir.join("token_effects.jsonl");
    std::fs::write(&dump_path, dump)?;
    println!("token-effect dump written to {}", dump_path.display());
    Ok(())
}

fn newest_checkpoint(run_dir: &std::path::Path) -> Result<Option<PathBuf>, EvolveError> {
    let mut checkpoints: Vec<PathBuf> = std::fs::read_dir(run_dir)?
        .filter_map(|entry| entry.ok())
        .map(|entry| entry.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("checkpoint_"))
        })
        .collect();
    checkpoints.sort();
    Ok(checkpoints.pop())
}
