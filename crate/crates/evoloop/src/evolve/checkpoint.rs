//! Run checkpoints: a directory holding the policy parameters (versioned
//! binary), the buffer snapshot (JSON lines), and `state.json` with the
//! step counter, run config, metrics history, and bookkeeping. Randomness
//! is derived from (seed, step), so these files are the entire RNG state.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::diagnostics::StepRecord;
use crate::environment::load_world;
use crate::policy::{load_params, save_params};

use super::{EvolutionState, EvolveError, RunConfig};

#[derive(Serialize, Deserialize)]
struct StateFile {
    step: u64,
    patched_samples: u64,
    config: RunConfig,
    metrics: Vec<StepRecord>,
}

pub fn save_checkpoint(state: &EvolutionState, dir: &Path) -> Result<(), EvolveError> {
    std::fs::create_dir_all(dir)?;
    save_params(&state.params, &dir.join("params.bin"))
        .map_err(|e| EvolveError::Io(e.to_string()))?;
    state
        .buffer
        .save_snapshot(&dir.join("buffer.jsonl"))
        .map_err(|e| EvolveError::Io(e.to_string()))?;
    let file = StateFile {
        step: state.step,
        patched_samples: state.patched_samples,
        config: state.config.clone(),
        metrics: state.metrics.clone(),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| EvolveError::Internal(e.to_string()))?;
    std::fs::write(dir.join("state.json"), json)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<EvolutionState, EvolveError> {
    let state_text = std::fs::read_to_string(dir.join("state.json"))?;
    let file: StateFile = serde_json::from_str(&state_text)
        .map_err(|e| EvolveError::Io(format!("state.json: {e}")))?;
    file.config.validate()?;
    let world = load_world(&file.config.world)?;
    let vocab = world.vocab();
    let params = load_params(&dir.join("params.bin"))
        .map_err(|e| EvolveError::Io(e.to_string()))?;
    if params.dims.vocab_size != vocab.len() {
        return Err(EvolveError::Fixture(format!(
            "checkpoint vocabulary size {} does not match world vocabulary {}",
            params.dims.vocab_size,
            vocab.len()
        )));
    }
    let mut buffer = file.config.experience.to_buffer();
    buffer
        .load_snapshot(&dir.join("buffer.jsonl"))
        .map_err(|e| EvolveError::Io(e.to_string()))?;
    Ok(EvolutionState {
        config: file.config,
        world,
        vocab,
        params,
        buffer,
        step: file.step,
        metrics: file.metrics,
        patched_samples: file.patched_samples,
    })
}
