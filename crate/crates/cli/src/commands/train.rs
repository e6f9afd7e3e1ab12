//! `dualcam train`: fit the network to a dataset directory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use dualcam_core::io::read_dataset;
use dualcam_model::train::{smoothed_endpoints, train, TrainConfig, TrainCounters, TrainError};

use super::{input_error, prepare_out_dir, write_json};
use crate::config::{invalid, load, validate_train};
use crate::manifest::{now, RunManifest};
use crate::{CliError, CliResult};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    /// Width of the moving averages below.
    pub window: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_ratio: f64,
    pub counters: TrainCounters,
}

/// Smoothing window for loss endpoints: a tenth of the run, capped at 100.
pub fn smoothing_window(iterations: usize) -> usize {
    (iterations / 10).clamp(1, 100)
}

pub fn summarize(losses: &[f64], counters: &TrainCounters) -> Option<TrainSummary> {
    let window = smoothing_window(losses.len());
    let (initial_loss, final_loss) = smoothed_endpoints(losses, window)?;
    Some(TrainSummary {
        iterations: losses.len(),
        window,
        initial_loss,
        final_loss,
        loss_ratio: final_loss / initial_loss,
        counters: counters.clone(),
    })
}

pub(crate) fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::EmptyDataset
        | TrainError::Config(_)
        | TrainError::Condition { .. }
        | TrainError::SampleShape { .. }
        | TrainError::NoSupervision => CliError::Invalid(e.to_string()),
        TrainError::Diverged { .. } | TrainError::Tensor(_) | TrainError::Checkpoint(_) | TrainError::Io { .. } => {
            CliError::Runtime(e.to_string())
        }
    }
}

pub fn run(data: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>) -> CliResult<String> {
    let started = now();
    let mut tc: TrainConfig = load(config)?;
    if let Some(s) = seed {
        tc.seed = s;
    }
    validate_train(&tc).map_err(|e| invalid(config, e))?;
    let samples = read_dataset(data).map_err(input_error)?;
    if samples.is_empty() {
        return Err(train_error(TrainError::EmptyDataset));
    }
    prepare_out_dir(out)?;
    let outcome = train(&samples, &tc, Some(out)).map_err(train_error)?;
    let summary = summarize(&outcome.losses, &outcome.counters).expect("at least one iteration");
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    let mut manifest = RunManifest::new("train", &tc, tc.seed, started);
    manifest.inputs.push(data.display().to_string());
    manifest.artifacts.push("metrics.jsonl".into());
    if tc.checkpoint_every > 0 {
        let mut k = tc.checkpoint_every;
        while k < tc.iterations {
            manifest.artifacts.push(format!("checkpoint_{k:06}"));
            k += tc.checkpoint_every;
        }
    }
    manifest.artifacts.push("checkpoint".into());
    manifest.artifacts.push(SUMMARY_FILE.into());
    manifest.finish(out)?;
    Ok(format!(
        "trained {} iterations on {} samples: loss {:.4} -> {:.4} (ratio {:.3}); checkpoint at {}\n",
        summary.iterations,
        samples.len(),
        summary.initial_loss,
        summary.final_loss,
        summary.loss_ratio,
        out.join("checkpoint").display()
    ))
}
