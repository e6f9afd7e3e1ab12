//! `dualcam inspect`: describe any artifact directory by its manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dualcam_core::io::{list_samples, read_sample};
use dualcam_model::checkpoint::read_manifest;

use super::input_error;
use super::sample::GenerationManifest;
use super::train::{TrainSummary, SUMMARY_FILE};
use crate::manifest::read_run_manifest;
use crate::{CliError, CliResult};

pub fn run(path: &Path) -> CliResult<String> {
    let mpath = path.join("manifest.json");
    let text = fs::read_to_string(&mpath)
        .map_err(|e| CliError::Invalid(format!("{}: no readable manifest: {e}", path.display())))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", mpath.display())))?;
    let has = |k: &str| raw.get(k).is_some();
    let mut s = String::new();
    if has("command") {
        let m = read_run_manifest(path)?;
        let _ = writeln!(s, "run: {} (seed {}, {})", m.command, m.seed, m.code_version);
        let _ = writeln!(s, "time: {} .. {}", m.started, m.finished);
        for i in &m.inputs {
            let _ = writeln!(s, "input: {i}");
        }
        let _ = writeln!(s, "artifacts: {}", m.artifacts.len());
        let _ = writeln!(s, "config: {}", m.config);
        match m.command.as_str() {
            "gen-data" => {
                let n = list_samples(path).map_err(input_error)?.len();
                let _ = writeln!(s, "samples: {n}");
            }
            "train" => {
                if let Ok(t) = fs::read_to_string(path.join(SUMMARY_FILE)) {
                    if let Ok(sum) = serde_json::from_str::<TrainSummary>(&t) {
                        let _ = writeln!(
                            s,
                            "loss: {:.4} -> {:.4} (ratio {:.3}, window {})",
                            sum.initial_loss, sum.final_loss, sum.loss_ratio, sum.window
                        );
                    }
                }
            }
            _ => {}
        }
    } else if has("params") {
        let m = read_manifest(path).map_err(|e| CliError::Invalid(e.to_string()))?;
        let scalars: usize = m.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        let _ = writeln!(
            s,
            "checkpoint: schema {}, iteration {}, {} tensors, {scalars} scalars",
            m.schema_version,
            m.iteration,
            m.params.len()
        );
        let _ = writeln!(s, "model: {}", serde_json::to_string(&m.model).expect("config serializes"));
        for p in &m.params {
            let _ = writeln!(s, "  {:<24} {:?}", p.name, p.shape);
        }
    } else if has("tensors") {
        let smp = read_sample(path).map_err(input_error)?;
        let _ = writeln!(s, "sample: mode {:?}, label {:?}", smp.mode, smp.label);
        let _ = writeln!(
            s,
            "scene: script {:?}, camera {:?} (magnitude {:.3}), {} objects",
            smp.spec.script,
            smp.spec.camera,
            smp.spec.camera_magnitude,
            smp.spec.objects.len()
        );
        let _ = writeln!(s, "clips: canonical {:?}, target {:?}", smp.canonical.shape(), smp.target.shape());
        let _ = writeln!(s, "tracks: {} over {} frames", smp.tracks.len(), smp.tracks.frames);
    } else if has("steps") && has("shape") {
        let m: GenerationManifest =
            serde_json::from_value(raw).map_err(|e| CliError::Invalid(format!("{}: {e}", mpath.display())))?;
        let _ = writeln!(
            s,
            "generated: shape {:?}, {} steps, seed {}, {} condition tracks",
            m.shape, m.steps, m.seed, m.condition_tracks
        );
        let _ = writeln!(s, "source: {} ({:?})", m.source.display(), m.motion);
    } else {
        return Err(CliError::Invalid(format!("{}: unrecognized manifest", mpath.display())));
    }
    Ok(s)
}
