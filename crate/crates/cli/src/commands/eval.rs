//! `dualcam eval`: controllability metrics for generated clips, alongside
//! the same metrics on the ground-truth renders (the detector floor).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dualcam_core::eval::{
    camera_error, causality_probe, epe, median, CameraErrorReport, CausalityReport, EpeReport, EvalError, ProbeMode,
};
use dualcam_core::io::{read_sample, sample_dir_name};
use dualcam_core::synth::Sample;
use dualcam_core::Clip;
use dualcam_model::sampler::ConditionMotion;

use super::sample::GenerationManifest;
use super::{input_error, prepare_out_dir, write_json};
use crate::export::read_clip;
use crate::manifest::{now, RunManifest};
use crate::{CliError, CliResult};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    /// Target-view EPE against the target-view ground-truth tracks.
    pub epe_target: Option<EpeReport>,
    /// Canonical-view EPE against the canonical ground-truth tracks.
    pub epe_canonical: Option<EpeReport>,
    pub camera: Option<CameraErrorReport>,
    /// Metrics that were undefined on this clip, with the reason.
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub generated: String,
    pub sample_index: Option<usize>,
    pub motion: Option<ConditionMotion>,
    pub metrics: ViewMetrics,
    pub causality: Option<CausalityReport>,
    /// The same metrics on the ground-truth renders.
    pub floor: ViewMetrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Medians {
    pub epe_target_px: Option<f64>,
    pub epe_canonical_px: Option<f64>,
    pub rotation_deg: Option<f64>,
    pub translation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub clips: usize,
    pub generated: Medians,
    pub floor: Medians,
    pub undefined: usize,
}

fn keep<T>(undefined: &mut Vec<String>, name: &str, r: Result<T, EvalError>) -> Option<T> {
    r.map_err(|e| undefined.push(format!("{name}: {e}"))).ok()
}

/// Metrics of `target`/`canonical` clips of `sample`. EPE is skipped when
/// the canonical stream was not conditioned on ground-truth motion.
pub fn view_metrics(target: &Clip, canonical: &Clip, sample: &Sample, with_epe: bool) -> ViewMetrics {
    let colors = sample.object_colors();
    let mut undefined = Vec::new();
    let (epe_target, epe_canonical) = if with_epe {
        (
            keep(&mut undefined, "epe_target", epe(target, &sample.target_tracks, &colors)),
            keep(&mut undefined, "epe_canonical", epe(canonical, &sample.tracks, &colors)),
        )
    } else {
        (None, None)
    };
    let camera = keep(&mut undefined, "camera", camera_error(target, &sample.path, &sample.spec.fiducials));
    ViewMetrics {
        epe_target,
        epe_canonical,
        camera,
        undefined,
    }
}

fn probe_mode(motion: Option<ConditionMotion>) -> Option<ProbeMode> {
    match motion {
        Some(ConditionMotion::Active) => Some(ProbeMode::Forward),
        Some(ConditionMotion::Passive) => Some(ProbeMode::Inverse),
        _ => None,
    }
}

pub fn evaluate_clip(name: &str, m: &GenerationManifest, target: &Clip, canonical: &Clip, sample: &Sample) -> ClipMetrics {
    let with_epe = m.sample_index.is_some() && m.motion != Some(ConditionMotion::None);
    let mut metrics = view_metrics(target, canonical, sample, with_epe);
    let causality = probe_mode(m.motion).and_then(|mode| match causality_probe(canonical, sample, mode) {
        Ok(r) => Some(r),
        Err(e) => {
            metrics.undefined.push(format!("causality: {e}"));
            None
        }
    });
    ClipMetrics {
        generated: name.into(),
        sample_index: m.sample_index,
        motion: m.motion,
        metrics,
        causality,
        floor: view_metrics(&sample.target, &sample.canonical, sample, with_epe),
    }
}

fn medians(rows: &[&ViewMetrics]) -> Medians {
    let collect = |f: &dyn Fn(&ViewMetrics) -> Option<f64>| {
        let mut v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
        median(&mut v)
    };
    Medians {
        epe_target_px: collect(&|r| r.epe_target.as_ref().map(|e| e.median_px)),
        epe_canonical_px: collect(&|r| r.epe_canonical.as_ref().map(|e| e.median_px)),
        rotation_deg: collect(&|r| r.camera.as_ref().map(|c| c.rotation_deg)),
        translation: collect(&|r| r.camera.as_ref().map(|c| c.translation)),
    }
}

pub fn summarize(rows: &[ClipMetrics]) -> EvalSummary {
    EvalSummary {
        clips: rows.len(),
        generated: medians(&rows.iter().map(|r| &r.metrics).collect::<Vec<_>>()),
        floor: medians(&rows.iter().map(|r| &r.floor).collect::<Vec<_>>()),
        undefined: rows.iter().map(|r| r.metrics.undefined.len()).sum(),
    }
}

fn generation_dirs(generated: &Path) -> CliResult<Vec<PathBuf>> {
    let rd = fs::read_dir(generated).map_err(|e| CliError::Invalid(format!("{}: {e}", generated.display())))?;
    let mut dirs: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("gen_")))
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

pub fn run(generated: &Path, data: &Path, out: &Path) -> CliResult<String> {
    let started = now();
    let dirs = generation_dirs(generated)?;
    let mut rows = Vec::with_capacity(dirs.len());
    for dir in &dirs {
        let mpath = dir.join("manifest.json");
        let text = fs::read_to_string(&mpath).map_err(|e| CliError::Invalid(format!("{}: {e}", mpath.display())))?;
        let m: GenerationManifest =
            serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", mpath.display())))?;
        let sample_dir = match m.sample_index {
            Some(i) => data.join(sample_dir_name(i)),
            None => m.source.clone(),
        };
        let sample = read_sample(&sample_dir).map_err(input_error)?;
        let target = read_clip(&dir.join(&m.target_file), m.shape)?;
        let canonical = read_clip(&dir.join(&m.canonical_file), m.shape)?;
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        rows.push(evaluate_clip(&name, &m, &target, &canonical, &sample));
    }
    let summary = summarize(&rows);

    prepare_out_dir(out)?;
    let mut lines = String::new();
    for r in &rows {
        lines.push_str(&serde_json::to_string(r).expect("metrics serialize"));
        lines.push('\n');
    }
    let mpath = out.join(METRICS_FILE);
    fs::write(&mpath, lines).map_err(|e| CliError::Runtime(format!("{}: {e}", mpath.display())))?;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    let mut manifest = RunManifest::new("eval", &serde_json::Value::Null, 0, started);
    manifest.inputs = vec![generated.display().to_string(), data.display().to_string()];
    manifest.artifacts = vec![METRICS_FILE.into(), SUMMARY_FILE.into()];
    manifest.finish(out)?;

    let mut s = String::new();
    let _ = writeln!(s, "{:<22}{:>12}{:>12}", "metric (median)", "generated", "gt floor");
    for (name, a, b) in [
        ("epe target px", summary.generated.epe_target_px, summary.floor.epe_target_px),
        ("epe canonical px", summary.generated.epe_canonical_px, summary.floor.epe_canonical_px),
        ("rotation deg", summary.generated.rotation_deg, summary.floor.rotation_deg),
        ("translation", summary.generated.translation, summary.floor.translation),
    ] {
        let _ = writeln!(s, "{name:<22}{:>12}{:>12}", fmt_opt(a), fmt_opt(b));
    }
    let _ = writeln!(s, "{} clips, {} undefined metrics", summary.clips, summary.undefined);
    Ok(s)
}
