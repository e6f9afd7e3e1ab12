//! `dualcam sample`: generate clips from a checkpoint.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dualcam_core::io::{read_sample, sample_dir_name};
use dualcam_core::rng::{derive_seed, seeded};
use dualcam_core::synth::{MotionLabel, Sample};
use dualcam_core::TrackSet;
use dualcam_model::checkpoint::load_checkpoint;
use dualcam_model::condition::ConditionBundle;
use dualcam_model::net::DualStreamNet;
use dualcam_model::sampler::{
    generate, prepare_user_condition, regeneration_condition, ConditionMotion, Generated, ObjectMask, SampleError,
    SamplerConfig, Stroke,
};

use super::{input_error, prepare_out_dir, write_json};
use crate::config::{invalid, load, SampleConfig, UserCondition};
use crate::export::{write_clip, write_png_frames};
use crate::manifest::{now, RunManifest};
use crate::{CliError, CliResult};

pub const GENERATION_SCHEMA_VERSION: u32 = 1;
pub const TARGET_FILE: &str = "target.f32";
pub const CANONICAL_FILE: &str = "canonical.f32";

const CONDITION_SALT: u64 = 0x636f_6e64_0000;

/// Manifest of one generated clip pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub schema_version: u32,
    /// Dataset index of the regenerated sample.
    pub sample_index: Option<usize>,
    /// Directory of the sample that supplied the scene.
    pub source: PathBuf,
    pub motion: Option<ConditionMotion>,
    pub label: Option<MotionLabel>,
    pub steps: usize,
    pub seed: u64,
    /// `[T, H, W, 3]` of both clips.
    pub shape: [usize; 4],
    pub condition_tracks: usize,
    pub target_file: String,
    pub canonical_file: String,
}

pub struct SampleArgs {
    pub data: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub count: Option<usize>,
}

pub fn generation_dir_name(k: usize) -> String {
    format!("gen_{k:05}")
}

pub(crate) fn sample_error(e: SampleError) -> CliError {
    match e {
        SampleError::Condition(_) | SampleError::NoSteps => CliError::Invalid(e.to_string()),
        SampleError::NonFinite { .. } | SampleError::Tensor(_) | SampleError::Length { .. } => {
            CliError::Runtime(e.to_string())
        }
    }
}

/// Frame-0 pixels of each object, recovered from the dense ground-truth
/// tracks.
pub fn object_masks(sample: &Sample) -> Vec<ObjectMask> {
    let mut masks: Vec<ObjectMask> = Vec::new();
    for i in 0..sample.tracks.len() {
        if !sample.tracks.is_visible(i, 0) {
            continue;
        }
        let Some(pix) = sample.tracks.pixel(i, 0) else { continue };
        let id = sample.tracks.object_id[i];
        match masks.iter_mut().find(|m| m.object_id == id) {
            Some(m) => m.pixels.push(pix),
            None => masks.push(ObjectMask {
                object_id: id,
                pixels: vec![pix],
            }),
        }
    }
    masks
}

struct Job {
    sample_index: Option<usize>,
    source: PathBuf,
    motion: Option<ConditionMotion>,
    label: Option<MotionLabel>,
    canonical: ConditionBundle,
    target: ConditionBundle,
    tracks: TrackSet,
}

fn user_job(u: &UserCondition, d_trk: usize) -> CliResult<Job> {
    let scene = read_sample(&u.scene).map_err(input_error)?;
    let strokes: Vec<Stroke> = u.strokes.iter().map(|p| Stroke { positions: p.clone() }).collect();
    let (canonical, target, tracks) = prepare_user_condition(
        &scene.first_frame(),
        &scene.depth0,
        &object_masks(&scene),
        &strokes,
        &scene.path,
        u.label,
        d_trk,
        u.max_tracks,
    )
    .map_err(|e| CliError::Invalid(format!("user condition: {e}")))?;
    Ok(Job {
        sample_index: None,
        source: u.scene.clone(),
        motion: None,
        label: u.label,
        canonical,
        target,
        tracks,
    })
}

/// Regeneration job for dataset sample `index` under `cfg`'s motion choice.
fn dataset_job(dataset: &Path, index: usize, cfg: &SampleConfig, d_trk: usize) -> CliResult<Job> {
    let dir = dataset.join(sample_dir_name(index));
    let sample = read_sample(&dir).map_err(input_error)?;
    let mut rng = seeded(derive_seed(cfg.seed ^ CONDITION_SALT, index as u64));
    let (canonical, target, tracks) = regeneration_condition(&sample, d_trk, cfg.motion, &mut rng)
        .map_err(|e| CliError::Invalid(format!("sample {index}: {e}")))?;
    Ok(Job {
        sample_index: Some(index),
        source: dir,
        motion: Some(cfg.motion),
        label: Some(sample.label),
        canonical,
        target,
        tracks,
    })
}

/// Samples one job and writes its directory.
fn emit(net: &DualStreamNet, job: &Job, k: usize, cfg: &SampleConfig, out: &Path) -> CliResult<GenerationManifest> {
    let seed = derive_seed(cfg.seed, k as u64);
    let g: Generated = generate(net, &job.canonical, &job.target, &SamplerConfig { steps: cfg.steps, seed })
        .map_err(|e| match sample_error(e) {
            CliError::Runtime(m) => CliError::Runtime(format!("clip {k}: {m}")),
            other => other,
        })?;
    let dir = out.join(generation_dir_name(k));
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    write_clip(&dir.join(TARGET_FILE), &g.target)?;
    write_clip(&dir.join(CANONICAL_FILE), &g.canonical)?;
    if cfg.export_png {
        write_png_frames(&dir.join("png").join("target"), &g.target)?;
        write_png_frames(&dir.join("png").join("canonical"), &g.canonical)?;
    }
    let m = GenerationManifest {
        schema_version: GENERATION_SCHEMA_VERSION,
        sample_index: job.sample_index,
        source: job.source.clone(),
        motion: job.motion,
        label: job.label,
        steps: cfg.steps,
        seed,
        shape: g.target.shape(),
        condition_tracks: job.tracks.len(),
        target_file: TARGET_FILE.into(),
        canonical_file: CANONICAL_FILE.into(),
    };
    write_json(&dir.join("manifest.json"), &m)?;
    Ok(m)
}

pub fn run(args: SampleArgs) -> CliResult<String> {
    let started = now();
    let config = args.config.as_deref();
    let mut cfg: SampleConfig = load(config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if args.data.is_some() {
        cfg.dataset = args.data.clone();
    }
    cfg.validate().map_err(|e| invalid(config, e))?;
    let (net, _) = load_checkpoint(&args.checkpoint).map_err(|e| CliError::Invalid(format!("checkpoint: {e}")))?;
    let d_trk = net.config().d_trk;

    let mut jobs = Vec::new();
    if let Some(u) = &cfg.user {
        jobs.push(user_job(u, d_trk)?);
    } else {
        let dataset = cfg.dataset.clone().expect("validated");
        let indices: Vec<usize> = if cfg.samples.is_empty() {
            let n = dualcam_core::io::list_samples(&dataset).map_err(input_error)?.len();
            (0..n).collect()
        } else {
            cfg.samples.clone()
        };
        let limit = args.count.unwrap_or(usize::MAX);
        for &i in indices.iter().take(limit) {
            jobs.push(dataset_job(&dataset, i, &cfg, d_trk)?);
        }
    }

    prepare_out_dir(&args.out)?;
    let mut manifest = RunManifest::new("sample", &cfg, cfg.seed, started);
    manifest.inputs.push(args.checkpoint.display().to_string());
    if let Some(d) = cfg.user.as_ref().map(|u| &u.scene).or(cfg.dataset.as_ref()) {
        manifest.inputs.push(d.display().to_string());
    }
    for (k, job) in jobs.iter().enumerate() {
        emit(&net, job, k, &cfg, &args.out)?;
        manifest.artifacts.push(generation_dir_name(k));
    }
    manifest.finish(&args.out)?;
    Ok(format!(
        "generated {} clip pairs ({} steps) in {}\n",
        jobs.len(),
        cfg.steps,
        args.out.display()
    ))
}
