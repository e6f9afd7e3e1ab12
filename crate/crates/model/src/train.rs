//! Flow-matching training.
//!
//! Both streams share one timestep `t ~ U(0,1)` and get independent noise;
//! `z_t = (1-t)·z₀ + t·ε` and the regression target is `ε - z₀`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use dualcam_core::rng::{derive_seed, seeded, SeededRng};
use dualcam_core::synth::{MotionLabel, Sample, SupervisionMode};
use dualcam_core::tracks::{causal_dropout, coarsen, degrade, sample_track_count, subsample, Granularity, MotionComponent};
use dualcam_core::{CameraPath, TrackSet};

use crate::checkpoint::{save_checkpoint, CheckpointError};
use crate::codec::{to_model_range, Codec, LatentKind};
use crate::condition::{encode_camera, encode_tracks, ConditionError, EncodedCondition};
use crate::config::ModelConfig;
use crate::net::{Batch, DualStreamNet, ItemInputs, StreamInputs};

const ORDER_SALT: u64 = 0x6f72_6465_7200;
const PAIR_SALT: u64 = 0x7061_6972_0000;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no stream is supervised in this batch")]
    NoSupervision,
    #[error("sample {index}: {source}")]
    Condition {
        index: usize,
        #[source]
        source: ConditionError,
    },
    #[error("sample {index} does not match the model: {reason}")]
    SampleShape { index: usize, reason: String },
    #[error("loss became non-finite at iteration {iteration}{}", dump.as_ref().map(|p| format!("; state dumped to {}", p.display())).unwrap_or_default())]
    Diverged { iteration: usize, dump: Option<PathBuf> },
    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine decay from `lr` to `lr·lr_final_fraction` over the run; 1
    /// keeps the rate constant.
    pub lr_final_fraction: f64,
    pub weight_decay: f64,
    /// Probability of conditioning on the active component.
    pub causal_p: f64,
    pub label_dropout: f64,
    /// Probability of collapsing tracks to per-object motion.
    pub coarsen_prob: f64,
    pub track_drop_prob: f64,
    pub truncate_prob: f64,
    pub seed: u64,
    /// Save a checkpoint every this many iterations; 0 saves only at the end.
    pub checkpoint_every: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 2,
            lr: 3e-5,
            lr_final_fraction: 1.0,
            weight_decay: 1e-3,
            causal_p: 0.8,
            label_dropout: 0.2,
            coarsen_prob: 0.5,
            track_drop_prob: 0.2,
            truncate_prob: 0.1,
            seed: 0,
            checkpoint_every: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.model.validate()?;
        if self.iterations == 0 || self.batch_size == 0 {
            return Err("iterations and batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(format!("lr must be positive, got {}", self.lr));
        }
        for (name, p) in [
            ("causal_p", self.causal_p),
            ("label_dropout", self.label_dropout),
            ("coarsen_prob", self.coarsen_prob),
            ("track_drop_prob", self.track_drop_prob),
            ("truncate_prob", self.truncate_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(0.0..=1.0).contains(&self.lr_final_fraction) {
            return Err(format!("lr_final_fraction must lie in [0, 1], got {}", self.lr_final_fraction));
        }
        if self.weight_decay < 0.0 {
            return Err("weight_decay must be non-negative".into());
        }
        Ok(())
    }
}

/// Clean latents and fixed camera conditions of one sample.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub z0_canonical: Vec<f32>,
    pub z0_target: Vec<f32>,
    pub camera_canonical: Vec<f32>,
    pub camera_target: Vec<f32>,
    pub tracks: TrackSet,
    pub label: MotionLabel,
    pub mode: SupervisionMode,
}

pub fn prepare_sample(sample: &Sample, cfg: &ModelConfig) -> Result<PreparedSample, ConditionError> {
    let [t, h, w, _] = sample.canonical.shape();
    if (t, h, w) != (cfg.frames, cfg.height, cfg.width) {
        return Err(ConditionError::Shape(format!(
            "clip {t}×{h}×{w}, model expects {}×{}×{}",
            cfg.frames, cfg.height, cfg.width
        )));
    }
    let codec = Codec::new(cfg.p_t, cfg.p_s);
    let first = sample.first_frame();
    let identity = CameraPath::identity(sample.path.intrinsics, t);
    let mut z0_canonical = codec.encode(&sample.canonical, LatentKind::Video)?.data;
    let mut z0_target = codec.encode(&sample.target, LatentKind::Video)?.data;
    to_model_range(&mut z0_canonical);
    to_model_range(&mut z0_target);
    Ok(PreparedSample {
        z0_canonical,
        z0_target,
        camera_canonical: encode_camera(&first, &sample.depth0, &identity, &codec)?.data,
        camera_target: encode_camera(&first, &sample.depth0, &sample.path, &codec)?.data,
        tracks: sample.tracks.clone(),
        label: sample.label,
        mode: sample.mode,
    })
}

/// Per-stream loss weights for a supervision mode, `[canonical, target]`.
pub fn stream_mask(mode: SupervisionMode) -> [f32; 2] {
    match mode {
        SupervisionMode::Paired | SupervisionMode::StaticDup => [1.0, 1.0],
        SupervisionMode::SingleDynamic => [0.0, 1.0],
    }
}

/// One noised example with its regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub inputs: ItemInputs,
    pub target_canonical: Vec<f32>,
    pub target_target: Vec<f32>,
    pub mask: [f32; 2],
    pub component: MotionComponent,
    /// Tracks the canonical stream is conditioned on.
    pub condition_tracks: TrackSet,
}

pub fn noise(n: usize, rng: &mut SeededRng) -> Vec<f32> {
    (0..n)
        .map(|_| <StandardNormal as Distribution<f32>>::sample(&StandardNormal, rng))
        .collect()
}

/// `(1-t)·z₀ + t·ε` and `ε - z₀`.
pub fn interpolate(z0: &[f32], eps: &[f32], t: f64) -> (Vec<f32>, Vec<f32>) {
    let t32 = t as f32;
    let zt = z0.iter().zip(eps).map(|(a, e)| (1.0 - t32) * a + t32 * e).collect();
    let v = z0.iter().zip(eps).map(|(a, e)| e - a).collect();
    (zt, v)
}

/// Track conditioning drawn as in training: area-scaled count, causal
/// dropout, optional coarsening, then degradation.
pub fn training_tracks(
    tracks: &TrackSet,
    tc: &TrainConfig,
    rng: &mut SeededRng,
) -> (TrackSet, MotionComponent) {
    let count = sample_track_count(tracks.height, tracks.width, rng);
    let sub = subsample(tracks, count, rng);
    let (mut sel, comp) = causal_dropout(&sub, tc.causal_p, rng);
    if rng.random::<f64>() < tc.coarsen_prob {
        sel = coarsen(&sel, Granularity::Object);
    }
    (degrade(&sel, tc.track_drop_prob, tc.truncate_prob, rng), comp)
}

pub fn make_training_pair(
    p: &PreparedSample,
    tc: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<TrainingPair, ConditionError> {
    let cfg = &tc.model;
    let (tracks, component) = training_tracks(&p.tracks, tc, rng);
    let trajectory = encode_tracks(&tracks, cfg)?;
    let t: f64 = rng.random();
    let eps_c = noise(p.z0_canonical.len(), rng);
    let eps_t = noise(p.z0_target.len(), rng);
    let label = if rng.random::<f64>() < tc.label_dropout { None } else { Some(p.label) };
    let mask = stream_mask(p.mode);
    let (mut zc, vc) = interpolate(&p.z0_canonical, &eps_c, t);
    if mask[0] == 0.0 {
        // No canonical clip is assumed for this mode: the stream sees noise.
        zc = eps_c;
    }
    let (zt, vt) = interpolate(&p.z0_target, &eps_t, t);
    Ok(TrainingPair {
        inputs: ItemInputs {
            canonical: StreamInputs {
                z: zc,
                camera: p.camera_canonical.clone(),
                trajectory,
            },
            target: StreamInputs {
                z: zt,
                camera: p.camera_target.clone(),
                trajectory: EncodedCondition::empty_trajectory(cfg),
            },
            t,
            label,
        },
        target_canonical: vc,
        target_target: vt,
        mask,
        component,
        condition_tracks: tracks,
    })
}

/// Masked mean squared error over supervised streams.
pub fn flow_loss(
    v_can: &Tensor,
    v_tar: &Tensor,
    y_can: &Tensor,
    y_tar: &Tensor,
    masks: &[[f32; 2]],
) -> Result<Tensor, TrainError> {
    let (b, n, d) = v_can.dims3()?;
    let total: f32 = masks.iter().map(|m| m[0] + m[1]).sum();
    if total == 0.0 {
        return Err(TrainError::NoSupervision);
    }
    let dtype = v_can.dtype();
    let dev = v_can.device();
    let mc = Tensor::from_vec(masks.iter().map(|m| m[0]).collect::<Vec<_>>(), (b, 1, 1), dev)?.to_dtype(dtype)?;
    let mt = Tensor::from_vec(masks.iter().map(|m| m[1]).collect::<Vec<_>>(), (b, 1, 1), dev)?.to_dtype(dtype)?;
    let ec = (v_can - y_can)?.sqr()?.broadcast_mul(&mc)?.sum_all()?;
    let et = (v_tar - y_tar)?.sqr()?.broadcast_mul(&mt)?.sum_all()?;
    Ok(((ec + et)? / (total as f64 * (n * d) as f64))?)
}

pub fn pair_targets(pairs: &[TrainingPair], cfg: &ModelConfig, dtype: DType) -> Result<(Tensor, Tensor), TrainError> {
    let shape = (pairs.len(), cfg.tokens(), cfg.latent_dim());
    let dev = candle_core::Device::Cpu;
    let c: Vec<f32> = pairs.iter().flat_map(|p| p.target_canonical.iter().copied()).collect();
    let t: Vec<f32> = pairs.iter().flat_map(|p| p.target_target.iter().copied()).collect();
    Ok((
        Tensor::from_vec(c, shape, &dev)?.to_dtype(dtype)?,
        Tensor::from_vec(t, shape, &dev)?.to_dtype(dtype)?,
    ))
}

/// Loss of a batch of pairs under `net`.
pub fn batch_loss(net: &DualStreamNet, pairs: &[TrainingPair]) -> Result<Tensor, TrainError> {
    let cfg = net.config();
    let items: Vec<ItemInputs> = pairs.iter().map(|p| p.inputs.clone()).collect();
    let batch = Batch::new(cfg, net.dtype(), &items)?;
    let (vc, vt) = net.forward(&batch, net.default_options())?;
    let (yc, yt) = pair_targets(pairs, cfg, net.dtype())?;
    let masks: Vec<[f32; 2]> = pairs.iter().map(|p| p.mask).collect();
    flow_loss(&vc, &vt, &yc, &yt, &masks)
}

/// Instrumentation totals over a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainCounters {
    pub active_pairs: usize,
    pub passive_pairs: usize,
    pub null_label_pairs: usize,
    pub paired: usize,
    pub static_dup: usize,
    pub single_dynamic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub loss: f64,
    pub active_pairs: usize,
    pub passive_pairs: usize,
    pub mean_t: f64,
}

pub struct TrainOutcome {
    pub net: DualStreamNet,
    pub losses: Vec<f64>,
    pub counters: TrainCounters,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Trains from scratch. With `out` set, writes `metrics.jsonl` and
/// checkpoints under it.
pub fn train(samples: &[Sample], tc: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    train_with(samples, tc, out, |_| {})
}

/// As [`train`], calling `progress` after every iteration.
pub fn train_with(
    samples: &[Sample],
    tc: &TrainConfig,
    out: Option<&Path>,
    mut progress: impl FnMut(&IterationMetrics),
) -> Result<TrainOutcome, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    tc.validate().map_err(TrainError::Config)?;
    let cfg = &tc.model;
    let prepared = samples
        .iter()
        .enumerate()
        .map(|(index, s)| prepare_sample(s, cfg).map_err(|source| TrainError::Condition { index, source }))
        .collect::<Result<Vec<_>, _>>()?;

    let net = DualStreamNet::new(cfg, tc.seed, DType::F32)?;
    let names = net.trainable_names();
    let vars = net.params().select(|n| names.iter().any(|k| k == n));
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr: tc.lr,
            weight_decay: tc.weight_decay,
            ..Default::default()
        },
    )?;

    let mut metrics = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join("metrics.jsonl");
            Some((BufWriter::new(File::create(&path).map_err(io_err(&path))?), path))
        }
        None => None,
    };

    let mut order_rng = seeded(derive_seed(tc.seed, ORDER_SALT));
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(tc.iterations);
    let mut counters = TrainCounters::default();
    let mut pair_index = 0u64;
    for it in 0..tc.iterations {
        let mut pairs = Vec::with_capacity(tc.batch_size);
        for _ in 0..tc.batch_size {
            if order.is_empty() {
                order = (0..prepared.len()).collect();
                for k in (1..order.len()).rev() {
                    order.swap(k, order_rng.random_range(0..=k));
                }
                order.reverse();
            }
            let idx = order.pop().expect("refilled above");
            let mut rng = seeded(derive_seed(tc.seed ^ PAIR_SALT, pair_index));
            pair_index += 1;
            let pair = make_training_pair(&prepared[idx], tc, &mut rng)
                .map_err(|source| TrainError::Condition { index: idx, source })?;
            match pair.component {
                MotionComponent::Active => counters.active_pairs += 1,
                MotionComponent::Passive => counters.passive_pairs += 1,
            }
            counters.null_label_pairs += pair.inputs.label.is_none() as usize;
            match prepared[idx].mode {
                SupervisionMode::Paired => counters.paired += 1,
                SupervisionMode::StaticDup => counters.static_dup += 1,
                SupervisionMode::SingleDynamic => counters.single_dynamic += 1,
            }
            pairs.push(pair);
        }
        opt.set_learning_rate(learning_rate(tc, it));
        let loss = batch_loss(&net, &pairs)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            let dump = match out {
                Some(dir) => Some(dump_divergence(dir, it, &losses, &pairs)?),
                None => None,
            };
            return Err(TrainError::Diverged { iteration: it, dump });
        }
        opt.backward_step(&loss)?;
        losses.push(value);
        let m = IterationMetrics {
            iteration: it,
            loss: value,
            active_pairs: pairs.iter().filter(|p| p.component == MotionComponent::Active).count(),
            passive_pairs: pairs.iter().filter(|p| p.component == MotionComponent::Passive).count(),
            mean_t: pairs.iter().map(|p| p.inputs.t).sum::<f64>() / pairs.len() as f64,
        };
        if let Some((w, path)) = metrics.as_mut() {
            let line = serde_json::to_string(&m).expect("metrics serialize");
            writeln!(w, "{line}").map_err(io_err(path))?;
        }
        progress(&m);
        if let Some(dir) = out {
            if tc.checkpoint_every > 0 && (it + 1) % tc.checkpoint_every == 0 && it + 1 < tc.iterations {
                save_checkpoint(&net, &dir.join(format!("checkpoint_{:06}", it + 1)), it + 1)?;
            }
        }
    }
    if let Some((mut w, path)) = metrics {
        w.flush().map_err(io_err(&path))?;
    }
    if let Some(dir) = out {
        save_checkpoint(&net, &dir.join("checkpoint"), tc.iterations)?;
    }
    Ok(TrainOutcome { net, losses, counters })
}

fn dump_divergence(dir: &Path, iteration: usize, losses: &[f64], pairs: &[TrainingPair]) -> Result<PathBuf, TrainError> {
    #[derive(Serialize)]
    struct Dump<'a> {
        iteration: usize,
        recent_losses: &'a [f64],
        t: Vec<f64>,
        labels: Vec<Option<MotionLabel>>,
        masks: Vec<[f32; 2]>,
        input_finite: bool,
    }
    let start = losses.len().saturating_sub(20);
    let d = Dump {
        iteration,
        recent_losses: &losses[start..],
        t: pairs.iter().map(|p| p.inputs.t).collect(),
        labels: pairs.iter().map(|p| p.inputs.label).collect(),
        masks: pairs.iter().map(|p| p.mask).collect(),
        input_finite: pairs
            .iter()
            .all(|p| p.inputs.canonical.z.iter().chain(&p.inputs.target.z).all(|v| v.is_finite())),
    };
    let path = dir.join("divergence.json");
    let text = serde_json::to_string_pretty(&d).expect("dump serializes");
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

pub fn learning_rate(tc: &TrainConfig, iteration: usize) -> f64 {
    let frac = iteration as f64 / tc.iterations.max(1) as f64;
    let lo = tc.lr * tc.lr_final_fraction;
    lo + 0.5 * (tc.lr - lo) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Mean of the first and last `window` losses.
pub fn smoothed_endpoints(losses: &[f64], window: usize) -> Option<(f64, f64)> {
    if losses.is_empty() || window == 0 {
        return None;
    }
    let w = window.min(losses.len());
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&losses[..w]), mean(&losses[losses.len() - w..])))
}
