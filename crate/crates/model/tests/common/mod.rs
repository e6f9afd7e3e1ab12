#![allow(dead_code)]

use candle_core::DType;
use dualcam_core::rng::SeededRng;
use dualcam_core::synth::{MotionLabel, SceneConfig};
use dualcam_model::net::{Batch, ItemInputs, StreamInputs};
use dualcam_model::ModelConfig;
use rand::Rng;

/// 8×8×4 clips, one narrow block.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        frames: 4,
        height: 8,
        width: 8,
        p_t: 2,
        p_s: 4,
        hidden: 16,
        blocks: 1,
        heads: 2,
        mlp_ratio: 2,
        d_trk: 4,
        traj_hidden: 8,
        ..ModelConfig::default()
    }
}

/// 16×16×4 clips for tests that need synthetic samples.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        frames: 4,
        height: 16,
        width: 16,
        p_t: 2,
        p_s: 4,
        hidden: 16,
        blocks: 1,
        heads: 2,
        ..ModelConfig::default()
    }
}

pub fn small_scenes() -> SceneConfig {
    SceneConfig {
        height: 16,
        width: 16,
        frames: 4,
        ..SceneConfig::default()
    }
}

fn uniform(n: usize, scale: f32, rng: &mut SeededRng) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_stream(cfg: &ModelConfig, rng: &mut SeededRng) -> StreamInputs {
    StreamInputs {
        z: uniform(cfg.tokens() * cfg.latent_dim(), 1.0, rng),
        camera: uniform(cfg.tokens() * cfg.camera_dim(), 1.0, rng),
        trajectory: uniform(cfg.frames * cfg.cells() * cfg.d_trk, 1.0, rng),
    }
}

pub fn random_item(cfg: &ModelConfig, rng: &mut SeededRng) -> ItemInputs {
    ItemInputs {
        canonical: random_stream(cfg, rng),
        target: random_stream(cfg, rng),
        t: rng.random_range(0.05..0.95),
        label: Some(MotionLabel::Push),
    }
}

pub fn batch(cfg: &ModelConfig, dtype: DType, items: &[ItemInputs]) -> Batch {
    Batch::new(cfg, dtype, items).unwrap()
}

pub fn to_vec(t: &candle_core::Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap()
}
