//! Per-stream conditioning: camera latents and pooled trajectory maps.

use thiserror::Error;

use dualcam_core::geom::warp_first_frame;
use dualcam_core::synth::MotionLabel;
use dualcam_core::tracks::{rasterize, TrackError};
use dualcam_core::{CameraPath, Clip, DepthMap, GeomError, Image, TrajectoryMap};

use crate::codec::{Codec, CodecError, LatentGrid, LatentKind};
use crate::config::ModelConfig;

#[derive(Debug, Error)]
pub enum ConditionError {
    #[error("geometry: {0}")]
    Geom(#[from] GeomError),
    #[error("codec: {0}")]
    Codec(#[from] CodecError),
    #[error("tracks: {0}")]
    Tracks(#[from] TrackError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("stroke {index} leaves the image at frame {frame}")]
    StrokeOutside { index: usize, frame: usize },
}

/// Everything one stream is conditioned on.
#[derive(Debug, Clone)]
pub struct ConditionBundle {
    pub first_frame: Image,
    pub depth0: DepthMap,
    pub path: CameraPath,
    /// `None` means the empty (all-zero) map.
    pub trajectory: Option<TrajectoryMap>,
    pub label: Option<MotionLabel>,
}

/// Warps the first frame along `path` and encodes RGB plus validity.
pub fn encode_camera(
    first_frame: &Image,
    depth0: &DepthMap,
    path: &CameraPath,
    codec: &Codec,
) -> Result<LatentGrid, ConditionError> {
    let (h, w) = (first_frame.height, first_frame.width);
    if first_frame.channels != 3 || depth0.height != h || depth0.width != w {
        return Err(ConditionError::Shape(format!(
            "first frame {h}×{w}×{} vs depth {}×{}",
            first_frame.channels, depth0.height, depth0.width
        )));
    }
    let mut frames = Vec::with_capacity(path.len());
    for pose in &path.poses {
        let (img, valid) = warp_first_frame(first_frame, depth0, &path.intrinsics, pose)?;
        let mut out = Image::zeros(h, w, 4);
        for y in 0..h {
            for x in 0..w {
                let dst = out.pixel_mut(y, x);
                dst[..3].copy_from_slice(img.pixel(y, x));
                dst[3] = if valid[y * w + x] { 1.0 } else { 0.0 };
            }
        }
        frames.push(out);
    }
    Ok(codec.encode(&Clip::from_frames(&frames), LatentKind::Camera)?)
}

/// `p_s×p_s` average pooling of a trajectory map, giving `T×Ĥ×Ŵ×d_trk`.
pub fn pool_trajectory(map: &TrajectoryMap, p_s: usize) -> Result<Vec<f32>, ConditionError> {
    if p_s == 0 || map.height % p_s != 0 || map.width % p_s != 0 {
        return Err(ConditionError::Shape(format!(
            "trajectory map {}×{} not divisible by {p_s}",
            map.height, map.width
        )));
    }
    let (hh, ww, d) = (map.height / p_s, map.width / p_s, map.dim);
    let mut out = vec![0.0f32; map.frames * hh * ww * d];
    let norm = 1.0 / (p_s * p_s) as f32;
    for t in 0..map.frames {
        for y in 0..map.height {
            for x in 0..map.width {
                let dst = ((t * hh + y / p_s) * ww + x / p_s) * d;
                for (k, v) in map.vector(t, y, x).iter().enumerate() {
                    out[dst + k] += v * norm;
                }
            }
        }
    }
    Ok(out)
}

/// Network-ready form of one stream's conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCondition {
    /// `N×d_cam` camera latent.
    pub camera: Vec<f32>,
    /// `T×Ĥ×Ŵ×d_trk` pooled trajectory map.
    pub trajectory: Vec<f32>,
}

impl EncodedCondition {
    pub fn empty_trajectory(cfg: &ModelConfig) -> Vec<f32> {
        vec![0.0; cfg.frames * cfg.cells() * cfg.d_trk]
    }
}

pub fn encode_bundle(bundle: &ConditionBundle, cfg: &ModelConfig) -> Result<EncodedCondition, ConditionError> {
    let codec = Codec::new(cfg.p_t, cfg.p_s);
    if bundle.first_frame.height != cfg.height || bundle.first_frame.width != cfg.width || bundle.path.len() != cfg.frames {
        return Err(ConditionError::Shape(format!(
            "bundle {}×{} over {} frames, model expects {}×{} over {}",
            bundle.first_frame.height,
            bundle.first_frame.width,
            bundle.path.len(),
            cfg.height,
            cfg.width,
            cfg.frames
        )));
    }
    let camera = encode_camera(&bundle.first_frame, &bundle.depth0, &bundle.path, &codec)?.data;
    let trajectory = match &bundle.trajectory {
        Some(map) => {
            if map.dim != cfg.d_trk || map.frames != cfg.frames {
                return Err(ConditionError::Shape(format!(
                    "trajectory map {} frames × {} dims, model expects {} × {}",
                    map.frames, map.dim, cfg.frames, cfg.d_trk
                )));
            }
            pool_trajectory(map, cfg.p_s)?
        }
        None => EncodedCondition::empty_trajectory(cfg),
    };
    Ok(EncodedCondition { camera, trajectory })
}

/// Rasterizes and pools a track set for the network.
pub fn encode_tracks(tracks: &dualcam_core::TrackSet, cfg: &ModelConfig) -> Result<Vec<f32>, ConditionError> {
    pool_trajectory(&rasterize(tracks, cfg.d_trk)?, cfg.p_s)
}
