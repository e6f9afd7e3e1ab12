//! Euler integration of the learned velocity field from noise (`t = 1`) to
//! data (`t = 0`), and construction of user-facing conditions.

use candle_core::DType;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use dualcam_core::geom::occlusion_mask;
use dualcam_core::rng::{seeded, SeededRng};
use dualcam_core::synth::{MotionLabel, Sample};
use dualcam_core::tracks::{decompose_roles, rasterize, sample_track_count, subsample};
use dualcam_core::{CameraPath, Clip, DepthMap, Image, Role, TrackSet};

use crate::codec::{from_model_range, Codec, LatentGrid, LatentKind};
use crate::condition::{encode_bundle, ConditionBundle, ConditionError, EncodedCondition};
use crate::net::{Batch, DualStreamNet, ForwardOptions, ItemInputs, StreamInputs};
use crate::train::noise;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("non-finite latent after step {step} (t = {t:.4})")]
    NonFinite { step: usize, t: f64 },
    #[error("steps must be positive")]
    NoSteps,
    #[error("condition: {0}")]
    Condition(#[from] ConditionError),
    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("velocity has {found} values, expected {expected}")]
    Length { found: usize, expected: usize },
}

/// Joint velocity of both streams at time `t`.
pub trait VelocityField {
    fn velocity(&self, z_can: &[f32], z_tar: &[f32], t: f64) -> Result<(Vec<f32>, Vec<f32>), SampleError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 20, seed: 0 }
    }
}

/// Integrates `dz/dt = v` from `t = 1` down to `t = 0` with uniform Euler
/// steps, starting from independent standard-normal noise per stream.
pub fn euler_sample(
    field: &dyn VelocityField,
    len: usize,
    cfg: &SamplerConfig,
) -> Result<(Vec<f32>, Vec<f32>), SampleError> {
    let mut rng = seeded(cfg.seed);
    let zc = noise(len, &mut rng);
    let zt = noise(len, &mut rng);
    euler_from(field, zc, zt, cfg.steps)
}

pub fn euler_from(
    field: &dyn VelocityField,
    mut zc: Vec<f32>,
    mut zt: Vec<f32>,
    steps: usize,
) -> Result<(Vec<f32>, Vec<f32>), SampleError> {
    if steps == 0 {
        return Err(SampleError::NoSteps);
    }
    let dt = 1.0 / steps as f64;
    for k in 0..steps {
        let t = 1.0 - k as f64 * dt;
        let (vc, vt) = field.velocity(&zc, &zt, t)?;
        for (v, z) in [(&vc, &zc), (&vt, &zt)] {
            if v.len() != z.len() {
                return Err(SampleError::Length {
                    found: v.len(),
                    expected: z.len(),
                });
            }
        }
        let h = dt as f32;
        zc.iter_mut().zip(&vc).for_each(|(z, v)| *z -= h * v);
        zt.iter_mut().zip(&vt).for_each(|(z, v)| *z -= h * v);
        if !zc.iter().chain(&zt).all(|v| v.is_finite()) {
            return Err(SampleError::NonFinite { step: k, t: t - dt });
        }
    }
    Ok((zc, zt))
}

/// The trained network with fixed conditions.
pub struct NetField<'a> {
    pub net: &'a DualStreamNet,
    pub canonical: EncodedCondition,
    pub target: EncodedCondition,
    pub label: Option<MotionLabel>,
    pub options: ForwardOptions,
}

impl VelocityField for NetField<'_> {
    fn velocity(&self, z_can: &[f32], z_tar: &[f32], t: f64) -> Result<(Vec<f32>, Vec<f32>), SampleError> {
        let item = ItemInputs {
            canonical: StreamInputs {
                z: z_can.to_vec(),
                camera: self.canonical.camera.clone(),
                trajectory: self.canonical.trajectory.clone(),
            },
            target: StreamInputs {
                z: z_tar.to_vec(),
                camera: self.target.camera.clone(),
                trajectory: self.target.trajectory.clone(),
            },
            t,
            label: self.label,
        };
        let batch = Batch::new(self.net.config(), self.net.dtype(), &[item])?;
        let (vc, vt) = self.net.forward(&batch, self.options)?;
        let flat = |x: candle_core::Tensor| -> Result<Vec<f32>, SampleError> {
            Ok(x.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?)
        };
        Ok((flat(vc)?, flat(vt)?))
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub canonical: Clip,
    pub target: Clip,
    pub latent_canonical: LatentGrid,
    pub latent_target: LatentGrid,
}

/// Samples both streams and decodes them, clamping pixels to `[0, 1]`.
pub fn generate(
    net: &DualStreamNet,
    canonical: &ConditionBundle,
    target: &ConditionBundle,
    cfg: &SamplerConfig,
) -> Result<Generated, SampleError> {
    let mc = net.config();
    let field = NetField {
        net,
        canonical: encode_bundle(canonical, mc)?,
        target: encode_bundle(target, mc)?,
        label: canonical.label,
        options: net.default_options(),
    };
    let (zc, zt) = euler_sample(&field, mc.tokens() * mc.latent_dim(), cfg)?;
    let codec = Codec::new(mc.p_t, mc.p_s);
    let grid = |data: Vec<f32>| LatentGrid {
        frames: mc.latent_frames(),
        height: mc.latent_height(),
        width: mc.latent_width(),
        dim: mc.latent_dim(),
        kind: LatentKind::Video,
        data,
    };
    let (gc, gt) = (grid(zc), grid(zt));
    let decode = |g: &LatentGrid| -> Result<Clip, SampleError> {
        let mut c = codec.decode(g).map_err(ConditionError::from)?;
        from_model_range(&mut c.data);
        c.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(c)
    };
    Ok(Generated {
        canonical: decode(&gc)?,
        target: decode(&gt)?,
        latent_canonical: gc,
        latent_target: gt,
    })
}

/// A user-drawn path in the first frame, one position per output frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub positions: Vec<[f64; 2]>,
}

/// Pixels `(x, y)` of one object in the first frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMask {
    pub object_id: u32,
    pub pixels: Vec<(usize, usize)>,
}

/// Densifies strokes into parallel tracks over the stroked object's mask,
/// applies depth-ordered occlusion and returns the canonical and target
/// bundles with the final tracks. A stroke whose anchor lies on no mask
/// yields a single track. `max_tracks` evenly thins the result when set.
#[allow(clippy::too_many_arguments)]
pub fn prepare_user_condition(
    first_frame: &Image,
    depth0: &DepthMap,
    masks: &[ObjectMask],
    strokes: &[Stroke],
    camera: &CameraPath,
    label: Option<MotionLabel>,
    d_trk: usize,
    max_tracks: Option<usize>,
) -> Result<(ConditionBundle, ConditionBundle, TrackSet), ConditionError> {
    let (h, w) = (first_frame.height, first_frame.width);
    let frames = camera.len();
    let mut tracks = TrackSet::empty(frames, h, w);
    let inside = |p: &[f64; 2]| p[0] >= 0.0 && p[1] >= 0.0 && p[0] < w as f64 && p[1] < h as f64;
    for (i, s) in strokes.iter().enumerate() {
        if s.positions.len() != frames {
            return Err(ConditionError::Shape(format!(
                "stroke {i} has {} positions, camera path has {frames} frames",
                s.positions.len()
            )));
        }
        if let Some(frame) = s.positions.iter().position(|p| !inside(p)) {
            return Err(ConditionError::StrokeOutside { index: i, frame });
        }
        let a = s.positions[0];
        let anchor = (a[0].floor() as usize, a[1].floor() as usize);
        let vis = vec![true; frames];
        match masks.iter().find(|m| m.pixels.contains(&anchor)) {
            Some(m) => {
                for &(x, y) in &m.pixels {
                    let c = [x as f64 + 0.5, y as f64 + 0.5];
                    let pos: Vec<[f64; 2]> = s
                        .positions
                        .iter()
                        .map(|p| [c[0] + p[0] - a[0], c[1] + p[1] - a[1]])
                        .collect();
                    let v: Vec<bool> = pos.iter().map(inside).collect();
                    tracks.push_track(&pos, &v, m.object_id, Role::Active);
                }
            }
            None => tracks.push_track(&s.positions, &vis, u32::MAX - i as u32, Role::Active),
        }
    }
    if let Some(cap) = max_tracks {
        if cap > 0 && tracks.len() > cap {
            let idx: Vec<usize> = (0..cap).map(|k| k * tracks.len() / cap).collect();
            tracks = tracks.subset(&idx);
        }
    }
    tracks.visible = occlusion_mask(&tracks, depth0);
    let map = rasterize(&tracks, d_trk)?;
    let canonical = ConditionBundle {
        first_frame: first_frame.clone(),
        depth0: depth0.clone(),
        path: CameraPath::identity(camera.intrinsics, frames),
        trajectory: Some(map),
        label,
    };
    let target = ConditionBundle {
        first_frame: first_frame.clone(),
        depth0: depth0.clone(),
        path: camera.clone(),
        trajectory: None,
        label,
    };
    Ok((canonical, target, tracks))
}

/// Which ground-truth tracks a regeneration condition keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionMotion {
    /// Active-object tracks only (forward reasoning).
    Active,
    /// Passive-object tracks only (inverse reasoning).
    Passive,
    All,
    /// No object motion.
    None,
}

/// Conditions for regenerating a training sample: the training track count
/// restricted to the chosen motion component, with the sample's camera path
/// and label.
pub fn regeneration_condition(
    sample: &Sample,
    d_trk: usize,
    motion: ConditionMotion,
    rng: &mut SeededRng,
) -> Result<(ConditionBundle, ConditionBundle, TrackSet), ConditionError> {
    let count = sample_track_count(sample.tracks.height, sample.tracks.width, rng);
    let sub = subsample(&sample.tracks, count, rng);
    let (active, passive) = decompose_roles(&sub);
    let tracks = match motion {
        ConditionMotion::Active => active,
        ConditionMotion::Passive => passive,
        ConditionMotion::All => sub,
        ConditionMotion::None => TrackSet::empty(sub.frames, sub.height, sub.width),
    };
    let first = sample.first_frame();
    let frames = sample.path.len();
    let canonical = ConditionBundle {
        first_frame: first.clone(),
        depth0: sample.depth0.clone(),
        path: CameraPath::identity(sample.path.intrinsics, frames),
        trajectory: Some(rasterize(&tracks, d_trk)?),
        label: Some(sample.label),
    };
    let target = ConditionBundle {
        first_frame: first,
        depth0: sample.depth0.clone(),
        path: sample.path.clone(),
        trajectory: None,
        label: Some(sample.label),
    };
    Ok((canonical, target, tracks))
}
