//! Procedural interaction worlds with exact ground truth.
//!
//! A scene is a textured background plane, four fiducial patches on that
//! plane, and a few flat-colored rectangles on fronto-parallel depth layers.
//! One object is scripted (the active object); the others only move once the
//! active object touches them. Both the canonical (static) view and the
//! target (moving camera) view are ray-cast from the same world state, so
//! depth, poses, tracks and visibility are all exact.

use nalgebra::{Rotation3, Unit, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Clip, Image};
use crate::geom::{project, unproject, CameraIntrinsics, CameraPath, CameraPose, DepthMap, GeomError};
use crate::rng::{derive_seed, seeded, SeededRng};
use crate::tracks::{Role, TrackSet};

/// Per-axis supersampling factor of the renderer.
const SUPERSAMPLE: usize = 4;
const PASSIVE_DAMPING: f64 = 0.9;
const MAX_ROTATION_PER_FRAME_DEG: f64 = 2.0;
const MAX_TRANSLATION_PER_FRAME: f64 = 0.02;
const CAMERA_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub const OBJECT_COLORS: [[f32; 3]; 4] = [
    [0.90, 0.15, 0.15],
    [0.15, 0.80, 0.15],
    [0.15, 0.25, 0.95],
    [0.95, 0.85, 0.10],
];

pub const FIDUCIAL_COLORS: [[f32; 3]; 4] = [
    [0.90, 0.10, 0.85],
    [0.10, 0.85, 0.90],
    [0.60, 0.95, 0.10],
    [0.50, 0.10, 0.95],
];

/// Neutral gray the background texture oscillates around.
pub const BACKGROUND_GRAY: f32 = 0.45;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("render failed: {0}")]
    Render(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScriptKind {
    None,
    Push,
    Pull,
    Collide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CameraKind {
    Static,
    Orbit,
    Pan,
    Zoom,
    Mixed,
}

/// Discrete stand-in for a caption describing the interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionLabel {
    None,
    Push,
    Pull,
    Collide,
}

impl MotionLabel {
    pub const VOCAB: usize = 4;

    pub fn index(self) -> usize {
        match self {
            MotionLabel::None => 0,
            MotionLabel::Push => 1,
            MotionLabel::Pull => 2,
            MotionLabel::Collide => 3,
        }
    }
}

impl From<ScriptKind> for MotionLabel {
    fn from(s: ScriptKind) -> Self {
        match s {
            ScriptKind::None => MotionLabel::None,
            ScriptKind::Push => MotionLabel::Push,
            ScriptKind::Pull => MotionLabel::Pull,
            ScriptKind::Collide => MotionLabel::Collide,
        }
    }
}

/// Which streams a sample supervises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupervisionMode {
    /// Both streams, distinct canonical and target clips.
    Paired,
    /// Static camera: the clip is duplicated into both streams.
    StaticDup,
    /// Only the target stream is supervised.
    SingleDynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    /// Half width and half height in world units.
    pub half_extent: [f64; 2],
    /// World `(x, y)` of the center at frame 0.
    pub start: [f64; 2],
    /// World `z` of the object's layer.
    pub depth: f64,
    pub color: [f32; 3],
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fiducial {
    pub center: [f64; 3],
    pub half_size: f64,
    pub color: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub intrinsics: CameraIntrinsics,
    pub background_depth: f64,
    pub texture_id: u32,
    pub objects: Vec<ObjectSpec>,
    pub fiducials: Vec<Fiducial>,
    pub script: ScriptKind,
    /// World displacement per frame of the active object.
    pub velocity: [f64; 2],
    pub camera: CameraKind,
    /// Normalized camera motion strength in `[0, 1]`.
    pub camera_magnitude: f64,
    pub mode: SupervisionMode,
}

impl SceneSpec {
    pub fn active_index(&self) -> Option<usize> {
        self.objects.iter().position(|o| o.role == Role::Active)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.intrinsics.validate()?;
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(SynthError::InvalidSpec("empty clip dimensions".into()));
        }
        if (self.intrinsics.width, self.intrinsics.height) != (self.width, self.height) {
            return Err(SynthError::InvalidSpec("intrinsics disagree with image size".into()));
        }
        let active = self.objects.iter().filter(|o| o.role == Role::Active).count();
        if self.script != ScriptKind::None && active != 1 {
            return Err(SynthError::InvalidSpec(format!(
                "scripted scene needs exactly one active object, found {active}"
            )));
        }
        for (i, a) in self.objects.iter().enumerate() {
            if !(a.depth > 0.0 && a.depth < self.background_depth) {
                return Err(SynthError::InvalidSpec(format!(
                    "object {i} depth {} not in front of the background",
                    a.depth
                )));
            }
            for b in &self.objects[i + 1..] {
                if a.depth == b.depth {
                    return Err(SynthError::InvalidSpec("object depths must be distinct".into()));
                }
            }
            let c = project(
                &self.intrinsics,
                &Vector3::new(a.start[0], a.start[1], a.depth),
            )?;
            if !self.intrinsics.contains(&c) {
                return Err(SynthError::InvalidSpec(format!("object {i} starts outside the view")));
            }
        }
        if !(0.0..=1.0).contains(&self.camera_magnitude) {
            return Err(SynthError::InvalidSpec("camera magnitude outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn rig(&self) -> CameraRig {
        let n = self.objects.len().max(1) as f64;
        let mut c = Vector3::zeros();
        for o in &self.objects {
            c += Vector3::new(o.start[0], o.start[1], o.depth);
        }
        if self.objects.is_empty() {
            c = Vector3::new(0.0, 0.0, self.background_depth * 0.5);
        } else {
            c /= n;
        }
        CameraRig {
            scene_depth: self.background_depth,
            centroid: [c.x, c.y, c.z],
        }
    }
}

/// Per-frame object centers in world `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldTrajectory {
    pub centers: Vec<Vec<[f64; 2]>>,
}

impl WorldTrajectory {
    pub fn frames(&self) -> usize {
        self.centers.len()
    }

    /// First frame at which object `o` has moved away from its start, if any.
    pub fn first_motion_frame(&self, o: usize) -> Option<usize> {
        let s = self.centers[0][o];
        self.centers
            .iter()
            .position(|c| c[o] != s)
    }
}

fn overlap(a: [f64; 2], ha: [f64; 2], b: [f64; 2], hb: [f64; 2]) -> Option<[f64; 2]> {
    let px = ha[0] + hb[0] - (a[0] - b[0]).abs();
    let py = ha[1] + hb[1] - (a[1] - b[1]).abs();
    (px > 0.0 && py > 0.0).then_some([px, py])
}

/// Runs the scripted dynamics.
///
/// The active object moves by `velocity` each frame. Overlap with a resting
/// object is contact: push and collide shove the other object out along the
/// axis of least penetration and hand it the active velocity's component on
/// that axis (collide then stops the active object); pull snaps the active
/// object back, reverses it, and drags the contacted object along. Contacted
/// objects coast with their velocity damped by 0.9 per frame.
pub fn simulate(spec: &SceneSpec) -> WorldTrajectory {
    let n = spec.objects.len();
    let mut pos: Vec<[f64; 2]> = spec.objects.iter().map(|o| o.start).collect();
    let half: Vec<[f64; 2]> = spec.objects.iter().map(|o| o.half_extent).collect();
    let mut vel = vec![[0.0f64; 2]; n];
    let active = match spec.script {
        ScriptKind::None => None,
        _ => spec.active_index(),
    };
    let mut active_vel = spec.velocity;
    let mut pulled = false;
    let mut centers = vec![pos.clone()];
    for _ in 1..spec.frames {
        for o in 0..n {
            if Some(o) == active {
                continue;
            }
            pos[o][0] += vel[o][0];
            pos[o][1] += vel[o][1];
            vel[o][0] *= PASSIVE_DAMPING;
            vel[o][1] *= PASSIVE_DAMPING;
        }
        if let Some(a) = active {
            pos[a][0] += active_vel[0];
            pos[a][1] += active_vel[1];
            for o in 0..n {
                if o == a || (spec.script == ScriptKind::Pull && pulled) {
                    continue;
                }
                let Some(pen) = overlap(pos[a], half[a], pos[o], half[o]) else {
                    continue;
                };
                let axis = if pen[0] <= pen[1] { 0 } else { 1 };
                let sign = if pos[o][axis] >= pos[a][axis] { 1.0 } else { -1.0 };
                let mut normal_vel = [0.0; 2];
                normal_vel[axis] = active_vel[axis];
                match spec.script {
                    ScriptKind::Push | ScriptKind::Collide => {
                        pos[o][axis] += sign * pen[axis];
                        vel[o] = normal_vel;
                        if spec.script == ScriptKind::Collide {
                            active_vel = [0.0, 0.0];
                        }
                    }
                    ScriptKind::Pull => {
                        pos[a][axis] -= sign * pen[axis];
                        active_vel = [-active_vel[0], -active_vel[1]];
                        vel[o] = [-normal_vel[0], -normal_vel[1]];
                        pulled = true;
                    }
                    ScriptKind::None => {}
                }
            }
        }
        centers.push(pos.clone());
    }
    WorldTrajectory { centers }
}

/// Reference geometry for camera programs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    /// Depth of the background plane; per-frame translation bounds are
    /// expressed as a fraction of it.
    pub scene_depth: f64,
    /// Point orbits revolve around.
    pub centroid: [f64; 3],
}

/// Smooth camera path starting at the identity.
///
/// Per-frame rotation stays within 2° and per-frame translation within 2% of
/// the scene depth; `magnitude ∈ [0, 1]` scales the motion between none and
/// those bounds. The generator picks only directions.
pub fn sample_camera_program(
    kind: CameraKind,
    magnitude: f64,
    frames: usize,
    rig: &CameraRig,
    rng: &mut SeededRng,
) -> Vec<CameraPose> {
    let m = magnitude.clamp(0.0, 1.0);
    let step = MAX_TRANSLATION_PER_FRAME * rig.scene_depth;
    let denom = frames.saturating_sub(1).max(1) as f64;
    let centroid = Vector3::from(rig.centroid);
    let orbit_step = |mag: f64| -> f64 {
        let r = centroid.norm().max(1e-9);
        let chord_bound = 2.0 * ((step / (2.0 * r)).min(1.0)).asin();
        mag * MAX_ROTATION_PER_FRAME_DEG.to_radians().min(chord_bound)
    };
    let orbit_axis = |rng: &mut SeededRng| -> (Unit<Vector3<f64>>, f64) {
        let axis = if rng.random::<bool>() {
            Vector3::y_axis()
        } else {
            Vector3::x_axis()
        };
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        (axis, sign)
    };
    match kind {
        CameraKind::Static => vec![CameraPose::identity(); frames],
        CameraKind::Pan => {
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let dir = Vector3::new(phi.cos(), phi.sin(), 0.0);
            (0..frames)
                .map(|k| {
                    let c = dir * (m * step * k as f64);
                    CameraPose::from_center(&Rotation3::identity(), &c)
                })
                .collect()
        }
        CameraKind::Zoom => {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let delta = sign * m * step * denom;
            (0..frames)
                .map(|k| CameraPose {
                    rotation: nalgebra::Matrix3::identity(),
                    translation: Vector3::new(0.0, 0.0, -(delta * (k as f64 / denom))),
                })
                .collect()
        }
        CameraKind::Orbit | CameraKind::Mixed => {
            let (axis, sign) = orbit_axis(rng);
            let orbit_mag = if kind == CameraKind::Mixed { 0.5 * m } else { m };
            let dtheta = sign * orbit_step(orbit_mag);
            let zoom = if kind == CameraKind::Mixed {
                0.5 * m * step * if rng.random::<bool>() { 1.0 } else { -1.0 }
            } else {
                0.0
            };
            (0..frames)
                .map(|k| {
                    let q = Rotation3::from_axis_angle(&axis, dtheta * k as f64);
                    let mut c = centroid + q * (-centroid);
                    c += q * Vector3::new(0.0, 0.0, zoom * k as f64);
                    CameraPose::from_center(&q, &c)
                })
                .collect()
        }
    }
}

fn texture(x: f64, y: f64, id: u32) -> f32 {
    let a = 1.7 + 0.37 * (id % 5) as f64;
    let b = 2.9 + 0.23 * (id % 7) as f64;
    let phase = 0.61 * id as f64;
    let v = 0.04 * (std::f64::consts::TAU * (0.8 * x + 0.6 * y) / a + phase).sin()
        + 0.025 * (std::f64::consts::TAU * (0.3 * x - 0.95 * y) / b).cos();
    BACKGROUND_GRAY + v as f32
}

/// What a camera ray hits first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hit {
    Object(usize),
    Fiducial(usize),
    Background,
    Nothing,
}

struct Tracer<'a> {
    spec: &'a SceneSpec,
    centers: &'a [[f64; 2]],
    order: Vec<usize>,
}

impl<'a> Tracer<'a> {
    fn new(spec: &'a SceneSpec, centers: &'a [[f64; 2]]) -> Self {
        // Painter order: nearest layer first, so the first hit wins.
        let mut order: Vec<usize> = (0..spec.objects.len()).collect();
        order.sort_by(|&a, &b| spec.objects[a].depth.total_cmp(&spec.objects[b].depth));
        Self { spec, centers, order }
    }

    /// Casts a world-space ray; returns the hit, its color and its parameter
    /// along a direction whose camera-frame z component is 1 (camera depth).
    fn trace(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> (Hit, [f32; 3], f64) {
        if dir.z.abs() > 1e-12 {
            for &o in &self.order {
                let obj = &self.spec.objects[o];
                let s = (obj.depth - origin.z) / dir.z;
                if s <= 0.0 {
                    continue;
                }
                let p = origin + dir * s;
                let c = self.centers[o];
                if (p.x - c[0]).abs() < obj.half_extent[0] && (p.y - c[1]).abs() < obj.half_extent[1] {
                    return (Hit::Object(o), obj.color, s);
                }
            }
            let s = (self.spec.background_depth - origin.z) / dir.z;
            if s > 0.0 {
                let p = origin + dir * s;
                for (k, f) in self.spec.fiducials.iter().enumerate() {
                    if (p.x - f.center[0]).abs() < f.half_size && (p.y - f.center[1]).abs() < f.half_size {
                        return (Hit::Fiducial(k), f.color, s);
                    }
                }
                let g = texture(p.x, p.y, self.spec.texture_id);
                return (Hit::Background, [g, g, g], s);
            }
        }
        (Hit::Nothing, [0.0; 3], f64::INFINITY)
    }

    /// True when another object blocks the segment from `eye` to `point`.
    fn occluded(&self, eye: &Vector3<f64>, point: &Vector3<f64>, owner: usize) -> bool {
        let d = point - eye;
        if d.z.abs() < 1e-12 {
            return false;
        }
        for (o, obj) in self.spec.objects.iter().enumerate() {
            if o == owner {
                continue;
            }
            let s = (obj.depth - eye.z) / d.z;
            if s <= 0.0 || s >= 1.0 {
                continue;
            }
            let q = eye + d * s;
            let c = self.centers[o];
            if (q.x - c[0]).abs() < obj.half_extent[0] && (q.y - c[1]).abs() < obj.half_extent[1] {
                return true;
            }
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub clip: Clip,
    /// Per-frame z-buffer depth at pixel centers.
    pub depth: Vec<DepthMap>,
    /// Per-frame first hit at each pixel center.
    pub hits: Vec<Vec<Hit>>,
}

/// Ray-casts every frame with `4×4` supersampling. Depth and hit buffers are
/// taken at pixel centers.
pub fn render(
    spec: &SceneSpec,
    world: &WorldTrajectory,
    poses: &[CameraPose],
) -> Result<RenderOutput, SynthError> {
    let (h, w) = (spec.height, spec.width);
    let k = &spec.intrinsics;
    if poses.len() != world.frames() {
        return Err(SynthError::Render(format!(
            "{} poses for {} frames",
            poses.len(),
            world.frames()
        )));
    }
    let mut frames = Vec::with_capacity(poses.len());
    let mut depth = Vec::with_capacity(poses.len());
    let mut hits = Vec::with_capacity(poses.len());
    for (u, pose) in poses.iter().enumerate() {
        pose.validate()?;
        let centers = &world.centers[u];
        for (o, obj) in spec.objects.iter().enumerate() {
            let c = pose.transform(&Vector3::new(centers[o][0], centers[o][1], obj.depth));
            if c.z <= 0.0 {
                return Err(SynthError::Render(format!(
                    "object {o} behind the camera at frame {u}"
                )));
            }
        }
        let tracer = Tracer::new(spec, centers);
        let eye = pose.center();
        let r_t = pose.rotation.transpose();
        let ray = |px: f64, py: f64| -> Vector3<f64> {
            r_t * Vector3::new((px - k.cx) / k.fx, (py - k.cy) / k.fy, 1.0)
        };
        let mut img = Image::zeros(h, w, 3);
        let mut dm = DepthMap::constant(h, w, 1.0);
        let mut hb = vec![Hit::Nothing; h * w];
        let inv = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                        let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                        let (_, col, _) = tracer.trace(&eye, &ray(px, py));
                        for c in 0..3 {
                            acc[c] += col[c];
                        }
                    }
                }
                let p = img.pixel_mut(y, x);
                for c in 0..3 {
                    p[c] = acc[c] * inv;
                }
                let (hit, _, s) = tracer.trace(&eye, &ray(x as f64 + 0.5, y as f64 + 0.5));
                let i = y * w + x;
                hb[i] = hit;
                if s.is_finite() {
                    dm.values[i] = s;
                } else {
                    dm.valid[i] = false;
                }
            }
        }
        frames.push(img);
        depth.push(dm);
        hits.push(hb);
    }
    Ok(RenderOutput {
        clip: Clip::from_frames(&frames),
        depth,
        hits,
    })
}

/// Object surface point tracked through the clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub object: usize,
    /// Offset from the object's center in world units.
    pub local: [f64; 2],
}

impl SurfacePoint {
    pub fn world(&self, spec: &SceneSpec, world: &WorldTrajectory, frame: usize) -> Vector3<f64> {
        let c = world.centers[frame][self.object];
        Vector3::new(
            c[0] + self.local[0],
            c[1] + self.local[1],
            spec.objects[self.object].depth,
        )
    }
}

/// One surface point per object pixel visible at frame 0 of the canonical
/// view, through that pixel's center.
pub fn dense_surface_points(
    spec: &SceneSpec,
    world: &WorldTrajectory,
    canonical_hits: &[Hit],
) -> Vec<SurfacePoint> {
    let (h, w) = (spec.height, spec.width);
    let mut pts = Vec::new();
    for o in 0..spec.objects.len() {
        let z = spec.objects[o].depth;
        let c = world.centers[0][o];
        for y in 0..h {
            for x in 0..w {
                if canonical_hits[y * w + x] != Hit::Object(o) {
                    continue;
                }
                let p = unproject(
                    &spec.intrinsics,
                    &Vector2::new(x as f64 + 0.5, y as f64 + 0.5),
                    z,
                )
                .expect("layer depth is positive");
                pts.push(SurfacePoint {
                    object: o,
                    local: [p.x - c[0], p.y - c[1]],
                });
            }
        }
    }
    pts
}

/// Projects surface points through a camera path. Returns the track set
/// (visibility is exact: in front of the camera, inside the image, and not
/// blocked by another object) together with per-step camera depths.
pub fn project_surface_points(
    spec: &SceneSpec,
    world: &WorldTrajectory,
    poses: &[CameraPose],
    points: &[SurfacePoint],
) -> (TrackSet, Vec<f64>) {
    let t = world.frames();
    let mut tracks = TrackSet::empty(t, spec.height, spec.width);
    let mut depths = Vec::with_capacity(points.len() * t);
    let tracers: Vec<Tracer> = (0..t).map(|u| Tracer::new(spec, &world.centers[u])).collect();
    for sp in points {
        let mut pos = Vec::with_capacity(t);
        let mut vis = Vec::with_capacity(t);
        for u in 0..t {
            let pw = sp.world(spec, world, u);
            let pc = poses[u].transform(&pw);
            depths.push(pc.z);
            match project(&spec.intrinsics, &pc) {
                Ok(p) => {
                    let seen = spec.intrinsics.contains(&p)
                        && !tracers[u].occluded(&poses[u].center(), &pw, sp.object);
                    pos.push([p.x, p.y]);
                    vis.push(seen);
                }
                Err(_) => {
                    pos.push([f64::NAN, f64::NAN]);
                    vis.push(false);
                }
            }
        }
        tracks.push_track(&pos, &vis, sp.object as u32, spec.objects[sp.object].role);
    }
    (tracks, depths)
}

/// One training unit: a paired canonical/target clip with exact annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub spec: SceneSpec,
    /// Identity-camera render.
    pub canonical: Clip,
    /// Render under `path`.
    pub target: Clip,
    /// Frame-0 depth (shared by both views).
    pub depth0: DepthMap,
    /// Camera path of the target view.
    pub path: CameraPath,
    /// Ground-truth tracks in the canonical view.
    pub tracks: TrackSet,
    /// The same surface points seen from the target view.
    pub target_tracks: TrackSet,
    /// Target-view camera depth for every track step, `N×T`.
    pub target_depths: Vec<f64>,
    pub label: MotionLabel,
    pub mode: SupervisionMode,
}

impl Sample {
    pub fn first_frame(&self) -> Image {
        self.canonical.frame(0)
    }

    pub fn object_colors(&self) -> Vec<[f32; 3]> {
        self.spec.objects.iter().map(|o| o.color).collect()
    }
}

/// Renders both views of a scene and attaches ground truth.
pub fn make_sample(spec: &SceneSpec) -> Result<Sample, SynthError> {
    spec.validate()?;
    let world = simulate(spec);
    let t = spec.frames;
    let identity = vec![CameraPose::identity(); t];
    let mut rng = seeded(derive_seed(spec.seed, CAMERA_SEED_SALT));
    let poses = sample_camera_program(spec.camera, spec.camera_magnitude, t, &spec.rig(), &mut rng);
    let canonical = render(spec, &world, &identity)?;
    let target = if spec.camera == CameraKind::Static {
        canonical.clone()
    } else {
        render(spec, &world, &poses)?
    };
    let points = dense_surface_points(spec, &world, &canonical.hits[0]);
    let (tracks, _) = project_surface_points(spec, &world, &identity, &points);
    let (target_tracks, target_depths) = project_surface_points(spec, &world, &poses, &points);
    Ok(Sample {
        spec: spec.clone(),
        depth0: canonical.depth[0].clone(),
        canonical: canonical.clip,
        target: target.clip,
        path: CameraPath {
            intrinsics: spec.intrinsics,
            poses,
        },
        tracks,
        target_tracks,
        target_depths,
        label: spec.script.into(),
        mode: spec.mode,
    })
}

/// Knobs for random scene generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Focal length as a fraction of the image width.
    pub focal_ratio: f64,
    pub background_depth: f64,
    /// Fractions of paired / static-duplicate / single-dynamic samples.
    pub mix_paired: f64,
    pub mix_static_dup: f64,
    pub mix_single_dynamic: f64,
    /// Relative weights of push / pull / collide / none scripts.
    pub script_weights: [f64; 4],
    /// Camera magnitude drawn uniformly from this range.
    pub camera_magnitude: [f64; 2],
    /// Active object speed in pixels per frame at its depth.
    pub speed_px: [f64; 2],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            frames: 8,
            focal_ratio: 0.625,
            background_depth: 8.0,
            mix_paired: 0.5,
            mix_static_dup: 0.25,
            mix_single_dynamic: 0.25,
            script_weights: [0.5, 0.15, 0.2, 0.15],
            camera_magnitude: [0.3, 0.7],
            speed_px: [1.4, 2.0],
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.height < 16 || self.width < 16 {
            return Err("height/width must be at least 16".into());
        }
        if self.frames < 2 {
            return Err("frames must be at least 2".into());
        }
        let mix = [self.mix_paired, self.mix_static_dup, self.mix_single_dynamic];
        if mix.iter().any(|m| !(0.0..=1.0).contains(m)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err("mix_* must be probabilities summing to 1".into());
        }
        if self.script_weights.iter().any(|w| *w < 0.0) || self.script_weights.iter().sum::<f64>() <= 0.0 {
            return Err("script_weights must be non-negative with positive sum".into());
        }
        if !(self.camera_magnitude[0] <= self.camera_magnitude[1])
            || self.camera_magnitude[0] < 0.0
            || self.camera_magnitude[1] > 1.0
        {
            return Err("camera_magnitude must be an ordered range inside [0, 1]".into());
        }
        if !(self.focal_ratio > 0.0 && self.background_depth > 5.0) {
            return Err("focal_ratio must be positive and background_depth above 5".into());
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let f = self.focal_ratio * self.width as f64;
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
            width: self.width,
            height: self.height,
        }
    }

    /// Four fiducial squares on the background plane, placed so that at
    /// frame 0 their edges fall on pixel boundaries near the image corners.
    pub fn fiducials(&self) -> Vec<Fiducial> {
        let k = self.intrinsics();
        let z = self.background_depth;
        let sx = self.width as f64 / 32.0;
        let sy = self.height as f64 / 32.0;
        let half_px = (2.0 * sx).round().max(1.0);
        let near = (5.0 * sx).round();
        let far = self.width as f64 - near;
        let near_y = (5.0 * sy).round();
        let far_y = self.height as f64 - near_y;
        [(near, near_y), (far, near_y), (near, far_y), (far, far_y)]
            .iter()
            .zip(FIDUCIAL_COLORS)
            .map(|(&(u, v), color)| {
                let p = unproject(&k, &Vector2::new(u, v), z).expect("positive depth");
                Fiducial {
                    center: [p.x, p.y, p.z],
                    half_size: half_px * z / k.fx,
                    color,
                }
            })
            .collect()
    }
}

fn pick_weighted(weights: &[f64], rng: &mut SeededRng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return i;
        }
        r -= w;
    }
    weights.len() - 1
}

/// Draws a two-object interaction scene: an active object approaching a
/// passive one along a random axis so that contact happens early in the clip.
pub fn random_scene(cfg: &SceneConfig, seed: u64) -> SceneSpec {
    let mut rng = seeded(seed);
    let k = cfg.intrinsics();
    let script = [ScriptKind::Push, ScriptKind::Pull, ScriptKind::Collide, ScriptKind::None]
        [pick_weighted(&cfg.script_weights, &mut rng)];
    let mode = [
        SupervisionMode::Paired,
        SupervisionMode::StaticDup,
        SupervisionMode::SingleDynamic,
    ][pick_weighted(&[cfg.mix_paired, cfg.mix_static_dup, cfg.mix_single_dynamic], &mut rng)];
    let camera = if mode == SupervisionMode::StaticDup {
        CameraKind::Static
    } else {
        [CameraKind::Orbit, CameraKind::Pan, CameraKind::Zoom, CameraKind::Mixed]
            [rng.random_range(0..4)]
    };
    let camera_magnitude = if camera == CameraKind::Static {
        0.0
    } else {
        rng.random_range(cfg.camera_magnitude[0]..=cfg.camera_magnitude[1])
    };

    let px_to_world = |px: f64, z: f64| px * z / k.fx;
    let active_depth = 0.45 * cfg.background_depth + rng.random_range(0.0..0.05) * cfg.background_depth;
    let passive_depth = 0.55 * cfg.background_depth + rng.random_range(0.0..0.05) * cfg.background_depth;
    let scale = cfg.width as f64 / 32.0;
    // Half sizes are whole or half pixels so that, once the centers are
    // snapped below, frame-0 edges fall on pixel boundaries.
    let half_px = |choices: [f64; 2], rng: &mut SeededRng| -> f64 {
        (choices[rng.random_range(0..2usize)] * scale * 2.0).round().max(2.0) / 2.0
    };
    let half_a_px = half_px([2.0, 2.5], &mut rng);
    let half_p_px = half_px([2.5, 3.0], &mut rng);
    let half_a = px_to_world(half_a_px, active_depth);
    let half_p = px_to_world(half_p_px, passive_depth);
    let speed_px = rng.random_range(cfg.speed_px[0]..=cfg.speed_px[1]) * scale;
    let speed = px_to_world(speed_px, active_depth);

    // Axis of approach and direction along it.
    let axis = rng.random_range(0..2usize);
    let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let contact_frame = rng.random_range(1.5..2.5);
    let gap = speed * contact_frame;
    // Center the interaction slightly against the motion so both objects
    // stay inside the central band.
    let back_px = match script {
        ScriptKind::Push => 4.0,
        ScriptKind::Collide => 3.0,
        ScriptKind::Pull => -1.0,
        ScriptKind::None => 0.0,
    } * scale;
    let mut passive = [0.0f64; 2];
    passive[axis] = -dir * px_to_world(back_px, passive_depth);
    passive[1 - axis] = px_to_world(rng.random_range(-1.0..1.0) * scale, passive_depth);
    let mut active = passive;
    active[axis] = passive[axis] - dir * (half_a + half_p + gap);
    active[1 - axis] = passive[1 - axis] + rng.random_range(-0.3..0.3) * half_p.min(half_a);
    let mut velocity = [0.0; 2];
    velocity[axis] = dir * speed;
    let snap = |c: [f64; 2], h: f64, z: f64| -> [f64; 2] {
        let u = (k.fx * c[0] / z + k.cx - h).round() + h;
        let v = (k.fy * c[1] / z + k.cy - h).round() + h;
        [(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy]
    };
    let active = snap(active, half_a_px, active_depth);
    let mut passive = snap(passive, half_p_px, passive_depth);
    // Snapping may shrink the gap; contact must not happen on the first step.
    while dir * (passive[axis] - active[axis]) - (half_a + half_p) < 1.25 * speed {
        passive[axis] += dir * px_to_world(1.0, passive_depth);
    }

    let c_a = rng.random_range(0..OBJECT_COLORS.len());
    let c_p = (c_a + 1 + rng.random_range(0..OBJECT_COLORS.len() - 1)) % OBJECT_COLORS.len();
    let objects = vec![
        ObjectSpec {
            half_extent: [half_a, half_a],
            start: active,
            depth: active_depth,
            color: OBJECT_COLORS[c_a],
            role: Role::Active,
        },
        ObjectSpec {
            half_extent: [half_p, half_p],
            start: passive,
            depth: passive_depth,
            color: OBJECT_COLORS[c_p],
            role: Role::Passive,
        },
    ];
    SceneSpec {
        seed,
        height: cfg.height,
        width: cfg.width,
        frames: cfg.frames,
        intrinsics: k,
        background_depth: cfg.background_depth,
        texture_id: rng.random_range(0..1000),
        objects,
        fiducials: cfg.fiducials(),
        script,
        velocity,
        camera,
        camera_magnitude,
        mode,
    }
}

/// Generates `count` samples with per-sample seeds `seed ⊕ index`.
pub fn generate_dataset(cfg: &SceneConfig, count: usize, seed: u64) -> Result<Vec<Sample>, SynthError> {
    (0..count)
        .map(|i| make_sample(&random_scene(cfg, derive_seed(seed, i as u64))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::canonicalize_track;

    fn scene(script: ScriptKind, camera: CameraKind, seed: u64) -> SceneSpec {
        let cfg = SceneConfig::default();
        let mut s = random_scene(&cfg, seed);
        s.script = script;
        if script == ScriptKind::None {
            s.velocity = [0.0; 2];
        } else if s.velocity == [0.0; 2] {
            s.velocity = [0.3, 0.0];
        }
        s.camera = camera;
        s.camera_magnitude = if camera == CameraKind::Static { 0.0 } else { 0.6 };
        s.mode = if camera == CameraKind::Static {
            SupervisionMode::StaticDup
        } else {
            SupervisionMode::Paired
        };
        s
    }

    #[test]
    fn script_none_is_static() {
        let s = scene(ScriptKind::None, CameraKind::Static, 4);
        let w = simulate(&s);
        assert!(w.centers.iter().all(|c| *c == w.centers[0]));
    }

    #[test]
    fn push_contact_then_monotone() {
        for seed in 0..30 {
            let mut s = random_scene(&SceneConfig::default(), seed);
            s.script = ScriptKind::Push;
            let a = s.active_index().unwrap();
            let p = 1 - a;
            let axis = if s.velocity[0] != 0.0 { 0 } else { 1 };
            let dir = s.velocity[axis].signum();
            let w = simulate(&s);
            let k = w.first_motion_frame(p).expect("passive never moved");
            // Replay the contact test: no overlap strictly before contact.
            for u in 0..k {
                assert!(overlap(w.centers[u][a], s.objects[a].half_extent, w.centers[u][p], s.objects[p].half_extent).is_none());
            }
            let start = w.centers[0][p][axis];
            let mut prev = 0.0;
            for u in k..s.frames {
                let d = dir * (w.centers[u][p][axis] - start);
                assert!(d > prev, "seed {seed} frame {u}: {d} <= {prev}");
                prev = d;
            }
        }
    }

    #[test]
    fn passive_never_faster_than_active_at_contact() {
        for script in [ScriptKind::Push, ScriptKind::Collide, ScriptKind::Pull] {
            for seed in 0..20 {
                let mut s = random_scene(&SceneConfig::default(), seed);
                s.script = script;
                let a = s.active_index().unwrap();
                let speed = (s.velocity[0].powi(2) + s.velocity[1].powi(2)).sqrt();
                let w = simulate(&s);
                for u in 1..s.frames {
                    let c = w.centers[u][1 - a];
                    let b = w.centers[u - 1][1 - a];
                    let step = ((c[0] - b[0]).powi(2) + (c[1] - b[1]).powi(2)).sqrt();
                    assert!(step <= speed + 1e-12, "{script:?} seed {seed}: {step} > {speed}");
                }
            }
        }
    }

    #[test]
    fn causal_ordering_of_first_motion() {
        for script in [ScriptKind::Push, ScriptKind::Collide, ScriptKind::Pull] {
            for seed in 0..20 {
                let mut s = random_scene(&SceneConfig::default(), seed);
                s.script = script;
                let a = s.active_index().unwrap();
                let w = simulate(&s);
                let fa = w.first_motion_frame(a).unwrap();
                let fp = w.first_motion_frame(1 - a).expect("passive never moved");
                assert!(fp > fa, "{script:?} seed {seed}");
            }
        }
    }

    #[test]
    fn static_program_is_identity() {
        let rig = CameraRig { scene_depth: 8.0, centroid: [0.0, 0.0, 4.0] };
        let poses = sample_camera_program(CameraKind::Static, 0.5, 6, &rig, &mut seeded(1));
        assert!(poses.iter().all(|p| *p == CameraPose::identity()));
    }

    #[test]
    fn zoom_final_translation_exact() {
        let rig = CameraRig { scene_depth: 8.0, centroid: [0.0, 0.0, 4.0] };
        let t = 8;
        for seed in 0..8 {
            let poses = sample_camera_program(CameraKind::Zoom, 0.75, t, &rig, &mut seeded(seed));
            let last = poses[t - 1].translation;
            let delta = -last.z;
            assert_eq!(delta.abs(), 0.75 * 0.02 * 8.0 * 7.0);
            assert_eq!(last, Vector3::new(0.0, 0.0, -delta));
        }
    }

    #[test]
    fn orbit_keeps_distance_to_centroid() {
        let rig = CameraRig { scene_depth: 8.0, centroid: [0.3, -0.2, 4.0] };
        let c = Vector3::from(rig.centroid);
        for seed in 0..8 {
            let poses = sample_camera_program(CameraKind::Orbit, 1.0, 8, &rig, &mut seeded(seed));
            let r0 = (poses[0].center() - c).norm();
            for p in &poses {
                assert!(((p.center() - c).norm() - r0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn programs_respect_step_bounds() {
        let rig = CameraRig { scene_depth: 8.0, centroid: [0.0, 0.0, 4.0] };
        for kind in [CameraKind::Orbit, CameraKind::Pan, CameraKind::Zoom, CameraKind::Mixed] {
            for seed in 0..6 {
                let poses = sample_camera_program(kind, 1.0, 8, &rig, &mut seeded(seed));
                assert_eq!(poses[0], CameraPose::identity());
                for w in poses.windows(2) {
                    assert!(w[0].rotation_angle_deg(&w[1]) <= 2.0 + 1e-9);
                    assert!((w[0].center() - w[1].center()).norm() <= 0.02 * 8.0 + 1e-9, "{kind:?}");
                }
            }
        }
    }

    #[test]
    fn static_scene_identity_frames() {
        let s = scene(ScriptKind::None, CameraKind::Static, 2);
        let w = simulate(&s);
        let out = render(&s, &w, &vec![CameraPose::identity(); s.frames]).unwrap();
        for u in 1..s.frames {
            assert_eq!(out.clip.frame_slice(u), out.clip.frame_slice(0));
        }
    }

    #[test]
    fn object_pixel_depth_is_layer_depth() {
        let s = scene(ScriptKind::Push, CameraKind::Static, 3);
        let w = simulate(&s);
        let out = render(&s, &w, &vec![CameraPose::identity(); s.frames]).unwrap();
        let mut seen = 0;
        for (i, hit) in out.hits[0].iter().enumerate() {
            if let Hit::Object(o) = hit {
                assert_eq!(out.depth[0].values[i], s.objects[*o].depth);
                seen += 1;
            }
        }
        assert!(seen > 10);
    }

    #[test]
    fn render_rejects_object_behind_camera() {
        let s = scene(ScriptKind::None, CameraKind::Static, 3);
        let w = simulate(&s);
        let back = CameraPose {
            rotation: nalgebra::Matrix3::identity(),
            translation: Vector3::new(0.0, 0.0, -20.0),
        };
        assert!(matches!(
            render(&s, &w, &vec![back; s.frames]),
            Err(SynthError::Render(_))
        ));
    }

    /// Background-only scene for the zoom magnification check.
    fn background_only() -> SceneSpec {
        let mut s = scene(ScriptKind::None, CameraKind::Static, 9);
        s.objects.clear();
        s.fiducials.clear();
        s
    }

    #[test]
    fn zoom_magnifies_background_by_pinhole_factor() {
        let s = background_only();
        let t = s.frames;
        let w = simulate(&s);
        let delta = 1.0;
        let last = CameraPose {
            rotation: nalgebra::Matrix3::identity(),
            translation: Vector3::new(0.0, 0.0, -delta),
        };
        let mut poses = vec![CameraPose::identity(); t];
        poses[t - 1] = last;
        let out = render(&s, &w, &poses).unwrap();
        let scale = s.background_depth / (s.background_depth - delta);
        let k = &s.intrinsics;
        // Resample frame 0 magnified about the principal point; the peak of
        // the cross-correlation against the zoomed frame must sit at 0 shift.
        let f0 = out.clip.frame(0);
        let f1 = out.clip.frame(t - 1);
        let sample0 = |x: f64, y: f64| -> f64 {
            let xi = (x - 0.5).round().clamp(0.0, (s.width - 1) as f64) as usize;
            let yi = (y - 0.5).round().clamp(0.0, (s.height - 1) as f64) as usize;
            f0.pixel(yi, xi)[0] as f64
        };
        let mut best = (f64::NEG_INFINITY, 0i32, 0i32);
        for dy in -3i32..=3 {
            for dx in -3i32..=3 {
                let mut acc = 0.0;
                for y in 6..26 {
                    for x in 6..26 {
                        let u = x as f64 + 0.5 + dx as f64;
                        let v = y as f64 + 0.5 + dy as f64;
                        let src_x = k.cx + (u - k.cx) / scale;
                        let src_y = k.cy + (v - k.cy) / scale;
                        let a = sample0(src_x, src_y) - BACKGROUND_GRAY as f64;
                        let b = f1.pixel(y, x)[0] as f64 - BACKGROUND_GRAY as f64;
                        acc += a * b;
                    }
                }
                if acc > best.0 {
                    best = (acc, dx, dy);
                }
            }
        }
        assert!(best.1.abs() <= 1 && best.2.abs() <= 1, "peak at {:?}", (best.1, best.2));
    }

    #[test]
    fn static_camera_duplicates_clip() {
        let s = scene(ScriptKind::Push, CameraKind::Static, 5);
        let sample = make_sample(&s).unwrap();
        assert_eq!(sample.canonical, sample.target);
        assert_eq!(sample.mode, SupervisionMode::StaticDup);
    }

    #[test]
    fn moving_camera_static_scene_tracks() {
        let s = scene(ScriptKind::None, CameraKind::Pan, 6);
        let sample = make_sample(&s).unwrap();
        let mut target_motion: f64 = 0.0;
        for i in 0..sample.tracks.len() {
            let p0 = sample.tracks.position(i, 0);
            let q0 = sample.target_tracks.position(i, 0);
            for u in 0..s.frames {
                let p = sample.tracks.position(i, u);
                assert_eq!(p, p0);
                if sample.target_tracks.is_visible(i, u) {
                    let q = sample.target_tracks.position(i, u);
                    target_motion = target_motion.max((q[0] - q0[0]).abs() + (q[1] - q0[1]).abs());
                }
            }
        }
        assert!(target_motion > 0.5);
    }

    #[test]
    fn canonicalized_target_tracks_match_canonical() {
        for seed in 0..6 {
            let s = scene(ScriptKind::Push, CameraKind::Mixed, seed);
            let sample = make_sample(&s).unwrap();
            let t = s.frames;
            for i in 0..sample.tracks.len() {
                let c = canonicalize_track(
                    &sample.target_tracks.track_vectors(i),
                    sample.target_tracks.track_visibility(i),
                    &sample.target_depths[i * t..(i + 1) * t],
                    &sample.path,
                )
                .unwrap();
                for u in 0..t {
                    if c.visible[u] {
                        let g = sample.tracks.position(i, u);
                        assert!((c.positions[u].x - g[0]).abs() < 1e-6);
                        assert!((c.positions[u].y - g[1]).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn sample_is_deterministic() {
        let cfg = SceneConfig::default();
        let a = make_sample(&random_scene(&cfg, 17)).unwrap();
        let b = make_sample(&random_scene(&cfg, 17)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tracks_satisfy_invariants() {
        let cfg = SceneConfig::default();
        for seed in 0..10 {
            let sample = make_sample(&random_scene(&cfg, seed)).unwrap();
            sample.tracks.validate().unwrap();
            assert!(sample.tracks.len() > 20);
            let roles = sample.tracks.roles_present();
            assert_eq!(roles, vec![Role::Active, Role::Passive]);
        }
    }

    #[test]
    fn fiducials_align_with_pixels_at_frame_zero() {
        let cfg = SceneConfig::default();
        let k = cfg.intrinsics();
        for f in cfg.fiducials() {
            let lo = project(&k, &Vector3::new(f.center[0] - f.half_size, f.center[1] - f.half_size, f.center[2])).unwrap();
            assert!((lo.x - lo.x.round()).abs() < 1e-9 && (lo.y - lo.y.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn palette_colors_are_separated() {
        let all: Vec<[f32; 3]> = OBJECT_COLORS.iter().chain(FIDUCIAL_COLORS.iter()).copied().collect();
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                let d: f32 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f32>().sqrt();
                assert!(d > 0.35, "{a:?} vs {b:?}");
            }
        }
    }
}
