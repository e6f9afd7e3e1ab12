//! Pinhole camera geometry.
//!
//! Conventions used throughout the workspace:
//!
//! * Pixel `(i, j)` covers `[i, i+1) × [j, j+1)`; its center sits at
//!   `(i + 0.5, j + 0.5)`. A continuous position maps to its pixel by `floor`.
//! * Poses are world-to-camera: `p_cam = R · p_world + t`. Frame 0 of every
//!   path is the identity, so the first camera defines the world frame.
//! * All geometry is `f64`.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::Image;
use crate::tracks::TrackSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("invalid depth {0}")]
    InvalidDepth(f64),
    #[error("point behind camera (z = {0})")]
    BehindCamera(f64),
    #[error("warp produced no valid target pixel")]
    EmptyWarp,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeomError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeomError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64)
            || !(self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(GeomError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }

    /// Pixel index containing a continuous position, if inside the image.
    pub fn pixel_of(&self, p: &Vector2<f64>) -> Option<(usize, usize)> {
        if self.contains(p) {
            Some((p.x.floor() as usize, p.y.floor() as usize))
        } else {
            None
        }
    }
}

/// Lifts a pixel to a camera-frame point at the given depth.
pub fn unproject(
    intr: &CameraIntrinsics,
    pixel: &Vector2<f64>,
    depth: f64,
) -> Result<Vector3<f64>, GeomError> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(GeomError::InvalidDepth(depth));
    }
    Ok(Vector3::new(
        depth * (pixel.x - intr.cx) / intr.fx,
        depth * (pixel.y - intr.cy) / intr.fy,
        depth,
    ))
}

/// Projects a camera-frame point onto the image plane. The result may lie
/// outside the image.
pub fn project(intr: &CameraIntrinsics, point: &Vector3<f64>) -> Result<Vector2<f64>, GeomError> {
    if !(point.z > 0.0) {
        return Err(GeomError::BehindCamera(point.z));
    }
    Ok(Vector2::new(
        intr.fx * point.x / point.z + intr.cx,
        intr.fy * point.y / point.z + intr.cy,
    ))
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for CameraPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeomError> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Pose of a camera centered at `center` whose camera-to-world rotation is
    /// `orientation`.
    pub fn from_center(orientation: &Rotation3<f64>, center: &Vector3<f64>) -> Self {
        let rotation = orientation.matrix().transpose();
        Self {
            rotation,
            translation: -(rotation * center),
        }
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if !(ortho <= 1e-6) {
            return Err(GeomError::InvalidPose(format!(
                "rotation not orthonormal (max deviation {ortho:e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > 1e-6 {
            return Err(GeomError::InvalidPose(format!("rotation determinant {det}")));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(GeomError::InvalidPose("non-finite translation".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn transform(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_world + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &CameraPose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Geodesic angle between two rotations, in degrees.
    pub fn rotation_angle_deg(&self, other: &CameraPose) -> f64 {
        let r = self.rotation.transpose() * other.rotation;
        let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn from_row_major(v: &[f64]) -> Self {
        Self {
            rotation: Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            translation: Vector3::new(v[3], v[7], v[11]),
        }
    }
}

/// Per-frame poses sharing one set of intrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPath {
    pub intrinsics: CameraIntrinsics,
    pub poses: Vec<CameraPose>,
}

impl CameraPath {
    pub fn identity(intrinsics: CameraIntrinsics, frames: usize) -> Self {
        Self {
            intrinsics,
            poses: vec![CameraPose::identity(); frames],
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.poses.iter().all(|p| *p == CameraPose::identity())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn constant(height: usize, width: usize, depth: f64) -> Self {
        Self {
            height,
            width,
            values: vec![depth; height * width],
            valid: vec![true; height * width],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.values[i])
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        for (v, ok) in self.values.iter().zip(&self.valid) {
            if *ok && !(v.is_finite() && *v > 0.0) {
                return Err(GeomError::InvalidDepth(*v));
            }
        }
        Ok(())
    }

    /// Bilinear depth at a continuous position, interpolating between pixel
    /// centers. Invalid neighbours are dropped and the remaining weights
    /// renormalized; `None` when no neighbour is valid.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x.is_finite() && y.is_finite()) {
            return None;
        }
        let gx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let gy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = gx.floor() as usize;
        let y0 = gy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = gx - x0 as f64;
        let fy = gy - y0 as f64;
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ];
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (px, py, w) in taps {
            if let Some(d) = self.at(px, py) {
                acc += w * d;
                wsum += w;
            }
        }
        if wsum > 0.0 {
            Some(acc / wsum)
        } else {
            // All weight sat on invalid taps; fall back to any valid neighbour.
            taps.iter().find_map(|&(px, py, _)| self.at(px, py))
        }
    }
}

/// Result of reprojecting one track into the frame-0 image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalTrack {
    pub positions: Vec<Vector2<f64>>,
    pub visible: Vec<bool>,
}

/// Reprojects a track observed under a moving camera into the frame-0 image
/// plane: `π(K, C₀·C_u⁻¹·π⁻¹(K, τ_u, D_u))`.
///
/// Invisible steps pass through unchanged. Steps whose depth is unusable or
/// whose reprojection lands behind the frame-0 camera are marked invisible.
pub fn canonicalize_track(
    track: &[Vector2<f64>],
    visible: &[bool],
    depths: &[f64],
    path: &CameraPath,
) -> Result<CanonicalTrack, GeomError> {
    let n = track.len();
    for (what, len) in [
        ("visibility", visible.len()),
        ("depths", depths.len()),
        ("camera path", path.len()),
    ] {
        if len != n {
            return Err(GeomError::LengthMismatch {
                what,
                left: n,
                right: len,
            });
        }
    }
    let intr = &path.intrinsics;
    let first = &path.poses[0];
    let mut positions = Vec::with_capacity(n);
    let mut vis = Vec::with_capacity(n);
    for u in 0..n {
        if !visible[u] {
            positions.push(track[u]);
            vis.push(false);
            continue;
        }
        let lifted = match unproject(intr, &track[u], depths[u]) {
            Ok(p) => p,
            Err(_) => {
                positions.push(track[u]);
                vis.push(false);
                continue;
            }
        };
        let world = path.poses[u].inverse().transform(&lifted);
        match project(intr, &first.transform(&world)) {
            Ok(p) => {
                positions.push(p);
                vis.push(true);
            }
            Err(_) => {
                positions.push(track[u]);
                vis.push(false);
            }
        }
    }
    Ok(CanonicalTrack {
        positions,
        visible: vis,
    })
}

/// Forward-splats a first frame into a new viewpoint.
///
/// Returns the warped RGB image (unhit pixels zero) and its validity mask.
/// Collisions keep the sample nearest to the target camera; exact ties keep
/// the earlier source pixel in row-major order.
pub fn warp_first_frame(
    image: &Image,
    depth0: &DepthMap,
    intr: &CameraIntrinsics,
    target_pose: &CameraPose,
) -> Result<(Image, Vec<bool>), GeomError> {
    let (h, w) = (image.height, image.width);
    let mut out = Image::zeros(h, w, image.channels);
    let mut zbuf = vec![f64::INFINITY; h * w];
    let mut valid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let Some(d) = depth0.at(x, y) else { continue };
            let src = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let Ok(p) = unproject(intr, &src, d) else { continue };
            let q = target_pose.transform(&p);
            let Ok(uv) = project(intr, &q) else { continue };
            let Some((tx, ty)) = intr.pixel_of(&uv) else { continue };
            let ti = ty * w + tx;
            if q.z < zbuf[ti] {
                zbuf[ti] = q.z;
                valid[ti] = true;
                out.pixel_mut(ty, tx).copy_from_slice(image.pixel(y, x));
            }
        }
    }
    if !valid.iter().any(|&v| v) {
        return Err(GeomError::EmptyWarp);
    }
    Ok((out, valid))
}

/// Depth-ordered visibility for tracks drawn on the first frame.
///
/// Every visible step is rasterized to its pixel; where steps of different
/// objects meet in one pixel at one frame, only the object whose track has the
/// smallest first-frame depth survives (ties: lower object id). Returns the
/// updated `N×T` visibility flags.
pub fn occlusion_mask(tracks: &TrackSet, depth0: &DepthMap) -> Vec<bool> {
    let n = tracks.len();
    let t = tracks.frames;
    let mut visible = tracks.visible.clone();
    let keys: Vec<(f64, u32)> = (0..n)
        .map(|i| {
            let p0 = tracks.position(i, 0);
            let d = depth0.sample_bilinear(p0[0], p0[1]).unwrap_or(f64::INFINITY);
            (d, tracks.object_id[i])
        })
        .collect();
    let (h, w) = (tracks.height, tracks.width);
    let mut owner: Vec<Option<(f64, u32)>> = vec![None; h * w];
    let mut touched = Vec::new();
    for u in 0..t {
        for i in 0..n {
            if !tracks.is_visible(i, u) {
                continue;
            }
            let Some(pix) = tracks.pixel(i, u) else { continue };
            let cell = pix.1 * w + pix.0;
            let key = keys[i];
            match owner[cell] {
                None => {
                    owner[cell] = Some(key);
                    touched.push(cell);
                }
                Some(cur) => {
                    if key.0 < cur.0 || (key.0 == cur.0 && key.1 < cur.1) {
                        owner[cell] = Some(key);
                    }
                }
            }
        }
        for i in 0..n {
            if !tracks.is_visible(i, u) {
                continue;
            }
            let Some(pix) = tracks.pixel(i, u) else { continue };
            let cell = pix.1 * w + pix.0;
            if let Some(win) = owner[cell] {
                if win.1 != tracks.object_id[i] {
                    visible[i * t + u] = false;
                }
            }
        }
        for cell in touched.drain(..) {
            owner[cell] = None;
        }
    }
    visible
}
