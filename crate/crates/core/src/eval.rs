//! Black-box controllability metrics.
//!
//! Objects and fiducials carry unique flat colors, so a color-mass detector
//! stands in for a learned tracker. Every metric reads only pixels, never
//! model internals, and aggregates with medians.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Clip, Image};
use crate::geom::{CameraIntrinsics, CameraPath, CameraPose};
use crate::synth::{Fiducial, Sample, BACKGROUND_GRAY, FIDUCIAL_COLORS, OBJECT_COLORS};
use crate::tracks::{Role, TrackSet};

/// Pixels whose color is further than this from the background→color line
/// are ignored.
const RESIDUAL_LIMIT: f32 = 0.15;
/// Minimum blend weight for a pixel to count toward a blob.
const MIN_WEIGHT: f32 = 0.1;
/// Minimum total blend weight (in pixels) of a detection.
pub const MIN_MASS: f64 = 1.0;
/// Pixels with at least this weight form the solid part of a blob.
const SOLID_WEIGHT: f32 = 0.5;
const CONTACT_DISTANCE_PX: f64 = 2.0;
/// Centroid shift (pixels) that counts as a passive object starting to move.
const ONSET_PX: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("metric undefined: {0}")]
    Undefined(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Weighted centroid in continuous pixel coordinates.
    pub centroid: [f64; 2],
    /// Sum of blend weights, in pixels.
    pub mass: f64,
    /// Whether any contributing pixel lies on the image border.
    pub touches_border: bool,
}

fn blend(pixel: &[f32], color: [f32; 3]) -> (f32, f32) {
    let b = BACKGROUND_GRAY;
    let d = [color[0] - b, color[1] - b, color[2] - b];
    let p = [pixel[0] - b, pixel[1] - b, pixel[2] - b];
    let dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    let a = ((p[0] * d[0] + p[1] * d[1] + p[2] * d[2]) / dd).clamp(0.0, 1.0);
    let r = [p[0] - a * d[0], p[1] - a * d[1], p[2] - a * d[2]];
    (a, (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt())
}

/// Blend weight of `color` in `pixel`, treating the pixel as a mix of the
/// color and the background gray. A pixel explained better by another
/// palette color belongs to that color.
pub fn color_weight(pixel: &[f32], color: [f32; 3]) -> f32 {
    let (a, res) = blend(pixel, color);
    if !(res < RESIDUAL_LIMIT && a > MIN_WEIGHT) {
        return 0.0;
    }
    let beaten = OBJECT_COLORS.iter().chain(FIDUCIAL_COLORS.iter()).any(|&other| {
        if other == color {
            return false;
        }
        let (oa, ores) = blend(pixel, other);
        oa > MIN_WEIGHT && ores < res
    });
    if beaten {
        0.0
    } else {
        a
    }
}

/// Color-mass detection over 8-connected components of matching pixels.
/// Components lighter than [`MIN_MASS`] are treated as noise and ignored;
/// `None` when nothing survives.
pub fn detect_color(img: &Image, color: [f32; 3]) -> Option<Detection> {
    let (h, w) = (img.height, img.width);
    let weights: Vec<f64> = (0..h * w)
        .map(|i| color_weight(img.pixel(i / w, i % w), color) as f64)
        .collect();
    let mut seen = vec![false; h * w];
    let (mut m, mut sx, mut sy) = (0.0f64, 0.0f64, 0.0f64);
    let mut border = false;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] || weights[start] <= 0.0 {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut cm, mut cx, mut cy) = (0.0f64, 0.0f64, 0.0f64);
        let mut cb = false;
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            let a = weights[i];
            cm += a;
            cx += a * (x as f64 + 0.5);
            cy += a * (y as f64 + 0.5);
            cb |= x == 0 || y == 0 || x + 1 == w || y + 1 == h;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && weights[j] > 0.0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if cm >= MIN_MASS {
            m += cm;
            sx += cx;
            sy += cy;
            border |= cb;
        }
    }
    (m >= MIN_MASS).then(|| Detection {
        centroid: [sx / m, sy / m],
        mass: m,
        touches_border: border,
    })
}

fn solid_pixels(img: &Image, color: [f32; 3]) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for y in 0..img.height {
        for x in 0..img.width {
            if color_weight(img.pixel(y, x), color) >= SOLID_WEIGHT {
                v.push((x, y));
            }
        }
    }
    v
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Per-frame mean position of the visible tracks of one object.
pub fn object_centroid_track(tracks: &TrackSet, object_id: u32) -> Vec<Option<[f64; 2]>> {
    (0..tracks.frames)
        .map(|u| {
            let (mut n, mut sx, mut sy) = (0usize, 0.0, 0.0);
            for i in 0..tracks.len() {
                if tracks.object_id[i] == object_id && tracks.is_visible(i, u) {
                    let p = tracks.position(i, u);
                    sx += p[0];
                    sy += p[1];
                    n += 1;
                }
            }
            (n > 0).then(|| [sx / n as f64, sy / n as f64])
        })
        .collect()
}

fn object_ids(tracks: &TrackSet) -> Vec<u32> {
    let mut ids = tracks.object_id.clone();
    ids.sort_unstable();
    ids.dedup();
    ids
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpeReport {
    pub median_px: f64,
    /// Object-frame steps that entered the median.
    pub steps: usize,
    /// Steps skipped because the object was not detected.
    pub undetected: usize,
}

/// Median end-point error between detected object centroids in `clip` and
/// the ground-truth centroid tracks. `colors[k]` is the albedo of object `k`.
pub fn epe(clip: &Clip, gt: &TrackSet, colors: &[[f32; 3]]) -> Result<EpeReport, EvalError> {
    let mut errors = Vec::new();
    let mut undetected = 0;
    for id in object_ids(gt) {
        let color = *colors
            .get(id as usize)
            .ok_or_else(|| EvalError::Undefined(format!("no color for object {id}")))?;
        let track = object_centroid_track(gt, id);
        for (u, g) in track.iter().enumerate().take(clip.frames) {
            let Some(g) = g else { continue };
            match detect_color(&clip.frame(u), color) {
                Some(d) => errors.push(((d.centroid[0] - g[0]).powi(2) + (d.centroid[1] - g[1]).powi(2)).sqrt()),
                None => undetected += 1,
            }
        }
    }
    let steps = errors.len();
    let median_px = median(&mut errors).ok_or_else(|| EvalError::Undefined("no detectable objects".into()))?;
    Ok(EpeReport {
        median_px,
        steps,
        undetected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraErrorReport {
    pub rotation_deg: f64,
    pub translation: f64,
    pub frames_used: usize,
}

fn normalized(intr: &CameraIntrinsics, p: [f64; 2]) -> Vector2<f64> {
    Vector2::new((p[0] - intr.cx) / intr.fx, (p[1] - intr.cy) / intr.fy)
}

fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

fn reprojection_residuals(
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    world: &[Vector3<f64>],
    pixels: &[[f64; 2]],
) -> DVector<f64> {
    let mut r = DVector::zeros(2 * world.len());
    for (i, (w, p)) in world.iter().zip(pixels).enumerate() {
        let c = pose.transform(w);
        r[2 * i] = intr.fx * c.x / c.z + intr.cx - p[0];
        r[2 * i + 1] = intr.fy * c.y / c.z + intr.cy - p[1];
    }
    r
}

fn perturb(pose: &CameraPose, d: &[f64]) -> CameraPose {
    let dr = Rotation3::new(Vector3::new(d[0], d[1], d[2]));
    CameraPose {
        rotation: dr.matrix() * pose.rotation,
        translation: pose.translation + Vector3::new(d[3], d[4], d[5]),
    }
}

/// Pose from four or more points on a common world plane `z = plane_z`:
/// homography by direct linear transform, decomposition, orthonormalization,
/// then Gauss–Newton on the reprojection error.
pub fn planar_pnp(
    intr: &CameraIntrinsics,
    world: &[Vector3<f64>],
    pixels: &[[f64; 2]],
    plane_z: f64,
) -> Option<CameraPose> {
    let n = world.len();
    if n < 4 || pixels.len() != n {
        return None;
    }
    // h33 = 1 parameterization; fine because the plane never passes through
    // the camera center.
    let mut a = DMatrix::zeros(2 * n, 8);
    let mut b = DVector::zeros(2 * n);
    for (i, (w, p)) in world.iter().zip(pixels).enumerate() {
        let q = normalized(intr, *p);
        let (x, y) = (w.x, w.y);
        a.row_mut(2 * i)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -q.x * x, -q.x * y]);
        a.row_mut(2 * i + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -q.y * x, -q.y * y]);
        b[2 * i] = q.x;
        b[2 * i + 1] = q.y;
    }
    let h = a.svd(true, true).solve(&b, 1e-12).ok()?;
    let hm = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    let (h1, h2, h3) = (hm.column(0), hm.column(1), hm.column(2));
    let mut lambda = 2.0 / (h1.norm() + h2.norm());
    if h3.z < 0.0 {
        lambda = -lambda;
    }
    let r1: Vector3<f64> = h1 * lambda;
    let r2: Vector3<f64> = h2 * lambda;
    let r3 = r1.cross(&r2);
    let r = orthonormalize(&Matrix3::from_columns(&[r1, r2, r3]));
    let t = h3 * lambda - r.column(2) * plane_z;
    let mut pose = CameraPose {
        rotation: r,
        translation: t,
    };
    for _ in 0..10 {
        let r0 = reprojection_residuals(intr, &pose, world, pixels);
        let mut j = DMatrix::zeros(2 * n, 6);
        let eps = 1e-7;
        for k in 0..6 {
            let mut d = [0.0; 6];
            d[k] = eps;
            let rp = reprojection_residuals(intr, &perturb(&pose, &d), world, pixels);
            d[k] = -eps;
            let rm = reprojection_residuals(intr, &perturb(&pose, &d), world, pixels);
            j.set_column(k, &((rp - rm) / (2.0 * eps)));
        }
        let jtj = j.transpose() * &j;
        let Some(step) = jtj.cholesky().map(|c| c.solve(&(-(j.transpose() * &r0)))) else {
            break;
        };
        let cand = perturb(&pose, step.as_slice());
        let r1 = reprojection_residuals(intr, &cand, world, pixels);
        if r1.norm() >= r0.norm() {
            break;
        }
        pose = cand;
        pose.rotation = orthonormalize(&pose.rotation);
    }
    Some(pose)
}

/// Detects the four fiducials in every frame, recovers the camera by PnP
/// and compares with `gt`. Frames with fewer than four clean detections
/// (including any detection clipped by the border) are skipped.
pub fn camera_error(
    clip: &Clip,
    gt: &CameraPath,
    fiducials: &[Fiducial],
) -> Result<CameraErrorReport, EvalError> {
    let mut rot = Vec::new();
    let mut trans = Vec::new();
    let plane_z = fiducials.first().map(|f| f.center[2]).unwrap_or(0.0);
    for u in 0..clip.frames.min(gt.len()) {
        let frame = clip.frame(u);
        let mut world = Vec::new();
        let mut pixels = Vec::new();
        for f in fiducials {
            if let Some(d) = detect_color(&frame, f.color) {
                if !d.touches_border {
                    world.push(Vector3::from(f.center));
                    pixels.push(d.centroid);
                }
            }
        }
        if world.len() < 4 {
            continue;
        }
        let Some(est) = planar_pnp(&gt.intrinsics, &world, &pixels, plane_z) else {
            continue;
        };
        rot.push(est.rotation_angle_deg(&gt.poses[u]));
        trans.push((est.translation - gt.poses[u].translation).norm());
    }
    if rot.len() < 3 {
        return Err(EvalError::Undefined(format!(
            "only {} frames with all fiducials detected",
            rot.len()
        )));
    }
    let frames_used = rot.len();
    Ok(CameraErrorReport {
        rotation_deg: median(&mut rot).unwrap(),
        translation: median(&mut trans).unwrap(),
        frames_used,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeMode {
    /// Only active motion was given; check the passive consequence.
    Forward,
    /// Only passive motion was given; check for a driving action.
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalityReport {
    pub mode: ProbeMode,
    pub passive_object: u32,
    pub active_object: u32,
    /// Generated passive centroid displacement, first to last detected frame.
    pub passive_displacement: [f64; 2],
    pub passive_magnitude: f64,
    /// Ground-truth passive displacement over the same frames.
    pub gt_passive_displacement: [f64; 2],
    pub gt_passive_magnitude: f64,
    /// Cosine between generated and ground-truth passive displacement;
    /// `None` when either is zero.
    pub passive_cosine: Option<f64>,
    pub active_magnitude: f64,
    /// First frame where the solid blobs come within 2 px of each other.
    pub contact_frame: Option<usize>,
    /// First frame where the passive centroid has moved by more than 0.5 px.
    pub passive_onset_frame: Option<usize>,
    pub contact_before_onset: bool,
}

fn displacement(track: &[Option<[f64; 2]>]) -> Option<(usize, usize, [f64; 2])> {
    let first = track.iter().position(|c| c.is_some())?;
    let last = track.iter().rposition(|c| c.is_some())?;
    let (a, b) = (track[first]?, track[last]?);
    Some((first, last, [b[0] - a[0], b[1] - a[1]]))
}

fn blobs_within(a: &[(usize, usize)], b: &[(usize, usize)], dist: f64) -> bool {
    let d2 = dist * dist;
    a.iter().any(|&(ax, ay)| {
        b.iter().any(|&(bx, by)| {
            let dx = ax as f64 - bx as f64;
            let dy = ay as f64 - by as f64;
            dx * dx + dy * dy <= d2
        })
    })
}

/// Forward/inverse causal reasoning probe. `clip` is a generated clip in the
/// canonical (identity camera) view of `sample`.
pub fn causality_probe(clip: &Clip, sample: &Sample, mode: ProbeMode) -> Result<CausalityReport, EvalError> {
    let objects = &sample.spec.objects;
    let active = objects
        .iter()
        .position(|o| o.role == Role::Active)
        .ok_or_else(|| EvalError::Undefined("sample has no active object".into()))?;
    let gt_tracks: Vec<(usize, Vec<Option<[f64; 2]>>)> = objects
        .iter()
        .enumerate()
        .filter(|(_, o)| o.role == Role::Passive)
        .map(|(k, _)| (k, object_centroid_track(&sample.tracks, k as u32)))
        .collect();
    // With several passive objects, probe the one that moves most.
    let (passive, gt_passive) = gt_tracks
        .into_iter()
        .max_by(|a, b| {
            let m = |t: &[Option<[f64; 2]>]| displacement(t).map(|d| d.2[0].hypot(d.2[1])).unwrap_or(0.0);
            m(&a.1).total_cmp(&m(&b.1))
        })
        .ok_or_else(|| EvalError::Undefined("sample has no passive object".into()))?;

    let frames: Vec<Image> = (0..clip.frames).map(|u| clip.frame(u)).collect();
    let detect = |k: usize| -> Vec<Option<[f64; 2]>> {
        frames
            .iter()
            .map(|f| detect_color(f, objects[k].color).map(|d| d.centroid))
            .collect()
    };
    let gen_passive = detect(passive);
    let gen_active = detect(active);
    let (pf, pl, pd) = displacement(&gen_passive)
        .ok_or_else(|| EvalError::Undefined("passive object not detected".into()))?;
    let (_, _, ad) = displacement(&gen_active)
        .ok_or_else(|| EvalError::Undefined("active object not detected".into()))?;

    let gt_d = match (gt_passive.get(pf).copied().flatten(), gt_passive.get(pl).copied().flatten()) {
        (Some(a), Some(b)) => [b[0] - a[0], b[1] - a[1]],
        _ => displacement(&gt_passive).map(|d| d.2).unwrap_or([0.0, 0.0]),
    };
    let pm = pd[0].hypot(pd[1]);
    let gm = gt_d[0].hypot(gt_d[1]);
    let passive_cosine = (pm > 0.0 && gm > 0.0).then(|| (pd[0] * gt_d[0] + pd[1] * gt_d[1]) / (pm * gm));

    let start = gen_passive[pf].unwrap();
    let passive_onset_frame = gen_passive.iter().enumerate().skip(pf + 1).find_map(|(u, c)| {
        c.filter(|c| (c[0] - start[0]).hypot(c[1] - start[1]) > ONSET_PX).map(|_| u)
    });
    let contact_frame = frames.iter().position(|f| {
        let a = solid_pixels(f, objects[active].color);
        let p = solid_pixels(f, objects[passive].color);
        blobs_within(&a, &p, CONTACT_DISTANCE_PX)
    });
    let contact_before_onset = matches!(
        (contact_frame, passive_onset_frame),
        (Some(c), Some(o)) if c <= o
    );
    Ok(CausalityReport {
        mode,
        passive_object: passive as u32,
        active_object: active as u32,
        passive_displacement: pd,
        passive_magnitude: pm,
        gt_passive_displacement: gt_d,
        gt_passive_magnitude: gm,
        passive_cosine,
        active_magnitude: ad[0].hypot(ad[1]),
        contact_frame,
        passive_onset_frame,
        contact_before_onset,
    })
}
