//! Invertible space-time-to-depth codec.
//!
//! A clip `T×H×W×C` becomes a latent grid `T̂×Ĥ×Ŵ×d` with `T̂ = T/p_t`,
//! `Ĥ = H/p_s`, `Ŵ = W/p_s` and `d = C·p_t·p_s²` by a pure index
//! permutation, so decoding is exact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use dualcam_core::Clip;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("clip {shape:?} not divisible by patch (p_t = {p_t}, p_s = {p_s})")]
    Indivisible { shape: [usize; 4], p_t: usize, p_s: usize },
    #[error("latent channels {dim} not divisible by p_t·p_s² = {patch}")]
    BadChannels { dim: usize, patch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentKind {
    Video,
    Camera,
    Trajectory,
}

/// `T̂×Ĥ×Ŵ×d` tensor, row-major; tokens are ordered time, row, column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGrid {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub kind: LatentKind,
    pub data: Vec<f32>,
}

impl LatentGrid {
    pub fn zeros(frames: usize, height: usize, width: usize, dim: usize, kind: LatentKind) -> Self {
        Self {
            frames,
            height,
            width,
            dim,
            kind,
            data: vec![0.0; frames * height * width * dim],
        }
    }

    pub fn tokens(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Maps pixel intensities in `[0, 1]` to the model's `[-1, 1]` latent range.
pub fn to_model_range(v: &mut [f32]) {
    v.iter_mut().for_each(|x| *x = 2.0 * *x - 1.0);
}

/// Inverse of [`to_model_range`].
pub fn from_model_range(v: &mut [f32]) {
    v.iter_mut().for_each(|x| *x = 0.5 * (*x + 1.0));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codec {
    pub p_t: usize,
    pub p_s: usize,
}

impl Codec {
    pub fn new(p_t: usize, p_s: usize) -> Self {
        Self { p_t, p_s }
    }

    fn check(&self, clip: &Clip) -> Result<(), CodecError> {
        let [t, h, w, _] = clip.shape();
        if self.p_t == 0 || self.p_s == 0 || t % self.p_t != 0 || h % self.p_s != 0 || w % self.p_s != 0 {
            return Err(CodecError::Indivisible {
                shape: clip.shape(),
                p_t: self.p_t,
                p_s: self.p_s,
            });
        }
        Ok(())
    }

    /// Channel of `(dt, dy, dx, c)` inside a latent cell.
    #[inline]
    fn channel(&self, dt: usize, dy: usize, dx: usize, c: usize, channels: usize) -> usize {
        ((dt * self.p_s + dy) * self.p_s + dx) * channels + c
    }

    pub fn encode(&self, clip: &Clip, kind: LatentKind) -> Result<LatentGrid, CodecError> {
        self.check(clip)?;
        let [t, h, w, c] = clip.shape();
        let (ps, pt) = (self.p_s, self.p_t);
        let mut g = LatentGrid::zeros(t / pt, h / ps, w / ps, c * pt * ps * ps, kind);
        for u in 0..t {
            for y in 0..h {
                for x in 0..w {
                    let cell = ((u / pt) * g.height + y / ps) * g.width + x / ps;
                    let src = clip.pixel(u, y, x);
                    for (ch, v) in src.iter().enumerate() {
                        let k = self.channel(u % pt, y % ps, x % ps, ch, c);
                        g.data[cell * g.dim + k] = *v;
                    }
                }
            }
        }
        Ok(g)
    }

    pub fn decode(&self, g: &LatentGrid) -> Result<Clip, CodecError> {
        let patch = self.p_t * self.p_s * self.p_s;
        if patch == 0 || g.dim % patch != 0 {
            return Err(CodecError::BadChannels { dim: g.dim, patch });
        }
        let c = g.dim / patch;
        let (ps, pt) = (self.p_s, self.p_t);
        let mut clip = Clip::zeros(g.frames * pt, g.height * ps, g.width * ps, c);
        let (h, w) = (clip.height, clip.width);
        for u in 0..clip.frames {
            for y in 0..h {
                for x in 0..w {
                    let cell = ((u / pt) * g.height + y / ps) * g.width + x / ps;
                    let dst = ((u * h + y) * w + x) * c;
                    for ch in 0..c {
                        let k = self.channel(u % pt, y % ps, x % ps, ch, c);
                        clip.data[dst + ch] = g.data[cell * g.dim + k];
                    }
                }
            }
        }
        Ok(clip)
    }
}
