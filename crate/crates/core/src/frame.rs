//! Dense image and clip containers.
//!
//! Both are channel-last, row-major `f32` buffers: an [`Image`] is `H×W×C`,
//! a [`Clip`] is `T×H×W×C`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = self.index(y, x);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f32] {
        let i = self.index(y, x);
        let c = self.channels;
        &mut self.data[i..i + c]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Clip {
    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
            data: vec![0.0; frames * height * width * channels],
        }
    }

    /// Builds a clip from equally sized frames.
    ///
    /// Panics if the frames disagree in shape.
    pub fn from_frames(frames: &[Image]) -> Self {
        let first = &frames[0];
        let mut data = Vec::with_capacity(frames.len() * first.data.len());
        for f in frames {
            assert_eq!(
                (f.height, f.width, f.channels),
                (first.height, first.width, first.channels),
                "frame shape mismatch"
            );
            data.extend_from_slice(&f.data);
        }
        Self {
            frames: frames.len(),
            height: first.height,
            width: first.width,
            channels: first.channels,
            data,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn frame(&self, t: usize) -> Image {
        let n = self.frame_len();
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data[t * n..(t + 1) * n].to_vec(),
        }
    }

    pub fn frame_slice(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn pixel(&self, t: usize, y: usize, x: usize) -> &[f32] {
        let i = ((t * self.height + y) * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    /// Shifts every frame by whole pixels, filling uncovered pixels with `fill`.
    pub fn shifted(&self, dx: isize, dy: isize, fill: &[f32]) -> Self {
        let mut out = self.clone();
        for t in 0..self.frames {
            for y in 0..self.height {
                for x in 0..self.width {
                    let sx = x as isize - dx;
                    let sy = y as isize - dy;
                    let i = ((t * self.height + y) * self.width + x) * self.channels;
                    if sx >= 0 && sy >= 0 && (sx as usize) < self.width && (sy as usize) < self.height
                    {
                        let src = self.pixel(t, sy as usize, sx as usize);
                        out.data[i..i + self.channels].copy_from_slice(src);
                    } else {
                        out.data[i..i + self.channels].copy_from_slice(fill);
                    }
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
