//! Network hyperparameters.

use serde::{Deserialize, Serialize};

use dualcam_core::synth::MotionLabel;

/// Which parameters the optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trainable {
    All,
    /// Trajectory encoder, condition projections and self-attention only.
    EncodersAndAttention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Temporal patch size; 1, 2 or 4.
    pub p_t: usize,
    /// Spatial patch size.
    pub p_s: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Trajectory-map embedding width.
    pub d_trk: usize,
    /// Width of the trajectory encoder's intermediate layer.
    pub traj_hidden: usize,
    pub label_vocab: usize,
    /// Joint attention across the two streams.
    pub cross_view: bool,
    pub trainable: Trainable,
    pub rope_base: f64,
    /// Assumed per-channel standard deviation of clean latents, used by the
    /// output preconditioning.
    pub sigma_data: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            height: 32,
            width: 32,
            p_t: 4,
            p_s: 4,
            hidden: 128,
            blocks: 2,
            heads: 4,
            mlp_ratio: 2,
            d_trk: 16,
            traj_hidden: 64,
            label_vocab: MotionLabel::VOCAB,
            cross_view: true,
            trainable: Trainable::All,
            rope_base: 100.0,
            sigma_data: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !matches!(self.p_t, 1 | 2 | 4) {
            return Err(format!("p_t must be 1, 2 or 4, got {}", self.p_t));
        }
        if self.p_s == 0 || self.frames % self.p_t != 0 {
            return Err(format!("p_t = {} must divide frames = {}", self.p_t, self.frames));
        }
        if self.height % self.p_s != 0 || self.width % self.p_s != 0 {
            return Err(format!(
                "p_s = {} must divide height = {} and width = {}",
                self.p_s, self.height, self.width
            ));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(format!("hidden = {} not divisible by heads = {}", self.hidden, self.heads));
        }
        let hd = self.hidden / self.heads;
        if hd % 2 != 0 || hd < 6 {
            return Err(format!("head width {hd} must be even and at least 6"));
        }
        if self.d_trk == 0 || self.d_trk % 2 != 0 {
            return Err(format!("d_trk must be even and positive, got {}", self.d_trk));
        }
        if self.blocks == 0 || self.mlp_ratio == 0 || self.traj_hidden == 0 {
            return Err("blocks, mlp_ratio and traj_hidden must be positive".into());
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return Err(format!("sigma_data must be positive, got {}", self.sigma_data));
        }
        Ok(())
    }

    pub fn latent_frames(&self) -> usize {
        self.frames / self.p_t
    }

    pub fn latent_height(&self) -> usize {
        self.height / self.p_s
    }

    pub fn latent_width(&self) -> usize {
        self.width / self.p_s
    }

    /// Tokens per stream.
    pub fn tokens(&self) -> usize {
        self.latent_frames() * self.latent_height() * self.latent_width()
    }

    /// Spatial cells per latent frame.
    pub fn cells(&self) -> usize {
        self.latent_height() * self.latent_width()
    }

    /// Video latent width `3·p_t·p_s²`.
    pub fn latent_dim(&self) -> usize {
        3 * self.p_t * self.p_s * self.p_s
    }

    /// Camera latent width: warped RGB plus validity.
    pub fn camera_dim(&self) -> usize {
        4 * self.p_t * self.p_s * self.p_s
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Temporal strides of the two trajectory convolutions.
    pub fn traj_strides(&self) -> [usize; 2] {
        match self.p_t {
            1 => [1, 1],
            2 => [2, 1],
            _ => [2, 2],
        }
    }
}
