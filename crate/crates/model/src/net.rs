//! Dual-stream diffusion transformer.
//!
//! Canonical and target tokens share spatial rotary positions; temporal
//! positions are `0..T̂` for the canonical stream and `T̂..2T̂` for the
//! target stream. Each block adds zero-initialized projections of the
//! camera latent and the encoded trajectory map before adaLN-Zero attention
//! and MLP sublayers. The output is preconditioned as
//! `c_skip(t)·z_t + c_out(t)·F`, where `F` includes time-gated linear paths
//! from the noisy latent and the camera latent.

use candle_core::{DType, Device, Result, Tensor, D};

use dualcam_core::rng::seeded;
use dualcam_core::synth::MotionLabel;

use crate::config::{ModelConfig, Trainable};
use crate::params::{Init, ParamStore};

const TIME_FEATURES: usize = 64;
const NORM_EPS: f64 = 1e-6;

/// Host-side inputs for one batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamInputs {
    /// `N×d` noisy latent.
    pub z: Vec<f32>,
    /// `N×d_cam` camera latent.
    pub camera: Vec<f32>,
    /// `T×Ĥ×Ŵ×d_trk` pooled trajectory map.
    pub trajectory: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemInputs {
    pub canonical: StreamInputs,
    pub target: StreamInputs,
    pub t: f64,
    /// `None` selects the learned null label.
    pub label: Option<MotionLabel>,
}

/// Device tensors for a batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub z_can: Tensor,
    pub z_tar: Tensor,
    pub cam_can: Tensor,
    pub cam_tar: Tensor,
    pub trk_can: Tensor,
    pub trk_tar: Tensor,
    pub t: Vec<f64>,
    pub labels: Vec<u32>,
}

impl Batch {
    pub fn new(cfg: &ModelConfig, dtype: DType, items: &[ItemInputs]) -> Result<Self> {
        let b = items.len();
        let n = cfg.tokens();
        let dev = Device::Cpu;
        let stack = |f: &dyn Fn(&ItemInputs) -> &[f32], shape: &[usize]| -> Result<Tensor> {
            let mut v = Vec::with_capacity(shape.iter().product());
            for it in items {
                let s = f(it);
                if s.len() * b != shape.iter().product::<usize>() {
                    return Err(candle_core::Error::Msg(format!(
                        "input length {} does not match {:?}",
                        s.len(),
                        &shape[1..]
                    )));
                }
                v.extend_from_slice(s);
            }
            Tensor::from_vec(v, shape, &dev)?.to_dtype(dtype)
        };
        let zs = [b, n, cfg.latent_dim()];
        let cs = [b, n, cfg.camera_dim()];
        let ts = [b, cfg.frames, cfg.cells(), cfg.d_trk];
        Ok(Self {
            size: b,
            z_can: stack(&|i| &i.canonical.z, &zs)?,
            z_tar: stack(&|i| &i.target.z, &zs)?,
            cam_can: stack(&|i| &i.canonical.camera, &cs)?,
            cam_tar: stack(&|i| &i.target.camera, &cs)?,
            trk_can: stack(&|i| &i.canonical.trajectory, &ts)?,
            trk_tar: stack(&|i| &i.target.trajectory, &ts)?,
            t: items.iter().map(|i| i.t).collect(),
            labels: items
                .iter()
                .map(|i| i.label.map_or(cfg.label_vocab, |l| l.index()) as u32)
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Add the camera and trajectory projections. Off gives the bare backbone.
    pub inject: bool,
    pub cross_view: bool,
}

struct Linear {
    w: Tensor,
    b: Option<Tensor>,
}

impl Linear {
    fn new(ps: &mut ParamStore, rng: &mut dualcam_core::rng::SeededRng, name: &str, din: usize, dout: usize, bias: bool, zero: bool) -> Result<Self> {
        let init = if zero { Init::Zeros } else { Init::Normal((1.0 / din as f64).sqrt()) };
        let w = ps.add(&format!("{name}.w"), &[din, dout], init, rng)?;
        let b = if bias {
            Some(ps.add(&format!("{name}.b"), &[dout], Init::Zeros, rng)?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let din = *dims.last().expect("rank ≥ 1");
        let rows = x.elem_count() / din;
        let mut y = x.reshape((rows, din))?.matmul(&self.w)?;
        if let Some(b) = &self.b {
            y = y.broadcast_add(b)?;
        }
        let mut out = dims;
        *out.last_mut().expect("rank ≥ 1") = self.w.dim(1)?;
        y.reshape(out)
    }
}

struct Block {
    cam: Linear,
    trk: Linear,
    ada: Linear,
    qkv: Linear,
    out: Linear,
    fc1: Linear,
    fc2: Linear,
}

pub struct DualStreamNet {
    cfg: ModelConfig,
    params: ParamStore,
    traj_gain: Tensor,
    traj_conv1: Linear,
    traj_conv2: Linear,
    embed_in: Linear,
    time1: Linear,
    time2: Linear,
    label_table: Tensor,
    blocks: Vec<Block>,
    head_ada: Linear,
    head_out: Linear,
    head_skip: Linear,
    head_cam: Linear,
    head_gain: Linear,
    rope_cos: Tensor,
    rope_sin: Tensor,
}

fn layer_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    xc.broadcast_div(&(var + NORM_EPS)?.sqrt()?)
}

fn rms_norm(x: &Tensor) -> Result<Tensor> {
    let ms = x.sqr()?.mean_keepdim(D::Minus1)?;
    x.broadcast_div(&(ms + NORM_EPS)?.sqrt()?)
}

fn softmax(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    e.broadcast_div(&e.sum_keepdim(D::Minus1)?)
}

/// `x·(1 + scale) + shift` with `[B,1,D]` modulation.
fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    x.broadcast_mul(&(scale + 1.0)?)?.broadcast_add(shift)
}

fn rotate_half(x: &Tensor) -> Result<Tensor> {
    let half = x.dim(D::Minus1)? / 2;
    let a = x.narrow(D::Minus1, 0, half)?;
    let b = x.narrow(D::Minus1, half, half)?;
    Tensor::cat(&[&b.neg()?, &a], D::Minus1)
}

/// Temporal positions of the joint token sequence.
pub fn token_positions(cfg: &ModelConfig) -> Vec<[usize; 3]> {
    let (tt, hh, ww) = (cfg.latent_frames(), cfg.latent_height(), cfg.latent_width());
    let mut out = Vec::with_capacity(2 * cfg.tokens());
    for stream in 0..2 {
        for t in 0..tt {
            for y in 0..hh {
                for x in 0..ww {
                    out.push([stream * tt + t, y, x]);
                }
            }
        }
    }
    out
}

fn rope_tables(cfg: &ModelConfig, dtype: DType) -> Result<(Tensor, Tensor)> {
    let hd = cfg.head_dim();
    let half = hd / 2;
    let g_sp = half / 3;
    let groups = [half - 2 * g_sp, g_sp, g_sp];
    let pos = token_positions(cfg);
    let mut cos = Vec::with_capacity(pos.len() * hd);
    let mut sin = Vec::with_capacity(pos.len() * hd);
    for p in &pos {
        let mut angles = Vec::with_capacity(half);
        for (axis, &g) in groups.iter().enumerate() {
            for k in 0..g {
                let freq = cfg.rope_base.powf(-(k as f64) / g as f64);
                angles.push(p[axis] as f64 * freq);
            }
        }
        for _ in 0..2 {
            cos.extend(angles.iter().map(|a| a.cos()));
            sin.extend(angles.iter().map(|a| a.sin()));
        }
    }
    let shape = (pos.len(), hd);
    Ok((
        Tensor::from_vec(cos, shape, &Device::Cpu)?.to_dtype(dtype)?,
        Tensor::from_vec(sin, shape, &Device::Cpu)?.to_dtype(dtype)?,
    ))
}

fn time_features(t: &[f64], dtype: DType) -> Result<Tensor> {
    let half = TIME_FEATURES / 2;
    let mut v = Vec::with_capacity(t.len() * TIME_FEATURES);
    for &ti in t {
        let s = ti * 1000.0;
        for k in 0..half {
            v.push((s * (-(10000f64.ln()) * k as f64 / half as f64).exp()).cos());
        }
        for k in 0..half {
            v.push((s * (-(10000f64.ln()) * k as f64 / half as f64).exp()).sin());
        }
    }
    Tensor::from_vec(v, (t.len(), TIME_FEATURES), &Device::Cpu)?.to_dtype(dtype)
}

impl DualStreamNet {
    /// Builds a freshly initialized network.
    pub fn new(cfg: &ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        cfg.validate().map_err(candle_core::Error::Msg)?;
        let mut rng = seeded(seed);
        let rng = &mut rng;
        let mut ps = ParamStore::new(dtype);
        let p = &mut ps;
        let (d, dc, hid) = (cfg.latent_dim(), cfg.camera_dim(), cfg.hidden);
        let traj_gain = p.add("traj.norm.gain", &[cfg.d_trk], Init::Ones, rng)?;
        let traj_conv1 = Linear::new(p, rng, "traj.conv1", 3 * cfg.d_trk, cfg.traj_hidden, true, false)?;
        let traj_conv2 = Linear::new(p, rng, "traj.conv2", 3 * cfg.traj_hidden, d, true, false)?;
        let embed_in = Linear::new(p, rng, "embed.in", d, hid, true, false)?;
        let time1 = Linear::new(p, rng, "embed.time1", TIME_FEATURES, hid, true, false)?;
        let time2 = Linear::new(p, rng, "embed.time2", hid, hid, true, false)?;
        let label_table = p.add(
            "embed.label",
            &[cfg.label_vocab + 1, hid],
            Init::Normal((1.0 / hid as f64).sqrt()),
            rng,
        )?;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for i in 0..cfg.blocks {
            let n = |s: &str| format!("blocks.{i}.{s}");
            blocks.push(Block {
                cam: Linear::new(p, rng, &n("cam"), dc, hid, false, true)?,
                trk: Linear::new(p, rng, &n("trk"), d, hid, false, true)?,
                ada: Linear::new(p, rng, &n("ada"), hid, 6 * hid, true, true)?,
                qkv: Linear::new(p, rng, &n("attn.qkv"), hid, 3 * hid, true, false)?,
                out: Linear::new(p, rng, &n("attn.out"), hid, hid, true, false)?,
                fc1: Linear::new(p, rng, &n("mlp.fc1"), hid, cfg.mlp_ratio * hid, true, false)?,
                fc2: Linear::new(p, rng, &n("mlp.fc2"), cfg.mlp_ratio * hid, hid, true, false)?,
            });
        }
        let head_ada = Linear::new(p, rng, "head.ada", hid, 2 * hid, true, true)?;
        let head_out = Linear::new(p, rng, "head.out", hid, d, true, true)?;
        let head_skip = Linear::new(p, rng, "head.skip", d, d, false, true)?;
        let head_cam = Linear::new(p, rng, "head.cam", dc, d, false, true)?;
        let head_gain = Linear::new(p, rng, "head.gain", hid, 2, true, true)?;
        let (rope_cos, rope_sin) = rope_tables(cfg, dtype)?;
        Ok(Self {
            cfg: cfg.clone(),
            params: ps,
            traj_gain,
            traj_conv1,
            traj_conv2,
            embed_in,
            time1,
            time2,
            label_table,
            blocks,
            head_ada,
            head_out,
            head_skip,
            head_cam,
            head_gain,
            rope_cos,
            rope_sin,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn default_options(&self) -> ForwardOptions {
        ForwardOptions {
            inject: true,
            cross_view: self.cfg.cross_view,
        }
    }

    /// Parameters the optimizer should update under the configured subset.
    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .names()
            .filter(|n| is_trainable(self.cfg.trainable, n))
            .map(String::from)
            .collect()
    }

    /// Kernel-3 temporal convolution with zero padding, built from shifted
    /// gathers and a linear map. `x` is `[B,T,S,C]`.
    fn temporal_conv(x: &Tensor, lin: &Linear, stride: usize) -> Result<Tensor> {
        let (b, t, s, c) = x.dims4()?;
        let pad = Tensor::zeros((b, 1, s, c), x.dtype(), x.device())?;
        let xp = Tensor::cat(&[&pad, x, &pad], 1)?;
        let t_out = (t - 1) / stride + 1;
        let mut taps = Vec::with_capacity(3);
        for k in 0..3u32 {
            let idx: Vec<u32> = (0..t_out as u32).map(|j| j * stride as u32 + k).collect();
            let idx = Tensor::from_vec(idx, t_out, x.device())?;
            taps.push(xp.index_select(&idx, 1)?);
        }
        lin.forward(&Tensor::cat(&taps, 3)?)
    }

    /// Trajectory encoder: `[B,T,S,d_trk]` to `[B,N,d]`.
    pub fn encode_trajectory(&self, x: &Tensor) -> Result<Tensor> {
        let [s1, s2] = self.cfg.traj_strides();
        let h = rms_norm(x)?.broadcast_mul(&self.traj_gain)?;
        let h = Self::temporal_conv(&h, &self.traj_conv1, s1)?.silu()?;
        let h = Self::temporal_conv(&h, &self.traj_conv2, s2)?;
        let b = h.dim(0)?;
        h.reshape((b, self.cfg.tokens(), self.cfg.latent_dim()))
    }

    fn attention(&self, blk: &Block, a: &Tensor, cos: &Tensor, sin: &Tensor) -> Result<Tensor> {
        let (b, l, hid) = a.dims3()?;
        let (heads, hd) = (self.cfg.heads, self.cfg.head_dim());
        let qkv = blk.qkv.forward(a)?;
        let split = |k: usize| -> Result<Tensor> {
            qkv.narrow(2, k * hid, hid)?
                .reshape((b, l, heads, hd))?
                .transpose(1, 2)?
                .contiguous()
        };
        let rope = |x: Tensor| -> Result<Tensor> { x.broadcast_mul(cos)? + rotate_half(&x)?.broadcast_mul(sin)? };
        let q = rope(split(0)?)?;
        let k = rope(split(1)?)?;
        let v = split(2)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (hd as f64).sqrt()))?;
        let o = softmax(&scores)?.matmul(&v)?;
        blk.out.forward(&o.transpose(1, 2)?.reshape((b, l, hid))?)
    }

    /// Returns `(v_canonical, v_target)`, each `[B,N,d]`.
    pub fn forward(&self, batch: &Batch, opts: ForwardOptions) -> Result<(Tensor, Tensor)> {
        let b = batch.size;
        let n = self.cfg.tokens();
        let hid = self.cfg.hidden;
        let trk_in = Tensor::cat(&[&batch.trk_can, &batch.trk_tar], 0)?;
        let e = self.encode_trajectory(&trk_in)?;
        let trk = Tensor::cat(&[&e.narrow(0, 0, b)?, &e.narrow(0, b, b)?], 1)?;
        let x = Tensor::cat(&[&batch.z_can, &batch.z_tar], 1)?;
        let cam = Tensor::cat(&[&batch.cam_can, &batch.cam_tar], 1)?;

        let tf = time_features(&batch.t, self.dtype())?;
        let temb = self.time2.forward(&self.time1.forward(&tf)?.silu()?)?;
        let labels = Tensor::from_vec(batch.labels.clone(), b, &Device::Cpu)?;
        let c = (temb + self.label_table.index_select(&labels, 0)?)?.silu()?;

        let mut h = self.embed_in.forward(&x)?;
        for blk in &self.blocks {
            if opts.inject {
                h = ((h + blk.cam.forward(&cam)?)? + blk.trk.forward(&trk)?)?;
            }
            let m = blk.ada.forward(&c)?.unsqueeze(1)?;
            let chunk = |k: usize| m.narrow(2, k * hid, hid);
            let a = modulate(&layer_norm(&h)?, &chunk(0)?, &chunk(1)?)?;
            let att = if opts.cross_view {
                self.attention(blk, &a, &self.rope_cos, &self.rope_sin)?
            } else {
                let mut parts = Vec::with_capacity(2);
                for s in 0..2 {
                    parts.push(self.attention(
                        blk,
                        &a.narrow(1, s * n, n)?,
                        &self.rope_cos.narrow(0, s * n, n)?,
                        &self.rope_sin.narrow(0, s * n, n)?,
                    )?);
                }
                Tensor::cat(&parts, 1)?
            };
            h = (h + att.broadcast_mul(&chunk(2)?)?)?;
            let a = modulate(&layer_norm(&h)?, &chunk(3)?, &chunk(4)?)?;
            let mlp = blk.fc2.forward(&blk.fc1.forward(&a)?.gelu()?)?;
            h = (h + mlp.broadcast_mul(&chunk(5)?)?)?;
        }
        let m = self.head_ada.forward(&c)?.unsqueeze(1)?;
        let o = modulate(&layer_norm(&h)?, &m.narrow(2, 0, hid)?, &m.narrow(2, hid, hid)?)?;
        // Per-sample gains `1 + g(t, label)` on the two linear head paths.
        let g = (self.head_gain.forward(&c)? + 1.0)?.unsqueeze(1)?;
        let mut f = (self.head_out.forward(&o)? + self.head_skip.forward(&x)?.broadcast_mul(&g.narrow(2, 0, 1)?)?)?;
        if opts.inject {
            f = (f + self.head_cam.forward(&cam)?.broadcast_mul(&g.narrow(2, 1, 1)?)?)?;
        }
        let (skip, out) = self.preconditioning(&batch.t)?;
        let v = (x.broadcast_mul(&skip)? + f.broadcast_mul(&out)?)?;
        Ok((v.narrow(1, 0, n)?, v.narrow(1, n, n)?))
    }
}

/// Coefficients of the best linear predictor of `ε - z₀` from
/// `z_t = (1-t)·z₀ + t·ε` for zero-mean data of standard deviation `σ`, and
/// the standard deviation of its residual.
pub fn precondition(t: f64, sigma: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    let var = (1.0 - t).powi(2) * s2 + t * t;
    ((t - (1.0 - t) * s2) / var, sigma / var.sqrt())
}

impl DualStreamNet {
    fn preconditioning(&self, t: &[f64]) -> Result<(Tensor, Tensor)> {
        let (skip, out): (Vec<f64>, Vec<f64>) = t.iter().map(|&ti| precondition(ti, self.cfg.sigma_data)).unzip();
        let b = t.len();
        Ok((
            Tensor::from_vec(skip, (b, 1, 1), &Device::Cpu)?.to_dtype(self.dtype())?,
            Tensor::from_vec(out, (b, 1, 1), &Device::Cpu)?.to_dtype(self.dtype())?,
        ))
    }
}

pub fn is_trainable(mode: Trainable, name: &str) -> bool {
    match mode {
        Trainable::All => true,
        Trainable::EncodersAndAttention => {
            name.starts_with("traj.")
                || name.ends_with("cam.w")
                || name.ends_with(".trk.w")
                || name.contains(".attn.")
        }
    }
}
