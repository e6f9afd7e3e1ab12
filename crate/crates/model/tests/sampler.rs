mod common;

use candle_core::DType;
use dualcam_core::synth::{generate_dataset, MotionLabel, SceneConfig};
use dualcam_core::{CameraPath, DepthMap, Image};
use dualcam_model::condition::ConditionError;
use dualcam_model::net::DualStreamNet;
use dualcam_model::sampler::{
    euler_from, euler_sample, generate, ConditionMotion, prepare_user_condition, regeneration_condition, ObjectMask, SampleError,
    SamplerConfig, Stroke, VelocityField,
};
use dualcam_core::rng::seeded;

use common::{small_config, small_scenes};

/// Straight-line field toward fixed clean latents: `v = (z - z₀) / t`.
struct Straight {
    z0: Vec<f32>,
}

impl VelocityField for Straight {
    fn velocity(&self, zc: &[f32], zt: &[f32], t: f64) -> Result<(Vec<f32>, Vec<f32>), SampleError> {
        let f = |z: &[f32]| z.iter().zip(&self.z0).map(|(a, b)| ((*a as f64 - *b as f64) / t) as f32).collect();
        Ok((f(zc), f(zt)))
    }
}

struct Exploding;

impl VelocityField for Exploding {
    fn velocity(&self, zc: &[f32], zt: &[f32], t: f64) -> Result<(Vec<f32>, Vec<f32>), SampleError> {
        let v = if t < 0.6 { f32::NAN } else { 1.0 };
        Ok((vec![v; zc.len()], vec![v; zt.len()]))
    }
}

#[test]
fn one_euler_step_is_exact_for_a_straight_field() {
    let z0: Vec<f32> = (0..50).map(|i| i as f32 * 0.1 - 2.0).collect();
    let field = Straight { z0: z0.clone() };
    let start: Vec<f32> = (0..50).map(|i| (i as f32).sin()).collect();
    let (c, t) = euler_from(&field, start.clone(), start, 1).unwrap();
    for i in 0..50 {
        assert!((c[i] - z0[i]).abs() < 1e-6);
        assert!((t[i] - z0[i]).abs() < 1e-6);
    }
}

#[test]
fn step_count_does_not_matter_for_a_straight_field() {
    let z0: Vec<f32> = (0..50).map(|i| (i as f32 * 0.37).cos()).collect();
    let field = Straight { z0 };
    let a = euler_sample(&field, 50, &SamplerConfig { steps: 20, seed: 3 }).unwrap();
    let b = euler_sample(&field, 50, &SamplerConfig { steps: 40, seed: 3 }).unwrap();
    for (x, y) in a.0.iter().zip(&b.0).chain(a.1.iter().zip(&b.1)) {
        assert!((x - y).abs() <= 1e-6);
    }
}

#[test]
fn non_finite_latent_aborts_with_step() {
    let err = euler_sample(&Exploding, 10, &SamplerConfig { steps: 10, seed: 0 }).unwrap_err();
    match err {
        SampleError::NonFinite { step, t } => {
            assert_eq!(step, 5);
            assert!((t - 0.4).abs() < 1e-9);
        }
        e => panic!("unexpected {e}"),
    }
    assert!(matches!(
        euler_sample(&Exploding, 10, &SamplerConfig { steps: 0, seed: 0 }),
        Err(SampleError::NoSteps)
    ));
}

#[test]
fn generation_is_seeded_and_in_range() {
    let cfg = small_config();
    let net = DualStreamNet::new(&cfg, 1, DType::F32).unwrap();
    let s = &generate_dataset(&small_scenes(), 1, 7).unwrap()[0];
    let (c, t, tracks) = regeneration_condition(s, cfg.d_trk, ConditionMotion::Active, &mut seeded(0)).unwrap();
    assert!(tracks.roles_present().iter().all(|r| *r == dualcam_core::Role::Active));
    let sc = SamplerConfig { steps: 4, seed: 9 };
    let a = generate(&net, &c, &t, &sc).unwrap();
    let b = generate(&net, &c, &t, &sc).unwrap();
    assert_eq!(a.target, b.target);
    assert_eq!(a.canonical, b.canonical);
    assert_eq!(a.target.shape(), [4, 16, 16, 3]);
    assert!(a.target.data.iter().all(|v| (0.0..=1.0).contains(v)));
    let other = generate(&net, &c, &t, &SamplerConfig { steps: 4, seed: 10 }).unwrap();
    assert_ne!(a.target, other.target);
}

fn scene() -> (Image, DepthMap, CameraPath) {
    let intr = SceneConfig::default().intrinsics();
    let mut depth = DepthMap::constant(32, 32, 5.0);
    for y in 0..32 {
        for x in 0..16 {
            depth.values[y * 32 + x] = 2.0;
        }
    }
    (Image::zeros(32, 32, 3), depth, CameraPath::identity(intr, 8))
}

fn block(id: u32, x0: usize, y0: usize, side: usize) -> ObjectMask {
    let mut pixels = Vec::new();
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            pixels.push((x, y));
        }
    }
    ObjectMask { object_id: id, pixels }
}

fn line(x0: f64, y0: f64, dx: f64) -> Stroke {
    Stroke {
        positions: (0..8).map(|u| [x0 + dx * u as f64, y0]).collect(),
    }
}

#[test]
fn no_strokes_give_an_empty_map() {
    let (img, depth, path) = scene();
    let (can, tar, tracks) = prepare_user_condition(&img, &depth, &[], &[], &path, None, 16, None).unwrap();
    assert!(tracks.is_empty());
    let map = can.trajectory.unwrap();
    assert!(map.is_empty());
    assert!(map.embedding.iter().all(|&v| v == 0.0));
    assert!(tar.trajectory.is_none());
}

#[test]
fn stroke_is_densified_over_its_mask() {
    let (img, depth, path) = scene();
    let mask = block(3, 2, 2, 10);
    assert_eq!(mask.pixels.len(), 100);
    let (_, _, tracks) =
        prepare_user_condition(&img, &depth, &[mask], &[line(6.5, 6.5, 1.0)], &path, Some(MotionLabel::Push), 16, None)
            .unwrap();
    assert_eq!(tracks.len(), 100);
    for i in 0..tracks.len() {
        let d = tracks.position(i, 7)[0] - tracks.position(i, 0)[0];
        assert!((d - 7.0).abs() < 1e-12);
    }
}

#[test]
fn deeper_object_is_hidden_where_strokes_collide() {
    let (img, depth, path) = scene();
    let near = block(1, 10, 14, 4);
    let far = block(2, 18, 14, 4);
    let strokes = [line(11.5, 15.5, 1.0), line(19.5, 15.5, -1.0)];
    let (_, _, tracks) = prepare_user_condition(&img, &depth, &[near, far], &strokes, &path, None, 16, None).unwrap();
    assert_eq!(tracks.len(), 32);
    let mut collisions = 0;
    for u in 0..8 {
        for i in 0..tracks.len() {
            for j in 0..tracks.len() {
                let (pi, pj) = (tracks.pixel(i, u), tracks.pixel(j, u));
                if tracks.object_id[i] == 1 && tracks.object_id[j] == 2 && pi.is_some() && pi == pj {
                    collisions += 1;
                    assert!(tracks.is_visible(i, u));
                    assert!(!tracks.is_visible(j, u));
                }
            }
        }
    }
    assert!(collisions > 0);
}

#[test]
fn stroke_outside_the_image_reports_its_index() {
    let (img, depth, path) = scene();
    let strokes = [line(3.5, 3.5, 1.0), line(28.5, 3.5, 1.0)];
    let err = prepare_user_condition(&img, &depth, &[], &strokes, &path, None, 16, None).unwrap_err();
    assert!(matches!(err, ConditionError::StrokeOutside { index: 1, frame: 4 }), "{err}");
}
