mod common;

use dualcam_core::rng::seeded;
use dualcam_core::synth::{generate_dataset, SupervisionMode};
use dualcam_core::tracks::MotionComponent;
use dualcam_model::train::{
    learning_rate, make_training_pair, prepare_sample, smoothed_endpoints, train, IterationMetrics, TrainConfig,
    TrainError,
};

use common::{small_config, small_scenes};

fn config(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_size: 2,
        lr: 1e-3,
        model: small_config(),
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_runs() {
    let data = generate_dataset(&small_scenes(), 3, 5).unwrap();
    let tc = config(6);
    let a = train(&data, &tc, None).unwrap();
    let b = train(&data, &tc, None).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.counters, b.counters);
    assert!(a.net.params().same_values(b.net.params()).unwrap());
    let c = train(&data, &TrainConfig { seed: 1, ..tc }, None).unwrap();
    assert_ne!(a.losses, c.losses);
}

#[test]
fn certain_dropout_never_keeps_passive_tracks() {
    let data = generate_dataset(&small_scenes(), 4, 2).unwrap();
    let tc = TrainConfig { causal_p: 1.0, ..config(10) };
    let out = train(&data, &tc, None).unwrap();
    assert_eq!(out.counters.passive_pairs, 0);
    assert_eq!(out.counters.active_pairs, 20);
}

#[test]
fn active_fraction_follows_dropout_probability() {
    let data = generate_dataset(&small_scenes(), 4, 3).unwrap();
    let tc = TrainConfig { model: small_config(), ..TrainConfig::default() };
    let prepared: Vec<_> = data.iter().map(|s| prepare_sample(s, &tc.model).unwrap()).collect();
    let mut rng = seeded(77);
    let n = 4000;
    let active = (0..n)
        .filter(|k| make_training_pair(&prepared[k % 4], &tc, &mut rng).unwrap().component == MotionComponent::Active)
        .count();
    let frac = active as f64 / n as f64;
    assert!((0.77..=0.83).contains(&frac), "{frac}");
}

#[test]
fn target_only_samples_get_a_noise_canonical_input() {
    let data = generate_dataset(&dualcam_core::synth::SceneConfig { frames: 4, ..Default::default() }, 12, 4).unwrap();
    let s = data.iter().find(|s| s.mode == SupervisionMode::SingleDynamic).expect("mix has single-dynamic");
    let model = dualcam_model::ModelConfig { height: 32, width: 32, ..small_config() };
    let tc = TrainConfig { model, ..TrainConfig::default() };
    let p = prepare_sample(s, &tc.model).unwrap();
    let pair = make_training_pair(&p, &tc, &mut seeded(0)).unwrap();
    assert_eq!(pair.mask, [0.0, 1.0]);
    let eps: Vec<f32> = pair.target_canonical.iter().zip(&p.z0_canonical).map(|(v, z)| v + z).collect();
    for (a, b) in pair.inputs.canonical.z.iter().zip(&eps) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn metrics_and_checkpoint_are_written() {
    let data = generate_dataset(&small_scenes(), 2, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let tc = TrainConfig { checkpoint_every: 2, ..config(4) };
    let out = train(&data, &tc, Some(dir.path())).unwrap();
    let text = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    let rows: Vec<IterationMetrics> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().map(|r| r.loss).collect::<Vec<_>>(), out.losses);
    assert!(dir.path().join("checkpoint_000002").join("manifest.json").exists());
    assert!(dir.path().join("checkpoint").join("weights.bin").exists());
}

#[test]
fn divergence_is_dumped() {
    let data = generate_dataset(&small_scenes(), 2, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let tc = TrainConfig { lr: 1e30, weight_decay: 0.0, ..config(50) };
    match train(&data, &tc, Some(dir.path())) {
        Err(TrainError::Diverged { iteration, dump: Some(p) }) => {
            assert!(iteration > 0);
            let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
            assert_eq!(v["iteration"], iteration);
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.losses)),
    }
}

#[test]
fn empty_dataset_and_bad_config_are_rejected() {
    assert!(matches!(train(&[], &config(1), None), Err(TrainError::EmptyDataset)));
    let data = generate_dataset(&small_scenes(), 1, 0).unwrap();
    assert!(matches!(train(&data, &TrainConfig { causal_p: 1.5, ..config(1) }, None), Err(TrainError::Config(_))));
    let wrong = generate_dataset(&dualcam_core::synth::SceneConfig::default(), 1, 0).unwrap();
    assert!(matches!(train(&wrong, &config(1), None), Err(TrainError::Condition { index: 0, .. })));
}

#[test]
fn schedule_and_smoothing() {
    let tc = TrainConfig::default();
    assert_eq!(learning_rate(&tc, 0), tc.lr);
    assert!((learning_rate(&tc, tc.iterations - 1) - tc.lr).abs() < 1e-18);
    let decayed = TrainConfig { lr_final_fraction: 0.1, ..tc.clone() };
    assert!((learning_rate(&decayed, decayed.iterations) - 0.1 * tc.lr).abs() < 1e-15);
    assert_eq!(smoothed_endpoints(&[4.0, 2.0, 1.0, 1.0], 2), Some((3.0, 1.0)));
    assert_eq!(smoothed_endpoints(&[], 2), None);
}

#[test]
fn injection_projections_leave_zero_after_training() {
    // Zero-initialized injections must receive gradient from a live encoder.
    let data = generate_dataset(&small_scenes(), 3, 8).unwrap();
    let out = train(&data, &config(3), None).unwrap();
    for name in ["blocks.0.trk.w", "blocks.0.cam.w"] {
        let v = out.net.params().values(name).unwrap();
        assert!(v.iter().any(|x| *x != 0.0), "{name} stayed zero");
    }
}
