mod common;

use candle_core::DType;
use dualcam_core::rng::seeded;
use dualcam_model::net::{is_trainable, DualStreamNet, ForwardOptions};
use dualcam_model::Trainable;

use common::{batch, random_item, tiny_config, to_vec};

fn zero_injection(net: &DualStreamNet) {
    let names: Vec<String> = net
        .params()
        .names()
        .filter(|n| n.ends_with(".cam.w") || n.ends_with(".trk.w"))
        .map(String::from)
        .collect();
    assert!(names.len() > 2);
    for n in names {
        let len = net.params().values(&n).unwrap().len();
        net.params().set_values(&n, &vec![0.0; len]).unwrap();
    }
}

#[test]
fn zero_injection_with_null_label_is_the_bare_backbone() {
    let cfg = tiny_config();
    let mut rng = seeded(21);
    for dtype in [DType::F32, DType::F64] {
        let net = DualStreamNet::new(&cfg, 4, dtype).unwrap();
        net.params().randomize(0.3, &mut rng).unwrap();
        zero_injection(&net);
        let mut items: Vec<_> = (0..2).map(|_| random_item(&cfg, &mut rng)).collect();
        items.iter_mut().for_each(|i| i.label = None);
        let b = batch(&cfg, dtype, &items);
        let with = net.forward(&b, ForwardOptions { inject: true, cross_view: true }).unwrap();
        let bare = net.forward(&b, ForwardOptions { inject: false, cross_view: true }).unwrap();
        assert_eq!(to_vec(&with.0), to_vec(&bare.0));
        assert_eq!(to_vec(&with.1), to_vec(&bare.1));
    }
}

#[test]
fn fresh_network_injection_is_a_no_op() {
    let cfg = tiny_config();
    let mut rng = seeded(1);
    let net = DualStreamNet::new(&cfg, 9, DType::F32).unwrap();
    let mut item = random_item(&cfg, &mut rng);
    item.label = None;
    let b = batch(&cfg, DType::F32, &[item]);
    let with = net.forward(&b, ForwardOptions { inject: true, cross_view: true }).unwrap();
    let bare = net.forward(&b, ForwardOptions { inject: false, cross_view: true }).unwrap();
    assert_eq!(to_vec(&with.1), to_vec(&bare.1));
}

#[test]
fn masked_cross_view_isolates_target_from_canonical_tracks() {
    let cfg = tiny_config();
    let mut rng = seeded(33);
    let net = DualStreamNet::new(&cfg, 2, DType::F32).unwrap();
    net.params().randomize(0.3, &mut rng).unwrap();
    let item = random_item(&cfg, &mut rng);
    let mut other = item.clone();
    other.canonical.trajectory.iter_mut().for_each(|v| *v = -*v * 3.0 + 0.5);
    let masked = ForwardOptions { inject: true, cross_view: false };
    let joint = ForwardOptions { inject: true, cross_view: true };
    let (c1, t1) = net.forward(&batch(&cfg, DType::F32, &[item.clone()]), masked).unwrap();
    let (c2, t2) = net.forward(&batch(&cfg, DType::F32, &[other.clone()]), masked).unwrap();
    assert_eq!(to_vec(&t1), to_vec(&t2));
    assert_ne!(to_vec(&c1), to_vec(&c2));
    let (_, j1) = net.forward(&batch(&cfg, DType::F32, &[item]), joint).unwrap();
    let (_, j2) = net.forward(&batch(&cfg, DType::F32, &[other]), joint).unwrap();
    assert_ne!(to_vec(&j1), to_vec(&j2));
}

#[test]
fn network_construction_is_seeded() {
    let cfg = tiny_config();
    let a = DualStreamNet::new(&cfg, 5, DType::F32).unwrap();
    let b = DualStreamNet::new(&cfg, 5, DType::F32).unwrap();
    let c = DualStreamNet::new(&cfg, 6, DType::F32).unwrap();
    assert!(a.params().same_values(b.params()).unwrap());
    assert!(!a.params().same_values(c.params()).unwrap());
}

#[test]
fn partial_training_subset() {
    let cfg = tiny_config();
    let net = DualStreamNet::new(&cfg, 0, DType::F32).unwrap();
    let subset: Vec<&str> = net.params().names().filter(|n| is_trainable(Trainable::EncodersAndAttention, n)).collect();
    assert!(subset.contains(&"traj.conv1.w"));
    assert!(subset.contains(&"blocks.0.cam.w"));
    assert!(subset.contains(&"blocks.0.trk.w"));
    assert!(subset.contains(&"blocks.0.attn.qkv.w"));
    assert!(!subset.contains(&"blocks.0.mlp.fc1.w"));
    assert!(!subset.contains(&"head.out.w"));
    assert!(net.params().names().all(|n| is_trainable(Trainable::All, n)));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        dualcam_model::ModelConfig { p_t: 3, ..tiny_config() },
        dualcam_model::ModelConfig { heads: 3, ..tiny_config() },
        dualcam_model::ModelConfig { d_trk: 5, ..tiny_config() },
        dualcam_model::ModelConfig { width: 10, ..tiny_config() },
        dualcam_model::ModelConfig { sigma_data: 0.0, ..tiny_config() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
        assert!(DualStreamNet::new(&cfg, 0, DType::F32).is_err());
    }
}
