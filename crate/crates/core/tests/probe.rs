use crepe::harness::probe::{train_probe, ProbeConfig};
use crepe::scene::{make_layer_features, render_clip, Motion, SceneKind, SceneSpec, TrajectorySpec};
use crepe::supervision::{prepare_targets, LossConfig, TokenTargets};
use crepe::{head_init, UcmCamera};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn targets() -> TokenTargets {
    let cam = UcmCamera::centered(40.0, 0.3, 64, 64).unwrap();
    let scene = SceneSpec { kind: SceneKind::PointCloud, extent: 4.0, num_points: 300, seed: 3 };
    let traj = TrajectorySpec { frames: 2, motion: Motion::Orbit, amplitude: 0.2, camera: cam };
    prepare_targets(&render_clip(&scene, &traj).unwrap(), 20.0, 4).unwrap()
}

#[test]
fn noiseless_depth_features_are_nearly_identifiable() {
    let t = targets();
    assert!(t.valid_count() > 100);
    let batch = make_layer_features(&t, 1.0, 0.0, 32, 7, 8).unwrap();
    let r = train_probe(&batch, &t, head_init(32, 1), &ProbeConfig::default(), &LossConfig::default()).unwrap();
    assert!(r.reduction >= 0.9, "reduction {}", r.reduction);
    assert!(r.relative_error() < 0.1, "held-out relative error {}", r.relative_error());
}

// Targets permuted across valid tokens carry no information about any feature.
#[test]
fn signal_free_features_do_not_generalize() {
    let mut t = targets();
    let valid: Vec<usize> = (0..t.len()).filter(|&i| t.mask[i]).collect();
    let mut values: Vec<f64> = valid.iter().map(|&i| t.targets[i]).collect();
    values.shuffle(&mut ChaCha8Rng::seed_from_u64(11));
    for (&i, v) in valid.iter().zip(values) {
        t.targets[i] = v;
    }
    let batch = make_layer_features(&t, 0.0, 1.0, 32, 7, 8).unwrap();
    let r = train_probe(&batch, &t, head_init(32, 1), &ProbeConfig::default(), &LossConfig::default()).unwrap();
    assert!(r.relative_error() > 0.95, "held-out relative error {}", r.relative_error());
}
