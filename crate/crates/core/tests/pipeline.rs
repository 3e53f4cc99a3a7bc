use crepe::harness::rdm1;
use crepe::mixforcing::TEACHER_SIGMA;
use crepe::phasor::{bounded_coordinate, token_grid};
use crepe::rope::DEFAULT_BASE;
use crepe::scene::{render_clip, Motion, SceneKind, SceneSpec, TrajectorySpec};
use crepe::supervision::prepare_targets;
use crepe::*;

const PATCH: u32 = 8;

fn clip() -> (TrajectorySpec, RadialMap) {
    let cam = UcmCamera::centered(40.0, 0.6, 64, 64).unwrap();
    let traj = TrajectorySpec { frames: 3, motion: Motion::Dolly, amplitude: 0.5, camera: cam };
    let scene = SceneSpec { kind: SceneKind::TwoPlanes, extent: 4.0, num_points: 1, seed: 0 };
    (traj, render_clip(&scene, &traj).unwrap())
}

#[test]
fn rendered_map_survives_the_file_round_trip_into_targets() {
    let (_, map) = clip();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.rdm1");
    rdm1::write(&path, &map, None).unwrap();
    let (back, side) = rdm1::read(&path).unwrap();
    assert!(side.is_none());
    let a = prepare_targets(&map, 20.0, PATCH as usize).unwrap();
    let b = prepare_targets(&back, 20.0, PATCH as usize).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 3 * 8 * 8);
    assert!(a.valid_count() > a.len() / 2);
}

// Metric teacher intervals from the rendered map, then coefficients for every
// (query frame, source token) pair.
#[test]
fn teacher_intervals_drive_bounded_coefficients() {
    let (traj, map) = clip();
    let poses = traj.poses().unwrap();
    let cam = traj.camera;
    let plan = make_frequency_plan(72, 9, DEFAULT_BASE).unwrap();
    let (rows, cols) = token_grid(&cam, PATCH).unwrap();
    let per_frame = rows * cols;
    let preds = vec![RadialInterval::new(0.0, 3.0); 3 * per_frame];
    let intervals = external_override(&preds, &map, 1.0, 20.0, PATCH as usize, TEACHER_SIGMA).unwrap();
    let taught = intervals.iter().filter(|i| i.sigma == TEACHER_SIGMA).count();
    assert!(taught > per_frame);

    for q in 0..3 {
        for s in 0..3 {
            let rel = relative_transform(&poses[s], &poses[q]);
            for token in 0..per_frame {
                let patch = patch_rays(&cam, (token / cols, token % cols), PATCH).unwrap();
                let interval = &intervals[s * per_frame + token];
                let c = crepe_coefficients(&cam, &rel, &patch, interval, &plan, 5).unwrap();
                assert!(c.magnitudes().all(|m| m <= 1.0 + 1e-12));
                if q != s {
                    continue;
                }
                // a ray seen from its own camera projects to one image point
                for (a, ray) in patch.rays.iter().enumerate() {
                    let (coord, ok) = bounded_coordinate(&cam, &ray.direction());
                    assert!(ok);
                    for (ci, group) in plan.groups()[3 * a..3 * a + 2].iter().enumerate() {
                        for (slot, w) in group.pair_range().zip(&group.frequencies) {
                            let [cc, ss] = c.pairs[slot];
                            let phase = w * coord[ci];
                            assert!((cc - phase.cos()).abs() < 1e-12 && (ss - phase.sin()).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn attention_uses_the_coefficients_once_the_output_is_trained() {
    let (traj, _) = clip();
    let plan = make_frequency_plan(72, 9, DEFAULT_BASE).unwrap();
    let (frames, patches, d_model) = (2, 4, 16);
    let features: Vec<Vec<f64>> = (0..frames * patches)
        .map(|i| (0..d_model).map(|j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0).collect())
        .collect();
    let batch = TokenBatch::new(frames, patches, features.clone()).unwrap();
    let mut params = AttentionParams::init(d_model, plan.total_dim(), 2);
    params.wo.iter_mut().enumerate().for_each(|(i, w)| *w = ((i % 5) as f64 - 2.0) * 0.05);

    let poses = traj.poses().unwrap();
    let mut entries = Vec::new();
    for q in 0..frames {
        for key in 0..frames * patches {
            let (s, token) = (key / patches, key % patches);
            let rel = relative_transform(&poses[s], &poses[q]);
            let patch = patch_rays(&traj.camera, (token / 8, token % 8), 8).unwrap();
            entries.push(
                crepe_coefficients(&traj.camera, &rel, &patch, &RadialInterval::new(1.0, 0.5), &plan, 5).unwrap(),
            );
        }
    }
    let table = CoefficientTable::new(frames, frames * patches, entries).unwrap();
    let identity = CoefficientTable::identity(frames, frames * patches, plan.num_pairs());
    let with = attention_forward(&params, &batch, &table, &plan).unwrap();
    let without = attention_forward(&params, &batch, &identity, &plan).unwrap();
    assert_ne!(with, features);
    assert_ne!(with, without);
    assert!(with.iter().flatten().all(|v| v.is_finite()));
}
