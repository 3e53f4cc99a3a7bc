//! Command drivers. Each writes its artifacts into an output directory and
//! returns a report whose `pass` flag decides the process exit code.
//!
//! Coefficient files (`coeffs.bin`) hold the magic `CEF1`, little-endian
//! `u32` frames, source tokens and pairs, then for every query frame and
//! every source token (frame-major) the `(c, s)` pairs as little-endian
//! `f64`, followed by one fallback byte per offset ray.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::camera::relative_transform;
use crate::error::{CrepeError, Result};
use crate::harness::config::RunConfig;
use crate::harness::gradcheck::run_gradcheck;
use crate::harness::mixsim::run_mix_sim;
use crate::harness::oracle::run_oracle;
use crate::harness::probe::train_probe;
use crate::harness::rdm1::{self, Rdm1Sidecar};
use crate::harness::trajectory::{self, Trajectory};
use crate::harness::{checkpoint, write_json};
use crate::head::{head_forward, head_init};
use crate::mixforcing::{external_override, TEACHER_SIGMA};
use crate::phasor::{
    breakpoints, crepe_coefficients, patch_rays, projected_path, token_grid, RadialInterval, RAYS_PER_TOKEN,
};
use crate::scene::{hump_weight, layer_features, render_clip, LayerFeatureSpec, TrajectorySpec};
use crate::supervision::{near_distance_stat, prepare_targets, validity_mask};

pub const COEFFS_MAGIC: &[u8; 4] = b"CEF1";
/// Allowed excess of a coefficient magnitude over 1.
pub const MAGNITUDE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CommandReport {
    pub command: &'static str,
    pub pass: bool,
    pub summary: Value,
    pub files: Vec<PathBuf>,
}

impl CommandReport {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

impl CrepeError {
    /// Process exit code: 2 for malformed input files, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CrepeError::Parse { .. } => 2,
            _ => 1,
        }
    }
}

fn prepare(cfg: &RunConfig, out: &Path) -> Result<String> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    Ok(cfg.hash())
}

fn finish(
    command: &'static str,
    out: &Path,
    name: &str,
    hash: &str,
    pass: bool,
    body: Value,
    mut files: Vec<PathBuf>,
) -> Result<CommandReport> {
    let mut summary = json!({ "command": command, "config_hash": hash, "pass": pass });
    if let (Value::Object(dst), Value::Object(src)) = (&mut summary, body) {
        dst.extend(src);
    }
    let path = out.join(name);
    write_json(&path, &summary)?;
    files.insert(0, path);
    Ok(CommandReport { command, pass, summary, files })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

/// The configured trajectory: the trajectory file if given, else the generated one.
pub fn load_trajectory(cfg: &RunConfig) -> Result<Trajectory> {
    match &cfg.trajectory_file {
        Some(path) => trajectory::load(path),
        None => Ok(Trajectory { camera: cfg.trajectory.camera, poses: cfg.trajectory.poses()? }),
    }
}

/// Per-token intervals for every frame, frame-major.
///
/// Priority: a fixed interval, then teacher intervals from the radial map
/// file (predictions elsewhere), then a freshly initialized head.
pub fn token_intervals(cfg: &RunConfig, traj: &Trajectory) -> Result<(Vec<RadialInterval>, &'static str)> {
    let (rows, cols) = token_grid(&traj.camera, cfg.patch_size)?;
    let count = traj.poses.len() * rows * cols;
    if let Some([mu, sigma]) = cfg.coeffs.fixed_interval {
        return Ok((vec![RadialInterval::new(mu, sigma).clamped(); count], "fixed"));
    }
    let head = head_init(cfg.coeffs.head_d_model, cfg.seed);
    let pred = head_forward(&head, &vec![0.0; cfg.coeffs.head_d_model])?;
    let preds = vec![pred; count];
    let Some(path) = &cfg.radial_map_file else {
        return Ok((preds, "head_init"));
    };
    let (map, side) = rdm1::read(path)?;
    if map.frames != traj.poses.len()
        || map.width != traj.camera.width as usize
        || map.height != traj.camera.height as usize
    {
        return Err(CrepeError::Validation(format!(
            "radial map is {}x{}x{}, trajectory needs {}x{}x{}",
            map.frames,
            map.height,
            map.width,
            traj.poses.len(),
            traj.camera.height,
            traj.camera.width
        )));
    }
    let near = match side.and_then(|s| s.near_stat) {
        Some(n) => n,
        None => near_distance_stat(&map, &validity_mask(&map, cfg.loss.r_max)),
    };
    Ok((external_override(&preds, &map, near, cfg.loss.r_max, cfg.patch_size as usize, TEACHER_SIGMA)?, "radial_map"))
}

pub fn cmd_coeffs(cfg: &RunConfig, out: &Path) -> Result<CommandReport> {
    let hash = prepare(cfg, out)?;
    let traj = load_trajectory(cfg)?;
    let plan = cfg.plan()?;
    let (rows, cols) = token_grid(&traj.camera, cfg.patch_size)?;
    let per_frame = rows * cols;
    let frames = traj.poses.len();
    let (intervals, source) = token_intervals(cfg, &traj)?;
    let patches = (0..per_frame)
        .map(|t| patch_rays(&traj.camera, (t / cols, t % cols), cfg.patch_size))
        .collect::<Result<Vec<_>>>()?;

    let u32_of = |v: usize| u32::try_from(v).map_err(|_| CrepeError::config("coefficient table too large"));
    let mut bin = Vec::new();
    bin.extend_from_slice(COEFFS_MAGIC);
    bin.extend_from_slice(&u32_of(frames)?.to_le_bytes());
    bin.extend_from_slice(&u32_of(frames * per_frame)?.to_le_bytes());
    bin.extend_from_slice(&u32_of(plan.num_pairs())?.to_le_bytes());

    let (mut min_mag, mut max_mag) = (f64::INFINITY, 0.0f64);
    let mut range_max = 0.0f64;
    let range_slots: Vec<usize> =
        plan.groups().iter().filter(|g| g.coordinate % 3 == 2).flat_map(|g| g.pair_range()).collect();
    let (mut fallback_offsets, mut fallback_tokens) = (0usize, 0usize);
    for q in 0..frames {
        for f in 0..frames {
            let transform = relative_transform(&traj.poses[f], &traj.poses[q]);
            for (t, patch) in patches.iter().enumerate() {
                let c =
                    crepe_coefficients(&traj.camera, &transform, patch, &intervals[f * per_frame + t], &plan, cfg.k)?;
                for m in c.magnitudes() {
                    min_mag = min_mag.min(m);
                    max_mag = max_mag.max(m);
                }
                for &slot in &range_slots {
                    let [a, b] = c.pairs[slot];
                    range_max = range_max.max((a * a + b * b).sqrt());
                }
                fallback_offsets += c.fallback_count();
                fallback_tokens += usize::from(c.fallback_count() == RAYS_PER_TOKEN);
                for [a, b] in &c.pairs {
                    bin.extend_from_slice(&a.to_le_bytes());
                    bin.extend_from_slice(&b.to_le_bytes());
                }
                bin.extend(c.fallback.iter().map(|f| u8::from(*f)));
            }
        }
    }
    let bin_path = out.join("coeffs.bin");
    fs::write(&bin_path, &bin)?;
    let bound_ok = max_mag <= 1.0 + MAGNITUDE_SLACK;
    finish(
        "coeffs",
        out,
        "coeffs.json",
        &hash,
        bound_ok,
        json!({
            "frames": frames,
            "tokens_per_frame": per_frame,
            "num_pairs": plan.num_pairs(),
            "k": cfg.k,
            "interval_source": source,
            "min_magnitude": min_mag,
            "max_magnitude": max_mag,
            "max_range_magnitude": range_max,
            "identity_fallback_offsets": fallback_offsets,
            "identity_fallback_tokens": fallback_tokens,
            "magnitude_bound_ok": bound_ok,
        }),
        vec![bin_path],
    )
}

pub fn cmd_trace_path(cfg: &RunConfig, out: &Path) -> Result<CommandReport> {
    let hash = prepare(cfg, out)?;
    let traj = load_trajectory(cfg)?;
    let frames = traj.poses.len();
    let src = cfg.trace.source_frame;
    let qry = cfg.trace.query_frame.unwrap_or(frames - 1);
    if src >= frames || qry >= frames {
        return Err(CrepeError::config(format!("trace frames ({src}, {qry}) outside a {frames}-frame trajectory")));
    }
    let (rows, cols) = token_grid(&traj.camera, cfg.patch_size)?;
    let per_frame = rows * cols;
    let (intervals, source) = token_intervals(cfg, &traj)?;
    let transform = relative_transform(&traj.poses[src], &traj.poses[qry]);

    let mut csv = format!("# config_hash={hash}\ntoken,offset,k,r_k,u_bounded,v_bounded,range,valid\n");
    let (mut total, mut invalid, mut outside_disk, mut invalid_tokens) = (0usize, 0usize, 0usize, 0usize);
    for t in 0..per_frame {
        let patch = patch_rays(&traj.camera, (t / cols, t % cols), cfg.patch_size)?;
        let radii = breakpoints(&intervals[src * per_frame + t], cfg.k)?;
        let mut token_valid = 0;
        for (a, ray) in patch.rays.iter().enumerate() {
            let path = projected_path(&traj.camera, &transform, ray, &radii);
            token_valid += path.valid_count();
            for (k, ((p, v), r)) in path.points.iter().zip(&path.valid).zip(&radii).enumerate() {
                let _ = writeln!(csv, "{t},{a},{k},{r},{},{},{},{}", p[0], p[1], p[2], u8::from(*v));
                total += 1;
                invalid += usize::from(!*v);
                if p[0] * p[0] + p[1] * p[1] > 1.0 + MAGNITUDE_SLACK {
                    outside_disk += 1;
                }
            }
        }
        invalid_tokens += usize::from(token_valid == 0);
    }
    let csv_path = out.join("trace.csv");
    fs::write(&csv_path, csv)?;
    finish(
        "trace-path",
        out,
        "trace.json",
        &hash,
        outside_disk == 0,
        json!({
            "source_frame": src,
            "query_frame": qry,
            "k": cfg.k,
            "interval_source": source,
            "rows": total,
            "invalid_rows": invalid,
            "all_invalid_tokens": invalid_tokens,
            "outside_unit_disk": outside_disk,
        }),
        vec![csv_path],
    )
}

pub fn cmd_oracle_check(cfg: &RunConfig, out: &Path) -> Result<CommandReport> {
    let hash = prepare(cfg, out)?;
    let rep = run_oracle(&cfg.oracle, cfg.k, cfg.seed)?;
    let mut csv = format!(
        "# config_hash={hash}\nindex,xi_s,xi_q,mu,sigma,coordinate,omega,reference_error,candidate_error,baseline_error\n"
    );
    for r in &rep.records {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            r.index,
            r.xi_s,
            r.xi_q,
            r.mu,
            r.sigma,
            r.coordinate,
            r.omega,
            r.reference_error,
            r.candidate_error,
            r.baseline_error
        );
    }
    let csv_path = out.join("oracle.csv");
    fs::write(&csv_path, csv)?;
    finish("oracle-check", out, "oracle.json", &hash, rep.pass, to_value(&rep), vec![csv_path])
}

pub fn cmd_gradcheck(cfg: &RunConfig, out: &Path) -> Result<CommandReport> {
    let hash = prepare(cfg, out)?;
    let rep = run_gradcheck(&cfg.gradcheck, &cfg.loss, cfg.seed)?;
    finish("gradcheck", out, "gradcheck.json", &hash, rep.pass, to_value(&rep), Vec::new())
}

/// Per-layer probe results from [`cmd_train_head`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerResult {
    pub layer: usize,
    pub depth_weight: f64,
    pub init_loss: f64,
    pub final_loss: f64,
    pub reduction: f64,
    pub heldout_error: f64,
    pub baseline_error: f64,
    pub relative_error: f64,
}

/// Layers `[floor(L/3), ceil(2L/3))`.
pub fn middle_third(layers: usize) -> std::ops::Range<usize> {
    layers / 3..(2 * layers).div_ceil(3)
}

pub fn cmd_train_head(cfg: &RunConfig, out: &Path) -> Result<CommandReport> {
    let hash = prepare(cfg, out)?;
    let tc = &cfg.train;
    let traj = TrajectorySpec { frames: tc.frames, ..cfg.trajectory };
    let map = render_clip(&tc.scene, &traj)?;
    let targets = prepare_targets(&map, cfg.loss.r_max, tc.patch_size)?;
    let spec = LayerFeatureSpec { num_layers: tc.layers, d_model: tc.d_model, noise: tc.noise, seed: cfg.seed };

    let mut results = Vec::with_capacity(tc.layers);
    let mut curves = format!("# config_hash={hash}\nlayer,step,loss\n");
    let mut best: Option<(f64, crate::head::HeadParams)> = None;
    for layer in 0..tc.layers {
        let batch = layer_features(&targets, layer, &spec)?;
        let rep = train_probe(&batch, &targets, head_init(tc.d_model, cfg.seed), &tc.probe, &cfg.loss)?;
        for (step, loss) in &rep.curve {
            let _ = writeln!(curves, "{layer},{step},{loss}");
        }
        let rel = rep.relative_error();
        if best.as_ref().is_none_or(|(e, _)| rel < *e) {
            best = Some((rel, rep.params.clone()));
        }
        results.push(LayerResult {
            layer,
            depth_weight: hump_weight(layer, tc.layers),
            init_loss: rep.init_loss,
            final_loss: rep.final_loss,
            reduction: rep.reduction,
            heldout_error: rep.heldout_error,
            baseline_error: rep.baseline_error,
            relative_error: rel,
        });
    }

    let mut csv = format!(
        "# config_hash={hash}\nlayer,depth_weight,init_loss,final_loss,reduction,heldout_error,baseline_error,relative_error\n"
    );
    for r in &results {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.layer,
            r.depth_weight,
            r.init_loss,
            r.final_loss,
            r.reduction,
            r.heldout_error,
            r.baseline_error,
            r.relative_error
        );
    }
    let argmin =
        results.iter().min_by(|a, b| a.relative_error.total_cmp(&b.relative_error)).map(|r| r.layer).unwrap_or(0);
    let min_reduction = results.iter().map(|r| r.reduction).fold(f64::INFINITY, f64::min);
    let window = middle_third(tc.layers);
    let in_middle = window.contains(&argmin);
    let reduction_ok = min_reduction >= tc.min_reduction;

    let csv_path = out.join("train_head.csv");
    fs::write(&csv_path, csv)?;
    let curve_path = out.join("curves.csv");
    fs::write(&curve_path, curves)?;
    let ckpt_path = out.join("best_head.ghd");
    if let Some((_, params)) = &best {
        checkpoint::save(&ckpt_path, params)?;
    }
    finish(
        "train-head",
        out,
        "train_head.json",
        &hash,
        in_middle && reduction_ok,
        json!({
            "layers": tc.layers,
            "valid_tokens": targets.valid_count(),
            "argmin_layer": argmin,
            "middle_third": [window.start, window.end],
            "argmin_in_middle_third": in_middle,
            "min_reduction": min_reduction,
            "reduction_ok": reduction_ok,
        }),
        vec![csv_path, curve_path, ckpt_path],
    )
}

pub fn cmd_mix_sim(cfg: &RunConfig, out: &Path) -> Result<CommandReport> {
    let hash = prepare(cfg, out)?;
    let rep = run_mix_sim(&cfg.mix, cfg.seed)?;
    let mut csv = format!(
        "# config_hash={hash}\nstep,probability,granules,granules_drawn,realized_rate,valid_tokens,teacher_tokens,pred_tokens,invalid_substituted,expected_teacher\n"
    );
    for r in &rep.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.probability,
            r.granules,
            r.granules_drawn,
            r.realized_rate,
            r.valid_tokens,
            r.teacher_tokens,
            r.pred_tokens,
            r.invalid_substituted,
            r.expected_teacher
        );
    }
    let csv_path = out.join("mix_sim.csv");
    fs::write(&csv_path, csv)?;
    finish("mix-sim", out, "mix_sim.json", &hash, rep.pass, to_value(&rep), vec![csv_path])
}

/// Renders the configured scene along the configured trajectory and writes
/// `scene.rdm1` (with sidecar) plus `trajectory.json`.
pub fn cmd_render(cfg: &RunConfig, out: &Path) -> Result<CommandReport> {
    let hash = prepare(cfg, out)?;
    let map = render_clip(&cfg.scene, &cfg.trajectory)?;
    let mask = validity_mask(&map, cfg.loss.r_max);
    let near = near_distance_stat(&map, &mask);
    let map_path = out.join("scene.rdm1");
    let side = Rdm1Sidecar { near_stat: Some(near), ..Rdm1Sidecar::default() };
    rdm1::write(&map_path, &map, Some(&side))?;
    let traj_path = out.join("trajectory.json");
    trajectory::save(&traj_path, &Trajectory { camera: cfg.trajectory.camera, poses: cfg.trajectory.poses()? })?;
    let valid = map.source_valid.iter().filter(|v| **v).count();
    finish(
        "render",
        out,
        "render.json",
        &hash,
        true,
        json!({ "frames": map.frames, "valid_pixels": valid, "near_stat": near }),
        vec![map_path.clone(), rdm1::sidecar_path(&map_path), traj_path],
    )
}
