//! Monte-Carlo oracle for the expected phasor along a projected path.
//!
//! The estimator samples log distance uniformly, lifts each sample along
//! the source ray, moves it into the query frame and projects it to a pixel
//! with its own UCM arithmetic. The bounded coordinate is recovered from the
//! pixel, so nothing here goes through [`crate::phasor::projected_path`].

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::camera::{ucm_unproject, Ray, RigidTransform, UcmCamera};
use crate::error::{CrepeError, Result};
use crate::harness::config::OracleConfig;
use crate::phasor::{breakpoints, expected_phasor, projected_path, RadialInterval};

pub const FREQUENCIES: [f64; 4] = [1.0, 0.1, 0.01, 0.001];
const IMAGE_SIZE: u32 = 64;
/// Radii checked for a well-behaved path before a configuration is accepted.
const SCREEN_POINTS: usize = 257;

/// One randomized (cameras, pose, ray, interval, frequency) configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCase {
    pub cam_s: UcmCamera,
    pub cam_q: UcmCamera,
    pub transform: RigidTransform,
    pub pixel: Vector2<f64>,
    pub ray: Ray,
    pub interval: RadialInterval,
    /// 0 = u, 1 = v, 2 = range.
    pub coordinate: usize,
    pub omega: f64,
}

fn random_camera(rng: &mut ChaCha8Rng) -> UcmCamera {
    let c = IMAGE_SIZE as f64 / 2.0;
    UcmCamera {
        fx: rng.random_range(30.0..80.0),
        fy: rng.random_range(30.0..80.0),
        cx: c,
        cy: c,
        xi: rng.random_range(0.0..=1.0),
        width: IMAGE_SIZE,
        height: IMAGE_SIZE,
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Query-frame point of radius `r` and its raw projection denominator.
fn query_point(case: &OracleCase, r: f64) -> (Vector3<f64>, f64) {
    let x = case.transform.rotation() * (case.ray.direction() * r) + case.transform.translation();
    let beta = x.z + case.cam_q.xi * x.norm();
    (x, beta)
}

/// Whether every screened point projects with a positive denominator, so the
/// integrand is smooth over the whole interval.
fn is_well_posed(case: &OracleCase) -> bool {
    let w = case.interval.half_width();
    (0..SCREEN_POINTS).all(|i| {
        let z = case.interval.mu - w + 2.0 * w * i as f64 / (SCREEN_POINTS - 1) as f64;
        let (x, beta) = query_point(case, z.exp());
        beta > 1e-6 && x.norm() > 0.0
    })
}

/// Draws configurations until one is well posed.
pub fn sample_case(rng: &mut ChaCha8Rng, zero_sigma: bool) -> Result<OracleCase> {
    for _ in 0..10_000 {
        let cam_s = random_camera(rng);
        let cam_q = random_camera(rng);
        let angle = rng.random_range(0.0..0.5);
        let t = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let transform = RigidTransform::from_axis_angle(random_unit(rng), angle, t)?;
        let pixel = Vector2::new(rng.random_range(0.0..IMAGE_SIZE as f64), rng.random_range(0.0..IMAGE_SIZE as f64));
        let ray = ucm_unproject(&cam_s, pixel)?;
        let sigma = if zero_sigma { 0.0 } else { rng.random_range(0.0..3.0) };
        let interval = RadialInterval::new(rng.random_range(-2.0..2.0), sigma).clamped();
        let coordinate = rng.random_range(0..3);
        let omega = FREQUENCIES[rng.random_range(0..FREQUENCIES.len())];
        let case = OracleCase { cam_s, cam_q, transform, pixel, ray, interval, coordinate, omega };
        if is_well_posed(&case) {
            return Ok(case);
        }
    }
    Err(CrepeError::config("could not draw a well-posed oracle configuration"))
}

/// Expected phasor from `k` breakpoints via the library path.
pub fn analytic_phasor(case: &OracleCase, k: usize) -> Result<[f64; 2]> {
    let radii = breakpoints(&case.interval, k)?;
    let path = projected_path(&case.cam_q, &case.transform, &case.ray, &radii);
    if path.valid_count() != k {
        return Err(CrepeError::input("oracle configuration has invalid breakpoints"));
    }
    let phases: Vec<f64> = path.points.iter().map(|p| case.omega * p[case.coordinate]).collect();
    expected_phasor(&phases)
}

/// Monte-Carlo mean of `exp(i ω coord)` with `z = log r` uniform on the interval.
pub fn monte_carlo_phasor(case: &OracleCase, samples: usize, seed: u64) -> [f64; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = &case.cam_q;
    let (w, h) = (cam.width as f64, cam.height as f64);
    let lo = case.interval.mu - case.interval.half_width();
    let span = 2.0 * case.interval.half_width();
    let (mut c, mut s) = (0.0, 0.0);
    for _ in 0..samples {
        let z = lo + span * rng.random::<f64>();
        let (x, beta) = query_point(case, z.exp());
        let coord = if case.coordinate == 2 {
            x.norm()
        } else {
            // pixel through the projection, then back to normalized image units
            let px = cam.fx * x.x / beta + cam.cx;
            let py = cam.fy * x.y / beta + cam.cy;
            let u = (px - cam.cx) / w;
            let v = (py - cam.cy) / h;
            let n = (u * u + v * v + 1.0).sqrt();
            if case.coordinate == 0 {
                u / n
            } else {
                v / n
            }
        };
        let (sn, cs) = (case.omega * coord).sin_cos();
        c += cs;
        s += sn;
    }
    [c / samples as f64, s / samples as f64]
}

fn max_component(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).abs().max((a[1] - b[1]).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRecord {
    pub index: usize,
    pub xi_s: f64,
    pub xi_q: f64,
    pub mu: f64,
    pub sigma: f64,
    pub coordinate: usize,
    pub omega: f64,
    /// Reference K against Monte Carlo.
    pub reference_error: f64,
    /// Candidate K against the reference.
    pub candidate_error: f64,
    /// Baseline K against the reference.
    pub baseline_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub configs: usize,
    pub samples: usize,
    pub candidate_k: usize,
    pub baseline_k: usize,
    pub reference_k: usize,
    pub max_reference_error: f64,
    pub candidate_win_fraction: f64,
    pub zero_sigma_max_error: f64,
    pub reference_ok: bool,
    pub ordering_ok: bool,
    pub zero_sigma_ok: bool,
    pub pass: bool,
    #[serde(skip)]
    pub records: Vec<OracleRecord>,
}

fn case_seed(seed: u64, stream: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (stream << 56) ^ index as u64
}

/// Runs the full comparison. Configurations are processed in parallel; each
/// has its own seed stream, so results do not depend on scheduling.
pub fn run_oracle(cfg: &OracleConfig, candidate_k: usize, seed: u64) -> Result<OracleReport> {
    let records: Vec<OracleRecord> = (0..cfg.configs)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(case_seed(seed, 1, i));
            let case = sample_case(&mut rng, false)?;
            let mc = monte_carlo_phasor(&case, cfg.samples, case_seed(seed, 2, i));
            let reference = analytic_phasor(&case, cfg.reference_k)?;
            let candidate = analytic_phasor(&case, candidate_k)?;
            let baseline = analytic_phasor(&case, cfg.baseline_k)?;
            Ok(OracleRecord {
                index: i,
                xi_s: case.cam_s.xi,
                xi_q: case.cam_q.xi,
                mu: case.interval.mu,
                sigma: case.interval.sigma,
                coordinate: case.coordinate,
                omega: case.omega,
                reference_error: max_component(reference, mc),
                candidate_error: max_component(candidate, reference),
                baseline_error: max_component(baseline, reference),
            })
        })
        .collect::<Result<_>>()?;

    let zero_sigma_max_error = (0..cfg.zero_sigma_configs)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(case_seed(seed, 3, i));
            let case = sample_case(&mut rng, true)?;
            let mc = monte_carlo_phasor(&case, 16, case_seed(seed, 4, i));
            [cfg.baseline_k, candidate_k, cfg.reference_k]
                .iter()
                .map(|&k| Ok(max_component(analytic_phasor(&case, k)?, mc)))
                .try_fold(0.0f64, |m, e: Result<f64>| Ok(m.max(e?)))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let max_reference_error = records.iter().map(|r| r.reference_error).fold(0.0, f64::max);
    let wins = records.iter().filter(|r| r.candidate_error <= r.baseline_error).count();
    let candidate_win_fraction = if records.is_empty() { 1.0 } else { wins as f64 / records.len() as f64 };
    let reference_ok = max_reference_error < cfg.tolerance;
    let ordering_ok = candidate_win_fraction >= cfg.win_fraction;
    let zero_sigma_ok = zero_sigma_max_error < cfg.zero_sigma_tolerance;
    Ok(OracleReport {
        configs: cfg.configs,
        samples: cfg.samples,
        candidate_k,
        baseline_k: cfg.baseline_k,
        reference_k: cfg.reference_k,
        max_reference_error,
        candidate_win_fraction,
        zero_sigma_max_error,
        reference_ok,
        ordering_ok,
        zero_sigma_ok,
        pass: reference_ok && ordering_ok && zero_sigma_ok,
        records,
    })
}
