//! Step-by-step MixForcing simulation with provenance accounting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::harness::config::MixSimConfig;
use crate::mixforcing::{effective_interval, substitution_probability, MixForcingState, TEACHER_SIGMA};
use crate::phasor::RadialInterval;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixStepRow {
    pub step: u64,
    pub probability: f64,
    pub granules: usize,
    pub granules_drawn: usize,
    pub realized_rate: f64,
    pub valid_tokens: usize,
    pub teacher_tokens: usize,
    pub pred_tokens: usize,
    /// Invalid tokens whose interval changed; must stay zero.
    pub invalid_substituted: usize,
    pub expected_teacher: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixSimReport {
    pub steps_simulated: usize,
    pub total_teacher: usize,
    pub expected_teacher: f64,
    /// Standardized deviation of the aggregate teacher count.
    pub z_score: f64,
    pub invalid_substituted: usize,
    pub pass: bool,
    #[serde(skip)]
    pub rows: Vec<MixStepRow>,
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn run_mix_sim(cfg: &MixSimConfig, seed: u64) -> Result<MixSimReport> {
    let schedule = cfg.schedule()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens = cfg.frames * cfg.tokens_per_frame;
    let valid: Vec<bool> = (0..tokens).map(|_| rng.random::<f64>() < cfg.valid_fraction).collect();
    let targets: Vec<f64> = (0..tokens).map(|_| rng.random_range(1.0..10.0)).collect();
    let pred = RadialInterval::new(0.0, 3.0);

    let granules = cfg.mode.granules(cfg.frames);
    let mut valid_per_granule = vec![0usize; granules];
    for (t, v) in valid.iter().enumerate() {
        if *v {
            valid_per_granule[cfg.mode.granule_of(t / cfg.tokens_per_frame)] += 1;
        }
    }

    let mut rows = Vec::new();
    let (mut variance, mut expected_total, mut total_teacher) = (0.0, 0.0, 0usize);
    for step in (0..=cfg.total_steps).step_by(cfg.stride as usize) {
        let p = substitution_probability(&schedule, step);
        let state = MixForcingState::sample(&schedule, step, cfg.frames, step_seed(seed, step))?;
        let (mut teacher, mut invalid_substituted) = (0, 0);
        for t in 0..tokens {
            let frame = t / cfg.tokens_per_frame;
            let out = effective_interval(
                pred,
                valid[t].then_some(targets[t]),
                state.substitute(0, frame),
                valid[t],
                TEACHER_SIGMA,
            )?;
            if out != pred {
                teacher += 1;
                if !valid[t] {
                    invalid_substituted += 1;
                }
            }
        }
        let valid_tokens = valid.iter().filter(|v| **v).count();
        let drawn = state.mask.iter().filter(|m| **m).count();
        variance += valid_per_granule.iter().map(|n| p * (1.0 - p) * (*n * *n) as f64).sum::<f64>();
        expected_total += p * valid_tokens as f64;
        total_teacher += teacher;
        rows.push(MixStepRow {
            step,
            probability: p,
            granules,
            granules_drawn: drawn,
            realized_rate: drawn as f64 / granules.max(1) as f64,
            valid_tokens,
            teacher_tokens: teacher,
            pred_tokens: tokens - teacher,
            invalid_substituted,
            expected_teacher: p * valid_tokens as f64,
        });
    }

    let deviation = total_teacher as f64 - expected_total;
    let z_score = if variance > 0.0 {
        deviation / variance.sqrt()
    } else if deviation.abs() < 1e-9 {
        0.0
    } else {
        f64::INFINITY
    };
    let invalid_substituted = rows.iter().map(|r| r.invalid_substituted).sum();
    Ok(MixSimReport {
        steps_simulated: rows.len(),
        total_teacher,
        expected_teacher: expected_total,
        z_score,
        invalid_substituted,
        pass: z_score.abs() <= cfg.z_tolerance && invalid_substituted == 0,
        rows,
    })
}
