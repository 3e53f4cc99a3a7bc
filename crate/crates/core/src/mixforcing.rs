//! Radial MixForcing: stochastic substitution of predicted intervals by narrow
//! teacher intervals built from valid pseudo targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrepeError, Result};
use crate::phasor::RadialInterval;
use crate::supervision::{normalize_and_pool, validity_mask, RadialMap};

pub const TEACHER_SIGMA: f64 = 0.1;

/// Sampling granularity of the substitution mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMode {
    /// One draw per frame.
    BlockFrame,
    /// One draw per clip.
    Video,
}

impl MixMode {
    pub fn default_floor(self) -> f64 {
        match self {
            MixMode::BlockFrame => 0.1,
            MixMode::Video => 0.5,
        }
    }

    pub fn granules(self, frames: usize) -> usize {
        match self {
            MixMode::BlockFrame => frames,
            MixMode::Video => 1,
        }
    }

    pub fn granule_of(self, frame: usize) -> usize {
        match self {
            MixMode::BlockFrame => frame,
            MixMode::Video => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSchedule {
    pub decay_start: u64,
    pub decay_end: u64,
    pub floor: f64,
    pub mode: MixMode,
}

impl MixSchedule {
    pub fn new(decay_start: u64, decay_end: u64, floor: f64, mode: MixMode) -> Result<Self> {
        if decay_start >= decay_end {
            return Err(CrepeError::config("decay_start must precede decay_end"));
        }
        if !(0.0..=1.0).contains(&floor) {
            return Err(CrepeError::config(format!("floor must lie in [0, 1], got {floor}")));
        }
        Ok(Self { decay_start, decay_end, floor, mode })
    }

    /// Decay over steps 1000..7000 to the mode's default floor.
    pub fn for_mode(mode: MixMode) -> Self {
        Self { decay_start: 1000, decay_end: 7000, floor: mode.default_floor(), mode }
    }
}

/// 1 up to and including `decay_start`, linear to `floor` at `decay_end`, then flat.
pub fn substitution_probability(schedule: &MixSchedule, step: u64) -> f64 {
    if step <= schedule.decay_start {
        1.0
    } else if step >= schedule.decay_end {
        schedule.floor
    } else {
        let frac = (step - schedule.decay_start) as f64 / (schedule.decay_end - schedule.decay_start) as f64;
        1.0 - (1.0 - schedule.floor) * frac
    }
}

/// Independent Bernoulli(`p`) draw per granule.
pub fn sample_mask(p: f64, granules: usize, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CrepeError::input(format!("probability must lie in [0, 1], got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..granules).map(|_| rng.random::<f64>() < p).collect())
}

/// Substitution mask for one forward pass, shared by every CRePE layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MixForcingState {
    pub step: u64,
    pub mode: MixMode,
    pub mask: Vec<bool>,
    pub teacher_sigma: f64,
}

impl MixForcingState {
    pub fn sample(schedule: &MixSchedule, step: u64, frames: usize, seed: u64) -> Result<Self> {
        let p = substitution_probability(schedule, step);
        let mask = sample_mask(p, schedule.mode.granules(frames), seed)?;
        Ok(Self { step, mode: schedule.mode, mask, teacher_sigma: TEACHER_SIGMA })
    }

    /// The mask bit governing `frame`. `layer` does not enter: all layers
    /// of a forward pass see the same draw.
    pub fn substitute(&self, _layer: usize, frame: usize) -> bool {
        self.mask[self.mode.granule_of(frame)]
    }
}

/// Teacher interval `(log r, teacher_sigma)`, clamped into the head's log range.
pub fn teacher_interval(target: f64, teacher_sigma: f64) -> RadialInterval {
    RadialInterval::new(target.ln(), teacher_sigma).clamped()
}

/// Interval consumed downstream: the teacher iff `substitute && valid`.
pub fn effective_interval(
    pred: RadialInterval,
    target: Option<f64>,
    substitute: bool,
    valid: bool,
    teacher_sigma: f64,
) -> Result<RadialInterval> {
    if !valid {
        return Ok(pred);
    }
    let r = target.ok_or_else(|| CrepeError::input("valid token without a pseudo target"))?;
    if !(r.is_finite() && r > 0.0) {
        return Err(CrepeError::input(format!("valid pseudo target must be positive and finite, got {r}")));
    }
    Ok(if substitute { teacher_interval(r, teacher_sigma) } else { pred })
}

/// Replaces predictions with teacher intervals wherever the pooled external
/// map is valid; everything else keeps the prediction.
pub fn external_override(
    pred: &[RadialInterval],
    external: &RadialMap,
    near_stat: f64,
    r_max: f64,
    patch_size: usize,
    teacher_sigma: f64,
) -> Result<Vec<RadialInterval>> {
    let mask = validity_mask(external, r_max);
    let tokens = normalize_and_pool(external, &mask, near_stat, patch_size)?;
    if tokens.len() != pred.len() {
        return Err(CrepeError::input(format!(
            "external map pools to {} tokens, prediction has {}",
            tokens.len(),
            pred.len()
        )));
    }
    pred.iter()
        .zip(tokens.targets.iter().zip(&tokens.mask))
        .map(|(p, (t, v))| effective_interval(*p, v.then_some(*t), true, *v, teacher_sigma))
        .collect()
}
