//! Pseudo radial-distance targets and the uncertainty-weighted radial loss.
//!
//! Raw metric maps are filtered first (invalid, non-finite, non-positive and
//! far-field values are dropped, never clipped), normalized by a per-clip
//! near-distance statistic and pooled to the token grid.

use serde::{Deserialize, Serialize};

use crate::error::{CrepeError, Result};
use crate::phasor::RadialInterval;

/// Lower bound of the per-clip near-distance statistic, in meters.
pub const NEAR_STAT_FLOOR: f64 = 0.1;
/// Percentile used for the near-distance statistic.
pub const NEAR_PERCENTILE: f64 = 0.05;
/// Minimum fraction of valid pixels for a token to count as valid.
pub const TOKEN_VALID_FRACTION: f64 = 0.5;

/// Per-frame grid of metric radial distances with upstream validity flags.
/// Values are stored frame-major, then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialMap {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    pub source_valid: Vec<bool>,
}

impl RadialMap {
    pub fn new(frames: usize, height: usize, width: usize, values: Vec<f32>, source_valid: Vec<bool>) -> Result<Self> {
        let n = frames * height * width;
        if values.len() != n || source_valid.len() != n {
            return Err(CrepeError::input(format!(
                "radial map {frames}x{height}x{width} needs {n} values and flags, got {} and {}",
                values.len(),
                source_valid.len()
            )));
        }
        Ok(Self { frames, height, width, values, source_valid })
    }

    /// Map whose validity is "value is finite".
    pub fn from_values(frames: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        let valid = values.iter().map(|v| v.is_finite()).collect();
        Self::new(frames, height, width, values, valid)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Concatenates single-or-multi-frame maps of identical size.
    pub fn stack(maps: &[RadialMap]) -> Result<Self> {
        let first = maps.first().ok_or_else(|| CrepeError::input("no frames to stack"))?;
        if maps.iter().any(|m| m.height != first.height || m.width != first.width) {
            return Err(CrepeError::input("frames have differing sizes"));
        }
        let frames = maps.iter().map(|m| m.frames).sum();
        let values = maps.iter().flat_map(|m| m.values.iter().copied()).collect();
        let valid = maps.iter().flat_map(|m| m.source_valid.iter().copied()).collect();
        Self::new(frames, first.height, first.width, values, valid)
    }
}

/// Normalized token-grid targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTargets {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    pub targets: Vec<f64>,
    pub mask: Vec<bool>,
    pub near_stat: f64,
}

impl TokenTargets {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.rows * self.cols
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub lambda_rad: f64,
    pub s_floor_var: f64,
    pub s_ceiling: f64,
    pub gate_fraction: f64,
    pub r_max: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 1.0, lambda_rad: 1e-3, s_floor_var: 1e-6, s_ceiling: 10.0, gate_fraction: 0.03, r_max: 20.0 }
    }
}

/// True where the pixel is upstream-valid, finite, positive and within `r_max`.
pub fn validity_mask(map: &RadialMap, r_max: f64) -> Vec<bool> {
    map.values
        .iter()
        .zip(&map.source_valid)
        .map(|(&v, &ok)| ok && v.is_finite() && v > 0.0 && f64::from(v) <= r_max)
        .collect()
}

/// Nearest-rank 5th percentile of valid values, floored at 0.1 m.
pub fn near_distance_stat(map: &RadialMap, mask: &[bool]) -> f64 {
    let mut vals: Vec<f64> = map.values.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| f64::from(*v)).collect();
    if vals.is_empty() {
        return NEAR_STAT_FLOOR;
    }
    vals.sort_by(f64::total_cmp);
    let rank = ((NEAR_PERCENTILE * vals.len() as f64).ceil() as usize).max(1);
    vals[rank - 1].max(NEAR_STAT_FLOOR)
}

/// Normalizes valid pixels by `near_stat` and averages them per patch.
pub fn normalize_and_pool(map: &RadialMap, mask: &[bool], near_stat: f64, patch_size: usize) -> Result<TokenTargets> {
    if patch_size == 0 || !map.height.is_multiple_of(patch_size) || !map.width.is_multiple_of(patch_size) {
        return Err(CrepeError::config(format!(
            "image {}x{} is not divisible by patch size {patch_size}",
            map.width, map.height
        )));
    }
    if mask.len() != map.len() {
        return Err(CrepeError::input("mask does not match the radial map"));
    }
    if !(near_stat.is_finite() && near_stat > 0.0) {
        return Err(CrepeError::input(format!("near-distance statistic must be positive, got {near_stat}")));
    }
    let rows = map.height / patch_size;
    let cols = map.width / patch_size;
    let per_patch = patch_size * patch_size;
    let mut targets = Vec::with_capacity(map.frames * rows * cols);
    let mut token_mask = Vec::with_capacity(map.frames * rows * cols);
    for f in 0..map.frames {
        for tr in 0..rows {
            for tc in 0..cols {
                let mut sum = 0.0;
                let mut count = 0usize;
                for y in tr * patch_size..(tr + 1) * patch_size {
                    for x in tc * patch_size..(tc + 1) * patch_size {
                        let idx = (f * map.height + y) * map.width + x;
                        if mask[idx] {
                            sum += f64::from(map.values[idx]) / near_stat;
                            count += 1;
                        }
                    }
                }
                let valid = count > 0 && count as f64 >= TOKEN_VALID_FRACTION * per_patch as f64;
                targets.push(if valid { sum / count as f64 } else { 0.0 });
                token_mask.push(valid);
            }
        }
    }
    Ok(TokenTargets { frames: map.frames, rows, cols, targets, mask: token_mask, near_stat })
}

/// The full filter → statistic → pool pipeline.
pub fn prepare_targets(map: &RadialMap, r_max: f64, patch_size: usize) -> Result<TokenTargets> {
    let mask = validity_mask(map, r_max);
    let near = near_distance_stat(map, &mask);
    normalize_and_pool(map, &mask, near, patch_size)
}

/// Which branch of the uncertainty scale is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleRegime {
    Floor,
    Interior,
    Ceiling,
}

fn scale_parts(interval: &RadialInterval, config: &LossConfig) -> (f64, ScaleRegime, f64, f64) {
    let w = interval.half_width();
    let hi = (interval.mu + w).exp();
    let lo = (interval.mu - w).exp();
    let var = (hi - lo) * (hi - lo) / 12.0;
    if var < config.s_floor_var {
        return (config.s_floor_var.sqrt(), ScaleRegime::Floor, hi, lo);
    }
    let s = var.sqrt();
    if s > config.s_ceiling {
        (config.s_ceiling, ScaleRegime::Ceiling, hi, lo)
    } else {
        (s, ScaleRegime::Interior, hi, lo)
    }
}

/// Standard deviation of a uniform distribution on `[e^(mu-|σ|), e^(mu+|σ|)]`,
/// floored through its variance and capped at the ceiling.
pub fn uncertainty_scale(interval: &RadialInterval) -> f64 {
    uncertainty_scale_with(interval, &LossConfig::default())
}

pub fn uncertainty_scale_with(interval: &RadialInterval, config: &LossConfig) -> f64 {
    scale_parts(interval, config).0
}

pub fn scale_regime(interval: &RadialInterval, config: &LossConfig) -> ScaleRegime {
    scale_parts(interval, config).1
}

/// Loss value with per-token gradients (zero on invalid tokens).
#[derive(Debug, Clone, PartialEq)]
pub struct RadialLoss {
    pub loss: f64,
    pub grad_mu: Vec<f64>,
    pub grad_sigma: Vec<f64>,
    pub valid_tokens: usize,
    /// No valid token: the loss and gradients are zero.
    pub empty: bool,
}

/// Per-token term `|e^mu - r| / s + alpha log s` and its gradient w.r.t. `(mu, sigma)`.
pub fn token_loss(interval: &RadialInterval, target: f64, config: &LossConfig) -> (f64, [f64; 2]) {
    let (s, regime, hi, lo) = scale_parts(interval, config);
    let pred = interval.mu.exp();
    let resid = pred - target;
    let value = resid.abs() / s + config.alpha * s.ln();

    let sign = if resid > 0.0 {
        1.0
    } else if resid < 0.0 {
        -1.0
    } else {
        0.0
    };
    let d_value_d_s = -resid.abs() / (s * s) + config.alpha / s;
    let (ds_dmu, ds_dw) = match regime {
        ScaleRegime::Interior => {
            let k = 1.0 / 12f64.sqrt();
            ((hi - lo) * k, (hi + lo) * k)
        }
        ScaleRegime::Floor | ScaleRegime::Ceiling => (0.0, 0.0),
    };
    let g_mu = sign * pred / s + d_value_d_s * ds_dmu;
    let g_sigma = d_value_d_s * ds_dw * 1f64.copysign(interval.sigma);
    (value, [g_mu, g_sigma])
}

/// Mean of the per-token terms over valid tokens.
///
/// Summation runs in token order so the value is bit-reproducible.
pub fn radial_loss(intervals: &[RadialInterval], targets: &TokenTargets, config: &LossConfig) -> Result<RadialLoss> {
    if intervals.len() != targets.len() {
        return Err(CrepeError::input(format!("{} intervals for {} token targets", intervals.len(), targets.len())));
    }
    let n = targets.valid_count();
    let mut out = RadialLoss {
        loss: 0.0,
        grad_mu: vec![0.0; intervals.len()],
        grad_sigma: vec![0.0; intervals.len()],
        valid_tokens: n,
        empty: n == 0,
    };
    if n == 0 {
        return Ok(out);
    }
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    for (i, interval) in intervals.iter().enumerate() {
        if !targets.mask[i] {
            continue;
        }
        let (v, [gm, gs]) = token_loss(interval, targets.targets[i], config);
        total += v;
        out.grad_mu[i] = gm * inv;
        out.grad_sigma[i] = gs * inv;
    }
    out.loss = total * inv;
    Ok(out)
}

/// Whether supervision applies at diffusion time `t` (1 = noisiest).
pub fn timestep_gate(t: f64, gate_fraction: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&t) {
        return Err(CrepeError::input(format!("timestep must lie in [0, 1], got {t}")));
    }
    Ok(t <= 1.0 - gate_fraction)
}
