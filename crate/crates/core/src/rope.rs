//! Rotary positional encoding with one channel group per coordinate.
//!
//! Channels are interleaved pairs: pair `i` occupies channels `2i` and `2i+1`.
//! Each coordinate owns a contiguous run of pairs, one per frequency.

use serde::{Deserialize, Serialize};

use crate::error::{CrepeError, Result};

/// Default rotary frequency base.
pub const DEFAULT_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateGroup {
    pub coordinate: usize,
    /// Strictly decreasing.
    pub frequencies: Vec<f64>,
    /// First channel of the group (always even).
    pub channel_offset: usize,
}

impl CoordinateGroup {
    pub fn channels(&self) -> std::ops::Range<usize> {
        self.channel_offset..self.channel_offset + 2 * self.frequencies.len()
    }

    pub fn pair_range(&self) -> std::ops::Range<usize> {
        self.channel_offset / 2..self.channel_offset / 2 + self.frequencies.len()
    }
}

/// Assignment of rotary frequencies to coordinates and channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPlan {
    groups: Vec<CoordinateGroup>,
    total_dim: usize,
}

impl FrequencyPlan {
    pub fn groups(&self) -> &[CoordinateGroup] {
        &self.groups
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn num_pairs(&self) -> usize {
        self.total_dim / 2
    }

    pub fn num_coordinates(&self) -> usize {
        self.groups.len()
    }
}

/// Splits `total_dim` channels evenly over `num_coordinates` coordinates with
/// frequencies `base^(-2(f-1)/D_c)`.
pub fn make_frequency_plan(total_dim: usize, num_coordinates: usize, base: f64) -> Result<FrequencyPlan> {
    if num_coordinates == 0 || total_dim == 0 || !total_dim.is_multiple_of(2 * num_coordinates) {
        return Err(CrepeError::config(format!(
            "total_dim {total_dim} is not divisible by 2 * num_coordinates ({num_coordinates})"
        )));
    }
    let per_coord = total_dim / num_coordinates;
    let num_freqs = per_coord / 2;
    if !(base.is_finite() && base > 0.0) || (num_freqs > 1 && base <= 1.0) {
        return Err(CrepeError::config(format!(
            "frequency base must exceed 1 for strictly decreasing frequencies, got {base}"
        )));
    }
    let frequencies: Vec<f64> = (0..num_freqs).map(|f| base.powf(-2.0 * f as f64 / per_coord as f64)).collect();
    let groups = (0..num_coordinates)
        .map(|c| CoordinateGroup { coordinate: c, frequencies: frequencies.clone(), channel_offset: c * per_coord })
        .collect();
    Ok(FrequencyPlan { groups, total_dim })
}

/// Phase `ω_f · x_c` for every (coordinate, frequency) pair, in channel order.
pub fn rope_phases(plan: &FrequencyPlan, coords: &[f64]) -> Result<Vec<f64>> {
    if coords.len() != plan.groups.len() {
        return Err(CrepeError::input(format!("expected {} coordinates, got {}", plan.groups.len(), coords.len())));
    }
    if !coords.iter().all(|c| c.is_finite()) {
        return Err(CrepeError::input("coordinates must be finite"));
    }
    let mut phases = vec![0.0; plan.num_pairs()];
    for (group, &x) in plan.groups.iter().zip(coords) {
        for (slot, &w) in phases[group.pair_range()].iter_mut().zip(&group.frequencies) {
            *slot = w * x;
        }
    }
    Ok(phases)
}

/// Per-pair `(c, s)` coefficients. Exact rotations have unit magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationCoefficients {
    pub pairs: Vec<[f64; 2]>,
}

impl RotationCoefficients {
    pub fn identity(num_pairs: usize) -> Self {
        Self { pairs: vec![[1.0, 0.0]; num_pairs] }
    }
}

pub fn exact_rotation(phases: &[f64]) -> RotationCoefficients {
    RotationCoefficients { pairs: phases.iter().map(|t| [t.cos(), t.sin()]).collect() }
}

/// Applies `(a, b) -> (c·a - s·b, s·a + c·b)` to every channel pair.
pub fn apply_coefficients(vec: &[f64], pairs: &[[f64; 2]], plan: &FrequencyPlan) -> Result<Vec<f64>> {
    if vec.len() != plan.total_dim || pairs.len() != plan.num_pairs() {
        return Err(CrepeError::input(format!(
            "dimension mismatch: vector {}, coefficients {}, plan {}",
            vec.len(),
            pairs.len(),
            plan.total_dim
        )));
    }
    let mut out = vec![0.0; vec.len()];
    for ((o, v), &[c, s]) in out.chunks_exact_mut(2).zip(vec.chunks_exact(2)).zip(pairs) {
        o[0] = c * v[0] - s * v[1];
        o[1] = s * v[0] + c * v[1];
    }
    Ok(out)
}
