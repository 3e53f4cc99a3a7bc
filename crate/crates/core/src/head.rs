//! Per-token geometry head: LayerNorm → Linear → SiLU → Linear → clamp.
//!
//! The final layer starts at zero weights with bias `(0, 3)`, so a freshly
//! initialized head predicts the full log interval `[-3, 3]` for any input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CrepeError, Result};
use crate::phasor::{RadialInterval, LOG_BOUND};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_OUTPUT_BIAS: [f64; 2] = [0.0, 3.0];

pub fn hidden_width(d_model: usize) -> usize {
    (d_model / 4).max(16)
}

/// Head parameters. Matrices are row-major with inputs along rows:
/// `w1[i * d_hidden + j]` maps input `i` to hidden unit `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub d_model: usize,
    pub d_hidden: usize,
    pub norm_scale: Vec<f64>,
    pub norm_bias: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: [f64; 2],
}

/// Gradients with the same layout as [`HeadParams`], plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub norm_scale: Vec<f64>,
    pub norm_bias: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: [f64; 2],
    pub feature: Vec<f64>,
}

impl HeadParams {
    /// Tensor names and shapes in declaration order.
    pub fn shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        vec![
            ("norm_scale", vec![self.d_model]),
            ("norm_bias", vec![self.d_model]),
            ("w1", vec![self.d_model, self.d_hidden]),
            ("b1", vec![self.d_hidden]),
            ("w2", vec![self.d_hidden, 2]),
            ("b2", vec![2]),
        ]
    }

    pub fn num_params(&self) -> usize {
        Self::count_for(self.d_model)
    }

    /// Parameter count of a head on `d_model` features.
    pub fn count_for(d_model: usize) -> usize {
        let h = hidden_width(d_model);
        2 * d_model + d_model * h + h + 2 * h + 2
    }

    /// All parameters concatenated in declaration order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.norm_scale);
        v.extend_from_slice(&self.norm_bias);
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn from_flat(d_model: usize, flat: &[f64]) -> Result<Self> {
        let d_hidden = hidden_width(d_model);
        let mut p = Self::zeros(d_model);
        if flat.len() != p.num_params() {
            return Err(CrepeError::input(format!(
                "expected {} parameters for d_model {d_model}, got {}",
                p.num_params(),
                flat.len()
            )));
        }
        let mut rest = flat;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        p.norm_scale = take(d_model);
        p.norm_bias = take(d_model);
        p.w1 = take(d_model * d_hidden);
        p.b1 = take(d_hidden);
        p.w2 = take(2 * d_hidden);
        let b2 = take(2);
        p.b2 = [b2[0], b2[1]];
        Ok(p)
    }

    fn zeros(d_model: usize) -> Self {
        let d_hidden = hidden_width(d_model);
        Self {
            d_model,
            d_hidden,
            norm_scale: vec![0.0; d_model],
            norm_bias: vec![0.0; d_model],
            w1: vec![0.0; d_model * d_hidden],
            b1: vec![0.0; d_hidden],
            w2: vec![0.0; d_hidden * 2],
            b2: [0.0; 2],
        }
    }
}

impl HeadGrads {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(&self.norm_scale);
        v.extend_from_slice(&self.norm_bias);
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.extend_from_slice(&self.b2);
        v
    }
}

/// Seeded head. First layer is uniform in `±1/sqrt(d_model)`.
pub fn head_init(d_model: usize, seed: u64) -> HeadParams {
    let d_model = d_model.max(1);
    let mut p = HeadParams::zeros(d_model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (d_model as f64).sqrt();
    p.norm_scale.fill(1.0);
    for w in p.w1.iter_mut().chain(p.b1.iter_mut()) {
        *w = rng.random_range(-bound..bound);
    }
    p.b2 = INIT_OUTPUT_BIAS;
    p
}

struct Forward {
    xhat: Vec<f64>,
    inv_std: f64,
    normed: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    raw: [f64; 2],
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_feature(params: &HeadParams, feature: &[f64]) -> Result<()> {
    if feature.len() != params.d_model {
        return Err(CrepeError::input(format!(
            "feature has {} values, head expects {}",
            feature.len(),
            params.d_model
        )));
    }
    if !feature.iter().all(|v| v.is_finite()) {
        return Err(CrepeError::input("feature must be finite"));
    }
    Ok(())
}

fn forward(p: &HeadParams, x: &[f64]) -> Forward {
    let n = p.d_model as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    let normed: Vec<f64> =
        xhat.iter().zip(p.norm_scale.iter().zip(&p.norm_bias)).map(|(h, (g, b))| h * g + b).collect();

    let mut pre = p.b1.clone();
    for (i, y) in normed.iter().enumerate() {
        let row = &p.w1[i * p.d_hidden..(i + 1) * p.d_hidden];
        for (a, w) in pre.iter_mut().zip(row) {
            *a += y * w;
        }
    }
    let hidden: Vec<f64> = pre.iter().map(|a| a * sigmoid(*a)).collect();

    let mut raw = p.b2;
    for (j, h) in hidden.iter().enumerate() {
        raw[0] += h * p.w2[2 * j];
        raw[1] += h * p.w2[2 * j + 1];
    }
    Forward { xhat, inv_std, normed, pre, hidden, raw }
}

/// Unclamped `(mu_raw, sigma_raw)`.
pub fn head_forward_raw(params: &HeadParams, feature: &[f64]) -> Result<[f64; 2]> {
    check_feature(params, feature)?;
    Ok(forward(params, feature).raw)
}

pub fn head_forward(params: &HeadParams, feature: &[f64]) -> Result<RadialInterval> {
    let [mu, sigma] = head_forward_raw(params, feature)?;
    Ok(RadialInterval::new(mu, sigma).clamped())
}

/// Jacobian of the clamp, `[[dmu/dmu_raw, dmu/dsigma_raw], [dsigma/dmu_raw, dsigma/dsigma_raw]]`.
/// Saturated regions have zero slope.
pub fn clamp_jacobian(raw: [f64; 2]) -> [[f64; 2]; 2] {
    let [m, s] = raw;
    let dmu = if m > -LOG_BOUND && m < LOG_BOUND { 1.0 } else { 0.0 };
    let mu = m.clamp(-LOG_BOUND, LOG_BOUND);
    let sign = 1f64.copysign(s);
    let (hi, lo) = (LOG_BOUND - mu, mu + LOG_BOUND);
    let w = s.abs();
    let dsigma = if w <= hi && w <= lo {
        [0.0, 1.0]
    } else if hi <= lo {
        [-sign * dmu, 0.0]
    } else {
        [sign * dmu, 0.0]
    };
    [[dmu, 0.0], dsigma]
}

/// Reverse-mode gradients of `grad_mu * mu + grad_sigma * sigma`, where
/// `(mu, sigma)` is the clamped head output.
pub fn head_backward(params: &HeadParams, feature: &[f64], grad_mu: f64, grad_sigma: f64) -> Result<HeadGrads> {
    check_feature(params, feature)?;
    let p = params;
    let f = forward(p, feature);
    let jac = clamp_jacobian(f.raw);
    let g_raw = [grad_mu * jac[0][0] + grad_sigma * jac[1][0], grad_mu * jac[0][1] + grad_sigma * jac[1][1]];

    let mut w2 = vec![0.0; 2 * p.d_hidden];
    let mut d_pre = vec![0.0; p.d_hidden];
    for j in 0..p.d_hidden {
        w2[2 * j] = f.hidden[j] * g_raw[0];
        w2[2 * j + 1] = f.hidden[j] * g_raw[1];
        let d_hidden = p.w2[2 * j] * g_raw[0] + p.w2[2 * j + 1] * g_raw[1];
        let a = f.pre[j];
        let sg = sigmoid(a);
        d_pre[j] = d_hidden * sg * (1.0 + a * (1.0 - sg));
    }

    let mut w1 = vec![0.0; p.d_model * p.d_hidden];
    let mut d_normed = vec![0.0; p.d_model];
    for i in 0..p.d_model {
        let row = &p.w1[i * p.d_hidden..(i + 1) * p.d_hidden];
        let grow = &mut w1[i * p.d_hidden..(i + 1) * p.d_hidden];
        let y = f.normed[i];
        let mut acc = 0.0;
        for j in 0..p.d_hidden {
            grow[j] = y * d_pre[j];
            acc += row[j] * d_pre[j];
        }
        d_normed[i] = acc;
    }

    let norm_scale: Vec<f64> = d_normed.iter().zip(&f.xhat).map(|(d, h)| d * h).collect();
    let d_xhat: Vec<f64> = d_normed.iter().zip(&p.norm_scale).map(|(d, g)| d * g).collect();
    let n = p.d_model as f64;
    let mean_d = d_xhat.iter().sum::<f64>() / n;
    let mean_dx = d_xhat.iter().zip(&f.xhat).map(|(d, h)| d * h).sum::<f64>() / n;
    let feature_grad = d_xhat.iter().zip(&f.xhat).map(|(d, h)| f.inv_std * (d - mean_d - h * mean_dx)).collect();

    Ok(HeadGrads { norm_scale, norm_bias: d_normed, w1, b1: d_pre, w2, b2: g_raw, feature: feature_grad })
}
