//! Analytic-vs-central-difference gradient checks for the head and the
//! radial loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::harness::config::GradcheckConfig;
use crate::head::{head_backward, head_forward, head_forward_raw, head_init, HeadParams};
use crate::phasor::{RadialInterval, LOG_BOUND};
use crate::supervision::{radial_loss, LossConfig, TokenTargets};

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Head with every tensor randomized, output bias included.
pub fn random_head(d_model: usize, rng: &mut ChaCha8Rng) -> HeadParams {
    let mut p = head_init(d_model, rng.random());
    for v in p.norm_scale.iter_mut() {
        *v = rng.random_range(0.5..1.5);
    }
    for v in p.norm_bias.iter_mut().chain(p.w2.iter_mut()) {
        *v = rng.random_range(-0.3..0.3);
    }
    p.b2 = [rng.random_range(-3.5..3.5), rng.random_range(-3.5..3.5)];
    p
}

/// Whether the raw head output is clamp-saturated or within `margin` of a
/// clamp kink.
pub fn clamp_saturated(raw: [f64; 2], margin: f64) -> bool {
    let mu = raw[0].clamp(-LOG_BOUND, LOG_BOUND);
    let w = raw[1].abs();
    raw[0].abs() > LOG_BOUND - margin || w > LOG_BOUND - mu.abs() - margin || w < margin
}

/// Whether a token's loss is non-smooth within `margin` of `(mu, sigma)`:
/// the residual kink, the scale floor/ceiling switches or `sigma = 0`.
pub fn near_loss_kink(interval: &RadialInterval, target: f64, cfg: &LossConfig, margin: f64) -> bool {
    let w = interval.half_width();
    let (hi, lo) = ((interval.mu + w).exp(), (interval.mu - w).exp());
    let var = (hi - lo) * (hi - lo) / 12.0;
    ((interval.mu.exp() - target) / target).abs() < margin
        || (var / cfg.s_floor_var - 1.0).abs() < margin * 10.0
        || (var.sqrt() / cfg.s_ceiling - 1.0).abs() < margin
        || w < margin
}

/// Largest relative error over every parameter and input of one head.
fn head_point_error(p: &HeadParams, x: &[f64], gm: f64, gs: f64, h: f64) -> Result<f64> {
    let g = head_backward(p, x, gm, gs)?;
    let objective = |q: &HeadParams, x: &[f64]| -> Result<f64> {
        let o = head_forward(q, x)?;
        Ok(gm * o.mu + gs * o.sigma)
    };
    let flat = p.to_flat();
    let analytic = g.to_flat();
    let mut worst = 0.0f64;
    for i in 0..flat.len() {
        let mut a = flat.clone();
        a[i] += h;
        let mut b = flat.clone();
        b[i] -= h;
        let num = (objective(&HeadParams::from_flat(p.d_model, &a)?, x)?
            - objective(&HeadParams::from_flat(p.d_model, &b)?, x)?)
            / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], num));
    }
    for i in 0..x.len() {
        let mut a = x.to_vec();
        a[i] += h;
        let mut b = x.to_vec();
        b[i] -= h;
        let num = (objective(p, &a)? - objective(p, &b)?) / (2.0 * h);
        worst = worst.max(relative_error(g.feature[i], num));
    }
    Ok(worst)
}

fn loss_point_error(intervals: &[RadialInterval], targets: &TokenTargets, cfg: &LossConfig, h: f64) -> Result<f64> {
    let base = radial_loss(intervals, targets, cfg)?;
    let mut worst = 0.0f64;
    for i in 0..intervals.len() {
        for param in 0..2 {
            let shift = |d: f64| {
                let mut v = intervals.to_vec();
                if param == 0 {
                    v[i].mu += d;
                } else {
                    v[i].sigma += d;
                }
                v
            };
            let num =
                (radial_loss(&shift(h), targets, cfg)?.loss - radial_loss(&shift(-h), targets, cfg)?.loss) / (2.0 * h);
            let analytic = if param == 0 { base.grad_mu[i] } else { base.grad_sigma[i] };
            worst = worst.max(relative_error(analytic, num));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub head_points: usize,
    /// Draws skipped because the head output was clamp-saturated or at a kink.
    pub head_excluded: usize,
    pub head_max_error: f64,
    pub loss_points: usize,
    /// Draws with a token at a subgradient point; flagged, never failed.
    pub loss_flagged: usize,
    pub loss_max_error: f64,
    pub pass: bool,
}

pub fn run_gradcheck(cfg: &GradcheckConfig, loss_cfg: &LossConfig, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut head_points, mut head_excluded, mut head_max_error) = (0, 0, 0.0f64);
    while head_points < cfg.points {
        let p = random_head(cfg.d_model, &mut rng);
        let x: Vec<f64> = (0..cfg.d_model).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (gm, gs) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        if clamp_saturated(head_forward_raw(&p, &x)?, cfg.kink_margin) {
            head_excluded += 1;
            continue;
        }
        head_max_error = head_max_error.max(head_point_error(&p, &x, gm, gs, cfg.step)?);
        head_points += 1;
    }

    let n = cfg.tokens_per_loss.max(1);
    let (mut loss_points, mut loss_flagged, mut loss_max_error) = (0, 0, 0.0f64);
    let mut draw = 0usize;
    while loss_points < cfg.points {
        draw += 1;
        let intervals: Vec<RadialInterval> = (0..n)
            .map(|_| RadialInterval::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)).clamped())
            .collect();
        let mut targets: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..20.0)).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.8).collect();
        // every tenth draw puts a token exactly on the residual kink
        if draw.is_multiple_of(10) {
            targets[0] = intervals[0].mu.exp();
        }
        let flagged = (0..n).any(|i| mask[i] && near_loss_kink(&intervals[i], targets[i], loss_cfg, cfg.kink_margin));
        if flagged {
            loss_flagged += 1;
            continue;
        }
        let t = TokenTargets { frames: 1, rows: 1, cols: n, targets, mask, near_stat: 1.0 };
        loss_max_error = loss_max_error.max(loss_point_error(&intervals, &t, loss_cfg, cfg.step)?);
        loss_points += 1;
    }

    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        head_points,
        head_excluded,
        head_max_error,
        loss_points,
        loss_flagged,
        loss_max_error,
        pass: head_max_error < cfg.tolerance && loss_max_error < cfg.tolerance,
    })
}
