//! Head-only regression of radial intervals from frozen features.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::TokenBatch;
use crate::error::{CrepeError, Result};
use crate::head::{head_backward, head_forward, HeadParams};
use crate::supervision::{token_loss, LossConfig, TokenTargets};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Every `holdout_every`-th valid token is held out.
    pub holdout_every: usize,
    pub log_every: usize,
    /// Global gradient-norm cap; `None` is unclipped descent.
    pub clip_norm: Option<f64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { steps: 2000, learning_rate: 1e-2, holdout_every: 4, log_every: 100, clip_norm: Some(1.0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub init_loss: f64,
    pub final_loss: f64,
    /// `(init - final) / |init|` on the training split.
    pub reduction: f64,
    /// Held-out mean squared error of `exp(mu)` against the target.
    pub heldout_error: f64,
    /// Held-out mean squared error of the training-split target mean.
    pub baseline_error: f64,
    pub curve: Vec<(usize, f64)>,
    pub params: HeadParams,
}

impl ProbeReport {
    /// Held-out error relative to the constant baseline; 1 means no signal.
    pub fn relative_error(&self) -> f64 {
        self.heldout_error / self.baseline_error.max(f64::MIN_POSITIVE)
    }
}

/// Indices of valid tokens, split into (train, held-out).
pub fn split_tokens(targets: &TokenTargets, holdout_every: usize) -> (Vec<usize>, Vec<usize>) {
    let valid = (0..targets.len()).filter(|i| targets.mask[*i]);
    if holdout_every < 2 {
        return (valid.collect(), Vec::new());
    }
    valid.enumerate().fold((Vec::new(), Vec::new()), |(mut tr, mut ho), (n, i)| {
        if n % holdout_every == holdout_every - 1 {
            ho.push(i);
        } else {
            tr.push(i);
        }
        (tr, ho)
    })
}

fn mean_loss(
    params: &HeadParams,
    batch: &TokenBatch,
    targets: &TokenTargets,
    idx: &[usize],
    cfg: &LossConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for &i in idx {
        let interval = head_forward(params, &batch.features[i])?;
        total += token_loss(&interval, targets.targets[i], cfg).0;
    }
    Ok(total / idx.len() as f64)
}

fn squared_error(params: &HeadParams, batch: &TokenBatch, targets: &TokenTargets, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &i in idx {
        let pred = head_forward(params, &batch.features[i])?.mu.exp();
        total += (pred - targets.targets[i]).powi(2);
    }
    Ok(total / idx.len() as f64)
}

/// Fixed-step gradient descent on the mean radial loss over the training split.
///
/// Unclipped descent is unstable once the scale nears its floor: a single
/// overshoot can push `mu` into the saturated clamp region, where every
/// gradient vanishes. `clip_norm` bounds the step.
///
/// Per-token gradients are computed in parallel and reduced in token order,
/// so the result does not depend on thread scheduling.
pub fn train_probe(
    batch: &TokenBatch,
    targets: &TokenTargets,
    init: HeadParams,
    probe: &ProbeConfig,
    loss_cfg: &LossConfig,
) -> Result<ProbeReport> {
    if batch.len() != targets.len() {
        return Err(CrepeError::input(format!("{} features for {} targets", batch.len(), targets.len())));
    }
    let (train, holdout) = split_tokens(targets, probe.holdout_every);
    if train.is_empty() {
        return Err(CrepeError::input("no valid training tokens"));
    }
    let inv_n = 1.0 / train.len() as f64;
    let mut params = init;
    let mut flat = params.to_flat();
    let init_loss = mean_loss(&params, batch, targets, &train, loss_cfg)?;
    let mut curve = vec![(0, init_loss)];

    for step in 1..=probe.steps {
        let grads: Vec<Vec<f64>> = train
            .par_iter()
            .map(|&i| {
                let feature = &batch.features[i];
                let interval = head_forward(&params, feature)?;
                let (_, [gm, gs]) = token_loss(&interval, targets.targets[i], loss_cfg);
                Ok(head_backward(&params, feature, gm * inv_n, gs * inv_n)?.to_flat())
            })
            .collect::<Result<_>>()?;
        let mut total = vec![0.0; flat.len()];
        for g in &grads {
            total.iter_mut().zip(g).for_each(|(t, v)| *t += v);
        }
        let norm = total.iter().map(|g| g * g).sum::<f64>().sqrt();
        let factor = match probe.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        flat.iter_mut().zip(&total).for_each(|(p, g)| *p -= probe.learning_rate * factor * g);
        params = HeadParams::from_flat(params.d_model, &flat)?;

        if step % probe.log_every.max(1) == 0 || step == probe.steps {
            let loss = mean_loss(&params, batch, targets, &train, loss_cfg)?;
            if !loss.is_finite() {
                return Err(CrepeError::Diverged(format!("non-finite loss {loss} at step {step}")));
            }
            curve.push((step, loss));
        }
    }

    let final_loss = mean_loss(&params, batch, targets, &train, loss_cfg)?;
    if !final_loss.is_finite() {
        return Err(CrepeError::Diverged(format!("non-finite final loss {final_loss}")));
    }
    let train_mean = train.iter().map(|i| targets.targets[*i]).sum::<f64>() * inv_n;
    let baseline_error = if holdout.is_empty() {
        0.0
    } else {
        holdout.iter().map(|i| (targets.targets[*i] - train_mean).powi(2)).sum::<f64>() / holdout.len() as f64
    };
    Ok(ProbeReport {
        init_loss,
        final_loss,
        reduction: (init_loss - final_loss) / init_loss.abs().max(f64::MIN_POSITIVE),
        heldout_error: squared_error(&params, batch, targets, &holdout)?,
        baseline_error,
        curve,
        params,
    })
}
