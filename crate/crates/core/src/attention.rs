//! Single-head geometric attention with key-side expected rotary modulation.
//!
//! Queries are left unrotated. Each key is modulated by the coefficients of
//! its (query frame, key token) pair, and the branch output goes through a
//! zero-initialized projection before being added back to the input feature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CrepeError, Result};
use crate::phasor::ModulationCoefficients;
use crate::rope::{apply_coefficients, FrequencyPlan};

/// Projection weights; `wq`, `wk`, `wv` are `d_model x d`, `wo` is `d x d_model`,
/// all row-major with inputs along rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub d_model: usize,
    pub d: usize,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
}

impl AttentionParams {
    /// Seeded uniform `±1/sqrt(d_model)` projections and an all-zero output.
    pub fn init(d_model: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d_model.max(1) as f64).sqrt();
        let mut draw = || (0..d_model * d).map(|_| rng.random_range(-bound..bound)).collect::<Vec<_>>();
        let wq = draw();
        let wk = draw();
        let wv = draw();
        Self { d_model, d, wq, wk, wv, wo: vec![0.0; d * d_model] }
    }
}

/// Token features on a `(frame, patch)` grid, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub frames: usize,
    pub patches: usize,
    pub features: Vec<Vec<f64>>,
}

impl TokenBatch {
    pub fn new(frames: usize, patches: usize, features: Vec<Vec<f64>>) -> Result<Self> {
        if features.len() != frames * patches {
            return Err(CrepeError::input(format!("{} features for a {frames}x{patches} grid", features.len())));
        }
        if let Some(first) = features.first() {
            let d = first.len();
            if features.iter().any(|f| f.len() != d) {
                return Err(CrepeError::input("token features have differing widths"));
            }
        }
        if !features.iter().flatten().all(|v| v.is_finite()) {
            return Err(CrepeError::input("token features must be finite"));
        }
        Ok(Self { frames, patches, features })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn frame_of(&self, token: usize) -> usize {
        token / self.patches
    }
}

/// Coefficients for every (query frame, key token) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    pub frames: usize,
    pub tokens: usize,
    pub entries: Vec<ModulationCoefficients>,
}

impl CoefficientTable {
    pub fn new(frames: usize, tokens: usize, entries: Vec<ModulationCoefficients>) -> Result<Self> {
        if entries.len() != frames * tokens {
            return Err(CrepeError::input(format!(
                "{} coefficient sets for {frames} query frames x {tokens} keys",
                entries.len()
            )));
        }
        Ok(Self { frames, tokens, entries })
    }

    pub fn identity(frames: usize, tokens: usize, num_pairs: usize) -> Self {
        Self { frames, tokens, entries: vec![ModulationCoefficients::identity(num_pairs); frames * tokens] }
    }

    pub fn get(&self, query_frame: usize, key: usize) -> &ModulationCoefficients {
        &self.entries[query_frame * self.tokens + key]
    }
}

fn project(x: &[f64], w: &[f64], out_dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_dim];
    for (xi, row) in x.iter().zip(w.chunks_exact(out_dim)) {
        for (o, wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
    out
}

pub fn modulate_key(key: &[f64], coeffs: &ModulationCoefficients, plan: &FrequencyPlan) -> Result<Vec<f64>> {
    apply_coefficients(key, &coeffs.pairs, plan)
}

/// Row-max stabilized softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn check_inputs(
    params: &AttentionParams,
    batch: &TokenBatch,
    table: &CoefficientTable,
    plan: &FrequencyPlan,
) -> Result<()> {
    if params.d != plan.total_dim() {
        return Err(CrepeError::config(format!("head dim {} does not match plan dim {}", params.d, plan.total_dim())));
    }
    if batch.features.first().is_some_and(|f| f.len() != params.d_model) {
        return Err(CrepeError::input("feature width does not match d_model"));
    }
    if table.frames < batch.frames || table.tokens != batch.len() {
        return Err(CrepeError::input(format!(
            "missing coefficients: table covers {}x{}, batch needs {}x{}",
            table.frames,
            table.tokens,
            batch.frames,
            batch.len()
        )));
    }
    Ok(())
}

struct Projected {
    queries: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

fn project_all(params: &AttentionParams, batch: &TokenBatch) -> Projected {
    let proj = |w: &[f64]| batch.features.iter().map(|h| project(h, w, params.d)).collect();
    Projected { queries: proj(&params.wq), keys: proj(&params.wk), values: proj(&params.wv) }
}

fn logits_for(
    params: &AttentionParams,
    proj: &Projected,
    batch: &TokenBatch,
    table: &CoefficientTable,
    plan: &FrequencyPlan,
    query: usize,
) -> Result<Vec<f64>> {
    let q_frame = batch.frame_of(query);
    let scale = 1.0 / (params.d as f64).sqrt();
    let q = &proj.queries[query];
    proj.keys
        .iter()
        .enumerate()
        .map(|(j, k)| {
            let km = modulate_key(k, table.get(q_frame, j), plan)?;
            Ok(q.iter().zip(&km).map(|(a, b)| a * b).sum::<f64>() * scale)
        })
        .collect()
}

/// Pre-softmax scores of one query token against every key.
pub fn attention_logits(
    params: &AttentionParams,
    batch: &TokenBatch,
    table: &CoefficientTable,
    plan: &FrequencyPlan,
    query: usize,
) -> Result<Vec<f64>> {
    check_inputs(params, batch, table, plan)?;
    if query >= batch.len() {
        return Err(CrepeError::input(format!("query token {query} out of range")));
    }
    logits_for(params, &project_all(params, batch), batch, table, plan, query)
}

/// Attention weights for every query token (one row per query).
pub fn attention_weights(
    params: &AttentionParams,
    batch: &TokenBatch,
    table: &CoefficientTable,
    plan: &FrequencyPlan,
) -> Result<Vec<Vec<f64>>> {
    check_inputs(params, batch, table, plan)?;
    let proj = project_all(params, batch);
    (0..batch.len()).map(|i| Ok(softmax(&logits_for(params, &proj, batch, table, plan, i)?))).collect()
}

/// Residual output `h_i + wo · Σ_j A_ij V_j` for every token.
pub fn attention_forward(
    params: &AttentionParams,
    batch: &TokenBatch,
    table: &CoefficientTable,
    plan: &FrequencyPlan,
) -> Result<Vec<Vec<f64>>> {
    check_inputs(params, batch, table, plan)?;
    let proj = project_all(params, batch);
    (0..batch.len())
        .map(|i| {
            let weights = softmax(&logits_for(params, &proj, batch, table, plan, i)?);
            let mut mixed = vec![0.0; params.d];
            for (a, v) in weights.iter().zip(&proj.values) {
                for (m, x) in mixed.iter_mut().zip(v) {
                    *m += a * x;
                }
            }
            let delta = project(&mixed, &params.wo, params.d_model);
            Ok(batch.features[i].iter().zip(&delta).map(|(h, d)| h + d).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasor::expected_phasor;
    use crate::rope::{make_frequency_plan, DEFAULT_BASE};
    use proptest::prelude::*;
    use rand::Rng;

    fn batch(frames: usize, patches: usize, d_model: usize, seed: u64) -> TokenBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats =
            (0..frames * patches).map(|_| (0..d_model).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        TokenBatch::new(frames, patches, feats).unwrap()
    }

    fn random_table(frames: usize, tokens: usize, pairs: usize, seed: u64) -> CoefficientTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..frames * tokens)
            .map(|_| ModulationCoefficients {
                pairs: (0..pairs)
                    .map(|_| expected_phasor(&[rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).unwrap())
                    .collect(),
                fallback: Vec::new(),
            })
            .collect();
        CoefficientTable::new(frames, tokens, entries).unwrap()
    }

    #[test]
    fn zero_output_projection_returns_input() {
        let plan = make_frequency_plan(12, 3, DEFAULT_BASE).unwrap();
        let b = batch(2, 3, 8, 1);
        let p = AttentionParams::init(8, 12, 2);
        let out = attention_forward(&p, &b, &random_table(2, 6, 6, 3), &plan).unwrap();
        assert_eq!(out, b.features);
    }

    #[test]
    fn equal_keys_give_uniform_weights() {
        let plan = make_frequency_plan(4, 1, DEFAULT_BASE).unwrap();
        let mut b = batch(1, 4, 6, 5);
        let shared = b.features[0].clone();
        b.features.iter_mut().for_each(|f| *f = shared.clone());
        let p = AttentionParams::init(6, 4, 1);
        let w = attention_weights(&p, &b, &CoefficientTable::identity(1, 4, 2), &plan).unwrap();
        for row in w {
            for a in row {
                assert!((a - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_token() {
        let plan = make_frequency_plan(4, 1, DEFAULT_BASE).unwrap();
        let b = batch(1, 1, 5, 8);
        let mut p = AttentionParams::init(5, 4, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        p.wo.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        let out = attention_forward(&p, &b, &CoefficientTable::identity(1, 1, 2), &plan).unwrap();
        let v = project(&b.features[0], &p.wv, 4);
        let want: Vec<f64> = b.features[0].iter().zip(project(&v, &p.wo, 5)).map(|(h, d)| h + d).collect();
        for (o, w) in out[0].iter().zip(&want) {
            assert!((o - w).abs() < 1e-14);
        }
    }

    #[test]
    fn missing_coefficients_rejected() {
        let plan = make_frequency_plan(4, 1, DEFAULT_BASE).unwrap();
        let b = batch(2, 2, 3, 0);
        let p = AttentionParams::init(3, 4, 0);
        let err = attention_forward(&p, &b, &CoefficientTable::identity(1, 4, 2), &plan);
        assert!(matches!(err, Err(CrepeError::Input(_))));
    }

    #[test]
    fn modulate_key_examples() {
        let plan = make_frequency_plan(4, 1, DEFAULT_BASE).unwrap();
        let key = [0.3, -1.2, 2.0, 0.7];
        assert_eq!(modulate_key(&key, &ModulationCoefficients::identity(2), &plan).unwrap(), key.to_vec());

        let dead = expected_phasor(&[0.0, 2.0 * std::f64::consts::PI]).unwrap();
        let c = ModulationCoefficients { pairs: vec![dead, [1.0, 0.0]], fallback: Vec::new() };
        let out = modulate_key(&key, &c, &plan).unwrap();
        assert!(out[0].abs() < 1e-15 && out[1].abs() < 1e-15);
        assert_eq!(&out[2..], &key[2..]);

        let rot = ModulationCoefficients { pairs: vec![[0.6, 0.8], [0.0, -1.0]], fallback: Vec::new() };
        let out = modulate_key(&key, &rot, &plan).unwrap();
        let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n(&out) - n(&key)).abs() < 1e-14);

        assert!(modulate_key(&key[..2], &rot, &plan).is_err());
    }

    proptest! {
        #[test]
        fn rows_sum_to_one(logits in prop::collection::vec(-700f64..700.0, 1..40)) {
            let w = softmax(&logits);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn key_permutation_invariance(seed in 0u64..500, rot in 0usize..6) {
            let plan = make_frequency_plan(12, 3, DEFAULT_BASE).unwrap();
            let b = batch(1, 6, 5, seed);
            let mut p = AttentionParams::init(5, 12, seed + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
            p.wo.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
            let table = random_table(1, 6, 6, seed + 3);
            let out = attention_forward(&p, &b, &table, &plan).unwrap();

            // Rotate keys (and their coefficients) while keeping query 0 in place
            // by permuting the tail only, then compare query 0's output.
            let mut order: Vec<usize> = (1..6).collect();
            order.rotate_left(rot % 5);
            order.insert(0, 0);
            let pb = TokenBatch::new(1, 6, order.iter().map(|&i| b.features[i].clone()).collect()).unwrap();
            let pt = CoefficientTable::new(1, 6, order.iter().map(|&i| table.entries[i].clone()).collect()).unwrap();
            let pout = attention_forward(&p, &pb, &pt, &plan).unwrap();
            for (x, y) in out[0].iter().zip(&pout[0]) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
