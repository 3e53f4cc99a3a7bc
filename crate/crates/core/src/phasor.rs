//! Expected rotary phasors along curved projected paths.
//!
//! A token's log radial distance is uniform on `[mu - |sigma|, mu + |sigma|]`.
//! The interval is discretized into `K` breakpoints, each breakpoint is lifted
//! along the source ray and projected into the query camera, and the rotary
//! phasor is averaged over the piecewise-linear phase segments in closed form.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{guarded_beta, ucm_unproject, Ray, RigidTransform, UcmCamera, BETA_GUARD};
use crate::error::{CrepeError, Result};
use crate::rope::{FrequencyPlan, RotationCoefficients};

/// Bound on `|mu|` and on `mu ± |sigma|` in log-normalized units.
pub const LOG_BOUND: f64 = 3.0;
/// Phase differences below this use the midpoint limit of the segment integral.
pub const SMALL_PHASE: f64 = 1e-6;
/// Default number of breakpoints.
pub const DEFAULT_K: usize = 5;
/// Number of offset rays per token.
pub const RAYS_PER_TOKEN: usize = 3;
/// Coordinates per offset ray: bounded u, bounded v, range.
pub const COORDS_PER_RAY: usize = 3;
/// Relative sub-patch positions `(x, y)` of the offset rays.
pub const PATCH_OFFSETS: [[f64; 2]; RAYS_PER_TOKEN] = [[0.5, 0.5], [0.25, 0.25], [0.75, 0.75]];

/// Uniform distribution over log radial distance, `z ~ U(mu - |sigma|, mu + |sigma|)`.
///
/// `sigma` keeps whatever sign it was produced with; only `|sigma|` is used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialInterval {
    pub mu: f64,
    pub sigma: f64,
}

impl RadialInterval {
    pub fn new(mu: f64, sigma: f64) -> Self {
        Self { mu, sigma }
    }

    pub fn half_width(&self) -> f64 {
        self.sigma.abs()
    }

    /// Clips `mu` to `[-3, 3]`, then caps `|sigma|` so the whole interval fits.
    pub fn clamped(&self) -> Self {
        let mu = self.mu.clamp(-LOG_BOUND, LOG_BOUND);
        let cap = (LOG_BOUND - mu).min(mu + LOG_BOUND);
        let width = self.sigma.abs().min(cap);
        Self { mu, sigma: width.copysign(self.sigma) }
    }

    pub fn is_within_bounds(&self) -> bool {
        let w = self.half_width();
        self.mu.abs() <= LOG_BOUND && self.mu - w >= -LOG_BOUND && self.mu + w <= LOG_BOUND
    }
}

/// `K` radial breakpoints `exp(z_k)`, evenly spaced in log distance.
pub fn breakpoints(interval: &RadialInterval, k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(CrepeError::config(format!("need at least 2 breakpoints, got {k}")));
    }
    let w = interval.half_width();
    let lo = interval.mu - w;
    let span = 2.0 * w;
    let denom = (k - 1) as f64;
    Ok((0..k).map(|i| (lo + i as f64 / denom * span).exp()).collect())
}

/// Query-view samples of a lifted source ray.
///
/// Each point is `(u_bounded, v_bounded, range)`; the first two lie in the
/// closed unit disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPath {
    pub points: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

impl ProjectedPath {
    pub fn valid_points(&self) -> impl Iterator<Item = &[f64; 3]> {
        self.points.iter().zip(&self.valid).filter(|(_, v)| **v).map(|(p, _)| p)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Bounded query-view coordinate of a point already expressed in the query
/// camera frame, plus its validity flag.
pub fn bounded_coordinate(cam_q: &UcmCamera, x: &Vector3<f64>) -> ([f64; 3], bool) {
    let range = x.norm();
    let raw_beta = x.z + cam_q.xi * range;
    let mut valid = range > 0.0 && raw_beta.abs() >= BETA_GUARD;
    if cam_q.xi == 0.0 && x.z <= 0.0 {
        valid = false;
    }
    let beta = guarded_beta(raw_beta);
    let u = cam_q.fx / cam_q.width as f64 * (x.x / beta);
    let v = cam_q.fy / cam_q.height as f64 * (x.y / beta);
    let n = (u * u + v * v + 1.0).sqrt();
    ([u / n, v / n, range], valid)
}

/// Lifts `ray` to each radius, moves the points into the query frame and
/// maps them to bounded query coordinates.
pub fn projected_path(cam_q: &UcmCamera, transform: &RigidTransform, ray: &Ray, radii: &[f64]) -> ProjectedPath {
    let (points, valid) =
        radii.iter().map(|&r| bounded_coordinate(cam_q, &transform.apply(&(ray.direction() * r)))).unzip();
    ProjectedPath { points, valid }
}

/// Mean of `exp(iθ)` over a linear phase ramp from `theta_a` to `theta_b`.
///
/// Written as `(cos m, sin m) · sin(h)/h` with `m` the midpoint and `h` the
/// half-difference, which equals the difference-quotient form exactly in real
/// arithmetic but does not cancel catastrophically.
pub fn segment_phasor(theta_a: f64, theta_b: f64) -> [f64; 2] {
    let mid = 0.5 * (theta_a + theta_b);
    let diff = theta_b - theta_a;
    if diff.abs() < SMALL_PHASE {
        return [mid.cos(), mid.sin()];
    }
    let half = 0.5 * diff;
    let sinc = half.sin() / half;
    [mid.cos() * sinc, mid.sin() * sinc]
}

/// Average of the segment phasors between consecutive phases.
pub fn expected_phasor(phases: &[f64]) -> Result<[f64; 2]> {
    if phases.len() < 2 {
        return Err(CrepeError::config(format!("expected phasor needs at least 2 phases, got {}", phases.len())));
    }
    let (c, s) = phases.windows(2).fold((0.0, 0.0), |(c, s), w| {
        let [dc, ds] = segment_phasor(w[0], w[1]);
        (c + dc, s + ds)
    });
    let n = (phases.len() - 1) as f64;
    Ok([c / n, s / n])
}

/// The `A` offset rays of one token.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRays {
    /// Pixel positions the rays were unprojected from.
    pub offsets: Vec<Vector2<f64>>,
    pub rays: Vec<Ray>,
}

/// Token grid `(rows, cols)` of a camera for a given patch size.
pub fn token_grid(cam: &UcmCamera, patch_size: u32) -> Result<(usize, usize)> {
    if patch_size == 0 {
        return Err(CrepeError::config("patch size must be positive"));
    }
    Ok(((cam.height / patch_size) as usize, (cam.width / patch_size) as usize))
}

pub fn patch_rays(cam_s: &UcmCamera, token: (usize, usize), patch_size: u32) -> Result<PatchRays> {
    let (rows, cols) = token_grid(cam_s, patch_size)?;
    let (row, col) = token;
    if row >= rows || col >= cols {
        return Err(CrepeError::input(format!("token ({row}, {col}) outside the {rows}x{cols} token grid")));
    }
    let ps = patch_size as f64;
    let offsets: Vec<Vector2<f64>> =
        PATCH_OFFSETS.iter().map(|[ox, oy]| Vector2::new((col as f64 + ox) * ps, (row as f64 + oy) * ps)).collect();
    let rays = offsets.iter().map(|px| ucm_unproject(cam_s, *px)).collect::<Result<Vec<_>>>()?;
    Ok(PatchRays { offsets, rays })
}

/// Expected modulation coefficients for one (query frame, key token) pair,
/// aligned pair-for-pair with a [`FrequencyPlan`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationCoefficients {
    pub pairs: Vec<[f64; 2]>,
    /// Offsets whose path had fewer than two valid points and got identity.
    pub fallback: Vec<bool>,
}

impl ModulationCoefficients {
    pub fn identity(num_pairs: usize) -> Self {
        Self { pairs: vec![[1.0, 0.0]; num_pairs], fallback: Vec::new() }
    }

    pub fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.pairs.iter().map(|[c, s]| (c * c + s * s).sqrt())
    }

    pub fn fallback_count(&self) -> usize {
        self.fallback.iter().filter(|f| **f).count()
    }
}

impl From<RotationCoefficients> for ModulationCoefficients {
    fn from(r: RotationCoefficients) -> Self {
        Self { pairs: r.pairs, fallback: Vec::new() }
    }
}

/// Expected rotary coefficients for a key token seen from a query camera.
///
/// The plan must have three coordinate groups per offset ray, ordered
/// `(u, v, range)` within each offset. Invalid breakpoints are dropped; an
/// offset with fewer than two valid points keeps identity coefficients.
pub fn crepe_coefficients(
    cam_q: &UcmCamera,
    transform: &RigidTransform,
    patch: &PatchRays,
    interval: &RadialInterval,
    plan: &FrequencyPlan,
    k: usize,
) -> Result<ModulationCoefficients> {
    let groups = plan.groups();
    if groups.len() != COORDS_PER_RAY * patch.rays.len() {
        return Err(CrepeError::config(format!(
            "plan has {} coordinate groups but {} offset rays need {}",
            groups.len(),
            patch.rays.len(),
            COORDS_PER_RAY * patch.rays.len()
        )));
    }
    let radii = breakpoints(interval, k)?;
    let mut out = ModulationCoefficients::identity(plan.num_pairs());
    out.fallback = vec![false; patch.rays.len()];
    let mut phases = Vec::with_capacity(k);

    for (a, ray) in patch.rays.iter().enumerate() {
        let path = projected_path(cam_q, transform, ray, &radii);
        if path.valid_count() < 2 {
            out.fallback[a] = true;
            continue;
        }
        for c in 0..COORDS_PER_RAY {
            let group = &groups[a * COORDS_PER_RAY + c];
            for (slot, &w) in group.pair_range().zip(&group.frequencies) {
                phases.clear();
                phases.extend(path.valid_points().map(|p| w * p[c]));
                out.pairs[slot] = expected_phasor(&phases)?;
            }
        }
    }
    Ok(out)
}
