//! Deterministic synthetic scenes, trajectories and layer features.
//!
//! Scenes are made of analytic primitives (planes and spheres) so rendered
//! radial distances are exact up to floating point.

use nalgebra::{DMatrix, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::TokenBatch;
use crate::camera::{ucm_unproject, RigidTransform, UcmCamera};
use crate::error::{CrepeError, Result};
use crate::supervision::{RadialMap, TokenTargets};

/// Depth of the point every orbit trajectory circles around.
pub const ORBIT_PIVOT_DEPTH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Spheres scattered in front of the camera, no background.
    PointCloud,
    /// A single wall at `Z = extent`.
    FrontoPlane,
    /// The wall plus a floor at `Y = extent / 4` (+Y is down).
    TwoPlanes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub extent: f64,
    pub num_points: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent.is_finite() && self.extent > 0.0) || self.num_points == 0 {
            return Err(CrepeError::config("scene needs a positive extent and at least one point"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    /// Rotation about +Y around a pivot `ORBIT_PIVOT_DEPTH` ahead (amplitude in radians).
    Orbit,
    /// Translation along +Z (amplitude in scene units).
    Dolly,
    /// Rotation about +Y in place (amplitude in radians).
    Pan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub frames: usize,
    pub motion: Motion,
    pub amplitude: f64,
    pub camera: UcmCamera,
}

impl TrajectorySpec {
    /// Camera-to-world poses, starting at the identity.
    pub fn poses(&self) -> Result<Vec<RigidTransform>> {
        if self.frames == 0 {
            return Err(CrepeError::config("trajectory needs at least one frame"));
        }
        let up = Vector3::new(0.0, 1.0, 0.0);
        (0..self.frames)
            .map(|k| {
                let tau = if self.frames > 1 { k as f64 / (self.frames - 1) as f64 } else { 0.0 };
                let a = self.amplitude * tau;
                match self.motion {
                    Motion::Dolly => Ok(RigidTransform::from_translation(Vector3::new(0.0, 0.0, a))),
                    Motion::Pan => RigidTransform::from_axis_angle(up, a, Vector3::zeros()),
                    Motion::Orbit => {
                        let rot = RigidTransform::from_axis_angle(up, a, Vector3::zeros())?;
                        let pivot = Vector3::new(0.0, 0.0, ORBIT_PIVOT_DEPTH);
                        let center = pivot - rot.rotation() * pivot;
                        RigidTransform::new(*rot.rotation(), center)
                    }
                }
            })
            .collect()
    }
}

enum Primitive {
    /// Points with `normal · X = offset`.
    Plane {
        normal: Vector3<f64>,
        offset: f64,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
}

impl Primitive {
    /// Smallest positive ray parameter of an intersection.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match self {
            Primitive::Plane { normal, offset } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = (offset - normal.dot(origin)) / denom;
                (t > EPS).then_some(t)
            }
            Primitive::Sphere { center, radius } => {
                let oc = origin - center;
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [-b - sq, -b + sq].into_iter().find(|t| *t > EPS)
            }
        }
    }
}

fn primitives(scene: &SceneSpec) -> Vec<Primitive> {
    let e = scene.extent;
    match scene.kind {
        SceneKind::FrontoPlane => vec![Primitive::Plane { normal: Vector3::z(), offset: e }],
        SceneKind::TwoPlanes => vec![
            Primitive::Plane { normal: Vector3::z(), offset: e },
            Primitive::Plane { normal: Vector3::y(), offset: 0.25 * e },
        ],
        SceneKind::PointCloud => {
            let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
            (0..scene.num_points)
                .map(|_| Primitive::Sphere {
                    center: Vector3::new(
                        rng.random_range(-0.5 * e..0.5 * e),
                        rng.random_range(-0.5 * e..0.5 * e),
                        rng.random_range(0.5 * e..1.5 * e),
                    ),
                    radius: 0.08 * e,
                })
                .collect()
        }
    }
}

/// Radial distance of the nearest surface seen through `pixel`, with the hit
/// point in the camera frame.
pub fn render_hit(
    scene: &SceneSpec,
    pose: &RigidTransform,
    cam: &UcmCamera,
    pixel: Vector2<f64>,
) -> Result<Option<(f64, Vector3<f64>)>> {
    let ray = ucm_unproject(cam, pixel)?;
    Ok(nearest_hit(&primitives(scene), pose, &ray.direction()))
}

fn nearest_hit(prims: &[Primitive], pose: &RigidTransform, dir_cam: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let origin = *pose.translation();
    let dir = pose.rotation() * dir_cam;
    prims.iter().filter_map(|p| p.intersect(&origin, &dir)).min_by(f64::total_cmp).map(|t| (t, dir_cam * t))
}

/// One-frame radial map sampled at pixel centers; misses are NaN and invalid.
pub fn render_radial_map(scene: &SceneSpec, pose: &RigidTransform, cam: &UcmCamera) -> Result<RadialMap> {
    scene.validate()?;
    let prims = primitives(scene);
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut values = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let px = Vector2::new(col as f64 + 0.5, row as f64 + 0.5);
            let dir = ucm_unproject(cam, px)?.direction();
            values.push(match nearest_hit(&prims, pose, &dir) {
                Some((t, _)) => t as f32,
                None => f32::NAN,
            });
        }
    }
    RadialMap::from_values(1, h, w, values)
}

/// Renders every pose of a trajectory into one multi-frame map.
pub fn render_clip(scene: &SceneSpec, trajectory: &TrajectorySpec) -> Result<RadialMap> {
    let frames = trajectory
        .poses()?
        .iter()
        .map(|p| render_radial_map(scene, p, &trajectory.camera))
        .collect::<Result<Vec<_>>>()?;
    RadialMap::stack(&frames)
}

/// Depth-signal weight of a layer: a Gaussian hump peaking mid-stack.
pub fn hump_weight(layer: usize, num_layers: usize) -> f64 {
    if num_layers <= 1 {
        return 1.0;
    }
    let center = (num_layers - 1) as f64 / 2.0;
    let width = num_layers as f64 / 4.0;
    let z = (layer as f64 - center) / width;
    (-z * z).exp()
}

/// Synthetic per-layer features for a probing stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerFeatureSpec {
    pub num_layers: usize,
    pub d_model: usize,
    /// Scale of the nuisance that replaces the depth signal away from the hump.
    pub noise: f64,
    pub seed: u64,
}

/// Angular gain of the depth channel.
const DEPTH_GAIN: f64 = 0.5;
/// Latent channels: depth (cos, sin), row (cos, sin), col (cos, sin).
const LATENT: usize = 6;

/// Orthonormal, zero-mean columns: `LATENT` mixing directions plus one bias direction.
fn mixing_basis(d_model: usize, seed: u64) -> Result<DMatrix<f64>> {
    let cols = LATENT + 1;
    if d_model < cols + 1 {
        return Err(CrepeError::config(format!("d_model must be at least {} for layer features", cols + 1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = DMatrix::<f64>::zeros(d_model, cols);
    for c in 0..cols {
        let mut v: Vec<f64> = (0..d_model).map(|_| rng.sample(StandardNormal)).collect();
        let mean = v.iter().sum::<f64>() / d_model as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        let mut col = nalgebra::DVector::from_vec(v);
        for prev in 0..c {
            let p = basis.column(prev).clone_owned();
            col -= &p * p.dot(&col);
        }
        col /= col.norm();
        basis.set_column(c, &col);
    }
    Ok(basis)
}

/// Features `M z + b` where `z` holds a phase-encoded depth signal and
/// positional sinusoids. The depth phase is `w·s + (1 - w)·noise·ε` with `s`
/// the standardized log target, so `w = 1, noise = 0` is a clean signal and
/// `w = 0` carries no depth information at all. Every token has the same
/// feature norm, which keeps layer normalization from distorting the signal.
pub fn make_layer_features(
    targets: &TokenTargets,
    depth_weight: f64,
    noise: f64,
    d_model: usize,
    seed: u64,
    noise_seed: u64,
) -> Result<TokenBatch> {
    let basis = mixing_basis(d_model, seed)?;
    let logs: Vec<f64> = targets.targets.iter().zip(&targets.mask).filter(|(_, m)| **m).map(|(t, _)| t.ln()).collect();
    let (mean, std) = if logs.is_empty() {
        (0.0, 1.0)
    } else {
        let m = logs.iter().sum::<f64>() / logs.len() as f64;
        let v = logs.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / logs.len() as f64;
        (m, v.sqrt().max(1e-12))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let scale = (d_model as f64 / 4.0).sqrt();
    let per_frame = targets.tokens_per_frame();
    let features = (0..targets.len())
        .map(|i| {
            let eps: f64 = rng.sample(StandardNormal);
            let signal = if targets.mask[i] { (targets.targets[i].ln() - mean) / std } else { 0.0 };
            let phase = DEPTH_GAIN * (depth_weight * signal + (1.0 - depth_weight) * noise * eps);
            let local = i % per_frame;
            let pr = std::f64::consts::PI * (local / targets.cols) as f64 / targets.rows as f64;
            let pc = std::f64::consts::PI * (local % targets.cols) as f64 / targets.cols as f64;
            let z = [phase.cos(), phase.sin(), pr.cos(), pr.sin(), pc.cos(), pc.sin(), 1.0];
            (0..d_model).map(|r| scale * z.iter().enumerate().map(|(c, zc)| basis[(r, c)] * zc).sum::<f64>()).collect()
        })
        .collect();
    TokenBatch::new(targets.frames, per_frame, features)
}

/// Features of one layer of the probing stack.
pub fn layer_features(targets: &TokenTargets, layer: usize, spec: &LayerFeatureSpec) -> Result<TokenBatch> {
    if layer >= spec.num_layers {
        return Err(CrepeError::input(format!("layer {layer} outside a {}-layer stack", spec.num_layers)));
    }
    let noise_seed = spec.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(layer as u64 + 1));
    make_layer_features(targets, hump_weight(layer, spec.num_layers), spec.noise, spec.d_model, spec.seed, noise_seed)
}
