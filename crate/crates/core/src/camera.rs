//! Unified Camera Model (UCM) geometry.
//!
//! Camera frame is right-handed with +Z forward, +X right and +Y down.
//! Pixel coordinates have their origin at the top-left image corner, so the
//! center of pixel `(col, row)` sits at `(col + 0.5, row + 0.5)`.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CrepeError, Result};

/// Minimum magnitude of the projection denominator `Z + xi * |X|`.
pub const BETA_GUARD: f64 = 1e-8;

/// Intrinsics and distortion of a unified camera model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UcmCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub xi: f64,
    pub width: u32,
    pub height: u32,
}

impl UcmCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, xi: f64, width: u32, height: u32) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, xi, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Pinhole camera with the principal point at the image center.
    pub fn centered(focal: f64, xi: f64, width: u32, height: u32) -> Result<Self> {
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, xi, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(CrepeError::input(format!(
                "focal lengths must be positive and finite, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(CrepeError::input("principal point must be finite"));
        }
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(CrepeError::input(format!("xi must lie in [0, 1], got {}", self.xi)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CrepeError::input("image size must be at least 1x1"));
        }
        Ok(())
    }
}

/// Unit viewing direction in a camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    direction: Vector3<f64>,
}

impl Ray {
    /// Normalizes `v` into a ray. Fails on zero or non-finite vectors.
    pub fn new(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(CrepeError::input("ray direction must be finite and non-zero"));
        }
        Ok(Self { direction: v / n })
    }

    pub fn direction(&self) -> Vector3<f64> {
        self.direction
    }
}

/// Rotation plus translation, mapping `p` to `rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    /// Tolerance on orthonormality and unit determinant.
    pub const ORTHO_TOL: f64 = 1e-9;

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation, Self::ORTHO_TOL)?;
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(CrepeError::input("translation must be finite"));
        }
        Ok(Self { rotation, translation })
    }

    /// Accepts a rotation that is orthonormal within `tol` and snaps it to the
    /// nearest proper rotation so the stricter type invariant holds.
    pub fn from_approx(rotation: Matrix3<f64>, translation: Vector3<f64>, tol: f64) -> Result<Self> {
        check_rotation(&rotation, tol)?;
        let svd = rotation.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(CrepeError::Validation("rotation SVD failed".into())),
        };
        Self::new(u * v_t, translation)
    }

    /// Parses a row-major homogeneous 4x4 matrix.
    pub fn from_row_major(m: &[f64; 16], tol: f64) -> Result<Self> {
        let mat = Matrix4::from_row_slice(m);
        let last = mat.row(3);
        if (last[0].abs() + last[1].abs() + last[2].abs() + (last[3] - 1.0).abs()) > tol {
            return Err(CrepeError::Validation("last row of a pose must be (0, 0, 0, 1)".into()));
        }
        let rot = mat.fixed_view::<3, 3>(0, 0).into_owned();
        let t = mat.fixed_view::<3, 1>(0, 3).into_owned();
        Self::from_approx(rot, t, tol)
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// Rotation by `angle` radians about `axis`, followed by `translation`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Result<Self> {
        let axis =
            nalgebra::Unit::try_new(axis, 1e-12).ok_or_else(|| CrepeError::input("rotation axis must be non-zero"))?;
        let rot = nalgebra::Rotation3::from_axis_angle(&axis, angle);
        Self::new(*rot.matrix(), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(CrepeError::Validation("rotation has non-finite entries".into()));
    }
    let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if dev > tol || (det - 1.0).abs() > tol {
        return Err(CrepeError::Validation(format!(
            "rotation not orthonormal: max |R^T R - I| = {dev:e}, det = {det}"
        )));
    }
    Ok(())
}

/// Inverse ray map: pixel to unit viewing ray.
pub fn ucm_unproject(cam: &UcmCamera, pixel: Vector2<f64>) -> Result<Ray> {
    if !(pixel.x.is_finite() && pixel.y.is_finite()) {
        return Err(CrepeError::input("pixel must be finite"));
    }
    let x = (pixel.x - cam.cx) / cam.fx;
    let y = (pixel.y - cam.cy) / cam.fy;
    let rho2 = x * x + y * y;
    let xi = cam.xi;
    let gamma = (xi + (1.0 + (1.0 - xi * xi) * rho2).sqrt()) / (1.0 + rho2);
    Ray::new(Vector3::new(gamma * x, gamma * y, gamma - xi))
}

/// `Z + xi * |X|` with its magnitude held at or above [`BETA_GUARD`].
pub(crate) fn guarded_beta(beta: f64) -> f64 {
    if beta.abs() >= BETA_GUARD {
        beta
    } else if beta < 0.0 {
        -BETA_GUARD
    } else {
        BETA_GUARD
    }
}

/// Projects a camera-frame point to pixel coordinates.
pub fn ucm_project(cam: &UcmCamera, point: &Vector3<f64>) -> Result<Vector2<f64>> {
    if !point.iter().all(|v| v.is_finite()) {
        return Err(CrepeError::input("point must be finite"));
    }
    let norm = point.norm();
    if norm == 0.0 {
        return Err(CrepeError::input("cannot project the camera center"));
    }
    let beta = guarded_beta(point.z + cam.xi * norm);
    Ok(Vector2::new(cam.fx * point.x / beta + cam.cx, cam.fy * point.y / beta + cam.cy))
}

/// Transform taking source-camera coordinates to query-camera coordinates,
/// given both camera-to-world poses.
pub fn relative_transform(pose_source: &RigidTransform, pose_query: &RigidTransform) -> RigidTransform {
    pose_query.inverse().compose(pose_source)
}

/// Point at radial distance `r` along `ray`.
pub fn lift_point(ray: &Ray, r: f64) -> Result<Vector3<f64>> {
    if !(r.is_finite() && r > 0.0) {
        return Err(CrepeError::input(format!("radial distance must be positive, got {r}")));
    }
    Ok(ray.direction * r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(xi: f64) -> UcmCamera {
        UcmCamera::new(100.0, 100.0, 50.0, 50.0, xi, 100, 100).unwrap()
    }

    #[test]
    fn center_ray_is_forward() {
        for xi in [0.0, 0.5, 1.0] {
            let ray = ucm_unproject(&cam(xi), Vector2::new(50.0, 50.0)).unwrap();
            assert_eq!(ray.direction(), Vector3::new(0.0, 0.0, 1.0));
        }
    }

    #[test]
    fn pinhole_off_axis_ray() {
        let ray = ucm_unproject(&cam(0.0), Vector2::new(150.0, 50.0)).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((ray.direction() - Vector3::new(h, 0.0, h)).norm() < 1e-15);
    }

    #[test]
    fn non_finite_pixel_rejected() {
        assert!(matches!(ucm_unproject(&cam(0.2), Vector2::new(f64::NAN, 1.0)), Err(CrepeError::Input(_))));
    }

    #[test]
    fn project_examples() {
        let p = ucm_project(&cam(0.0), &Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(p, Vector2::new(50.0, 50.0));

        let c = UcmCamera::new(100.0, 100.0, 0.0, 0.0, 1.0, 10, 10).unwrap();
        let p = ucm_project(&c, &Vector3::new(1.0, 0.0, 1.0)).unwrap();
        assert!((p.x - 100.0 * (2f64.sqrt() - 1.0)).abs() < 1e-12);
        assert_eq!(p.y, 0.0);
    }

    #[test]
    fn project_zero_point_is_error() {
        assert!(ucm_project(&cam(0.3), &Vector3::zeros()).is_err());
    }

    #[test]
    fn beta_guard_keeps_sign() {
        // Z = 0 with xi = 0: beta is exactly zero and is pushed to +guard.
        let p = ucm_project(&cam(0.0), &Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((p.x - (100.0 / BETA_GUARD + 50.0)).abs() < 1.0);
        assert_eq!(guarded_beta(-1e-12), -BETA_GUARD);
        assert_eq!(guarded_beta(2.0), 2.0);
    }

    #[test]
    fn camera_validation() {
        assert!(UcmCamera::new(0.0, 1.0, 0.0, 0.0, 0.0, 1, 1).is_err());
        assert!(UcmCamera::new(1.0, 1.0, 0.0, 0.0, 1.2, 1, 1).is_err());
        assert!(UcmCamera::new(1.0, 1.0, 0.0, 0.0, -0.1, 1, 1).is_err());
        assert!(UcmCamera::new(1.0, 1.0, 0.0, 0.0, 0.5, 0, 1).is_err());
    }

    #[test]
    fn relative_transform_examples() {
        let a =
            RigidTransform::from_axis_angle(Vector3::new(1.0, 2.0, 3.0), 0.7, Vector3::new(1.0, -2.0, 0.5)).unwrap();
        let rel = relative_transform(&a, &a);
        assert!((rel.rotation() - Matrix3::identity()).abs().max() < 1e-15);
        assert!(rel.translation().norm() < 1e-15);

        let t = Vector3::new(0.3, -1.0, 2.0);
        let rel = relative_transform(&RigidTransform::identity(), &RigidTransform::from_translation(t));
        assert_eq!(*rel.rotation(), Matrix3::identity());
        assert_eq!(*rel.translation(), -t);
    }

    #[test]
    fn lift_point_rules() {
        let ray = Ray::new(Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(lift_point(&ray, 2.0).unwrap(), Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(lift_point(&ray, 1.0).unwrap(), ray.direction());
        assert!(lift_point(&ray, 0.0).is_err());
        assert!(lift_point(&ray, -1.0).is_err());
    }

    #[test]
    fn rotation_validation() {
        let mut r = Matrix3::identity();
        r[(0, 1)] = 1e-3;
        assert!(RigidTransform::new(r, Vector3::zeros()).is_err());
        assert!(RigidTransform::from_approx(r, Vector3::zeros(), 1e-6).is_err());
        let snapped = RigidTransform::from_approx(r, Vector3::zeros(), 1e-2).unwrap();
        assert!((snapped.rotation().determinant() - 1.0).abs() < 1e-12);
        // reflections are rejected
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(flip, Vector3::zeros()).is_err());
    }

    #[test]
    fn row_major_roundtrip() {
        let a = RigidTransform::from_axis_angle(Vector3::new(0.0, 1.0, 0.0), 0.4, Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let b = RigidTransform::from_row_major(&a.to_row_major(), 1e-6).unwrap();
        assert!((a.rotation() - b.rotation()).abs().max() < 1e-14);
        assert_eq!(a.translation(), b.translation());
    }
}
