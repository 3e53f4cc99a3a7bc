//! Python bindings for `crepe`.
//!
//! Vectors cross the boundary as tuples or lists of floats. Library errors
//! surface as `ValueError`, except malformed files which raise
//! `CrepeParseError` carrying the byte offset.

use std::path::PathBuf;

use crepe::harness::{rdm1, trajectory};
use crepe::mixforcing::{self, MixMode, MixSchedule, TEACHER_SIGMA};
use crepe::phasor::{self, DEFAULT_K};
use crepe::rope::DEFAULT_BASE;
use crepe::supervision::{self, LossConfig};
use crepe::CrepeError;
use nalgebra::{Matrix3, Vector2, Vector3};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(pycrepe, CrepeParseError, PyException, "Malformed input file.");

fn to_py(e: CrepeError) -> PyErr {
    match e {
        CrepeError::Parse { offset, ref message } => {
            CrepeParseError::new_err((format!("byte {offset}: {message}"), offset))
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for crepe::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn v3(v: &Vector3<f64>) -> (f64, f64, f64) {
    (v.x, v.y, v.z)
}

fn mode(name: &str) -> PyResult<MixMode> {
    match name {
        "block_frame" => Ok(MixMode::BlockFrame),
        "video" => Ok(MixMode::Video),
        other => Err(PyValueError::new_err(format!("mode must be 'block_frame' or 'video', got {other:?}"))),
    }
}

/// Unified camera model intrinsics.
#[pyclass(name = "UcmCamera", module = "pycrepe", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCamera(crepe::UcmCamera);

#[pymethods]
impl PyCamera {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, xi: f64, width: u32, height: u32) -> PyResult<Self> {
        crepe::UcmCamera::new(fx, fy, cx, cy, xi, width, height).py().map(Self)
    }

    /// Square pixels with the principal point at the image center.
    #[staticmethod]
    fn centered(focal: f64, xi: f64, width: u32, height: u32) -> PyResult<Self> {
        crepe::UcmCamera::centered(focal, xi, width, height).py().map(Self)
    }

    #[getter]
    fn fx(&self) -> f64 {
        self.0.fx
    }
    #[getter]
    fn fy(&self) -> f64 {
        self.0.fy
    }
    #[getter]
    fn cx(&self) -> f64 {
        self.0.cx
    }
    #[getter]
    fn cy(&self) -> f64 {
        self.0.cy
    }
    #[getter]
    fn xi(&self) -> f64 {
        self.0.xi
    }
    #[getter]
    fn width(&self) -> u32 {
        self.0.width
    }
    #[getter]
    fn height(&self) -> u32 {
        self.0.height
    }

    /// Pixel of a camera-frame point.
    fn project(&self, point: (f64, f64, f64)) -> PyResult<(f64, f64)> {
        let p = crepe::ucm_project(&self.0, &Vector3::new(point.0, point.1, point.2)).py()?;
        Ok((p.x, p.y))
    }

    /// Unit viewing ray of a pixel.
    fn unproject(&self, pixel: (f64, f64)) -> PyResult<(f64, f64, f64)> {
        let ray = crepe::ucm_unproject(&self.0, Vector2::new(pixel.0, pixel.1)).py()?;
        Ok(v3(&ray.direction()))
    }

    /// Point at radial distance `r` along the ray through `pixel`.
    fn lift(&self, pixel: (f64, f64), r: f64) -> PyResult<(f64, f64, f64)> {
        let ray = crepe::ucm_unproject(&self.0, Vector2::new(pixel.0, pixel.1)).py()?;
        Ok(v3(&crepe::lift_point(&ray, r).py()?))
    }

    fn __repr__(&self) -> String {
        let c = &self.0;
        format!(
            "UcmCamera(fx={}, fy={}, cx={}, cy={}, xi={}, width={}, height={})",
            c.fx, c.fy, c.cx, c.cy, c.xi, c.width, c.height
        )
    }
}

/// Rotation plus translation; poses are camera-to-world.
#[pyclass(name = "RigidTransform", module = "pycrepe", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTransform(crepe::RigidTransform);

#[pymethods]
impl PyTransform {
    #[new]
    fn new(rotation: [[f64; 3]; 3], translation: (f64, f64, f64)) -> PyResult<Self> {
        let r = Matrix3::from_fn(|i, j| rotation[i][j]);
        crepe::RigidTransform::new(r, Vector3::new(translation.0, translation.1, translation.2)).py().map(Self)
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(crepe::RigidTransform::identity())
    }

    #[staticmethod]
    fn from_axis_angle(axis: (f64, f64, f64), angle: f64, translation: (f64, f64, f64)) -> PyResult<Self> {
        crepe::RigidTransform::from_axis_angle(
            Vector3::new(axis.0, axis.1, axis.2),
            angle,
            Vector3::new(translation.0, translation.1, translation.2),
        )
        .py()
        .map(Self)
    }

    /// Row-major 4x4 matrix; the rotation must be orthonormal within `tol`.
    #[staticmethod]
    #[pyo3(signature = (matrix, tol = trajectory::LOAD_ORTHO_TOL))]
    fn from_row_major(matrix: [f64; 16], tol: f64) -> PyResult<Self> {
        crepe::RigidTransform::from_row_major(&matrix, tol).py().map(Self)
    }

    fn to_row_major(&self) -> [f64; 16] {
        self.0.to_row_major()
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        let r = self.0.rotation();
        [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]])
    }

    #[getter]
    fn translation(&self) -> (f64, f64, f64) {
        v3(self.0.translation())
    }

    fn apply(&self, point: (f64, f64, f64)) -> (f64, f64, f64) {
        v3(&self.0.apply(&Vector3::new(point.0, point.1, point.2)))
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    /// `self ∘ other`.
    fn compose(&self, other: &PyTransform) -> Self {
        Self(self.0.compose(&other.0))
    }

    fn __matmul__(&self, other: &PyTransform) -> Self {
        self.compose(other)
    }
}

/// Source-camera to query-camera transform from two camera-to-world poses.
#[pyfunction]
fn relative_transform(pose_source: &PyTransform, pose_query: &PyTransform) -> PyTransform {
    PyTransform(crepe::relative_transform(&pose_source.0, &pose_query.0))
}

/// Rotary frequency plan split evenly across coordinates.
#[pyclass(name = "FrequencyPlan", module = "pycrepe", frozen)]
struct PyPlan(crepe::FrequencyPlan);

#[pymethods]
impl PyPlan {
    #[new]
    #[pyo3(signature = (total_dim = 72, num_coordinates = 9, base = DEFAULT_BASE))]
    fn new(total_dim: usize, num_coordinates: usize, base: f64) -> PyResult<Self> {
        crepe::make_frequency_plan(total_dim, num_coordinates, base).py().map(Self)
    }

    #[getter]
    fn total_dim(&self) -> usize {
        self.0.total_dim()
    }

    #[getter]
    fn num_pairs(&self) -> usize {
        self.0.num_pairs()
    }

    /// Frequencies of each coordinate group.
    fn frequencies(&self) -> Vec<Vec<f64>> {
        self.0.groups().iter().map(|g| g.frequencies.clone()).collect()
    }

    /// Per-pair rotary phases of a coordinate vector.
    fn phases(&self, coords: Vec<f64>) -> PyResult<Vec<f64>> {
        crepe::rope_phases(&self.0, &coords).py()
    }

    /// Applies `(c, s)` pairs to a vector of length `total_dim`.
    fn apply(&self, vec: Vec<f64>, pairs: Vec<[f64; 2]>) -> PyResult<Vec<f64>> {
        crepe::apply_coefficients(&vec, &pairs, &self.0).py()
    }
}

/// Log-radial interval: center `mu` and signed half-width `sigma`.
#[pyclass(name = "RadialInterval", module = "pycrepe", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyInterval(crepe::RadialInterval);

#[pymethods]
impl PyInterval {
    #[new]
    fn new(mu: f64, sigma: f64) -> Self {
        Self(crepe::RadialInterval::new(mu, sigma))
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.0.mu
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma
    }

    fn clamped(&self) -> Self {
        Self(self.0.clamped())
    }

    #[pyo3(signature = (k = DEFAULT_K))]
    fn breakpoints(&self, k: usize) -> PyResult<Vec<f64>> {
        crepe::breakpoints(&self.0, k).py()
    }

    /// Standard deviation of the implied radial distribution, floored and capped.
    fn uncertainty_scale(&self) -> f64 {
        crepe::uncertainty_scale(&self.0)
    }

    fn __repr__(&self) -> String {
        format!("RadialInterval(mu={}, sigma={})", self.0.mu, self.0.sigma)
    }
}

#[pyfunction]
fn segment_phasor(theta_a: f64, theta_b: f64) -> [f64; 2] {
    crepe::segment_phasor(theta_a, theta_b)
}

#[pyfunction]
fn expected_phasor(phases: Vec<f64>) -> PyResult<[f64; 2]> {
    crepe::expected_phasor(&phases).py()
}

/// Expected modulation pairs and per-offset fallback flags for one source
/// token seen from a query camera.
#[pyfunction]
#[pyo3(signature = (cam_source, cam_query, transform, token, interval, plan, patch_size = 8, k = DEFAULT_K))]
#[allow(clippy::too_many_arguments)]
fn crepe_coefficients(
    cam_source: &PyCamera,
    cam_query: &PyCamera,
    transform: &PyTransform,
    token: (usize, usize),
    interval: &PyInterval,
    plan: &PyPlan,
    patch_size: u32,
    k: usize,
) -> PyResult<(Vec<[f64; 2]>, Vec<bool>)> {
    let patch = crepe::patch_rays(&cam_source.0, token, patch_size).py()?;
    let c = crepe::crepe_coefficients(&cam_query.0, &transform.0, &patch, &interval.0, &plan.0, k).py()?;
    Ok((c.pairs, c.fallback))
}

/// Bounded `(u, v, range)` query coordinates of a source pixel lifted to each radius.
#[pyfunction]
fn projected_path(
    cam_source: &PyCamera,
    cam_query: &PyCamera,
    transform: &PyTransform,
    pixel: (f64, f64),
    radii: Vec<f64>,
) -> PyResult<(Vec<[f64; 3]>, Vec<bool>)> {
    let ray = crepe::ucm_unproject(&cam_source.0, Vector2::new(pixel.0, pixel.1)).py()?;
    let path = phasor::projected_path(&cam_query.0, &transform.0, &ray, &radii);
    Ok((path.points, path.valid))
}

/// Per-token geometry head producing a radial interval.
#[pyclass(name = "GeometryHead", module = "pycrepe")]
struct PyHead(crepe::HeadParams);

#[pymethods]
impl PyHead {
    #[new]
    #[pyo3(signature = (d_model, seed = 0))]
    fn new(d_model: usize, seed: u64) -> Self {
        Self(crepe::head_init(d_model, seed))
    }

    /// Loads a `GHD1` checkpoint.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        crepe::harness::checkpoint::load(&path).py().map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        crepe::harness::checkpoint::save(&path, &self.0).py()
    }

    #[getter]
    fn d_model(&self) -> usize {
        self.0.d_model
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.0.num_params()
    }

    fn parameters(&self) -> Vec<f64> {
        self.0.to_flat()
    }

    fn set_parameters(&mut self, flat: Vec<f64>) -> PyResult<()> {
        self.0 = crepe::HeadParams::from_flat(self.0.d_model, &flat).py()?;
        Ok(())
    }

    fn forward(&self, feature: Vec<f64>) -> PyResult<PyInterval> {
        crepe::head_forward(&self.0, &feature).py().map(PyInterval)
    }

    /// Gradients `(parameters, feature)` of `grad_mu * mu + grad_sigma * sigma`.
    fn backward(&self, feature: Vec<f64>, grad_mu: f64, grad_sigma: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let g = crepe::head_backward(&self.0, &feature, grad_mu, grad_sigma).py()?;
        Ok((g.to_flat(), g.feature.clone()))
    }
}

/// Token targets pooled from a radial map.
#[pyclass(name = "TokenTargets", module = "pycrepe", frozen, get_all)]
struct PyTargets {
    frames: usize,
    rows: usize,
    cols: usize,
    targets: Vec<f64>,
    mask: Vec<bool>,
    near_stat: f64,
}

impl From<supervision::TokenTargets> for PyTargets {
    fn from(t: supervision::TokenTargets) -> Self {
        Self { frames: t.frames, rows: t.rows, cols: t.cols, targets: t.targets, mask: t.mask, near_stat: t.near_stat }
    }
}

fn radial_map(frames: usize, height: usize, width: usize, values: Vec<f32>) -> PyResult<crepe::RadialMap> {
    crepe::RadialMap::from_values(frames, height, width, values).py()
}

/// Filters, normalizes and pools a frame-major radial map.
#[pyfunction]
#[pyo3(signature = (values, frames, height, width, patch_size = 8, r_max = 20.0))]
fn prepare_targets(
    values: Vec<f32>,
    frames: usize,
    height: usize,
    width: usize,
    patch_size: usize,
    r_max: f64,
) -> PyResult<PyTargets> {
    let map = radial_map(frames, height, width, values)?;
    supervision::prepare_targets(&map, r_max, patch_size).py().map(Into::into)
}

/// Mean radial loss over valid tokens with its per-token gradients.
#[pyfunction]
fn radial_loss(intervals: Vec<PyInterval>, targets: Vec<f64>, mask: Vec<bool>) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
    let n = targets.len();
    let t = supervision::TokenTargets { frames: 1, rows: 1, cols: n, targets, mask, near_stat: 1.0 };
    let ivs: Vec<_> = intervals.iter().map(|i| i.0).collect();
    let l = crepe::radial_loss(&ivs, &t, &LossConfig::default()).py()?;
    Ok((l.loss, l.grad_mu, l.grad_sigma))
}

/// Substitution probability of the MixForcing schedule at `step`.
#[pyfunction]
#[pyo3(signature = (step, mode = "block_frame", floor = None))]
fn substitution_probability(step: u64, mode: &str, floor: Option<f64>) -> PyResult<f64> {
    let m = self::mode(mode)?;
    let base = MixSchedule::for_mode(m);
    let schedule = match floor {
        Some(f) => MixSchedule::new(base.decay_start, base.decay_end, f, m).py()?,
        None => base,
    };
    Ok(crepe::substitution_probability(&schedule, step))
}

/// The interval used downstream: the teacher iff `substitute` and `valid`.
#[pyfunction]
#[pyo3(signature = (pred, target, substitute, valid, teacher_sigma = TEACHER_SIGMA))]
fn effective_interval(
    pred: &PyInterval,
    target: Option<f64>,
    substitute: bool,
    valid: bool,
    teacher_sigma: f64,
) -> PyResult<PyInterval> {
    mixforcing::effective_interval(pred.0, target, substitute, valid, teacher_sigma).py().map(PyInterval)
}

type Rdm1Contents = (usize, usize, usize, Vec<f32>, Option<f64>);

/// Reads an `RDM1` file: `(frames, height, width, values, near_stat)`.
#[pyfunction]
fn read_rdm1(path: PathBuf) -> PyResult<Rdm1Contents> {
    let (map, side) = rdm1::read(&path).py()?;
    Ok((map.frames, map.height, map.width, map.values, side.and_then(|s| s.near_stat)))
}

/// Writes an `RDM1` file, plus a sidecar when `near_stat` is given.
#[pyfunction]
#[pyo3(signature = (path, frames, height, width, values, near_stat = None))]
fn write_rdm1(
    path: PathBuf,
    frames: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
    near_stat: Option<f64>,
) -> PyResult<()> {
    let map = radial_map(frames, height, width, values)?;
    let side = near_stat.map(|n| rdm1::Rdm1Sidecar { near_stat: Some(n), ..Default::default() });
    rdm1::write(&path, &map, side.as_ref()).py()
}

/// Loads trajectory JSON: `(camera, [pose, ...])`.
#[pyfunction]
fn load_trajectory(path: PathBuf) -> PyResult<(PyCamera, Vec<PyTransform>)> {
    let t = trajectory::load(&path).py()?;
    Ok((PyCamera(t.camera), t.poses.into_iter().map(PyTransform).collect()))
}

#[pymodule]
pub fn pycrepe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CrepeParseError", m.py().get_type::<CrepeParseError>())?;
    m.add("DEFAULT_K", DEFAULT_K)?;
    m.add("TEACHER_SIGMA", TEACHER_SIGMA)?;
    m.add_class::<PyCamera>()?;
    m.add_class::<PyTransform>()?;
    m.add_class::<PyPlan>()?;
    m.add_class::<PyInterval>()?;
    m.add_class::<PyHead>()?;
    m.add_class::<PyTargets>()?;
    m.add_function(wrap_pyfunction!(relative_transform, m)?)?;
    m.add_function(wrap_pyfunction!(segment_phasor, m)?)?;
    m.add_function(wrap_pyfunction!(expected_phasor, m)?)?;
    m.add_function(wrap_pyfunction!(crepe_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(projected_path, m)?)?;
    m.add_function(wrap_pyfunction!(prepare_targets, m)?)?;
    m.add_function(wrap_pyfunction!(radial_loss, m)?)?;
    m.add_function(wrap_pyfunction!(substitution_probability, m)?)?;
    m.add_function(wrap_pyfunction!(effective_interval, m)?)?;
    m.add_function(wrap_pyfunction!(read_rdm1, m)?)?;
    m.add_function(wrap_pyfunction!(write_rdm1, m)?)?;
    m.add_function(wrap_pyfunction!(load_trajectory, m)?)?;
    Ok(())
}
