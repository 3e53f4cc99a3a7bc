//! Run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::UcmCamera;
use crate::error::{CrepeError, Result};
use crate::harness::probe::ProbeConfig;
use crate::mixforcing::{MixMode, MixSchedule};
use crate::phasor::{COORDS_PER_RAY, DEFAULT_K, RAYS_PER_TOKEN};
use crate::rope::{make_frequency_plan, FrequencyPlan, DEFAULT_BASE};
use crate::scene::{Motion, SceneKind, SceneSpec, TrajectorySpec};
use crate::supervision::LossConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub total_dim: usize,
    pub base: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { total_dim: 72, base: DEFAULT_BASE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoeffsConfig {
    /// Overrides every token interval with `(mu, sigma)`.
    pub fixed_interval: Option<[f64; 2]>,
    pub head_d_model: usize,
}

impl Default for CoeffsConfig {
    fn default() -> Self {
        Self { fixed_interval: None, head_d_model: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct TraceConfig {
    pub source_frame: usize,
    /// Defaults to the last frame.
    pub query_frame: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub configs: usize,
    pub samples: usize,
    pub baseline_k: usize,
    pub reference_k: usize,
    /// Reference-vs-Monte-Carlo tolerance per component.
    pub tolerance: f64,
    /// Required fraction of configurations where the candidate K is at least
    /// as close to the reference as the baseline K.
    pub win_fraction: f64,
    pub zero_sigma_configs: usize,
    pub zero_sigma_tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            configs: 1000,
            samples: 1_000_000,
            baseline_k: 2,
            reference_k: 129,
            tolerance: 5e-3,
            win_fraction: 0.9,
            zero_sigma_configs: 100,
            zero_sigma_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub points: usize,
    pub d_model: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Distance from a kink below which a point is excluded.
    pub kink_margin: f64,
    pub tokens_per_loss: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { points: 100, d_model: 32, step: 1e-5, tolerance: 1e-4, kink_margin: 1e-3, tokens_per_loss: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub layers: usize,
    pub d_model: usize,
    pub noise: f64,
    pub frames: usize,
    pub patch_size: usize,
    pub scene: SceneSpec,
    /// Loss reduction every layer must reach.
    pub min_reduction: f64,
    pub probe: ProbeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layers: 12,
            d_model: 32,
            noise: 1.0,
            frames: 2,
            patch_size: 4,
            scene: SceneSpec { kind: SceneKind::PointCloud, extent: 4.0, num_points: 300, seed: 3 },
            min_reduction: 0.5,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixSimConfig {
    pub mode: MixMode,
    /// Defaults to the mode's floor.
    pub floor: Option<f64>,
    pub decay_start: u64,
    pub decay_end: u64,
    pub total_steps: u64,
    pub stride: u64,
    pub frames: usize,
    pub tokens_per_frame: usize,
    pub valid_fraction: f64,
    /// Allowed deviation of the aggregate substitution count, in standard errors.
    pub z_tolerance: f64,
}

impl Default for MixSimConfig {
    fn default() -> Self {
        Self {
            mode: MixMode::BlockFrame,
            floor: None,
            decay_start: 1000,
            decay_end: 7000,
            total_steps: 10_000,
            stride: 10,
            frames: 8,
            tokens_per_frame: 64,
            valid_fraction: 0.7,
            z_tolerance: 5.0,
        }
    }
}

impl MixSimConfig {
    pub fn schedule(&self) -> Result<MixSchedule> {
        MixSchedule::new(self.decay_start, self.decay_end, self.floor.unwrap_or(self.mode.default_floor()), self.mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub k: usize,
    pub patch_size: u32,
    pub plan: PlanConfig,
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub trajectory_file: Option<PathBuf>,
    pub radial_map_file: Option<PathBuf>,
    pub loss: LossConfig,
    pub coeffs: CoeffsConfig,
    pub trace: TraceConfig,
    pub oracle: OracleConfig,
    pub gradcheck: GradcheckConfig,
    pub train: TrainConfig,
    pub mix: MixSimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let camera = UcmCamera { fx: 40.0, fy: 40.0, cx: 32.0, cy: 32.0, xi: 0.5, width: 64, height: 64 };
        Self {
            seed: 0,
            k: DEFAULT_K,
            patch_size: 8,
            plan: PlanConfig::default(),
            scene: SceneSpec { kind: SceneKind::TwoPlanes, extent: 4.0, num_points: 1, seed: 0 },
            trajectory: TrajectorySpec { frames: 2, motion: Motion::Orbit, amplitude: 0.2, camera },
            trajectory_file: None,
            radial_map_file: None,
            loss: LossConfig::default(),
            coeffs: CoeffsConfig::default(),
            trace: TraceConfig::default(),
            oracle: OracleConfig::default(),
            gradcheck: GradcheckConfig::default(),
            train: TrainConfig::default(),
            mix: MixSimConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a JSON config; absent fields take their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        super::parse_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(CrepeError::config(format!("K must be at least 2, got {}", self.k)));
        }
        if self.patch_size == 0 {
            return Err(CrepeError::config("patch_size must be positive"));
        }
        self.scene.validate()?;
        self.trajectory.camera.validate()?;
        if self.trajectory.frames == 0 {
            return Err(CrepeError::config("trajectory needs at least one frame"));
        }
        self.plan()?;
        let o = &self.oracle;
        if o.baseline_k < 2 || o.reference_k < 2 || o.samples == 0 {
            return Err(CrepeError::config("oracle K values must be at least 2 and samples positive"));
        }
        if self.train.layers == 0 || self.train.frames == 0 || self.train.patch_size == 0 {
            return Err(CrepeError::config("training needs at least one layer, one frame and a positive patch size"));
        }
        self.mix.schedule()?;
        if !(0.0..=1.0).contains(&self.mix.valid_fraction) || self.mix.stride == 0 {
            return Err(CrepeError::config("mix valid_fraction must lie in [0, 1] and stride be positive"));
        }
        Ok(())
    }

    /// Frequency plan with one coordinate group per (ray, coordinate).
    pub fn plan(&self) -> Result<FrequencyPlan> {
        make_frequency_plan(self.plan.total_dim, RAYS_PER_TOKEN * COORDS_PER_RAY, self.plan.base)
    }

    /// SHA-256 of the canonical JSON serialization, in hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.plan().unwrap().total_dim(), 72);
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn partial_config_and_hash_sensitivity() {
        let c: RunConfig = parse_partial(r#"{"seed": 9, "oracle": {"configs": 10}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.oracle.configs, 10);
        assert_eq!(c.oracle.samples, 1_000_000);
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    fn parse_partial(text: &str) -> Result<RunConfig> {
        crate::harness::parse_json(text)
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        assert!(matches!(parse_partial(r#"{"sede": 1}"#), Err(CrepeError::Parse { .. })));
        let c = RunConfig { k: 1, ..RunConfig::default() };
        assert!(matches!(c.validate(), Err(CrepeError::Config(_))));
        let mut c = RunConfig::default();
        c.plan.total_dim = 70;
        assert!(c.validate().is_err());
    }
}
