//! Curved-ray expected rotary positional encoding.
//!
//! A token's position along its viewing ray is uncertain. Instead of
//! rotating keys by a single rotary phase, this crate lifts a log-uniform
//! radial interval along the source ray, transports the resulting segment
//! into a query camera under the unified camera model, and averages the
//! rotary phasor along the curved projected path in closed form.
//!
//! Module map:
//! - [`camera`]: UCM projection/unprojection, rigid transforms, ray lifting.
//! - [`rope`]: frequency plans and exact rotary coefficients.
//! - [`phasor`]: breakpoints, projected paths, expected phasors, patch rays.
//! - [`head`]: the per-token geometry head and its analytic backward pass.
//! - [`attention`]: the key-modulated geometric attention branch.
//! - [`supervision`]: pseudo-label filtering, pooling and the radial loss.
//! - [`mixforcing`]: teacher substitution schedule and effective intervals.
//! - [`scene`]: deterministic synthetic scenes and layer features.
//! - [`harness`]: file formats, oracles, trainers and the command drivers.

pub mod attention;
pub mod camera;
pub mod error;
pub mod harness;
pub mod head;
pub mod mixforcing;
pub mod phasor;
pub mod rope;
pub mod scene;
pub mod supervision;

pub use attention::{attention_forward, modulate_key, AttentionParams, CoefficientTable, TokenBatch};
pub use camera::{lift_point, relative_transform, ucm_project, ucm_unproject, Ray, RigidTransform, UcmCamera};
pub use error::{CrepeError, Result};
pub use head::{head_backward, head_forward, head_init, HeadGrads, HeadParams};
pub use mixforcing::{
    effective_interval, external_override, sample_mask, substitution_probability, MixForcingState, MixMode, MixSchedule,
};
pub use phasor::{
    breakpoints, crepe_coefficients, expected_phasor, patch_rays, projected_path, segment_phasor,
    ModulationCoefficients, PatchRays, ProjectedPath, RadialInterval,
};
pub use rope::{
    apply_coefficients, exact_rotation, make_frequency_plan, rope_phases, FrequencyPlan, RotationCoefficients,
};
pub use supervision::{
    near_distance_stat, normalize_and_pool, radial_loss, timestep_gate, uncertainty_scale, validity_mask, LossConfig,
    RadialLoss, RadialMap, TokenTargets,
};
