//! Trajectory JSON: camera intrinsics plus per-frame camera-to-world poses.
//!
//! ```json
//! {"camera": {"fx": 40, "fy": 40, "cx": 32, "cy": 32, "xi": 0.5, "width": 64, "height": 64},
//!  "poses": [[1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]]}
//! ```
//!
//! Poses are 4x4 row-major matrices, either flat (16 numbers) or nested
//! (4 rows of 4).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{RigidTransform, UcmCamera};
use crate::error::{CrepeError, Result};

/// Maximum deviation of a stored rotation from orthonormality.
pub const LOAD_ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoseMatrix {
    Flat(Vec<f64>),
    Nested(Vec<Vec<f64>>),
}

impl PoseMatrix {
    fn to_array(&self, frame: usize) -> Result<[f64; 16]> {
        let flat: Vec<f64> = match self {
            PoseMatrix::Flat(v) => v.clone(),
            PoseMatrix::Nested(rows) => {
                if rows.len() != 4 || rows.iter().any(|r| r.len() != 4) {
                    return Err(CrepeError::Validation(format!("pose {frame} is not 4x4")));
                }
                rows.concat()
            }
        };
        flat.try_into()
            .map_err(|v: Vec<f64>| CrepeError::Validation(format!("pose {frame} has {} entries, expected 16", v.len())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub camera: UcmCamera,
    pub poses: Vec<PoseMatrix>,
}

/// A validated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub camera: UcmCamera,
    pub poses: Vec<RigidTransform>,
}

impl Trajectory {
    pub fn to_file(&self) -> TrajectoryFile {
        TrajectoryFile {
            camera: self.camera,
            poses: self.poses.iter().map(|p| PoseMatrix::Flat(p.to_row_major().to_vec())).collect(),
        }
    }
}

impl TrajectoryFile {
    pub fn validate(&self) -> Result<Trajectory> {
        self.camera.validate().map_err(|e| CrepeError::Validation(e.to_string()))?;
        if self.poses.is_empty() {
            return Err(CrepeError::Validation("trajectory has no poses".into()));
        }
        let poses = self
            .poses
            .iter()
            .enumerate()
            .map(|(i, p)| {
                RigidTransform::from_row_major(&p.to_array(i)?, LOAD_ORTHO_TOL)
                    .map_err(|e| CrepeError::Validation(format!("pose {i}: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(Trajectory { camera: self.camera, poses })
    }
}

pub fn parse(text: &str) -> Result<Trajectory> {
    super::parse_json::<TrajectoryFile>(text)?.validate()
}

pub fn load(path: &Path) -> Result<Trajectory> {
    parse(&fs::read_to_string(path)?)
}

pub fn save(path: &Path, trajectory: &Trajectory) -> Result<()> {
    super::write_json(path, &trajectory.to_file())
}
