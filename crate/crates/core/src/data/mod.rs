//! Synthetic ball-trajectory data: simulation, projection, windowing,
//! normalisation, fold splitting and CSV persistence.

mod camera;
mod folds;
pub mod io;
mod norm;
mod samples;
mod sim;

use thiserror::Error;

pub use camera::{Camera, Vec3};
pub use folds::{kfold_by_trajectory, FoldPolicy, Split};
pub use norm::{feature_names, fit_normalizer, NormStats};
pub use samples::{build_samples, one_hot, trajectory_samples, Sample, PRESENT_DIMS, UV_IDX, XYZ_IDX};
pub use sim::{generate_dataset, simulate_from, simulate_trajectory, trajectory_rng, BallSimConfig, Frame, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("frame {frame}: point behind camera (depth {depth})")]
    BehindCamera { frame: usize, depth: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("class {class_id} out of range (have {n_classes})")]
    UnknownClass { class_id: usize, n_classes: usize },
    #[error("trajectory {traj_id} shorter than history ({frames} frames, history {history})")]
    TrajectoryTooShort { traj_id: usize, frames: usize, history: usize },
    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("need at least {needed} trajectories per class, found {found}")]
    TooFewTrajectories { needed: usize, found: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("csv {path}: {message}")]
    Csv { path: String, message: String },
    #[error("schema: {0}")]
    Schema(String),
}
