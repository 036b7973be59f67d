//! Sliding-window construction of training/evaluation instances.

use ndarray::Array1;

use super::{DataError, Trajectory};

/// One time step: present layer `(x, y, z, u, v)`, the `L` preceding 2D
/// frames (oldest first) and the one-hot class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub present: Array1<f64>,
    pub history: Array1<f64>,
    pub label: Array1<f64>,
    pub class_id: usize,
    pub traj_id: usize,
    pub frame: usize,
}

/// Number of present units: 3D position followed by its projection.
pub const PRESENT_DIMS: usize = 5;
/// Indices of the 2D part of the present layer.
pub const UV_IDX: [usize; 2] = [3, 4];
/// Indices of the 3D part of the present layer.
pub const XYZ_IDX: [usize; 3] = [0, 1, 2];

pub fn one_hot(class_id: usize, n_classes: usize) -> Array1<f64> {
    let mut l = Array1::zeros(n_classes);
    l[class_id] = 1.0;
    l
}

/// Samples of a single trajectory: one per frame `t >= history_len`.
pub fn trajectory_samples(traj: &Trajectory, history_len: usize, n_classes: usize) -> Result<Vec<Sample>, DataError> {
    if traj.len() <= history_len {
        return Err(DataError::TrajectoryTooShort { traj_id: traj.id, frames: traj.len(), history: history_len });
    }
    if traj.class_id >= n_classes {
        return Err(DataError::UnknownClass { class_id: traj.class_id, n_classes });
    }
    let label = one_hot(traj.class_id, n_classes);
    Ok((history_len..traj.len())
        .map(|t| {
            let f = &traj.frames[t];
            let present = Array1::from_vec(vec![f.xyz[0], f.xyz[1], f.xyz[2], f.uv[0], f.uv[1]]);
            let history = traj.frames[t - history_len..t].iter().flat_map(|p| p.uv).collect();
            Sample {
                present,
                history,
                label: label.clone(),
                class_id: traj.class_id,
                traj_id: traj.id,
                frame: t,
            }
        })
        .collect())
}

pub fn build_samples(trajs: &[Trajectory], history_len: usize, n_classes: usize) -> Result<Vec<Sample>, DataError> {
    let mut out = Vec::new();
    for traj in trajs {
        out.extend(trajectory_samples(traj, history_len, n_classes)?);
    }
    Ok(out)
}
