//! Fixed pinhole camera.

use super::DataError;

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn unit(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Pinhole camera. Rows of `rotation` are the camera's right, down and
/// forward axes expressed in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub focal: f64,
    pub principal: [f64; 2],
    pub rotation: [Vec3; 3],
}

impl Camera {
    /// Camera at `position` looking at `target`, with `up` fixing the roll.
    pub fn look_at(position: Vec3, target: Vec3, up: Vec3, focal: f64, principal: [f64; 2]) -> Self {
        let forward = unit(sub(target, position));
        let right = unit(cross(forward, up));
        let down = cross(forward, right);
        Camera { position, focal, principal, rotation: [right, down, forward] }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(DataError::InvalidCamera(format!("focal must be positive, got {}", self.focal)));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot(r[i], r[j]) - want).abs() > 1e-9 {
                    return Err(DataError::InvalidCamera("rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    /// Point in camera coordinates (x right, y down, z along the optical axis).
    pub fn to_camera_frame(&self, xyz: Vec3) -> Vec3 {
        let d = sub(xyz, self.position);
        [dot(self.rotation[0], d), dot(self.rotation[1], d), dot(self.rotation[2], d)]
    }

    /// Pixel coordinates of a world point. `frame` only labels the error.
    pub fn project(&self, xyz: Vec3, frame: usize) -> Result<[f64; 2], DataError> {
        let pc = self.to_camera_frame(xyz);
        if pc[2] <= 0.0 {
            return Err(DataError::BehindCamera { frame, depth: pc[2] });
        }
        Ok([
            self.focal * pc[0] / pc[2] + self.principal[0],
            self.focal * pc[1] / pc[2] + self.principal[1],
        ])
    }
}

impl Default for Camera {
    /// Elevated camera behind and to the right of the launch point, so that
    /// lateral curvature and height both show in the image.
    fn default() -> Self {
        Camera::look_at([-60.0, -120.0, 30.0], [90.0, 0.0, 60.0], [0.0, 0.0, 1.0], 800.0, [640.0, 360.0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = Camera::default();
        let f = cam.rotation[2];
        let p = [cam.position[0] + 7.0 * f[0], cam.position[1] + 7.0 * f[1], cam.position[2] + 7.0 * f[2]];
        let uv = cam.project(p, 0).unwrap();
        assert!((uv[0] - 640.0).abs() < 1e-9 && (uv[1] - 360.0).abs() < 1e-9);
    }

    #[test]
    fn focal_scales_offsets_linearly() {
        let cam = Camera::default();
        let mut cam2 = cam.clone();
        cam2.focal *= 2.0;
        let p = [50.0, 10.0, 40.0];
        let (a, b) = (cam.project(p, 0).unwrap(), cam2.project(p, 0).unwrap());
        for k in 0..2 {
            let (da, db) = (a[k] - cam.principal[k], b[k] - cam.principal[k]);
            assert!((db - 2.0 * da).abs() < 1e-9 * da.abs().max(1.0));
        }
    }

    #[test]
    fn matches_homogeneous_matrix_oracle() {
        let cam = Camera::default();
        // K [R | -R c] assembled explicitly, applied to (x, y, z, 1)
        let r = cam.rotation;
        let t: Vec<f64> = (0..3).map(|i| -dot(r[i], cam.position)).collect();
        let k = [[cam.focal, 0.0, cam.principal[0]], [0.0, cam.focal, cam.principal[1]], [0.0, 0.0, 1.0]];
        let mut pm = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..4 {
                for m in 0..3 {
                    let rt = if j < 3 { r[m][j] } else { t[m] };
                    pm[i][j] += k[i][m] * rt;
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let p = [rng.random_range(0.0..150.0), rng.random_range(-30.0..30.0), rng.random_range(0.0..120.0)];
            let hom = [p[0], p[1], p[2], 1.0];
            let q: Vec<f64> = (0..3).map(|i| (0..4).map(|j| pm[i][j] * hom[j]).sum()).collect();
            let uv = cam.project(p, 0).unwrap();
            for c in 0..2 {
                let want = q[c] / q[2];
                assert!((uv[c] - want).abs() <= 1e-12 * want.abs().max(1.0), "{} vs {}", uv[c], want);
            }
        }
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = Camera::default();
        let f = cam.rotation[2];
        let p = [cam.position[0] - f[0], cam.position[1] - f[1], cam.position[2] - f[2]];
        assert!(matches!(cam.project(p, 12), Err(DataError::BehindCamera { frame: 12, .. })));
    }

    #[test]
    fn default_rotation_is_orthonormal() {
        Camera::default().validate().unwrap();
        let mut bad = Camera::default();
        bad.rotation[0][0] += 1e-3;
        assert!(bad.validate().is_err());
    }
}
