//! Ball flight under gravity, quadratic drag and a Magnus spin force,
//! integrated with semi-implicit Euler and viewed through a pinhole camera.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::camera::{cross, norm, Camera, Vec3};
use super::DataError;
use crate::exec::{self, ExecMode};

#[derive(Debug, Clone, PartialEq)]
pub struct BallSimConfig {
    /// Magnitude of gravitational acceleration, acting along -z (m/s²).
    pub gravity: f64,
    /// Quadratic drag: `a_drag = -drag_coeff · |v| · v`.
    pub drag_coeff: f64,
    /// Magnus: `a_magnus = magnus_coeff · (ω × v)`.
    pub magnus_coeff: f64,
    pub dt: f64,
    /// Maximum frames per trajectory.
    pub frames: usize,
    /// Angular velocity (rad/s) of each spin class.
    pub spin_classes: Vec<Vec3>,
    pub trajectories_per_class: usize,
    /// Launch speed interval (m/s).
    pub launch_speed_range: (f64, f64),
    /// Launch elevation interval (degrees); launches lie in the x-z plane.
    pub launch_angle_range: (f64, f64),
    pub launch_height: f64,
    pub camera: Camera,
    pub seed: u64,
}

impl Default for BallSimConfig {
    fn default() -> Self {
        // Backspin, topspin, and the two side spins: pairwise angles >= 90°.
        let w = 60.0;
        BallSimConfig {
            gravity: 9.81,
            drag_coeff: 0.002,
            magnus_coeff: 0.002,
            dt: 0.02,
            frames: 400,
            spin_classes: vec![[0.0, -w, 0.0], [0.0, w, 0.0], [0.0, 0.0, w], [0.0, 0.0, -w]],
            trajectories_per_class: 11,
            launch_speed_range: (62.0, 72.0),
            launch_angle_range: (48.0, 62.0),
            launch_height: 1.0,
            camera: Camera::default(),
            seed: 42,
        }
    }
}

impl BallSimConfig {
    pub fn n_classes(&self) -> usize {
        self.spin_classes.len()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidConfig(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.frames < 2 {
            return bad(format!("frames must be >= 2, got {}", self.frames));
        }
        if self.spin_classes.is_empty() {
            return bad("at least one spin class is required".into());
        }
        if self.trajectories_per_class == 0 {
            return bad("trajectories_per_class must be >= 1".into());
        }
        let (lo, hi) = self.launch_speed_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("invalid launch speed range {lo}..{hi}"));
        }
        let (lo, hi) = self.launch_angle_range;
        if !(lo <= hi) {
            return bad(format!("invalid launch angle range {lo}..{hi}"));
        }
        self.camera.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub xyz: Vec3,
    pub uv: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub class_id: usize,
    pub frames: Vec<Frame>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn acceleration(cfg: &BallSimConfig, spin: Vec3, v: Vec3) -> Vec3 {
    let speed = norm(v);
    let magnus = cross(spin, v);
    let mut a = [0.0; 3];
    for k in 0..3 {
        a[k] = -cfg.drag_coeff * speed * v[k] + cfg.magnus_coeff * magnus[k];
    }
    a[2] -= cfg.gravity;
    a
}

/// Integrates from an explicit launch state until ground contact (z < 0) or
/// `cfg.frames` frames. Also returns the velocity at every frame.
pub fn simulate_from(
    cfg: &BallSimConfig,
    class_id: usize,
    spin: Vec3,
    position: Vec3,
    velocity: Vec3,
) -> Result<(Trajectory, Vec<Vec3>), DataError> {
    let (mut x, mut v) = (position, velocity);
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut velocities = Vec::with_capacity(cfg.frames);
    loop {
        let uv = cfg.camera.project(x, frames.len())?;
        frames.push(Frame { xyz: x, uv });
        velocities.push(v);
        if frames.len() == cfg.frames {
            break;
        }
        let a = acceleration(cfg, spin, v);
        for k in 0..3 {
            v[k] += a[k] * cfg.dt;
        }
        for k in 0..3 {
            x[k] += v[k] * cfg.dt;
        }
        if x[2] < 0.0 {
            break;
        }
    }
    Ok((Trajectory { id: 0, class_id, frames }, velocities))
}

/// One throw of the given spin class with launch speed and elevation drawn
/// from the configured intervals.
pub fn simulate_trajectory<R: Rng + ?Sized>(cfg: &BallSimConfig, class_id: usize, rng: &mut R) -> Result<Trajectory, DataError> {
    let spin = *cfg
        .spin_classes
        .get(class_id)
        .ok_or(DataError::UnknownClass { class_id, n_classes: cfg.n_classes() })?;
    let (s_lo, s_hi) = cfg.launch_speed_range;
    let (a_lo, a_hi) = cfg.launch_angle_range;
    let speed = if s_hi > s_lo { rng.random_range(s_lo..s_hi) } else { s_lo };
    let angle = if a_hi > a_lo { rng.random_range(a_lo..a_hi) } else { a_lo }.to_radians();
    let velocity = [speed * angle.cos(), 0.0, speed * angle.sin()];
    let (traj, _) = simulate_from(cfg, class_id, spin, [0.0, 0.0, cfg.launch_height], velocity)?;
    Ok(traj)
}

/// Deterministic rng for trajectory `index` of a run: one ChaCha stream per index.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// All classes × `trajectories_per_class` throws, ordered by class then index.
/// Output is independent of `mode`.
pub fn generate_dataset(cfg: &BallSimConfig, mode: ExecMode) -> Result<Vec<Trajectory>, DataError> {
    cfg.validate()?;
    let per_class = cfg.trajectories_per_class;
    let jobs: Vec<usize> = (0..cfg.n_classes() * per_class).collect();
    exec::map(mode, &jobs, |&id| {
        let mut rng = trajectory_rng(cfg.seed, id);
        let mut traj = simulate_trajectory(cfg, id / per_class, &mut rng)?;
        traj.id = id;
        Ok(traj)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_flight() -> BallSimConfig {
        BallSimConfig { drag_coeff: 0.0, magnus_coeff: 0.0, ..BallSimConfig::default() }
    }

    #[test]
    fn vertical_apex_matches_closed_form() {
        let cfg = BallSimConfig { dt: 1e-3, frames: 100_000, ..free_flight() };
        let v0 = 20.0;
        let (traj, _) = simulate_from(&cfg, 0, [0.0; 3], [0.0, 0.0, 0.0], [0.0, 0.0, v0]).unwrap();
        let apex = traj.frames.iter().map(|f| f.xyz[2]).fold(f64::MIN, f64::max);
        let want = v0 * v0 / (2.0 * cfg.gravity);
        assert!((apex - want).abs() / want < 0.01, "apex {apex} vs {want}");
    }

    #[test]
    fn no_forces_means_straight_line() {
        let cfg = BallSimConfig { gravity: 0.0, frames: 50, ..free_flight() };
        let v = [3.0, -1.0, 2.0];
        let (traj, _) = simulate_from(&cfg, 0, [0.0, 0.0, 60.0], [0.0, 0.0, 1.0], v).unwrap();
        assert_eq!(traj.len(), 50);
        for (n, f) in traj.frames.iter().enumerate() {
            let t = n as f64 * cfg.dt;
            let want = [v[0] * t, v[1] * t, 1.0 + v[2] * t];
            for k in 0..3 {
                assert!((f.xyz[k] - want[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn opposite_side_spins_mirror_across_launch_plane() {
        let cfg = BallSimConfig::default();
        let (a, b) = (2, 3);
        assert_eq!(cfg.spin_classes[a], cfg.spin_classes[b].map(|w| -w));
        let ta = simulate_trajectory(&cfg, a, &mut trajectory_rng(5, 0)).unwrap();
        let tb = simulate_trajectory(&cfg, b, &mut trajectory_rng(5, 0)).unwrap();
        assert_eq!(ta.len(), tb.len());
        assert!(ta.frames.iter().any(|f| f.xyz[1].abs() > 1.0));
        for (fa, fb) in ta.frames.iter().zip(&tb.frames) {
            assert_eq!(fa.xyz[0], fb.xyz[0]);
            assert_eq!(fa.xyz[1], -fb.xyz[1]);
            assert_eq!(fa.xyz[2], fb.xyz[2]);
        }
    }

    #[test]
    fn energy_drift_is_small_at_default_dt() {
        let cfg = free_flight();
        for id in 0..20 {
            let mut rng = trajectory_rng(cfg.seed, id);
            let (s_lo, s_hi) = cfg.launch_speed_range;
            let (a_lo, a_hi) = cfg.launch_angle_range;
            let speed = rng.random_range(s_lo..s_hi);
            let angle = rng.random_range(a_lo..a_hi).to_radians();
            let v0 = [speed * angle.cos(), 0.0, speed * angle.sin()];
            let (traj, vel) = simulate_from(&cfg, 0, [0.0; 3], [0.0, 0.0, cfg.launch_height], v0).unwrap();
            let energy = |n: usize| 0.5 * vel[n].iter().map(|x| x * x).sum::<f64>() + cfg.gravity * traj.frames[n].xyz[2];
            let e0 = energy(0);
            let drift = (0..traj.len()).map(|n| (energy(n) - e0).abs() / e0).fold(0.0, f64::max);
            assert!(drift < 0.005, "trajectory {id}: drift {drift}");
        }
    }

    #[test]
    fn dataset_is_deterministic_and_sized() {
        let cfg = BallSimConfig::default();
        let a = generate_dataset(&cfg, ExecMode::Sequential).unwrap();
        let b = generate_dataset(&cfg, ExecMode::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 44);
        let rows: usize = a.iter().map(Trajectory::len).sum();
        assert!((15_000..=17_600).contains(&rows), "{rows} rows");
        for (i, t) in a.iter().enumerate() {
            assert_eq!(t.id, i);
            assert_eq!(t.class_id, i / 11);
            for f in &t.frames {
                assert_eq!(f.uv, cfg.camera.project(f.xyz, 0).unwrap());
            }
        }
    }

    #[test]
    fn unknown_class_is_rejected() {
        let cfg = BallSimConfig::default();
        assert!(matches!(
            simulate_trajectory(&cfg, 9, &mut trajectory_rng(0, 0)),
            Err(DataError::UnknownClass { class_id: 9, .. })
        ));
    }
}
