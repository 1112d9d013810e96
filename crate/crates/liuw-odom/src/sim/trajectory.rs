//! Smooth ground-truth trajectory through the tunnel.
//!
//! The path is generated for the wheel-contact frame: planar motion with a
//! yaw-only attitude, so the nonholonomic constraint (zero lateral and
//! vertical wheel-frame velocity) holds *exactly* in ground truth. The IMU
//! pose, velocity, and specific force are derived analytically from the
//! wheel path through the rigid-body kinematics with the wheel lever arm.
//!
//! Speed profile: stationary hold (for static initialization), a quintic
//! ramp, then constant cruise. Heading: a small enveloped sinusoidal weave
//! about +x, giving twice-differentiable motion with a bounded yaw rate.

use crate::rotation::{hat, Rotation};
use nalgebra::Vector3;

/// Gravity magnitude used across the simulator.
pub const GRAVITY: f64 = 9.81;

#[derive(Clone, Debug)]
pub struct TrajectoryConfig {
    /// Initial IMU position in the global frame.
    pub start: Vector3<f64>,
    /// Cruise speed, m/s.
    pub speed: f64,
    /// Stationary time before the ramp, s.
    pub hold_duration: f64,
    /// Quintic speed-ramp time, s.
    pub ramp_duration: f64,
    /// Heading weave amplitude, rad.
    pub weave_amplitude: f64,
    /// Heading weave period, s.
    pub weave_period: f64,
    /// Wheel frame origin in the IMU frame.
    pub p_iw: Vector3<f64>,
    pub duration: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            start: Vector3::new(11.490, -0.019, 0.971),
            speed: 0.3,
            hold_duration: 2.0,
            ramp_duration: 1.0,
            weave_amplitude: 0.05,
            weave_period: 20.0,
            p_iw: Vector3::new(-0.3, 0.0, -0.4),
            duration: 100.0,
        }
    }
}

impl TrajectoryConfig {
    /// Duration needed to cover `dist` meters of arc length.
    pub fn duration_for_distance(&self, dist: f64) -> f64 {
        self.hold_duration + 0.5 * self.ramp_duration + dist / self.speed
    }
}

/// C² step: 0→1 over u ∈ [0,1] with zero first/second derivatives at both
/// ends.
fn smoothstep5(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

fn smoothstep5_d(u: f64) -> f64 {
    if !(0.0..=1.0).contains(&u) {
        return 0.0;
    }
    30.0 * u * u * (1.0 - u) * (1.0 - u)
}

/// Seconds over which the heading weave fades in.
const WEAVE_FADE: f64 = 5.0;
/// Wheel-path integration grid step, s.
const GRID_DT: f64 = 5e-4;

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub cfg: TrajectoryConfig,
    /// Wheel-frame origin path sampled every [`GRID_DT`].
    grid: Vec<Vector3<f64>>,
}

impl Trajectory {
    pub fn generate(cfg: &TrajectoryConfig) -> Self {
        let n = (cfg.duration / GRID_DT).ceil() as usize + 2;
        let mut grid = Vec::with_capacity(n);
        // p_W(0) = p_I(0) + R(0)·ᴵp_W with ψ(0) = 0.
        let mut p = cfg.start + cfg.p_iw;
        grid.push(p);
        let tr = Traj {
            cfg: cfg.clone(),
        };
        for i in 0..n - 1 {
            let t0 = i as f64 * GRID_DT;
            p += simpson(&tr, t0, GRID_DT);
            grid.push(p);
        }
        Trajectory {
            cfg: cfg.clone(),
            grid,
        }
    }

    fn analytic(&self) -> Traj {
        Traj {
            cfg: self.cfg.clone(),
        }
    }

    /// Wheel-frame origin at time t.
    fn wheel_pos(&self, t: f64) -> Vector3<f64> {
        let i = ((t / GRID_DT).floor() as usize).min(self.grid.len() - 1);
        let t0 = i as f64 * GRID_DT;
        self.grid[i] + simpson(&self.analytic(), t0, t - t0)
    }

    /// IMU attitude and position at time t.
    pub fn pose(&self, t: f64) -> (Rotation, Vector3<f64>) {
        let a = self.analytic();
        let r = Rotation::exp(&Vector3::new(0.0, 0.0, a.psi(t)));
        (r, self.wheel_pos(t) - r.rotate(&self.cfg.p_iw))
    }

    /// IMU velocity in the global frame.
    pub fn vel(&self, t: f64) -> Vector3<f64> {
        let a = self.analytic();
        let (r, _) = self.pose(t);
        a.wheel_vel_global(t) - r.rotate(&(hat(&self.omega(t)) * self.cfg.p_iw))
    }

    /// Body angular rate (yaw only).
    pub fn omega(&self, t: f64) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.analytic().psi_dot(t))
    }

    /// Ideal accelerometer reading (specific force in the IMU frame).
    pub fn specific_force(&self, t: f64) -> Vector3<f64> {
        let a = self.analytic();
        let (r, _) = self.pose(t);
        let omega = self.omega(t);
        // ψ̈ by central difference of the analytic yaw rate.
        let h = 1e-4;
        let psi_ddot = (a.psi_dot(t + h) - a.psi_dot(t - h)) / (2.0 * h);
        let omega_dot = Vector3::new(0.0, 0.0, psi_ddot);
        let ho = hat(&omega);
        let a_imu = a.wheel_acc_global(t) - r.rotate(&((ho * ho + hat(&omega_dot)) * self.cfg.p_iw));
        r.rotate_inv(&(a_imu - Vector3::new(0.0, 0.0, -GRAVITY)))
    }

    /// Exact wheel-frame velocity (NHC: lateral/vertical identically zero).
    pub fn wheel_vel(&self, t: f64) -> Vector3<f64> {
        Vector3::new(self.analytic().v(t), 0.0, 0.0)
    }

    /// Arc length traveled by the wheel frame over the full duration.
    pub fn arc_length(&self) -> f64 {
        let c = &self.cfg;
        let moving = (c.duration - c.hold_duration).max(0.0);
        if moving <= c.ramp_duration {
            // Still inside the ramp: integrate numerically.
            let a = self.analytic();
            let n = 10_000;
            let h = c.duration / n as f64;
            return (0..n).map(|i| a.v((i as f64 + 0.5) * h) * h).sum();
        }
        c.speed * (moving - 0.5 * c.ramp_duration)
    }
}

/// Analytic speed/heading profiles (no stored state).
struct Traj {
    cfg: TrajectoryConfig,
}

impl Traj {
    fn v(&self, t: f64) -> f64 {
        let c = &self.cfg;
        if t <= c.hold_duration {
            0.0
        } else if t < c.hold_duration + c.ramp_duration {
            c.speed * smoothstep5((t - c.hold_duration) / c.ramp_duration)
        } else {
            c.speed
        }
    }

    fn v_dot(&self, t: f64) -> f64 {
        let c = &self.cfg;
        if t > c.hold_duration && t < c.hold_duration + c.ramp_duration {
            c.speed * smoothstep5_d((t - c.hold_duration) / c.ramp_duration) / c.ramp_duration
        } else {
            0.0
        }
    }

    fn psi(&self, t: f64) -> f64 {
        let c = &self.cfg;
        let tau = t - c.hold_duration - c.ramp_duration;
        if tau <= 0.0 || c.weave_amplitude == 0.0 {
            return 0.0;
        }
        let env = smoothstep5(tau / WEAVE_FADE);
        c.weave_amplitude * env * (std::f64::consts::TAU * tau / c.weave_period).sin()
    }

    fn psi_dot(&self, t: f64) -> f64 {
        let c = &self.cfg;
        let tau = t - c.hold_duration - c.ramp_duration;
        if tau <= 0.0 || c.weave_amplitude == 0.0 {
            return 0.0;
        }
        let w = std::f64::consts::TAU / c.weave_period;
        let env = smoothstep5(tau / WEAVE_FADE);
        let env_d = smoothstep5_d(tau / WEAVE_FADE) / WEAVE_FADE;
        c.weave_amplitude * (env_d * (w * tau).sin() + env * w * (w * tau).cos())
    }

    fn wheel_vel_global(&self, t: f64) -> Vector3<f64> {
        let psi = self.psi(t);
        let v = self.v(t);
        Vector3::new(v * psi.cos(), v * psi.sin(), 0.0)
    }

    fn wheel_acc_global(&self, t: f64) -> Vector3<f64> {
        let psi = self.psi(t);
        let pd = self.psi_dot(t);
        let v = self.v(t);
        let vd = self.v_dot(t);
        Vector3::new(
            vd * psi.cos() - v * pd * psi.sin(),
            vd * psi.sin() + v * pd * psi.cos(),
            0.0,
        )
    }
}

/// ∫ wheel velocity over [t0, t0+h] by Simpson's rule (velocity analytic,
/// error O(h⁵)).
fn simpson(a: &Traj, t0: f64, h: f64) -> Vector3<f64> {
    if h <= 0.0 {
        return Vector3::zeros();
    }
    (a.wheel_vel_global(t0) + 4.0 * a.wheel_vel_global(t0 + 0.5 * h) + a.wheel_vel_global(t0 + h))
        * (h / 6.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::{propagate_mean, ImuSample};
    use crate::state::NavState;
    use approx::assert_relative_eq;

    #[test]
    fn arc_length_is_speed_times_time() {
        let cfg = TrajectoryConfig {
            hold_duration: 0.0,
            ramp_duration: 0.0,
            duration: 100.0,
            ..Default::default()
        };
        let traj = Trajectory::generate(&cfg);
        assert!((traj.arc_length() - 30.0).abs() <= 1e-6);
    }

    #[test]
    fn starts_at_configured_position() {
        let traj = Trajectory::generate(&TrajectoryConfig::default());
        let (r, p) = traj.pose(0.0);
        assert_relative_eq!(p, Vector3::new(11.490, -0.019, 0.971), epsilon = 1e-12);
        assert_relative_eq!(r.log().norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(traj.vel(0.0).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn finite_difference_velocity_matches_analytic() {
        let traj = Trajectory::generate(&TrajectoryConfig::default());
        let dt = 0.005; // 200 Hz
        let mut t = 0.5;
        while t < 40.0 {
            let (_, p0) = traj.pose(t - dt);
            let (_, p1) = traj.pose(t + dt);
            let fd = (p1 - p0) / (2.0 * dt);
            assert!(
                (fd - traj.vel(t)).norm() <= 1e-4,
                "t={t}: fd={fd:?} vs {:?}",
                traj.vel(t)
            );
            t += 0.73;
        }
    }

    #[test]
    fn finite_difference_yaw_matches_omega() {
        let traj = Trajectory::generate(&TrajectoryConfig::default());
        let dt = 0.005;
        for k in 0..60 {
            let t = 4.0 + k as f64 * 0.5;
            let (r0, _) = traj.pose(t - dt);
            let (r1, _) = traj.pose(t + dt);
            let fd = r0.inverse().compose(&r1).log() / (2.0 * dt);
            assert!((fd - traj.omega(t)).norm() <= 1e-4);
        }
    }

    #[test]
    fn yaw_rate_within_bound() {
        let traj = Trajectory::generate(&TrajectoryConfig::default());
        let mut t = 0.0;
        while t < 100.0 {
            assert!(traj.omega(t).norm() <= 0.2);
            t += 0.01;
        }
    }

    #[test]
    fn stationary_hold_specific_force_is_gravity() {
        let traj = Trajectory::generate(&TrajectoryConfig::default());
        let f = traj.specific_force(1.0);
        assert_relative_eq!(f, Vector3::new(0.0, 0.0, GRAVITY), epsilon = 1e-9);
    }

    #[test]
    fn noise_free_imu_propagation_reproduces_trajectory() {
        // Euler propagation of the exact IMU signals from the true initial
        // state stays within 1e-3 m of the analytic path over 10 s.
        let traj = Trajectory::generate(&TrajectoryConfig::default());
        let (r0, p0) = traj.pose(0.0);
        let mut x = NavState::identity();
        x.rot = r0;
        x.pos = p0;
        x.vel = traj.vel(0.0);
        let dt = 1.0 / 200.0;
        let steps = 2000;
        for i in 0..steps {
            let t = i as f64 * dt;
            let u = ImuSample {
                t,
                gyro: traj.omega(t),
                accel: traj.specific_force(t),
            };
            x = propagate_mean(&x, &u, dt);
        }
        let (_, p_true) = traj.pose(steps as f64 * dt);
        let err = (x.pos - p_true).norm();
        assert!(err <= 1e-3, "drift {err}");
    }
}
