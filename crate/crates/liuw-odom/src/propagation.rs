//! IMU-driven forward propagation of state and covariance, plus
//! backward-propagation motion compensation for LiDAR scans.
//!
//! Integration is first-order (Euler on the manifold) to match the
//! discrete state transition model; the error-state transition Jacobian
//! is exact for that discretization and is checked against finite
//! differences in the test suite.

use crate::error::{Error, Result};
use crate::plane_map::LidarScan;
use crate::rotation::{hat, right_jacobian, Rotation};
use crate::state::*;
use nalgebra::{Matrix3, Vector3};

/// Largest IMU gap bridged silently; anything above is a dropout error.
pub const MAX_IMU_DT: f64 = 0.1;

/// One IMU reading: body-frame angular rate and specific force.
#[derive(Clone, Copy, Debug)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

/// Continuous-time process noise densities.
#[derive(Clone, Copy, Debug)]
pub struct ProcessNoiseConfig {
    /// Gyro white noise, rad/s/sqrt(Hz).
    pub sigma_gyro: f64,
    /// Accelerometer white noise, m/s^2/sqrt(Hz).
    pub sigma_accel: f64,
    /// Gyro bias random walk, rad/s^2/sqrt(Hz).
    pub sigma_bg_walk: f64,
    /// Accelerometer bias random walk, m/s^3/sqrt(Hz).
    pub sigma_ba_walk: f64,
    /// Position random walk, m/sqrt(s), modeling the slow accumulation of
    /// scan-to-map error: the map is built from past estimates, so
    /// point-to-plane constraints are relative to a drifting reference, not
    /// absolute. Without this term the covariance collapses under hundreds
    /// of correlated plane rows per scan and the filter becomes
    /// overconfident against its true error.
    pub sigma_map_drift: f64,
    /// Extrinsic random walk per axis (0 keeps extrinsics frozen online).
    pub sigma_extr: f64,
}

impl Default for ProcessNoiseConfig {
    fn default() -> Self {
        ProcessNoiseConfig {
            sigma_gyro: 2e-4,
            sigma_accel: 2e-3,
            sigma_bg_walk: 1e-5,
            sigma_ba_walk: 1e-3,
            sigma_map_drift: 0.2,
            sigma_extr: 0.0,
        }
    }
}

fn set_block(f: &mut Covariance, row: usize, col: usize, m: &Matrix3<f64>) {
    f.fixed_view_mut::<3, 3>(row, col).copy_from(m);
}

/// Error-state transition Jacobian for one Euler step (right perturbation).
pub fn transition_jacobian(x: &NavState, u: &ImuSample, dt: f64) -> Covariance {
    let omega = (u.gyro - x.bias_gyro) * dt;
    let accel = u.accel - x.bias_accel;
    let r = x.rot.matrix();
    let mut f = Covariance::identity();
    set_block(&mut f, IDX_THETA, IDX_THETA, &Rotation::exp(&omega).matrix().transpose());
    set_block(&mut f, IDX_THETA, IDX_BG, &(-right_jacobian(&omega) * dt));
    set_block(&mut f, IDX_VEL, IDX_THETA, &(-r * hat(&accel) * dt));
    set_block(&mut f, IDX_VEL, IDX_BA, &(-r * dt));
    set_block(&mut f, IDX_VEL, IDX_GRAV, &(Matrix3::identity() * dt));
    let half = 0.5 * dt * dt;
    set_block(&mut f, IDX_POS, IDX_THETA, &(-r * hat(&accel) * half));
    set_block(&mut f, IDX_POS, IDX_VEL, &(Matrix3::identity() * dt));
    set_block(&mut f, IDX_POS, IDX_BA, &(-r * half));
    set_block(&mut f, IDX_POS, IDX_GRAV, &(Matrix3::identity() * half));
    f
}

/// Advance the state mean by one Euler step of the IMU kinematics.
pub fn propagate_mean(x: &NavState, u: &ImuSample, dt: f64) -> NavState {
    let omega = u.gyro - x.bias_gyro;
    let accel_g = x.rot.rotate(&(u.accel - x.bias_accel)) + x.gravity;
    let mut out = *x;
    out.rot = x.rot.compose(&Rotation::exp(&(omega * dt)));
    out.pos = x.pos + x.vel * dt + 0.5 * accel_g * dt * dt;
    out.vel = x.vel + accel_g * dt;
    out
}

/// First-order discretization of the process noise over `dt`.
pub fn discrete_process_noise(q: &ProcessNoiseConfig, dt: f64) -> Covariance {
    let mut out = Covariance::zeros();
    let put = |out: &mut Covariance, at: usize, var: f64| {
        for i in at..at + 3 {
            out[(i, i)] = var;
        }
    };
    put(&mut out, IDX_THETA, q.sigma_gyro * q.sigma_gyro * dt);
    put(&mut out, IDX_POS, q.sigma_map_drift * q.sigma_map_drift * dt);
    put(&mut out, IDX_VEL, q.sigma_accel * q.sigma_accel * dt);
    put(&mut out, IDX_BG, q.sigma_bg_walk * q.sigma_bg_walk * dt);
    put(&mut out, IDX_BA, q.sigma_ba_walk * q.sigma_ba_walk * dt);
    let ev = q.sigma_extr * q.sigma_extr * dt;
    for at in [
        IDX_EXT_L_ROT, IDX_EXT_L_POS, IDX_EXT_U_ROT, IDX_EXT_U_POS, IDX_EXT_W_ROT, IDX_EXT_W_POS,
    ] {
        put(&mut out, at, ev);
    }
    out
}

/// Propagate state and covariance by one IMU interval.
pub fn propagate(
    x: &NavState,
    p: &Covariance,
    u: &ImuSample,
    dt: f64,
    q: &ProcessNoiseConfig,
) -> Result<(NavState, Covariance)> {
    if dt <= 0.0 {
        return Err(Error::NonMonotonicTime(dt));
    }
    if dt > MAX_IMU_DT {
        return Err(Error::GapTooLarge(dt));
    }
    let f = transition_jacobian(x, u, dt);
    let mut p_out = f * p * f.transpose() + discrete_process_noise(q, dt);
    symmetrize(&mut p_out);
    Ok((propagate_mean(x, u, dt), p_out))
}

/// Pose of the body at a scan-relative time, as (rotation, translation)
/// relative to the global frame.
#[derive(Clone, Copy)]
struct BodyPose {
    rot: Rotation,
    pos: Vector3<f64>,
    vel: Vector3<f64>,
}

/// Re-express every scan point as if sampled at the scan end time.
///
/// Backward propagation from `x_end` through the IMU window with
/// piecewise-constant readings (each sample held over the interval that
/// starts at its timestamp).
pub fn undistort_scan(
    scan: &LidarScan,
    imu_window: &[ImuSample],
    x_end: &NavState,
) -> Result<LidarScan> {
    if scan.points.is_empty() {
        return Ok(scan.clone());
    }
    let t_start = scan.t_end + scan.points.iter().map(|p| p.t_offset).fold(0.0, f64::min);
    let have_start = imu_window.first().map(|s| s.t).unwrap_or(f64::INFINITY);
    let have_end = imu_window.last().map(|s| s.t).unwrap_or(f64::NEG_INFINITY);
    // The window may stop one IMU period short of the scan end (and the
    // first needed instant may fall just after a sample); the final stretch
    // is bridged with the nearest sample's reading.
    if have_start > t_start + 1e-6 || have_end < scan.t_end - 0.02 {
        return Err(Error::CoverageGap {
            need_start: t_start,
            need_end: scan.t_end,
            have_start,
            have_end,
        });
    }

    // Samples covering [t_start, t_end]: last sample at/before t_start
    // through last sample at/before t_end.
    let first = imu_window.iter().rposition(|s| s.t <= t_start).unwrap_or(0);
    let last = imu_window
        .iter()
        .rposition(|s| s.t <= scan.t_end)
        .unwrap_or(imu_window.len() - 1);
    let samples = &imu_window[first..=last];

    // Walk backward from the end state, storing the pose at each sample time.
    // poses[i] is the body pose at samples[i].t.
    let mut poses = vec![
        BodyPose {
            rot: x_end.rot,
            pos: x_end.pos,
            vel: x_end.vel
        };
        samples.len()
    ];
    let mut cur = BodyPose {
        rot: x_end.rot,
        pos: x_end.pos,
        vel: x_end.vel,
    };
    // First bring the end state back to the last sample time (they usually
    // coincide; the interval uses that sample's reading).
    let mut t_cur = scan.t_end;
    for i in (0..samples.len()).rev() {
        let u = samples[i];
        let dt = t_cur - u.t;
        if dt > 0.0 {
            let rot_prev = cur.rot.compose(&Rotation::exp(&(-(u.gyro - x_end.bias_gyro) * dt)));
            let accel_g = rot_prev.rotate(&(u.accel - x_end.bias_accel)) + x_end.gravity;
            let vel_prev = cur.vel - accel_g * dt;
            let pos_prev = cur.pos - vel_prev * dt - 0.5 * accel_g * dt * dt;
            cur = BodyPose {
                rot: rot_prev,
                pos: pos_prev,
                vel: vel_prev,
            };
        }
        poses[i] = cur;
        t_cur = u.t;
    }

    // End pose inverse, for mapping global points into the end body frame.
    let rot_end_inv = x_end.rot.inverse();

    let mut out = LidarScan {
        t_end: scan.t_end,
        points: Vec::with_capacity(scan.points.len()),
    };
    for pt in &scan.points {
        let t_pt = scan.t_end + pt.t_offset;
        // Sample interval containing t_pt.
        let i = samples.iter().rposition(|s| s.t <= t_pt).unwrap_or(0);
        let base = poses[i];
        let u = samples[i];
        let dt = t_pt - base_time(samples, i);
        let body = if dt > 0.0 {
            let accel_g = base.rot.rotate(&(u.accel - x_end.bias_accel)) + x_end.gravity;
            BodyPose {
                rot: base.rot.compose(&Rotation::exp(&((u.gyro - x_end.bias_gyro) * dt))),
                pos: base.pos + base.vel * dt + 0.5 * accel_g * dt * dt,
                vel: base.vel + accel_g * dt,
            }
        } else {
            base
        };
        // LiDAR_j -> body_j -> global -> body_end -> LiDAR_end
        let p_body = x_end.extr_lidar.transform(&pt.pos);
        let p_global = body.rot.rotate(&p_body) + body.pos;
        let p_body_end = rot_end_inv.rotate(&(p_global - x_end.pos));
        let p_lidar_end = x_end.extr_lidar.inverse_transform(&p_body_end);
        out.points.push(crate::plane_map::ScanPoint {
            pos: p_lidar_end,
            t_offset: 0.0,
        });
    }
    Ok(out)
}

fn base_time(samples: &[ImuSample], i: usize) -> f64 {
    samples[i].t
}
