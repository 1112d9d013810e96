//! Sensor synthesis: exact measurements from the analytic trajectory plus
//! seeded noise, merged into a replay-ordered record stream.

use crate::log_io::{sort_records, GroundTruthSample, Payload, SensorRecord};
use crate::measurements::{AnchorConfig, UwbPositionFix, UwbRangeSample, WheelSample};
use crate::mode::UwbRegion;
use crate::plane_map::{LidarScan, ScanPoint};
use crate::propagation::ImuSample;
use crate::sim::trajectory::{Trajectory, TrajectoryConfig};
use crate::sim::trilateration::{paper_anchors, solve_nls};
use crate::sim::world::TunnelWorld;
use crate::state::Extrinsic;
use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Noise scales for every synthesized stream; zeros give exact sensors.
#[derive(Clone, Copy, Debug)]
pub struct SimNoise {
    pub sigma_gyro: f64,
    pub sigma_accel: f64,
    pub sigma_bg_walk: f64,
    pub sigma_ba_walk: f64,
    pub sigma_wheel: f64,
    pub sigma_uwb_range: f64,
    pub sigma_lidar_range: f64,
}

impl Default for SimNoise {
    fn default() -> Self {
        SimNoise {
            sigma_gyro: 2e-4,
            sigma_accel: 2e-3,
            sigma_bg_walk: 1e-5,
            sigma_ba_walk: 1e-3,
            sigma_wheel: 0.05,
            sigma_uwb_range: 0.1,
            sigma_lidar_range: 0.02,
        }
    }
}

impl SimNoise {
    pub fn zero() -> Self {
        SimNoise {
            sigma_gyro: 0.0,
            sigma_accel: 0.0,
            sigma_bg_walk: 0.0,
            sigma_ba_walk: 0.0,
            sigma_wheel: 0.0,
            sigma_uwb_range: 0.0,
            sigma_lidar_range: 0.0,
        }
    }
}

/// Spinning-LiDAR scan pattern.
#[derive(Clone, Copy, Debug)]
pub struct LidarModel {
    pub rings: usize,
    pub azimuths: usize,
    /// Elevation span is ±this angle, degrees.
    pub elev_max_deg: f64,
    pub max_range: f64,
    /// Sweep (and scan period) duration, s.
    pub sweep: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        // Max range is kept short so that in the bare inner segment no
        // cross-tunnel clutter or end cap constrains x — the degeneracy
        // window is long and unambiguous.
        LidarModel {
            rings: 16,
            azimuths: 72,
            elev_max_deg: 15.0,
            max_range: 15.0,
            sweep: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub seed: u64,
    pub traj: TrajectoryConfig,
    pub imu_rate: f64,
    pub wheel_rate: f64,
    pub uwb_rate: f64,
    pub lidar: LidarModel,
    pub noise: SimNoise,
    pub anchors: Vec<AnchorConfig>,
    pub region: UwbRegion,
    /// LiDAR frame origin in the IMU frame (identity rotation).
    pub p_il: Vector3<f64>,
    /// UWB antenna in the IMU frame.
    pub p_iu: Vector3<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            traj: TrajectoryConfig::default(),
            imu_rate: 200.0,
            wheel_rate: 50.0,
            uwb_rate: 20.0,
            lidar: LidarModel::default(),
            noise: SimNoise::default(),
            anchors: paper_anchors(),
            region: UwbRegion {
                center: Vector3::new(13.963, 0.0, 2.249),
                radius: 21.0,
            },
            p_il: Vector3::new(0.1, 0.0, 0.3),
            p_iu: Vector3::new(0.0, 0.0, 0.2),
        }
    }
}

impl SimConfig {
    /// Extrinsics as the estimator models them.
    pub fn extr_lidar(&self) -> Extrinsic {
        Extrinsic::new(crate::rotation::Rotation::identity(), self.p_il)
    }
    pub fn extr_uwb(&self) -> Extrinsic {
        Extrinsic::new(crate::rotation::Rotation::identity(), self.p_iu)
    }
    pub fn extr_wheel(&self) -> Extrinsic {
        Extrinsic::new(crate::rotation::Rotation::identity(), self.traj.p_iw)
    }
}

fn stream_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ tag)
}

fn noise3(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    if sigma == 0.0 {
        return Vector3::zeros();
    }
    let n = Normal::new(0.0, sigma).unwrap();
    Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

/// Generate the full sensor log for one seed. Deterministic per
/// (config, seed): separate counter-mode RNG streams per sensor.
pub fn synthesize(cfg: &SimConfig) -> Vec<SensorRecord> {
    let traj = Trajectory::generate(&cfg.traj);
    let world = TunnelWorld::standard();
    let duration = cfg.traj.duration;
    let mut records = Vec::new();

    // IMU with bias random walks.
    {
        let mut rng = stream_rng(cfg.seed, 0x494D55);
        let dt = 1.0 / cfg.imu_rate;
        let n = (duration * cfg.imu_rate).floor() as usize;
        let mut bg = Vector3::zeros();
        let mut ba = Vector3::zeros();
        for i in 0..n {
            let t = i as f64 * dt;
            let gyro = traj.omega(t) + bg + noise3(&mut rng, cfg.noise.sigma_gyro);
            let accel = traj.specific_force(t) + ba + noise3(&mut rng, cfg.noise.sigma_accel);
            records.push(SensorRecord {
                t,
                payload: Payload::Imu(ImuSample { t, gyro, accel }),
            });
            bg += noise3(&mut rng, cfg.noise.sigma_bg_walk * dt.sqrt());
            ba += noise3(&mut rng, cfg.noise.sigma_ba_walk * dt.sqrt());
        }
    }

    // Wheel odometer: exact wheel-frame velocity, NHC zero on y/z pre-noise.
    {
        let mut rng = stream_rng(cfg.seed, 0x574852);
        let dt = 1.0 / cfg.wheel_rate;
        let n = (duration * cfg.wheel_rate).floor() as usize;
        let sigma = Vector3::from_element(cfg.noise.sigma_wheel.max(1e-3));
        for i in 0..n {
            let t = i as f64 * dt;
            let vel = traj.wheel_vel(t) + noise3(&mut rng, cfg.noise.sigma_wheel);
            records.push(SensorRecord {
                t,
                payload: Payload::Wheel(WheelSample { t, vel, sigma }),
            });
        }
    }

    // UWB: ranges to every anchor plus a trilaterated fix, only in-region.
    {
        let mut rng = stream_rng(cfg.seed, 0x555742);
        let dt = 1.0 / cfg.uwb_rate;
        let n = (duration * cfg.uwb_rate).floor() as usize;
        // Each epoch is solved independently: cross-epoch smoothing would
        // hand the estimator correlated fixes with understated covariance,
        // which a per-record measurement model cannot absorb. The previous
        // solution only seeds the iteration.
        let mut guess: Option<Vector3<f64>> = None;
        let range_sigma = cfg.noise.sigma_uwb_range.max(1e-3);
        for i in 0..n {
            let t = i as f64 * dt;
            let (rot, pos) = traj.pose(t);
            if !cfg.region.contains(&pos) {
                guess = None;
                continue;
            }
            let antenna = pos + rot.rotate(&cfg.p_iu);
            let mut epoch = Vec::with_capacity(cfg.anchors.len());
            for a in &cfg.anchors {
                let noise = if cfg.noise.sigma_uwb_range == 0.0 {
                    0.0
                } else {
                    Normal::new(0.0, cfg.noise.sigma_uwb_range)
                        .unwrap()
                        .sample(&mut rng)
                };
                let s = UwbRangeSample {
                    t,
                    anchor_id: a.anchor_id,
                    range: (a.pos - antenna).norm() + noise,
                    sigma: range_sigma,
                };
                epoch.push(s);
                records.push(SensorRecord {
                    t,
                    payload: Payload::UwbRange(s),
                });
            }
            let centroid = cfg.anchors.iter().map(|a| a.pos).sum::<Vector3<f64>>()
                / cfg.anchors.len().max(1) as f64;
            if let Ok((p, cov)) =
                solve_nls(&epoch, &cfg.anchors, &guess.unwrap_or(centroid))
            {
                guess = Some(p);
                records.push(SensorRecord {
                    t,
                    payload: Payload::UwbFix(UwbPositionFix {
                        t,
                        pos: p,
                        sigma: Vector3::new(
                            cov[(0, 0)].max(0.0).sqrt(),
                            cov[(1, 1)].max(0.0).sqrt(),
                            cov[(2, 2)].max(0.0).sqrt(),
                        ),
                    }),
                });
            }
        }
    }

    // LiDAR sweeps.
    {
        let mut rng = stream_rng(cfg.seed, 0x4C4944);
        let m = &cfg.lidar;
        let mut k = 0usize;
        let noise = (cfg.noise.sigma_lidar_range > 0.0)
            .then(|| Normal::new(0.0, cfg.noise.sigma_lidar_range).unwrap());
        loop {
            let t_start = k as f64 * m.sweep;
            let t_end = t_start + m.sweep;
            if t_end > duration {
                break;
            }
            let mut points = Vec::with_capacity(m.rings * m.azimuths);
            for j in 0..m.azimuths {
                let t_j = t_start + (j as f64 + 0.5) / m.azimuths as f64 * m.sweep;
                let az = j as f64 / m.azimuths as f64 * std::f64::consts::TAU;
                let (rot, pos) = traj.pose(t_j);
                let origin = pos + rot.rotate(&cfg.p_il);
                for r in 0..m.rings {
                    let el = if m.rings > 1 {
                        (-1.0 + 2.0 * r as f64 / (m.rings - 1) as f64)
                            * m.elev_max_deg.to_radians()
                    } else {
                        0.0
                    };
                    let dir_l =
                        Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
                    let dir_g = rot.rotate(&dir_l);
                    if let Some(range) = world.cast_ray(&origin, &dir_g, m.max_range) {
                        let meas = range + noise.map_or(0.0, |n| n.sample(&mut rng));
                        points.push(ScanPoint {
                            pos: dir_l * meas,
                            t_offset: t_j - t_end,
                        });
                    }
                }
            }
            records.push(SensorRecord {
                t: t_end,
                payload: Payload::Lidar(LidarScan { t_end, points }),
            });
            k += 1;
        }
    }

    // Ground truth at the LiDAR rate.
    {
        let n = (duration / 0.1).floor() as usize;
        for i in 0..=n {
            let t = i as f64 * 0.1;
            if t > duration {
                break;
            }
            let (rot, pos) = traj.pose(t);
            records.push(SensorRecord {
                t,
                payload: Payload::GroundTruth(GroundTruthSample {
                    t,
                    pos,
                    rot,
                    vel: traj.vel(t),
                }),
            });
        }
    }

    sort_records(&mut records);
    records
}
