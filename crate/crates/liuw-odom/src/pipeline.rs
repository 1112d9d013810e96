//! Replay-ordered estimator: static initialization, IMU-driven
//! propagation, per-scan iterated updates with mode-dependent constraint
//! sets, degradation analysis, and map maintenance.

use crate::degradation::{analyze, DegradationReport, DegradationThresholds};
use crate::error::{Error, Result};
use crate::eval::StampedPose;
use crate::ieskf::{update, UpdateConfig};
use crate::log_io::{Payload, SensorRecord};
use crate::measurements::{
    gate, lidar_residual, uwb_distance_residual, uwb_position_residual, wheel_residual,
    AnchorConfig, ConstraintFamily, ResidualBlock, UwbPositionFix, UwbRangeSample, WheelSample,
};
use crate::mode::{MotionMode, SwitchState, UwbRegion};
use crate::plane_map::{LidarScan, MapConfig, VoxelPlaneMap};
use crate::propagation::{propagate, undistort_scan, ImuSample, ProcessNoiseConfig};
use crate::rotation::Rotation;
use crate::sim::trilateration::paper_anchors;
use crate::state::*;
use nalgebra::Vector3;

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub enable_uwb: bool,
    pub enable_wheel: bool,
    pub process_noise: ProcessNoiseConfig,
    /// Point-to-plane residual standard deviation. This absorbs map error
    /// (the map is built from past, noisy scans), not just raw range noise,
    /// so it is several times the sensor sigma.
    pub sigma_lidar: f64,
    pub map: MapConfig,
    pub thresholds: DegradationThresholds,
    pub region: UwbRegion,
    pub min_dwell: usize,
    pub anchors: Vec<AnchorConfig>,
    pub extr_lidar: Extrinsic,
    pub extr_uwb: Extrinsic,
    pub extr_wheel: Extrinsic,
    pub max_iters: usize,
    pub converge_eps: f64,
    pub freeze_extrinsics: bool,
    pub freeze_gravity: bool,
    /// Static-initialization window, s.
    pub init_window: f64,
    /// Maximum accelerometer spread classed as stationary, m/s².
    pub stationary_accel_spread: f64,
    /// Initial covariance diagonal per block.
    pub init_cov: InitCov,
    /// Per-scan cap on points used for plane matching.
    pub max_matched_points: usize,
    /// Chi-square gate on UWB blocks (LiDAR and wheel are never gated).
    pub gate_uwb: bool,
    /// Scan-ensemble degeneracy guard: translation directions whose
    /// normal-outer-product eigenvalue falls below this fraction of the
    /// largest are projected out of the LiDAR position Jacobians, so
    /// sparse-sampling artifacts cannot inject information along an
    /// unconstrained axis. 0 disables the guard.
    pub guard_ratio: f64,
    /// LIW recovery hysteresis: σ_p_max (and σ_r_max) must fall below this
    /// fraction of the entry threshold before LIW yields back to LIO.
    pub liw_exit_ratio: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct InitCov {
    pub rot: f64,
    pub pos: f64,
    pub vel: f64,
    pub bias_gyro: f64,
    pub bias_accel: f64,
    pub gravity: f64,
    pub extrinsic: f64,
}

impl Default for InitCov {
    fn default() -> Self {
        InitCov {
            rot: 1e-4,
            pos: 1e-2,
            vel: 1e-4,
            bias_gyro: 1e-6,
            bias_accel: 1e-4,
            gravity: 1e-6,
            extrinsic: 1e-6,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            enable_uwb: true,
            enable_wheel: true,
            process_noise: ProcessNoiseConfig::default(),
            sigma_lidar: 0.5,
            map: MapConfig::default(),
            thresholds: DegradationThresholds::default(),
            region: UwbRegion {
                center: Vector3::new(13.963, 0.0, 2.249),
                radius: 21.0,
            },
            min_dwell: 10,
            anchors: paper_anchors(),
            extr_lidar: Extrinsic::new(Rotation::identity(), Vector3::new(0.1, 0.0, 0.3)),
            extr_uwb: Extrinsic::new(Rotation::identity(), Vector3::new(0.0, 0.0, 0.2)),
            extr_wheel: Extrinsic::new(Rotation::identity(), Vector3::new(-0.3, 0.0, -0.4)),
            max_iters: 4,
            converge_eps: 1e-6,
            freeze_extrinsics: true,
            freeze_gravity: true,
            init_window: 1.0,
            stationary_accel_spread: 0.05,
            init_cov: InitCov::default(),
            max_matched_points: 200,
            gate_uwb: true,
            guard_ratio: 0.1,
            liw_exit_ratio: 0.05,
        }
    }
}

impl PipelineConfig {
    fn update_config(&self) -> UpdateConfig {
        let mut frozen = [false; STATE_DIM];
        if self.freeze_gravity {
            for i in IDX_GRAV..IDX_GRAV + 3 {
                frozen[i] = true;
            }
        }
        if self.freeze_extrinsics {
            for i in IDX_EXT_L_ROT..STATE_DIM {
                frozen[i] = true;
            }
        }
        UpdateConfig {
            max_iters: self.max_iters,
            converge_eps: self.converge_eps,
            frozen,
        }
    }

    fn initial_covariance(&self) -> Covariance {
        let c = &self.init_cov;
        let mut p = Covariance::zeros();
        let blocks = [
            (IDX_THETA, c.rot),
            (IDX_POS, c.pos),
            (IDX_VEL, c.vel),
            (IDX_BG, c.bias_gyro),
            (IDX_BA, c.bias_accel),
            (IDX_GRAV, c.gravity),
        ];
        for (at, v) in blocks {
            for i in 0..3 {
                p[(at + i, at + i)] = v;
            }
        }
        for i in IDX_EXT_L_ROT..STATE_DIM {
            p[(i, i)] = c.extrinsic;
        }
        p
    }
}

/// Static initialization over the leading window of the stream.
///
/// Gravity direction from the mean accelerometer (magnitude fixed to
/// 9.81), gyro bias from the mean gyro, roll/pitch aligning measured
/// gravity with +z, yaw zero. Position from the first UWB fix in the
/// window when UWB is enabled, else the origin.
pub fn initialize(records: &[SensorRecord], cfg: &PipelineConfig) -> Result<(NavState, Covariance)> {
    let t0 = records.first().ok_or(Error::EmptyStream)?.t;
    let t_end = t0 + cfg.init_window;
    let mut accels: Vec<Vector3<f64>> = Vec::new();
    let mut gyro_sum = Vector3::zeros();
    let mut first_fix: Option<UwbPositionFix> = None;
    for rec in records.iter().take_while(|r| r.t <= t_end) {
        match &rec.payload {
            Payload::Imu(u) => {
                accels.push(u.accel);
                gyro_sum += u.gyro;
            }
            // The first fix is treated as a surveyed starting point, so it
            // anchors the world frame even when UWB updates are disabled.
            Payload::UwbFix(f) if first_fix.is_none() => {
                first_fix = Some(*f);
            }
            _ => {}
        }
    }
    if accels.len() < 100 {
        return Err(Error::TooFewImuSamples(accels.len()));
    }
    let mean_accel: Vector3<f64> = accels.iter().sum::<Vector3<f64>>() / accels.len() as f64;
    let spread = accels
        .iter()
        .map(|a| (a - mean_accel).norm())
        .fold(0.0f64, f64::max);
    if spread > cfg.stationary_accel_spread {
        return Err(Error::NotStationary(spread));
    }

    let mut x = NavState::identity();
    let g_mag = 9.81;
    let a_hat = mean_accel.normalize();
    // Minimal rotation taking measured "up" onto world +z: fixes roll and
    // pitch, leaves yaw at zero.
    x.rot = Rotation::between(&a_hat, &Vector3::z());
    x.gravity = Vector3::new(0.0, 0.0, -g_mag);
    x.bias_gyro = gyro_sum / accels.len() as f64;
    x.bias_accel = mean_accel - a_hat * g_mag;
    x.pos = match first_fix {
        // The fix locates the antenna; pull back through the extrinsic.
        Some(f) => f.pos - x.rot.rotate(&cfg.extr_uwb.trans),
        None => Vector3::zeros(),
    };
    x.vel = Vector3::zeros();
    x.extr_lidar = cfg.extr_lidar;
    x.extr_uwb = cfg.extr_uwb;
    x.extr_wheel = cfg.extr_wheel;
    let mut p = cfg.initial_covariance();
    if let Some(f) = first_fix {
        // The surveyed start is only as good as the fix that defines it:
        // near-coplanar anchors leave the vertical poorly determined, and
        // an optimistic prior there makes early gating reject valid fixes.
        for i in 0..3 {
            p[(IDX_POS + i, IDX_POS + i)] = (f.sigma[i] * f.sigma[i]).max(cfg.init_cov.pos);
        }
    }
    Ok((x, p))
}

/// Per-update diagnostic row.
#[derive(Clone, Debug)]
pub struct UpdateDiag {
    pub t: f64,
    pub mode: MotionMode,
    pub report: DegradationReport,
    pub iters: usize,
    pub lidar_blocks: usize,
    pub uwb_blocks: usize,
    pub wheel_blocks: usize,
    pub gated_uwb: usize,
    pub skipped: bool,
}

pub struct PipelineOutput {
    pub trajectory: Vec<StampedPose>,
    /// Covariance trace of the position block per trajectory entry, plus
    /// the full position covariance for consistency analysis.
    pub pos_covariance: Vec<nalgebra::Matrix3<f64>>,
    pub diagnostics: Vec<UpdateDiag>,
    pub ground_truth: Vec<StampedPose>,
    pub map: VoxelPlaneMap,
}

struct BufferedWheel {
    sample: WheelSample,
    gyro_raw: Vector3<f64>,
}

/// Run the estimator over a sorted record stream.
pub fn run(records: &[SensorRecord], cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let (mut x, mut p) = initialize(records, cfg)?;
    let t_start = records.first().map(|r| r.t).unwrap() + cfg.init_window;
    let update_cfg = cfg.update_config();

    let mut map = VoxelPlaneMap::new(cfg.map.clone());
    // With UWB disabled the aided region is moot; an empty region keeps the
    // switch on the LIO/LIW side so the wheel stays available.
    let region = if cfg.enable_uwb {
        cfg.region.clone()
    } else {
        UwbRegion {
            center: cfg.region.center,
            radius: f64::NEG_INFINITY,
        }
    };
    let mut switch = SwitchState::new(if region.contains(&x.pos) {
        MotionMode::Liu
    } else {
        MotionMode::Lio
    });
    switch.min_dwell = cfg.min_dwell;
    switch.exit_sigma_p = cfg.liw_exit_ratio * cfg.thresholds.d_p_thre;
    switch.exit_sigma_r = cfg.liw_exit_ratio * cfg.thresholds.d_r_thre;

    let mut out = PipelineOutput {
        trajectory: Vec::new(),
        pos_covariance: Vec::new(),
        diagnostics: Vec::new(),
        ground_truth: Vec::new(),
        map: VoxelPlaneMap::new(cfg.map.clone()),
    };

    let mut last_imu: Option<ImuSample> = None;
    let mut t_state = t_start;
    let mut imu_window: Vec<ImuSample> = Vec::new();
    let mut wheel_buf: Vec<BufferedWheel> = Vec::new();
    let mut fix_buf: Vec<UwbPositionFix> = Vec::new();
    let mut range_buf: Vec<UwbRangeSample> = Vec::new();
    let mut first_scan_done = false;

    for (idx, rec) in records.iter().enumerate() {
        let with_ctx = |e: Error| e.at_record(idx, rec.t);
        match &rec.payload {
            Payload::GroundTruth(g) => {
                out.ground_truth.push(StampedPose {
                    t: g.t,
                    pos: g.pos,
                    rot: g.rot,
                });
                continue;
            }
            _ => {}
        }
        if rec.t < t_start {
            // Inside the initialization window; only remember the IMU tail
            // so propagation can start from the window edge.
            if let Payload::Imu(u) = &rec.payload {
                last_imu = Some(*u);
                imu_window.push(*u);
            }
            continue;
        }
        match &rec.payload {
            Payload::Imu(u) => {
                // Propagate with the previous sample over the elapsed step.
                if let Some(prev) = last_imu {
                    let dt = u.t - t_state;
                    if dt > 0.0 {
                        let (nx, np) =
                            propagate(&x, &p, &prev, dt, &cfg.process_noise).map_err(with_ctx)?;
                        x = nx;
                        p = np;
                        t_state = u.t;
                    } else if dt < 0.0 {
                        return Err(with_ctx(Error::NonMonotonicTime(dt)));
                    }
                }
                last_imu = Some(*u);
                imu_window.push(*u);
                let horizon = u.t - 0.25;
                imu_window.retain(|s| s.t >= horizon);
            }
            Payload::Wheel(w) => {
                if cfg.enable_wheel {
                    wheel_buf.push(BufferedWheel {
                        sample: *w,
                        gyro_raw: last_imu.map(|u| u.gyro).unwrap_or_default(),
                    });
                }
            }
            Payload::UwbRange(r) => {
                if cfg.enable_uwb {
                    range_buf.push(*r);
                }
            }
            Payload::UwbFix(f) => {
                if cfg.enable_uwb {
                    fix_buf.push(*f);
                }
            }
            Payload::Lidar(scan) => {
                // Bridge the gap from the last IMU sample to scan end.
                if let Some(prev) = last_imu {
                    let dt = scan.t_end - t_state;
                    if dt > 1e-9 {
                        let (nx, np) =
                            propagate(&x, &p, &prev, dt, &cfg.process_noise).map_err(with_ctx)?;
                        x = nx;
                        p = np;
                        t_state = scan.t_end;
                    }
                }

                let report = analyze(&p, &cfg.thresholds);
                let mode = switch.decide(&region, &x.pos, &report);

                let undistorted = undistort_scan(scan, &imu_window, &x).map_err(with_ctx)?;
                let matched_points = subsample(&undistorted, cfg.max_matched_points);

                if !first_scan_done {
                    insert_scan(&mut map, &x, &undistorted);
                    first_scan_done = true;
                    out.trajectory.push(StampedPose {
                        t: scan.t_end,
                        pos: x.pos,
                        rot: x.rot,
                    });
                    out.pos_covariance
                        .push(p.fixed_view::<3, 3>(IDX_POS, IDX_POS).into_owned());
                    out.diagnostics.push(UpdateDiag {
                        t: scan.t_end,
                        mode,
                        report,
                        iters: 0,
                        lidar_blocks: 0,
                        uwb_blocks: 0,
                        wheel_blocks: 0,
                        gated_uwb: 0,
                        skipped: false,
                    });
                    wheel_buf.clear();
                    fix_buf.clear();
                    range_buf.clear();
                    continue;
                }

                let families = mode.active_constraints();
                let use_uwb = families.contains(&ConstraintFamily::UwbPosition);
                let use_wheel = families.contains(&ConstraintFamily::Wheel);

                // Chi-square gate UWB blocks against the prior, once.
                let mut gated = 0usize;
                let mut fixes: Vec<UwbPositionFix> = Vec::new();
                let mut ranges: Vec<UwbRangeSample> = Vec::new();
                if use_uwb {
                    for fx in &fix_buf {
                        let mut blk = uwb_position_residual(&x, fx);
                        inflate_fix(&mut blk, &x, scan.t_end, fx.t);
                        if !cfg.gate_uwb || gate(&blk, &p).map_err(with_ctx)? {
                            fixes.push(*fx);
                        } else {
                            gated += 1;
                        }
                    }
                    for rg in &range_buf {
                        match uwb_distance_residual(&x, rg, &cfg.anchors) {
                            Ok(mut blk) => {
                                inflate_range(&mut blk, &x, scan.t_end, rg.t);
                                if !cfg.gate_uwb || gate(&blk, &p).map_err(with_ctx)? {
                                    ranges.push(*rg);
                                } else {
                                    gated += 1;
                                }
                            }
                            Err(Error::AntennaAtAnchor(_)) => gated += 1,
                            Err(e) => return Err(with_ctx(e)),
                        }
                    }
                }
                let wheels: Vec<&BufferedWheel> =
                    if use_wheel { wheel_buf.iter().collect() } else { Vec::new() };

                let t_end = scan.t_end;
                // Plane matches barely move between Gauss-Newton iterates;
                // cache them per 5 cm query cell for the scan.
                let match_cache: std::cell::RefCell<
                    std::collections::HashMap<(i64, i64, i64), Option<crate::plane_map::PlaneFeature>>,
                > = std::cell::RefCell::new(std::collections::HashMap::new());
                let cached_match = |g: &Vector3<f64>| {
                    let key = (
                        (g.x * 20.0).round() as i64,
                        (g.y * 20.0).round() as i64,
                        (g.z * 20.0).round() as i64,
                    );
                    *match_cache
                        .borrow_mut()
                        .entry(key)
                        .or_insert_with(|| map.match_plane(g))
                };

                // Ensemble degeneracy guard, decided once per scan at the
                // prior: directions the matched plane normals do not span
                // carry no real information.
                let guard = if cfg.guard_ratio > 0.0 {
                    let mut n_outer = nalgebra::Matrix3::<f64>::zeros();
                    for pt in &matched_points {
                        let g = x.lidar_to_global(pt);
                        if let Some(plane) = cached_match(&g) {
                            n_outer += plane.normal * plane.normal.transpose();
                        }
                    }
                    degeneracy_projector(&n_outer, cfg.guard_ratio)
                } else {
                    nalgebra::Matrix3::identity()
                };

                let provider = |s: &NavState| -> Result<Vec<ResidualBlock>> {
                    let mut blocks = Vec::new();
                    for pt in &matched_points {
                        let g = s.lidar_to_global(pt);
                        if let Some(plane) = cached_match(&g) {
                            let mut blk = lidar_residual(s, pt, &plane, cfg.sigma_lidar);
                            apply_guard(&mut blk, &guard);
                            blocks.push(blk);
                        }
                    }
                    for fx in &fixes {
                        let mut blk = uwb_position_residual(s, fx);
                        inflate_fix(&mut blk, s, t_end, fx.t);
                        blocks.push(blk);
                    }
                    for rg in &ranges {
                        match uwb_distance_residual(s, rg, &cfg.anchors) {
                            Ok(mut blk) => {
                                inflate_range(&mut blk, s, t_end, rg.t);
                                blocks.push(blk);
                            }
                            Err(Error::AntennaAtAnchor(_)) => {}
                            Err(e) => return Err(e),
                        }
                    }
                    for bw in &wheels {
                        blocks.push(wheel_residual(s, &bw.sample, &bw.gyro_raw));
                    }
                    Ok(blocks)
                };

                let mut diag = UpdateDiag {
                    t: scan.t_end,
                    mode,
                    report,
                    iters: 0,
                    lidar_blocks: 0,
                    uwb_blocks: fixes.len() + ranges.len(),
                    wheel_blocks: wheels.len(),
                    gated_uwb: gated,
                    skipped: false,
                };
                match update(&x, &p, &provider, &update_cfg) {
                    Ok(res) => {
                        diag.iters = res.iters;
                        diag.lidar_blocks = res
                            .stats
                            .blocks
                            .saturating_sub(diag.uwb_blocks + diag.wheel_blocks);
                        x = res.x_post;
                        p = res.p_post;
                    }
                    Err(Error::NumericalFailure) => {
                        // Keep the propagated prior for this frame.
                        diag.skipped = true;
                    }
                    Err(e) => return Err(with_ctx(e)),
                }

                insert_scan(&mut map, &x, &undistorted);
                out.trajectory.push(StampedPose {
                    t: scan.t_end,
                    pos: x.pos,
                    rot: x.rot,
                });
                out.pos_covariance
                    .push(p.fixed_view::<3, 3>(IDX_POS, IDX_POS).into_owned());
                out.diagnostics.push(diag);
                wheel_buf.clear();
                fix_buf.clear();
                range_buf.clear();
            }
            _ => {}
        }
    }
    out.map = map;
    Ok(out)
}

/// Projector removing translation directions whose share of the scan's
/// normal-outer-product spectrum is below `ratio` (identity when the scan
/// constrains all three axes).
fn degeneracy_projector(n_outer: &nalgebra::Matrix3<f64>, ratio: f64) -> nalgebra::Matrix3<f64> {
    let eig = n_outer.symmetric_eigen();
    let l_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut proj = nalgebra::Matrix3::identity();
    if l_max <= 0.0 {
        return proj;
    }
    for i in 0..3 {
        if eig.eigenvalues[i] < ratio * l_max {
            let v = eig.eigenvectors.column(i);
            proj -= v * v.transpose();
        }
    }
    proj
}

/// Apply the guard projector to a LiDAR block's position Jacobian columns.
fn apply_guard(blk: &mut ResidualBlock, proj: &nalgebra::Matrix3<f64>) {
    for row in 0..blk.h.nrows() {
        let hp = Vector3::new(
            blk.h[(row, IDX_POS)],
            blk.h[(row, IDX_POS + 1)],
            blk.h[(row, IDX_POS + 2)],
        );
        let hp = proj * hp;
        for k in 0..3 {
            blk.h[(row, IDX_POS + k)] = hp[k];
        }
    }
}

/// Inflate a buffered UWB position block for the time offset to the update
/// instant: the platform moved ≈ ‖v‖·Δt in between.
fn inflate_fix(blk: &mut ResidualBlock, x: &NavState, t_update: f64, t_meas: f64) {
    let extra = (x.vel.norm() * (t_update - t_meas)).powi(2);
    for i in 0..3 {
        blk.r_meas[(i, i)] += extra;
    }
}

fn inflate_range(blk: &mut ResidualBlock, x: &NavState, t_update: f64, t_meas: f64) {
    let extra = (x.vel.norm() * (t_update - t_meas)).powi(2);
    blk.r_meas[(0, 0)] += extra;
}

fn subsample(scan: &LidarScan, cap: usize) -> Vec<Vector3<f64>> {
    let n = scan.points.len();
    if n <= cap {
        return scan.points.iter().map(|p| p.pos).collect();
    }
    let stride = n as f64 / cap as f64;
    (0..cap)
        .map(|i| scan.points[(i as f64 * stride) as usize].pos)
        .collect()
}

fn insert_scan(map: &mut VoxelPlaneMap, x: &NavState, scan: &LidarScan) {
    let global: Vec<Vector3<f64>> = scan
        .points
        .iter()
        .map(|p| x.lidar_to_global(&p.pos))
        .collect();
    map.insert_downsampled(&global);
}
