//! TOML run configuration: optional overrides layered onto the library
//! defaults for both the simulator and the estimator.

use crate::error::{Error, Result};
use crate::measurements::AnchorConfig;
use crate::mode::UwbRegion;
use crate::pipeline::PipelineConfig;
use crate::sim::sensors::{LidarModel, SimConfig, SimNoise};
use crate::sim::trajectory::TrajectoryConfig;
use nalgebra::Vector3;
use serde::Deserialize;

/// Top-level config file: `[sim]` and `[pipeline]` tables, every key
/// optional. Unknown keys are rejected so typos fail loudly.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub sim: SimSection,
    pub pipeline: PipelineSection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub seed: Option<u64>,
    pub imu_rate: Option<f64>,
    pub wheel_rate: Option<f64>,
    pub uwb_rate: Option<f64>,
    pub trajectory: TrajectorySection,
    pub lidar: LidarSection,
    pub noise: NoiseSection,
    /// Replaces the default anchor set when present.
    pub anchors: Option<Vec<AnchorEntry>>,
    pub region: RegionSection,
    pub p_il: Option<[f64; 3]>,
    pub p_iu: Option<[f64; 3]>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySection {
    pub start: Option<[f64; 3]>,
    pub speed: Option<f64>,
    pub hold_duration: Option<f64>,
    pub ramp_duration: Option<f64>,
    pub weave_amplitude: Option<f64>,
    pub weave_period: Option<f64>,
    pub p_iw: Option<[f64; 3]>,
    pub duration: Option<f64>,
    /// Overrides `duration` with the time needed to travel this arc length.
    pub distance: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarSection {
    pub rings: Option<usize>,
    pub azimuths: Option<usize>,
    pub elev_max_deg: Option<f64>,
    pub max_range: Option<f64>,
    pub sweep: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub sigma_gyro: Option<f64>,
    pub sigma_accel: Option<f64>,
    pub sigma_bg_walk: Option<f64>,
    pub sigma_ba_walk: Option<f64>,
    pub sigma_wheel: Option<f64>,
    pub sigma_uwb_range: Option<f64>,
    pub sigma_lidar_range: Option<f64>,
    /// Zero every noise scale (overrides the individual sigmas).
    pub zero: Option<bool>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorEntry {
    pub anchor_id: u32,
    pub pos: [f64; 3],
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionSection {
    pub center: Option<[f64; 3]>,
    pub radius: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub enable_uwb: Option<bool>,
    pub enable_wheel: Option<bool>,
    pub sigma_lidar: Option<f64>,
    pub d_p_thre: Option<f64>,
    pub d_r_thre: Option<f64>,
    pub min_dwell: Option<usize>,
    pub max_iters: Option<usize>,
    pub converge_eps: Option<f64>,
    pub freeze_extrinsics: Option<bool>,
    pub freeze_gravity: Option<bool>,
    pub init_window: Option<f64>,
    pub max_matched_points: Option<usize>,
    pub gate_uwb: Option<bool>,
    pub guard_ratio: Option<f64>,
    pub liw_exit_ratio: Option<f64>,
    pub process_noise: ProcessNoiseSection,
    pub map: MapSection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessNoiseSection {
    pub sigma_gyro: Option<f64>,
    pub sigma_accel: Option<f64>,
    pub sigma_bg_walk: Option<f64>,
    pub sigma_ba_walk: Option<f64>,
    pub sigma_map_drift: Option<f64>,
    pub sigma_extr: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapSection {
    pub voxel_size: Option<f64>,
    pub knn: Option<usize>,
    pub search_radius: Option<f64>,
    pub rms_gate: Option<f64>,
    pub planarity_ratio: Option<f64>,
    pub downsample_res: Option<f64>,
}

fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
    ($dst:expr, $src:expr, $map:expr) => {
        if let Some(v) = $src {
            $dst = $map(v);
        }
    };
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    /// Simulator configuration with the file's overrides applied.
    pub fn sim_config(&self) -> SimConfig {
        let s = &self.sim;
        let mut cfg = SimConfig::default();
        set!(cfg.seed, s.seed);
        set!(cfg.imu_rate, s.imu_rate);
        set!(cfg.wheel_rate, s.wheel_rate);
        set!(cfg.uwb_rate, s.uwb_rate);
        cfg.traj = self.trajectory_config();
        let l = &s.lidar;
        let mut lidar = LidarModel::default();
        set!(lidar.rings, l.rings);
        set!(lidar.azimuths, l.azimuths);
        set!(lidar.elev_max_deg, l.elev_max_deg);
        set!(lidar.max_range, l.max_range);
        set!(lidar.sweep, l.sweep);
        cfg.lidar = lidar;
        cfg.noise = self.sim_noise();
        if let Some(anchors) = &s.anchors {
            cfg.anchors = anchors
                .iter()
                .map(|a| AnchorConfig {
                    anchor_id: a.anchor_id,
                    pos: vec3(a.pos),
                })
                .collect();
        }
        cfg.region = self.region(&cfg.region);
        set!(cfg.p_il, s.p_il, vec3);
        set!(cfg.p_iu, s.p_iu, vec3);
        cfg
    }

    fn trajectory_config(&self) -> TrajectoryConfig {
        let t = &self.sim.trajectory;
        let mut cfg = TrajectoryConfig::default();
        set!(cfg.start, t.start, vec3);
        set!(cfg.speed, t.speed);
        set!(cfg.hold_duration, t.hold_duration);
        set!(cfg.ramp_duration, t.ramp_duration);
        set!(cfg.weave_amplitude, t.weave_amplitude);
        set!(cfg.weave_period, t.weave_period);
        set!(cfg.p_iw, t.p_iw, vec3);
        set!(cfg.duration, t.duration);
        if let Some(d) = t.distance {
            cfg.duration = cfg.duration_for_distance(d);
        }
        cfg
    }

    fn sim_noise(&self) -> SimNoise {
        let n = &self.sim.noise;
        if n.zero == Some(true) {
            return SimNoise::zero();
        }
        let mut cfg = SimNoise::default();
        set!(cfg.sigma_gyro, n.sigma_gyro);
        set!(cfg.sigma_accel, n.sigma_accel);
        set!(cfg.sigma_bg_walk, n.sigma_bg_walk);
        set!(cfg.sigma_ba_walk, n.sigma_ba_walk);
        set!(cfg.sigma_wheel, n.sigma_wheel);
        set!(cfg.sigma_uwb_range, n.sigma_uwb_range);
        set!(cfg.sigma_lidar_range, n.sigma_lidar_range);
        cfg
    }

    fn region(&self, default: &UwbRegion) -> UwbRegion {
        let r = &self.sim.region;
        UwbRegion {
            center: r.center.map(vec3).unwrap_or(default.center),
            radius: r.radius.unwrap_or(default.radius),
        }
    }

    /// Estimator configuration with the file's overrides applied. Anchors,
    /// region, and extrinsics come from the `[sim]` section so that both
    /// halves of a run agree.
    pub fn pipeline_config(&self) -> PipelineConfig {
        let p = &self.pipeline;
        let sim = self.sim_config();
        let mut cfg = PipelineConfig {
            anchors: sim.anchors.clone(),
            region: sim.region,
            extr_lidar: sim.extr_lidar(),
            extr_uwb: sim.extr_uwb(),
            extr_wheel: sim.extr_wheel(),
            ..PipelineConfig::default()
        };
        set!(cfg.enable_uwb, p.enable_uwb);
        set!(cfg.enable_wheel, p.enable_wheel);
        set!(cfg.sigma_lidar, p.sigma_lidar);
        set!(cfg.thresholds.d_p_thre, p.d_p_thre);
        set!(cfg.thresholds.d_r_thre, p.d_r_thre);
        set!(cfg.min_dwell, p.min_dwell);
        set!(cfg.max_iters, p.max_iters);
        set!(cfg.converge_eps, p.converge_eps);
        set!(cfg.freeze_extrinsics, p.freeze_extrinsics);
        set!(cfg.freeze_gravity, p.freeze_gravity);
        set!(cfg.init_window, p.init_window);
        set!(cfg.max_matched_points, p.max_matched_points);
        set!(cfg.gate_uwb, p.gate_uwb);
        set!(cfg.guard_ratio, p.guard_ratio);
        set!(cfg.liw_exit_ratio, p.liw_exit_ratio);
        let q = &p.process_noise;
        set!(cfg.process_noise.sigma_gyro, q.sigma_gyro);
        set!(cfg.process_noise.sigma_accel, q.sigma_accel);
        set!(cfg.process_noise.sigma_bg_walk, q.sigma_bg_walk);
        set!(cfg.process_noise.sigma_ba_walk, q.sigma_ba_walk);
        set!(cfg.process_noise.sigma_map_drift, q.sigma_map_drift);
        set!(cfg.process_noise.sigma_extr, q.sigma_extr);
        let m = &p.map;
        set!(cfg.map.voxel_size, m.voxel_size);
        set!(cfg.map.knn, m.knn);
        set!(cfg.map.search_radius, m.search_radius);
        set!(cfg.map.rms_gate, m.rms_gate);
        set!(cfg.map.planarity_ratio, m.planarity_ratio);
        set!(cfg.map.downsample_res, m.downsample_res);
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = Config::parse("").unwrap();
        let sim = cfg.sim_config();
        assert_eq!(sim.seed, 0);
        assert_relative_eq!(sim.imu_rate, 200.0);
        assert_eq!(sim.anchors.len(), 4);
        let pipe = cfg.pipeline_config();
        assert!(pipe.enable_uwb && pipe.enable_wheel);
        assert_relative_eq!(pipe.sigma_lidar, 0.2);
    }

    #[test]
    fn overrides_apply() {
        let text = r#"
            [sim]
            seed = 7
            [sim.trajectory]
            speed = 0.5
            distance = 100.0
            [sim.noise]
            zero = true
            [pipeline]
            enable_uwb = false
            sigma_lidar = 0.02
            [pipeline.process_noise]
            sigma_gyro = 1e-3
        "#;
        let cfg = Config::parse(text).unwrap();
        let sim = cfg.sim_config();
        assert_eq!(sim.seed, 7);
        assert_relative_eq!(sim.traj.speed, 0.5);
        assert_relative_eq!(sim.traj.duration, 2.0 + 0.5 + 100.0 / 0.5);
        assert_eq!(sim.noise.sigma_gyro, 0.0);
        let pipe = cfg.pipeline_config();
        assert!(!pipe.enable_uwb);
        assert_relative_eq!(pipe.sigma_lidar, 0.02);
        assert_relative_eq!(pipe.process_noise.sigma_gyro, 1e-3);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(
            Config::parse("[sim]\nsped = 0.5\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn anchors_replace_defaults() {
        let text = r#"
            [sim]
            anchors = [
                { anchor_id = 1, pos = [0.0, 0.0, 1.0] },
                { anchor_id = 2, pos = [5.0, 0.0, 1.0] },
            ]
        "#;
        let cfg = Config::parse(text).unwrap();
        let sim = cfg.sim_config();
        assert_eq!(sim.anchors.len(), 2);
        assert_eq!(sim.anchors[1].anchor_id, 2);
        // The pipeline inherits the same anchor set.
        assert_eq!(cfg.pipeline_config().anchors.len(), 2);
    }
}
