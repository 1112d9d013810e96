//! Sensor-log records and the line-delimited JSON log format.
//!
//! One record per line; every float is written with 9 significant digits
//! (`{:.8e}`), which makes logs byte-reproducible across runs. Records are
//! ordered by timestamp with ties broken by kind:
//! imu < wheel < uwb_range < uwb_fix < lidar < ground_truth.

use crate::error::{Error, Result};
use crate::measurements::{UwbPositionFix, UwbRangeSample, WheelSample};
use crate::plane_map::{LidarScan, ScanPoint};
use crate::propagation::ImuSample;
use crate::rotation::Rotation;
use nalgebra::{UnitQuaternion, Quaternion, Vector3};
use serde::Deserialize;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

/// Ground-truth pose/velocity reference sample.
#[derive(Clone, Debug)]
pub struct GroundTruthSample {
    pub t: f64,
    pub pos: Vector3<f64>,
    pub rot: Rotation,
    pub vel: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub enum Payload {
    Imu(ImuSample),
    Wheel(WheelSample),
    UwbRange(UwbRangeSample),
    UwbFix(UwbPositionFix),
    Lidar(LidarScan),
    GroundTruth(GroundTruthSample),
}

/// One time-stamped sensor record.
#[derive(Clone, Debug)]
pub struct SensorRecord {
    pub t: f64,
    pub payload: Payload,
}

impl SensorRecord {
    /// Tie-break rank for equal timestamps.
    pub fn kind_rank(&self) -> u8 {
        match self.payload {
            Payload::Imu(_) => 0,
            Payload::Wheel(_) => 1,
            Payload::UwbRange(_) => 2,
            Payload::UwbFix(_) => 3,
            Payload::Lidar(_) => 4,
            Payload::GroundTruth(_) => 5,
        }
    }

    fn anchor_id(&self) -> u32 {
        match &self.payload {
            Payload::UwbRange(r) => r.anchor_id,
            _ => 0,
        }
    }
}

/// Sort a record stream into replay order.
pub fn sort_records(records: &mut [SensorRecord]) {
    records.sort_by(|a, b| {
        a.t.partial_cmp(&b.t)
            .unwrap()
            .then(a.kind_rank().cmp(&b.kind_rank()))
            .then(a.anchor_id().cmp(&b.anchor_id()))
    });
}

fn f(x: f64) -> String {
    format!("{x:.8e}")
}

fn v3(v: &Vector3<f64>) -> String {
    format!("[{},{},{}]", f(v.x), f(v.y), f(v.z))
}

/// Serialize one record to its JSONL line (no trailing newline).
pub fn to_line(rec: &SensorRecord) -> String {
    let mut s = format!("{{\"t\":{},", f(rec.t));
    match &rec.payload {
        Payload::Imu(u) => {
            write!(
                s,
                "\"kind\":\"imu\",\"gyro\":{},\"accel\":{}",
                v3(&u.gyro),
                v3(&u.accel)
            )
            .unwrap();
        }
        Payload::Wheel(w) => {
            write!(
                s,
                "\"kind\":\"wheel\",\"vel\":{},\"sigma\":{}",
                v3(&w.vel),
                v3(&w.sigma)
            )
            .unwrap();
        }
        Payload::UwbRange(r) => {
            write!(
                s,
                "\"kind\":\"uwb_range\",\"anchor_id\":{},\"range\":{},\"sigma\":{}",
                r.anchor_id,
                f(r.range),
                f(r.sigma)
            )
            .unwrap();
        }
        Payload::UwbFix(x) => {
            write!(
                s,
                "\"kind\":\"uwb_fix\",\"pos\":{},\"sigma\":{}",
                v3(&x.pos),
                v3(&x.sigma)
            )
            .unwrap();
        }
        Payload::Lidar(scan) => {
            s.push_str("\"kind\":\"lidar\",\"points\":[");
            for (i, p) in scan.points.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                write!(
                    s,
                    "[{},{},{},{}]",
                    f(p.pos.x),
                    f(p.pos.y),
                    f(p.pos.z),
                    f(p.t_offset)
                )
                .unwrap();
            }
            s.push(']');
        }
        Payload::GroundTruth(g) => {
            let q = g.rot.quaternion();
            write!(
                s,
                "\"kind\":\"ground_truth\",\"pos\":{},\"quat\":[{},{},{},{}],\"vel\":{}",
                v3(&g.pos),
                f(q.i),
                f(q.j),
                f(q.k),
                f(q.w),
                v3(&g.vel)
            )
            .unwrap();
        }
    }
    s.push('}');
    s
}

/// Write a full stream to a JSONL writer.
pub fn write_log<W: Write>(w: &mut W, records: &[SensorRecord]) -> Result<()> {
    let mut buf = std::io::BufWriter::new(w);
    for rec in records {
        buf.write_all(to_line(rec).as_bytes())?;
        buf.write_all(b"\n")?;
    }
    buf.flush()?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum WirePayload {
    Imu { gyro: [f64; 3], accel: [f64; 3] },
    Wheel { vel: [f64; 3], sigma: [f64; 3] },
    UwbRange { anchor_id: u32, range: f64, sigma: f64 },
    UwbFix { pos: [f64; 3], sigma: [f64; 3] },
    Lidar { points: Vec<[f64; 4]> },
    GroundTruth { pos: [f64; 3], quat: [f64; 4], vel: [f64; 3] },
}

#[derive(Deserialize)]
struct WireRecord {
    t: f64,
    #[serde(flatten)]
    payload: WirePayload,
}

fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Parse one JSONL line (1-based `line_no` used for error context).
pub fn from_line(line: &str, line_no: usize) -> Result<SensorRecord> {
    let wire: WireRecord = serde_json::from_str(line).map_err(|e| Error::LogParse {
        line: line_no,
        msg: e.to_string(),
    })?;
    let t = wire.t;
    let payload = match wire.payload {
        WirePayload::Imu { gyro, accel } => Payload::Imu(ImuSample {
            t,
            gyro: vec3(gyro),
            accel: vec3(accel),
        }),
        WirePayload::Wheel { vel, sigma } => Payload::Wheel(WheelSample {
            t,
            vel: vec3(vel),
            sigma: vec3(sigma),
        }),
        WirePayload::UwbRange {
            anchor_id,
            range,
            sigma,
        } => Payload::UwbRange(UwbRangeSample {
            t,
            anchor_id,
            range,
            sigma,
        }),
        WirePayload::UwbFix { pos, sigma } => Payload::UwbFix(UwbPositionFix {
            t,
            pos: vec3(pos),
            sigma: vec3(sigma),
        }),
        WirePayload::Lidar { points } => Payload::Lidar(LidarScan {
            t_end: t,
            points: points
                .into_iter()
                .map(|p| ScanPoint {
                    pos: Vector3::new(p[0], p[1], p[2]),
                    t_offset: p[3],
                })
                .collect(),
        }),
        WirePayload::GroundTruth { pos, quat, vel } => Payload::GroundTruth(GroundTruthSample {
            t,
            pos: vec3(pos),
            rot: Rotation::from_quaternion(UnitQuaternion::from_quaternion(Quaternion::new(
                quat[3], quat[0], quat[1], quat[2],
            ))),
            vel: vec3(vel),
        }),
    };
    Ok(SensorRecord { t, payload })
}

/// Read a whole log file.
pub fn read_log<R: BufRead>(r: R) -> Result<Vec<SensorRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(from_line(&line, i + 1)?);
    }
    Ok(out)
}
