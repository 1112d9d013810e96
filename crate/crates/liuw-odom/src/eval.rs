//! Trajectory file formats and checkpoint-based error metrics.

use crate::error::{Error, Result};
use crate::rotation::Rotation;
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use std::io::{BufRead, Write};

/// One stamped pose, as stored in TUM trajectory files.
#[derive(Clone, Copy, Debug)]
pub struct StampedPose {
    pub t: f64,
    pub pos: Vector3<f64>,
    pub rot: Rotation,
}

/// Write "t x y z qx qy qz qw" lines, 9 significant digits.
pub fn write_tum<W: Write>(w: &mut W, poses: &[StampedPose]) -> Result<()> {
    let mut buf = std::io::BufWriter::new(w);
    for p in poses {
        let q = p.rot.quaternion();
        writeln!(
            buf,
            "{:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e}",
            p.t, p.pos.x, p.pos.y, p.pos.z, q.i, q.j, q.k, q.w
        )?;
    }
    buf.flush()?;
    Ok(())
}

pub fn read_tum<R: BufRead>(r: R) -> Result<Vec<StampedPose>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = t
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::LogParse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        if vals.len() != 8 {
            return Err(Error::LogParse {
                line: i + 1,
                msg: format!("expected 8 fields, got {}", vals.len()),
            });
        }
        out.push(StampedPose {
            t: vals[0],
            pos: Vector3::new(vals[1], vals[2], vals[3]),
            rot: Rotation::from_quaternion(UnitQuaternion::from_quaternion(Quaternion::new(
                vals[7], vals[4], vals[5], vals[6],
            ))),
        });
    }
    Ok(out)
}

/// Linear position interpolation at `t`; errors if `t` is outside the span.
pub fn interpolate(poses: &[StampedPose], t: f64) -> Result<Vector3<f64>> {
    let (first, last) = match (poses.first(), poses.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Err(Error::NoOverlap(t, f64::NAN, f64::NAN)),
    };
    if t < first || t > last {
        return Err(Error::NoOverlap(t, first, last));
    }
    let i = poses.partition_point(|p| p.t <= t);
    if i == 0 {
        return Ok(poses[0].pos);
    }
    if i == poses.len() {
        return Ok(poses[poses.len() - 1].pos);
    }
    let (a, b) = (&poses[i - 1], &poses[i]);
    let span = b.t - a.t;
    if span <= 0.0 {
        return Ok(a.pos);
    }
    let u = (t - a.t) / span;
    Ok(a.pos + (b.pos - a.pos) * u)
}

/// Checkpoint error metrics (see [`evaluate`]).
#[derive(Clone, Copy, Debug)]
pub struct Metrics {
    /// Σ‖p_gt − p_es‖ over the checkpoints.
    pub total_err: f64,
    /// TotalErr / N.
    pub avg_err: f64,
    pub n: usize,
    /// Error at the last checkpoint.
    pub final_error: f64,
}

impl Metrics {
    pub fn summary(&self) -> String {
        format!(
            "TotalErr {:.6}\nAvgErr {:.6}\nN {}\nfinal_error {:.6}\n",
            self.total_err, self.avg_err, self.n, self.final_error
        )
    }
}

/// Evaluate `est` against `gt` at the given checkpoint times.
pub fn evaluate(est: &[StampedPose], gt: &[StampedPose], checkpoints: &[f64]) -> Result<Metrics> {
    if checkpoints.is_empty() {
        return Err(Error::Config("no checkpoints".into()));
    }
    let mut total = 0.0;
    let mut last = 0.0;
    for &t in checkpoints {
        let e = interpolate(est, t)?;
        let g = interpolate(gt, t)?;
        last = (g - e).norm();
        total += last;
    }
    Ok(Metrics {
        total_err: total,
        avg_err: total / checkpoints.len() as f64,
        n: checkpoints.len(),
        final_error: last,
    })
}

/// `n` evenly spaced checkpoints over the common time span of two
/// trajectories.
pub fn even_checkpoints(est: &[StampedPose], gt: &[StampedPose], n: usize) -> Result<Vec<f64>> {
    let (e0, e1) = match (est.first(), est.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Err(Error::EmptyStream),
    };
    let (g0, g1) = match (gt.first(), gt.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Err(Error::EmptyStream),
    };
    let lo = e0.max(g0);
    let hi = e1.min(g1);
    if hi <= lo {
        return Err(Error::NoOverlap(lo, g0, g1));
    }
    Ok((1..=n)
        .map(|i| lo + (hi - lo) * i as f64 / n as f64)
        .collect())
}
