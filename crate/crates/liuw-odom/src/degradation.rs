//! Covariance-eigenspace degradation detection.
//!
//! Takes the leading 6×6 pose block B of the filter covariance (rotation
//! rows 0..3, translation rows 3..6), forms M = BᵀB, and eigendecomposes
//! the rotation–rotation and translation–translation sub-blocks of M. The
//! square roots of the eigenvalues are the singular values of the
//! corresponding blocks of B; a direction whose σ meets its threshold is
//! flagged as degenerate, and the associated eigenvector names the
//! unobservable direction.

use crate::state::Covariance;
use nalgebra::{Matrix3, SymmetricEigen, Vector3};

/// Degradation thresholds on the pose singular values.
#[derive(Clone, Copy, Debug)]
pub struct DegradationThresholds {
    /// Translational threshold (meters, 1σ).
    pub d_p_thre: f64,
    /// Rotational threshold (radians, 1σ).
    pub d_r_thre: f64,
}

impl Default for DegradationThresholds {
    fn default() -> Self {
        DegradationThresholds {
            d_p_thre: 0.05,
            d_r_thre: 0.05,
        }
    }
}

/// Full diagnostic output of one degradation analysis.
#[derive(Clone, Copy, Debug)]
pub struct DegradationReport {
    /// Translational singular values, descending.
    pub sigma_p: Vector3<f64>,
    /// Columns are the translational eigen-directions matching `sigma_p`.
    pub v_p: Matrix3<f64>,
    /// Rotational singular values, descending.
    pub sigma_r: Vector3<f64>,
    pub v_r: Matrix3<f64>,
    /// Rotation–translation coupling block of M.
    pub m_rp: Matrix3<f64>,
    pub degraded_p: bool,
    pub degraded_r: bool,
    /// Most-degenerate (largest-σ) translational direction, unit norm.
    pub dir_p: Vector3<f64>,
    pub dir_r: Vector3<f64>,
}

fn sorted_eigen(m: &Matrix3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let eig = SymmetricEigen::new(*m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut vals = Vector3::zeros();
    let mut vecs = Matrix3::zeros();
    for (k, &i) in order.iter().enumerate() {
        vals[k] = eig.eigenvalues[i].max(0.0).sqrt();
        let mut col = eig.eigenvectors.column(i).into_owned();
        // Deterministic sign: largest-magnitude entry positive.
        let lead = (0..3).max_by(|&a, &b| col[a].abs().partial_cmp(&col[b].abs()).unwrap());
        if let Some(l) = lead {
            if col[l] < 0.0 {
                col = -col;
            }
        }
        vecs.set_column(k, &col);
    }
    (vals, vecs)
}

/// Analyze a filter covariance for pose degeneracy. Flags use `>=` so a
/// singular value exactly at the threshold counts as degraded.
pub fn analyze(p: &Covariance, thresholds: &DegradationThresholds) -> DegradationReport {
    let b = p.fixed_view::<6, 6>(0, 0).into_owned();
    let m = b.transpose() * b;
    let m_rr = m.fixed_view::<3, 3>(0, 0).into_owned();
    let m_pp = m.fixed_view::<3, 3>(3, 3).into_owned();
    let m_rp = m.fixed_view::<3, 3>(0, 3).into_owned();

    let (sigma_r, v_r) = sorted_eigen(&m_rr);
    let (sigma_p, v_p) = sorted_eigen(&m_pp);

    DegradationReport {
        sigma_p,
        v_p,
        sigma_r,
        v_r,
        m_rp,
        degraded_p: sigma_p[0] >= thresholds.d_p_thre,
        degraded_r: sigma_r[0] >= thresholds.d_r_thre,
        dir_p: v_p.column(0).into_owned(),
        dir_r: v_r.column(0).into_owned(),
    }
}

impl DegradationReport {
    /// CSV header matching [`DegradationReport::csv_row`].
    pub fn csv_header() -> &'static str {
        "t,sigma_p1,sigma_p2,sigma_p3,sigma_r1,sigma_r2,sigma_r3,\
         degraded_p,degraded_r,dir_p_x,dir_p_y,dir_p_z,dir_r_x,dir_r_y,dir_r_z"
    }

    /// One CSV row (timestamp prepended by the caller's clock).
    pub fn csv_row(&self, t: f64) -> String {
        format!(
            "{:.6},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            t,
            self.sigma_p[0],
            self.sigma_p[1],
            self.sigma_p[2],
            self.sigma_r[0],
            self.sigma_r[1],
            self.sigma_r[2],
            self.degraded_p as u8,
            self.degraded_r as u8,
            self.dir_p[0],
            self.dir_p[1],
            self.dir_p[2],
            self.dir_r[0],
            self.dir_r[1],
            self.dir_r[2],
        )
    }
}
