//! Residuals, noise models, and error-state Jacobians for the four
//! constraint families.
//!
//! Every Jacobian is `∂r/∂δ` under the right-perturbation convention of
//! [`crate::state::boxplus`], and all of them are cross-checked against
//! central finite differences in the tests.

use crate::error::{Error, Result};
use crate::plane_map::PlaneFeature;
use crate::rotation::hat;
use crate::state::*;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

/// Which measurement family produced a residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConstraintFamily {
    Lidar,
    UwbPosition,
    UwbDistance,
    Wheel,
}

/// A UWB range to one anchor.
#[derive(Clone, Copy, Debug)]
pub struct UwbRangeSample {
    pub t: f64,
    pub anchor_id: u32,
    pub range: f64,
    pub sigma: f64,
}

/// A UWB positioning-system fix in the global frame.
#[derive(Clone, Copy, Debug)]
pub struct UwbPositionFix {
    pub t: f64,
    pub pos: Vector3<f64>,
    pub sigma: Vector3<f64>,
}

/// Wheel odometer velocity in the wheel frame; lateral/vertical entries
/// are nonholonomic pseudo-measurements (zero by construction).
#[derive(Clone, Copy, Debug)]
pub struct WheelSample {
    pub t: f64,
    pub vel: Vector3<f64>,
    pub sigma: Vector3<f64>,
}

/// Surveyed anchor position in the global frame.
#[derive(Clone, Copy, Debug)]
pub struct AnchorConfig {
    pub anchor_id: u32,
    pub pos: Vector3<f64>,
}

/// One linearized residual: r, H = ∂r/∂δ (rows × 36), and the measurement
/// covariance.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub family: ConstraintFamily,
    pub r: DVector<f64>,
    pub h: DMatrix<f64>,
    pub r_meas: DMatrix<f64>,
}

fn put3(h: &mut DMatrix<f64>, row: usize, col: usize, m: &Matrix3<f64>) {
    for i in 0..3 {
        for j in 0..3 {
            h[(row + i, col + j)] = m[(i, j)];
        }
    }
}

fn put_row3(h: &mut DMatrix<f64>, col: usize, v: &Vector3<f64>) {
    h[(0, col)] = v.x;
    h[(0, col + 1)] = v.y;
    h[(0, col + 2)] = v.z;
}

/// Point-to-plane residual: r = uᵀ(ᴳT_I ᴵT_L p_L − q), scalar.
pub fn lidar_residual(
    x: &NavState,
    p_lidar: &Vector3<f64>,
    plane: &PlaneFeature,
    sigma: f64,
) -> ResidualBlock {
    let p_body = x.extr_lidar.transform(p_lidar);
    let p_global = x.pos + x.rot.rotate(&p_body);
    let r = plane.normal.dot(&(p_global - plane.point));

    let rot = x.rot.matrix();
    let u = plane.normal;
    let mut h = DMatrix::zeros(1, STATE_DIM);
    // ∂(R exp(δθ) p_body)/∂δθ = −R ĥ(p_body)
    put_row3(&mut h, IDX_THETA, &(-(rot * hat(&p_body)).transpose() * u));
    put_row3(&mut h, IDX_POS, &u);
    // Extrinsic rotation: p_body = R_L exp(δ) p + t_L  →  −R R_L ĥ(p)
    let rl = x.extr_lidar.rot.matrix();
    put_row3(&mut h, IDX_EXT_L_ROT, &(-(rot * rl * hat(p_lidar)).transpose() * u));
    put_row3(&mut h, IDX_EXT_L_POS, &(rot.transpose() * u));

    ResidualBlock {
        family: ConstraintFamily::Lidar,
        r: DVector::from_element(1, r),
        h,
        r_meas: DMatrix::from_element(1, 1, sigma * sigma),
    }
}

/// UWB position residual: r = ᴳp̂_U − ᴳp_I − ᴳR_I ᴵp_U, 3-vector.
pub fn uwb_position_residual(x: &NavState, fix: &UwbPositionFix) -> ResidualBlock {
    let r = fix.pos - x.pos - x.rot.rotate(&x.extr_uwb.trans);
    let rot = x.rot.matrix();
    let mut h = DMatrix::zeros(3, STATE_DIM);
    put3(&mut h, 0, IDX_THETA, &(rot * hat(&x.extr_uwb.trans)));
    put3(&mut h, 0, IDX_POS, &(-Matrix3::identity()));
    put3(&mut h, 0, IDX_EXT_U_POS, &(-rot));
    let mut r_meas = DMatrix::zeros(3, 3);
    for i in 0..3 {
        r_meas[(i, i)] = fix.sigma[i] * fix.sigma[i];
    }
    ResidualBlock {
        family: ConstraintFamily::UwbPosition,
        r: DVector::from_column_slice(r.as_slice()),
        h,
        r_meas,
    }
}

/// UWB distance residual: r = d̂ − ‖ᴳp_f − ᴳp_U‖, scalar.
pub fn uwb_distance_residual(
    x: &NavState,
    s: &UwbRangeSample,
    anchors: &[AnchorConfig],
) -> Result<ResidualBlock> {
    let anchor = anchors
        .iter()
        .find(|a| a.anchor_id == s.anchor_id)
        .ok_or(Error::UnknownAnchor(s.anchor_id))?;
    let p_u = x.antenna_pos();
    let diff = anchor.pos - p_u;
    let d = diff.norm();
    if d <= 0.1 {
        return Err(Error::AntennaAtAnchor(s.anchor_id));
    }
    let r = s.range - d;
    // ∂d/∂p_U = −diffᵀ/d, so ∂r/∂p_U = diffᵀ/d, chained through
    // p_U = p + R p_extr.
    let dir = diff / d;
    let rot = x.rot.matrix();
    let mut h = DMatrix::zeros(1, STATE_DIM);
    put_row3(&mut h, IDX_THETA, &(-(rot * hat(&x.extr_uwb.trans)).transpose() * dir));
    put_row3(&mut h, IDX_POS, &dir);
    put_row3(&mut h, IDX_EXT_U_POS, &(rot.transpose() * dir));
    Ok(ResidualBlock {
        family: ConstraintFamily::UwbDistance,
        r: DVector::from_element(1, r),
        h,
        r_meas: DMatrix::from_element(1, 1, s.sigma * s.sigma),
    })
}

/// Wheel odometer velocity residual with lever-arm compensation:
/// r = ᵂv̂ − ᴵR_Wᵀ(ᴳR_Iᵀ ᴳv + ᴵω × ᴵp_W) where ᴵω = ω_m − b_g.
pub fn wheel_residual(x: &NavState, s: &WheelSample, gyro_raw: &Vector3<f64>) -> ResidualBlock {
    let omega = gyro_raw - x.bias_gyro;
    let p_w = x.extr_wheel.trans;
    let inner = x.rot.rotate_inv(&x.vel) + omega.cross(&p_w);
    let r = s.vel - x.extr_wheel.rot.rotate_inv(&inner);

    let rw_t = x.extr_wheel.rot.matrix().transpose();
    let rot_t = x.rot.matrix().transpose();
    let mut h = DMatrix::zeros(3, STATE_DIM);
    // (R exp(δθ))ᵀ v = exp(−δθ) Rᵀ v ≈ Rᵀv + ĥ(Rᵀv) δθ
    put3(&mut h, 0, IDX_THETA, &(-rw_t * hat(&(rot_t * x.vel))));
    put3(&mut h, 0, IDX_VEL, &(-rw_t * rot_t));
    // ω = ω_m − b_g − δb_g: −δb_g × p = ĥ(p) δb_g
    put3(&mut h, 0, IDX_BG, &(-rw_t * hat(&p_w)));
    put3(&mut h, 0, IDX_EXT_W_ROT, &(-hat(&(rw_t * inner))));
    put3(&mut h, 0, IDX_EXT_W_POS, &(-rw_t * hat(&omega)));
    let mut r_meas = DMatrix::zeros(3, 3);
    for i in 0..3 {
        r_meas[(i, i)] = s.sigma[i] * s.sigma[i];
    }
    ResidualBlock {
        family: ConstraintFamily::Wheel,
        r: DVector::from_column_slice(r.as_slice()),
        h,
        r_meas,
    }
}

/// 99% chi-square quantiles for 1..=6 degrees of freedom.
const CHI2_99: [f64; 6] = [
    6.634896601021213,
    9.21034037197618,
    11.344866730144373,
    13.276704135987622,
    15.08627246938899,
    16.811893829770927,
];

/// Mahalanobis gate at the 99% quantile: statistic strictly above the
/// quantile rejects, the boundary itself accepts.
pub fn gate(block: &ResidualBlock, p_prior: &Covariance) -> Result<bool> {
    let dim = block.r.len();
    let p_dyn = DMatrix::from_fn(STATE_DIM, STATE_DIM, |i, j| p_prior[(i, j)]);
    let s = &block.h * p_dyn * block.h.transpose() + &block.r_meas;
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    let stat = block.r.dot(&chol.solve(&block.r));
    let quantile = CHI2_99
        .get(dim - 1)
        .copied()
        .ok_or(Error::SingularInnovation)?;
    Ok(stat <= quantile)
}
