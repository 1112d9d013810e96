//! Navigation state on its product manifold and the ⊞/⊟ operators.
//!
//! The 36-dimensional tangent ordering is a repo-wide contract (the
//! degradation detector extracts the leading 6×6 pose block):
//!
//! | block        | indices |
//! |--------------|---------|
//! | δθ (G←I rot) | 0..3    |
//! | δp           | 3..6    |
//! | δv           | 6..9    |
//! | δb_g         | 9..12   |
//! | δb_a         | 12..15  |
//! | δg           | 15..18  |
//! | δθ_L, δp_L   | 18..24  |
//! | δθ_U, δp_U   | 24..30  |
//! | δθ_W, δp_W   | 30..36  |
//!
//! Rotational deltas are applied on the right: `R ⊞ δθ = R · exp(δθ)`.
//! Gravity is a full 3-vector in the tangent space.

use crate::rotation::Rotation;
use nalgebra::{SMatrix, SVector, Vector3};

pub const STATE_DIM: usize = 36;

pub const IDX_THETA: usize = 0;
pub const IDX_POS: usize = 3;
pub const IDX_VEL: usize = 6;
pub const IDX_BG: usize = 9;
pub const IDX_BA: usize = 12;
pub const IDX_GRAV: usize = 15;
pub const IDX_EXT_L_ROT: usize = 18;
pub const IDX_EXT_L_POS: usize = 21;
pub const IDX_EXT_U_ROT: usize = 24;
pub const IDX_EXT_U_POS: usize = 27;
pub const IDX_EXT_W_ROT: usize = 30;
pub const IDX_EXT_W_POS: usize = 33;

/// 36-dimensional error state in the tangent ordering above.
pub type ErrorState = SVector<f64, STATE_DIM>;

/// 36×36 covariance in the tangent ordering above.
pub type Covariance = SMatrix<f64, STATE_DIM, STATE_DIM>;

/// Rigid-body extrinsic: rotation and translation of a sensor frame
/// relative to the IMU frame.
#[derive(Clone, Copy, Debug)]
pub struct Extrinsic {
    pub rot: Rotation,
    pub trans: Vector3<f64>,
}

impl Extrinsic {
    pub fn identity() -> Self {
        Extrinsic {
            rot: Rotation::identity(),
            trans: Vector3::zeros(),
        }
    }

    pub fn new(rot: Rotation, trans: Vector3<f64>) -> Self {
        Extrinsic { rot, trans }
    }

    /// Apply to a point: R p + t.
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot.rotate(p) + self.trans
    }

    pub fn inverse_transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot.rotate_inv(&(p - self.trans))
    }
}

/// Full navigation state: IMU pose/velocity in the global frame, IMU
/// biases, gravity, and the LiDAR/UWB/wheel extrinsics.
#[derive(Clone, Copy, Debug)]
pub struct NavState {
    pub rot: Rotation,
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub bias_gyro: Vector3<f64>,
    pub bias_accel: Vector3<f64>,
    pub gravity: Vector3<f64>,
    pub extr_lidar: Extrinsic,
    pub extr_uwb: Extrinsic,
    pub extr_wheel: Extrinsic,
}

impl NavState {
    pub fn identity() -> Self {
        NavState {
            rot: Rotation::identity(),
            pos: Vector3::zeros(),
            vel: Vector3::zeros(),
            bias_gyro: Vector3::zeros(),
            bias_accel: Vector3::zeros(),
            gravity: Vector3::new(0.0, 0.0, -9.81),
            extr_lidar: Extrinsic::identity(),
            extr_uwb: Extrinsic::identity(),
            extr_wheel: Extrinsic::identity(),
        }
    }

    /// UWB antenna position in the global frame.
    pub fn antenna_pos(&self) -> Vector3<f64> {
        self.pos + self.rot.rotate(&self.extr_uwb.trans)
    }

    /// Transform a LiDAR-frame point to the global frame.
    pub fn lidar_to_global(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pos + self.rot.rotate(&self.extr_lidar.transform(p))
    }

    pub fn is_finite(&self) -> bool {
        let ok = |v: &Vector3<f64>| v.iter().all(|x| x.is_finite());
        ok(&self.pos)
            && ok(&self.vel)
            && ok(&self.bias_gyro)
            && ok(&self.bias_accel)
            && ok(&self.gravity)
            && self.rot.log().iter().all(|x| x.is_finite())
    }
}

fn vec3(delta: &ErrorState, at: usize) -> Vector3<f64> {
    Vector3::new(delta[at], delta[at + 1], delta[at + 2])
}

fn set_vec3(delta: &mut ErrorState, at: usize, v: &Vector3<f64>) {
    delta[at] = v.x;
    delta[at + 1] = v.y;
    delta[at + 2] = v.z;
}

/// Generalized addition: rotation blocks compose as R·exp(δθ), vector
/// blocks add componentwise.
pub fn boxplus(x: &NavState, delta: &ErrorState) -> NavState {
    let extr = |e: &Extrinsic, rot_at: usize, pos_at: usize| Extrinsic {
        rot: e.rot.compose(&Rotation::exp(&vec3(delta, rot_at))),
        trans: e.trans + vec3(delta, pos_at),
    };
    NavState {
        rot: x.rot.compose(&Rotation::exp(&vec3(delta, IDX_THETA))),
        pos: x.pos + vec3(delta, IDX_POS),
        vel: x.vel + vec3(delta, IDX_VEL),
        bias_gyro: x.bias_gyro + vec3(delta, IDX_BG),
        bias_accel: x.bias_accel + vec3(delta, IDX_BA),
        gravity: x.gravity + vec3(delta, IDX_GRAV),
        extr_lidar: extr(&x.extr_lidar, IDX_EXT_L_ROT, IDX_EXT_L_POS),
        extr_uwb: extr(&x.extr_uwb, IDX_EXT_U_ROT, IDX_EXT_U_POS),
        extr_wheel: extr(&x.extr_wheel, IDX_EXT_W_ROT, IDX_EXT_W_POS),
    }
}

/// Generalized subtraction, inverse of [`boxplus`]:
/// `boxminus(boxplus(y, δ), y) = δ` for small δ.
pub fn boxminus(x: &NavState, y: &NavState) -> ErrorState {
    let mut d = ErrorState::zeros();
    set_vec3(&mut d, IDX_THETA, &y.rot.inverse().compose(&x.rot).log());
    set_vec3(&mut d, IDX_POS, &(x.pos - y.pos));
    set_vec3(&mut d, IDX_VEL, &(x.vel - y.vel));
    set_vec3(&mut d, IDX_BG, &(x.bias_gyro - y.bias_gyro));
    set_vec3(&mut d, IDX_BA, &(x.bias_accel - y.bias_accel));
    set_vec3(&mut d, IDX_GRAV, &(x.gravity - y.gravity));
    let mut extr = |xe: &Extrinsic, ye: &Extrinsic, rot_at: usize, pos_at: usize| {
        set_vec3(&mut d, rot_at, &ye.rot.inverse().compose(&xe.rot).log());
        set_vec3(&mut d, pos_at, &(xe.trans - ye.trans));
    };
    extr(&x.extr_lidar, &y.extr_lidar, IDX_EXT_L_ROT, IDX_EXT_L_POS);
    extr(&x.extr_uwb, &y.extr_uwb, IDX_EXT_U_ROT, IDX_EXT_U_POS);
    extr(&x.extr_wheel, &y.extr_wheel, IDX_EXT_W_ROT, IDX_EXT_W_POS);
    d
}

/// Symmetrize a covariance in place (averages with its transpose).
pub fn symmetrize(p: &mut Covariance) {
    *p = 0.5 * (*p + p.transpose());
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rotation::Rotation;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    pub(crate) fn random_state(rng: &mut impl Rng) -> NavState {
        let rv = |rng: &mut dyn RngCore, s: f64| {
            Vector3::new(
                rng.gen_range(-s..s),
                rng.gen_range(-s..s),
                rng.gen_range(-s..s),
            )
        };
        NavState {
            rot: Rotation::exp(&rv(rng, 1.5)),
            pos: rv(rng, 10.0),
            vel: rv(rng, 1.0),
            bias_gyro: rv(rng, 0.01),
            bias_accel: rv(rng, 0.1),
            gravity: Vector3::new(0.0, 0.0, -9.81) + rv(rng, 0.05),
            extr_lidar: Extrinsic::new(Rotation::exp(&rv(rng, 0.3)), rv(rng, 0.5)),
            extr_uwb: Extrinsic::new(Rotation::exp(&rv(rng, 0.3)), rv(rng, 0.5)),
            extr_wheel: Extrinsic::new(Rotation::exp(&rv(rng, 0.3)), rv(rng, 0.5)),
        }
    }

    #[test]
    fn boxplus_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_state(&mut rng);
        let y = boxplus(&x, &ErrorState::zeros());
        assert!(boxminus(&x, &y).norm() <= 1e-15);
    }

    #[test]
    fn boxplus_translation_only_touches_pos() {
        let x = NavState {
            pos: Vector3::new(1.0, 2.0, 3.0),
            ..NavState::identity()
        };
        let mut d = ErrorState::zeros();
        d[IDX_POS] = 0.1;
        let y = boxplus(&x, &d);
        assert_relative_eq!(y.pos, Vector3::new(1.1, 2.0, 3.0));
        assert_relative_eq!(y.vel, x.vel);
        assert_relative_eq!(y.rot.matrix(), x.rot.matrix());
    }

    #[test]
    fn boxplus_rotation_block_is_rodrigues() {
        let mut d = ErrorState::zeros();
        d[IDX_THETA + 2] = FRAC_PI_2;
        let y = boxplus(&NavState::identity(), &d);
        assert_relative_eq!(y.rot.rotate(&Vector3::x()), Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn boxminus_self_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_state(&mut rng);
        assert!(boxminus(&x, &x).norm() <= 1e-15);
    }

    #[test]
    fn boxminus_pure_translation() {
        let x = NavState::identity();
        let mut y = x;
        y.pos += Vector3::new(0.3, 0.0, 0.0);
        let d = boxminus(&y, &x);
        assert_relative_eq!(d[IDX_POS], 0.3);
        assert_relative_eq!(d.norm(), 0.3);
    }

    #[test]
    fn round_trip_small_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = random_state(&mut rng);
            let mut d = ErrorState::zeros();
            for i in 0..STATE_DIM {
                d[i] = rng.gen_range(-1.0..1.0);
            }
            d *= 0.05 / d.norm();
            let got = boxminus(&boxplus(&x, &d), &x);
            assert!((got - d).norm() <= 1e-9, "round trip error {}", (got - d).norm());
        }
    }

    #[test]
    fn orthonormality_after_many_compositions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut r = Rotation::identity();
        for _ in 0..100_000 {
            let d = Vector3::new(
                rng.gen_range(-0.01..0.01),
                rng.gen_range(-0.01..0.01),
                rng.gen_range(-0.01..0.01),
            );
            r = r.compose(&Rotation::exp(&d));
        }
        let m = r.matrix();
        assert_relative_eq!(m.transpose() * m, Matrix3::identity(), epsilon = 1e-9);
        assert_relative_eq!(m.determinant(), 1.0, epsilon = 1e-9);
    }
}
