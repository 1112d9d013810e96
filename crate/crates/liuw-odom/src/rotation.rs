//! SO(3) rotations with numerically stable exponential coordinates.
//!
//! Rotations are stored as unit quaternions and re-normalized after every
//! composition so that long chains (1e5+ steps) keep the orthonormality
//! invariant. Tangent perturbations are applied on the right:
//! `R ⊞ δθ = R · exp(δθ)`. This convention is shared by every Jacobian in
//! the crate.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

/// Below this angle the exp/log trigonometric ratios switch to series form.
const SMALL_ANGLE: f64 = 1e-6;

/// A 3D rotation (element of SO(3)).
#[derive(Clone, Copy, Debug)]
pub struct Rotation {
    q: UnitQuaternion<f64>,
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation {
            q: UnitQuaternion::identity(),
        }
    }

    /// Exponential map: axis-angle vector (radians) to rotation.
    ///
    /// Total function; the half-angle sinc is evaluated by series near zero.
    pub fn exp(theta: &Vector3<f64>) -> Self {
        let angle = theta.norm();
        let half = 0.5 * angle;
        // sin(θ/2)/θ
        let k = if angle < SMALL_ANGLE {
            0.5 - angle * angle / 48.0
        } else {
            half.sin() / angle
        };
        let q = Quaternion::new(half.cos(), k * theta.x, k * theta.y, k * theta.z);
        Rotation {
            q: UnitQuaternion::new_normalize(q),
        }
    }

    /// Principal logarithm, ‖result‖ ≤ π. Stable near identity and near π.
    pub fn log(&self) -> Vector3<f64> {
        // Force w >= 0 so the angle is the principal one.
        let q = if self.q.w >= 0.0 {
            *self.q.quaternion()
        } else {
            -*self.q.quaternion()
        };
        let v = Vector3::new(q.i, q.j, q.k);
        let vn = v.norm();
        let angle = 2.0 * vn.atan2(q.w);
        if vn < SMALL_ANGLE {
            // θ/sin(θ/2) ≈ 2 + θ²/12 for small θ
            v * (2.0 + angle * angle / 12.0)
        } else {
            v * (angle / vn)
        }
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>) -> Self {
        Rotation { q }
    }

    /// Minimal rotation taking unit vector `a` onto unit vector `b`.
    pub fn between(a: &Vector3<f64>, b: &Vector3<f64>) -> Self {
        let q = UnitQuaternion::rotation_between(a, b).unwrap_or_else(|| {
            // Antiparallel: rotate π about any axis orthogonal to a.
            let axis = if a.x.abs() < 0.9 {
                a.cross(&Vector3::x()).normalize()
            } else {
                a.cross(&Vector3::y()).normalize()
            };
            UnitQuaternion::from_scaled_axis(axis * std::f64::consts::PI)
        });
        Rotation { q }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        *self.q.to_rotation_matrix().matrix()
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.q
    }

    /// Apply the rotation to a vector.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q * v
    }

    /// Apply the inverse rotation to a vector.
    pub fn rotate_inv(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q.inverse() * v
    }

    /// Compose `self · other`, renormalizing the quaternion.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let q = self.q.quaternion() * other.q.quaternion();
        Rotation {
            q: UnitQuaternion::new_normalize(q),
        }
    }

    pub fn inverse(&self) -> Rotation {
        Rotation {
            q: self.q.inverse(),
        }
    }
}

/// Skew-symmetric (hat) matrix of a 3-vector: hat(a) b = a × b.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of SO(3): Exp(θ + dθ) ≈ Exp(θ) Exp(Jr(θ) dθ).
pub fn right_jacobian(theta: &Vector3<f64>) -> Matrix3<f64> {
    let t = theta.norm();
    let h = hat(theta);
    if t < SMALL_ANGLE {
        Matrix3::identity() - 0.5 * h + h * h / 6.0
    } else {
        let t2 = t * t;
        Matrix3::identity() - (1.0 - t.cos()) / t2 * h + (t - t.sin()) / (t2 * t) * (h * h)
    }
}

/// Inverse of the right Jacobian.
pub fn right_jacobian_inv(theta: &Vector3<f64>) -> Matrix3<f64> {
    let t = theta.norm();
    let h = hat(theta);
    if t < SMALL_ANGLE {
        Matrix3::identity() + 0.5 * h + h * h / 12.0
    } else {
        let t2 = t * t;
        let c = 1.0 / t2 - (1.0 + t.cos()) / (2.0 * t * t.sin());
        Matrix3::identity() + 0.5 * h + c * (h * h)
    }
}
