//! Iterated error-state Kalman update in information form.
//!
//! Each iteration relinearizes the residual blocks at the current iterate
//! `x_j`, pulls the prior back through the manifold retraction, and solves
//! the Gauss-Newton normal equations
//!
//! ```text
//! (Lᵀ P⁻¹ L + Σ Hᵀ R⁻¹ H) δ = −(Lᵀ P⁻¹ e + Σ Hᵀ R⁻¹ r),   e = x_j ⊟ x_prior
//! ```
//!
//! where `L = ∂(x_j ⊞ δ ⊟ x_prior)/∂δ` is block-diagonal with the inverse
//! right Jacobian on each rotation block and identity elsewhere. The
//! posterior covariance is the inverse of the final information matrix.
//! States marked frozen are excluded from the solve and keep their prior
//! covariance rows/columns.

use crate::error::{Error, Result};
use crate::measurements::ResidualBlock;
use crate::rotation::right_jacobian_inv;
use crate::state::*;
use nalgebra::{DMatrix, DVector};

/// Tangent indices of the four rotation blocks.
const ROT_BLOCKS: [usize; 4] = [IDX_THETA, IDX_EXT_L_ROT, IDX_EXT_U_ROT, IDX_EXT_W_ROT];

/// Iterated-update configuration.
#[derive(Clone, Copy, Debug)]
pub struct UpdateConfig {
    pub max_iters: usize,
    /// Stop when the Gauss-Newton step norm drops below this.
    pub converge_eps: f64,
    /// Per-index freeze mask; frozen tangent directions are not estimated.
    pub frozen: [bool; STATE_DIM],
}

impl Default for UpdateConfig {
    fn default() -> Self {
        // Extrinsics and gravity are observably weak online; estimate the
        // 15 core states by default.
        let mut frozen = [false; STATE_DIM];
        for i in IDX_GRAV..STATE_DIM {
            frozen[i] = true;
        }
        UpdateConfig {
            max_iters: 4,
            converge_eps: 1e-6,
            frozen,
        }
    }
}

impl UpdateConfig {
    /// Estimate every state (nothing frozen).
    pub fn all_free() -> Self {
        UpdateConfig {
            frozen: [false; STATE_DIM],
            ..Default::default()
        }
    }
}

/// Summary of the residual blocks used in the final iteration.
#[derive(Clone, Copy, Debug, Default)]
pub struct ResidualStats {
    pub blocks: usize,
    pub rows: usize,
    /// RMS of the whitened residual entries at the final iterate.
    pub rms: f64,
}

#[derive(Clone, Debug)]
pub struct UpdateResult {
    pub x_post: NavState,
    pub p_post: Covariance,
    pub iters: usize,
    pub stats: ResidualStats,
}

/// Produces linearized residual blocks at a given state iterate.
pub trait ResidualProvider {
    fn residuals(&self, x: &NavState) -> Result<Vec<ResidualBlock>>;
}

impl<F> ResidualProvider for F
where
    F: Fn(&NavState) -> Result<Vec<ResidualBlock>>,
{
    fn residuals(&self, x: &NavState) -> Result<Vec<ResidualBlock>> {
        self(x)
    }
}

/// Pullback Jacobian L at error e (block diagonal, stored dense 36×36).
fn pullback(e: &ErrorState) -> Covariance {
    let mut l = Covariance::identity();
    for &at in &ROT_BLOCKS {
        let th = nalgebra::Vector3::new(e[at], e[at + 1], e[at + 2]);
        let jr_inv = right_jacobian_inv(&th);
        for i in 0..3 {
            for j in 0..3 {
                l[(at + i, at + j)] = jr_inv[(i, j)];
            }
        }
    }
    l
}

/// Run the iterated update. Returns the prior unchanged when the provider
/// yields no residual blocks; fails with [`Error::NumericalFailure`] if any
/// intermediate quantity becomes non-finite (caller should keep the prior).
pub fn update(
    x_prior: &NavState,
    p_prior: &Covariance,
    provider: &dyn ResidualProvider,
    cfg: &UpdateConfig,
) -> Result<UpdateResult> {
    let free: Vec<usize> = (0..STATE_DIM).filter(|&i| !cfg.frozen[i]).collect();
    if free.is_empty() {
        return Err(Error::NumericalFailure);
    }
    let p_inv = p_prior
        .cholesky()
        .ok_or(Error::NumericalFailure)?
        .inverse();

    let mut x = *x_prior;
    let mut iters = 0;
    let mut a_final: Option<Covariance> = None;
    let mut stats = ResidualStats::default();

    for _ in 0..cfg.max_iters {
        let blocks = provider.residuals(&x)?;
        if blocks.is_empty() {
            if iters == 0 {
                return Ok(UpdateResult {
                    x_post: *x_prior,
                    p_post: *p_prior,
                    iters: 0,
                    stats,
                });
            }
            break;
        }

        let e = boxminus(&x, x_prior);
        let l = pullback(&e);
        let mut a = l.transpose() * p_inv * l;
        let mut b = -(l.transpose() * (p_inv * e));

        let mut sum_sq = 0.0;
        let mut rows = 0;
        let mut cols: Vec<usize> = Vec::with_capacity(STATE_DIM);
        for blk in &blocks {
            let r_chol = blk
                .r_meas
                .clone()
                .cholesky()
                .ok_or(Error::SingularInnovation)?;
            let rinv_h = r_chol.solve(&blk.h);
            let rinv_r = r_chol.solve(&DMatrix::from_column_slice(blk.r.len(), 1, blk.r.as_slice()));
            // Measurement Jacobians touch only a few state columns; restrict
            // the normal-equation accumulation to that support.
            cols.clear();
            'col: for j in 0..STATE_DIM {
                for i in 0..blk.h.nrows() {
                    if blk.h[(i, j)] != 0.0 {
                        cols.push(j);
                        continue 'col;
                    }
                }
            }
            for &i in &cols {
                for &j in &cols {
                    let mut s = 0.0;
                    for r in 0..blk.h.nrows() {
                        s += blk.h[(r, i)] * rinv_h[(r, j)];
                    }
                    a[(i, j)] += s;
                }
                let mut s = 0.0;
                for r in 0..blk.h.nrows() {
                    s += blk.h[(r, i)] * rinv_r[(r, 0)];
                }
                b[i] -= s;
            }
            sum_sq += blk.r.dot(&rinv_r.column(0));
            rows += blk.r.len();
        }
        stats = ResidualStats {
            blocks: blocks.len(),
            rows,
            rms: if rows > 0 { (sum_sq / rows as f64).sqrt() } else { 0.0 },
        };

        // Reduced solve over the free indices.
        let n = free.len();
        let a_ff = DMatrix::from_fn(n, n, |i, j| a[(free[i], free[j])]);
        let b_f = DVector::from_fn(n, |i, _| b[free[i]]);
        let sol = a_ff
            .cholesky()
            .ok_or(Error::NumericalFailure)?
            .solve(&b_f);
        let mut delta = ErrorState::zeros();
        for (k, &idx) in free.iter().enumerate() {
            delta[idx] = sol[k];
        }
        if !delta.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure);
        }

        x = boxplus(&x, &delta);
        iters += 1;
        a_final = Some(a);
        if delta.norm() < cfg.converge_eps {
            break;
        }
    }

    let Some(a) = a_final else {
        // max_iters == 0: nothing to do.
        return Ok(UpdateResult {
            x_post: *x_prior,
            p_post: *p_prior,
            iters: 0,
            stats,
        });
    };

    // Posterior covariance: invert the information matrix on the free
    // block; frozen rows/columns keep the prior.
    let n = free.len();
    let a_ff = DMatrix::from_fn(n, n, |i, j| a[(free[i], free[j])]);
    let p_ff = a_ff
        .cholesky()
        .ok_or(Error::NumericalFailure)?
        .inverse();
    let mut p_post = *p_prior;
    for i in 0..n {
        for j in 0..n {
            p_post[(free[i], free[j])] = p_ff[(i, j)];
        }
    }
    // Shrinking the free block while keeping prior free-frozen correlations
    // can make P indefinite; decouple the frozen states instead.
    for &i in &free {
        for j in 0..STATE_DIM {
            if cfg.frozen[j] {
                p_post[(i, j)] = 0.0;
                p_post[(j, i)] = 0.0;
            }
        }
    }
    symmetrize(&mut p_post);

    if !x.is_finite() || !p_post.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure);
    }
    Ok(UpdateResult {
        x_post: x,
        p_post,
        iters,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::ConstraintFamily;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn pos_block(z: &Vector3<f64>, var: f64) -> impl Fn(&NavState) -> Result<Vec<ResidualBlock>> {
        let z = *z;
        move |x: &NavState| {
            let mut h = DMatrix::zeros(3, STATE_DIM);
            for i in 0..3 {
                h[(i, IDX_POS + i)] = -1.0;
            }
            Ok(vec![ResidualBlock {
                family: ConstraintFamily::UwbPosition,
                r: DVector::from_column_slice((z - x.pos).as_slice()),
                h,
                r_meas: DMatrix::from_diagonal_element(3, 3, var),
            }])
        }
    }

    #[test]
    fn no_residuals_returns_prior() {
        let x = NavState::identity();
        let p = Covariance::identity();
        let provider = |_: &NavState| Ok(Vec::new());
        let out = update(&x, &p, &provider, &UpdateConfig::default()).unwrap();
        assert_eq!(out.iters, 0);
        assert_eq!(out.p_post, p);
        assert!(boxminus(&out.x_post, &x).norm() == 0.0);
    }

    #[test]
    fn scalar_kalman_oracle() {
        // 1-D problem embedded on the x position: prior mean 0 var 1,
        // measurement z = 0.5 with var 1. Textbook posterior:
        // mean = 0.25, var = 0.5.
        let x = NavState::identity();
        let p = Covariance::identity();
        let provider = |s: &NavState| {
            let mut h = DMatrix::zeros(1, STATE_DIM);
            h[(0, IDX_POS)] = -1.0;
            Ok(vec![ResidualBlock {
                family: ConstraintFamily::UwbPosition,
                r: DVector::from_element(1, 0.5 - s.pos.x),
                h,
                r_meas: DMatrix::from_element(1, 1, 1.0),
            }])
        };
        let out = update(&x, &p, &provider, &UpdateConfig::all_free()).unwrap();
        assert_relative_eq!(out.x_post.pos.x, 0.25, epsilon = 1e-12);
        assert_relative_eq!(out.p_post[(IDX_POS, IDX_POS)], 0.5, epsilon = 1e-12);
        // Untouched directions keep the prior variance.
        assert_relative_eq!(out.p_post[(IDX_VEL, IDX_VEL)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_gaussian_matches_closed_form() {
        // 3-D position measurement: posterior must match the closed-form
        // Kalman update mean = P H̃ᵀ(H̃PH̃ᵀ+R)⁻¹ z with H̃ = I to 1e-10.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let x = NavState::identity();
            let mut p = Covariance::identity();
            for i in 0..STATE_DIM {
                p[(i, i)] = rng.gen_range(0.1..2.0);
            }
            let z = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let var = rng.gen_range(0.05..1.0);
            let out = update(&x, &p, &pos_block(&z, var), &UpdateConfig::all_free()).unwrap();
            for i in 0..3 {
                let pp = p[(IDX_POS + i, IDX_POS + i)];
                let k = pp / (pp + var);
                assert_relative_eq!(out.x_post.pos[i], k * z[i], epsilon = 1e-10);
                assert_relative_eq!(
                    out.p_post[(IDX_POS + i, IDX_POS + i)],
                    (1.0 - k) * pp,
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn posterior_trace_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let x = crate::state::tests::random_state(&mut rng);
            let mut p = Covariance::identity() * rng.gen_range(0.1..1.0);
            for i in 0..STATE_DIM {
                p[(i, i)] += rng.gen_range(0.0..0.5);
            }
            let z = x.pos
                + Vector3::new(
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                );
            let out = update(&x, &p, &pos_block(&z, 0.1), &UpdateConfig::default()).unwrap();
            assert!(out.p_post.trace() <= p.trace() + 1e-12);
            // Symmetric and positive definite.
            assert!((out.p_post - out.p_post.transpose()).norm() < 1e-12);
            assert!(out.p_post.cholesky().is_some());
        }
    }

    #[test]
    fn frozen_states_do_not_move() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = crate::state::tests::random_state(&mut rng);
        let p = Covariance::identity();
        let z = x.pos + Vector3::new(0.3, -0.2, 0.1);
        let out = update(&x, &p, &pos_block(&z, 0.01), &UpdateConfig::default()).unwrap();
        let d = boxminus(&out.x_post, &x);
        for i in IDX_GRAV..STATE_DIM {
            assert!(d[i].abs() <= 1e-15);
            assert_eq!(out.p_post[(i, i)], 1.0);
        }
        // The position did move toward the measurement.
        assert!((out.x_post.pos - z).norm() < (x.pos - z).norm());
    }

    #[test]
    fn iterated_update_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let x = crate::state::tests::random_state(&mut rng);
        let p = Covariance::identity() * 0.3;
        let z = x.pos + Vector3::new(0.05, 0.02, -0.03);
        let a = update(&x, &p, &pos_block(&z, 0.01), &UpdateConfig::default()).unwrap();
        let b = update(&x, &p, &pos_block(&z, 0.01), &UpdateConfig::default()).unwrap();
        assert_eq!(a.x_post.rot.quaternion(), b.x_post.rot.quaternion());
        assert_eq!(a.x_post.pos, b.x_post.pos);
        assert_eq!(a.x_post.vel, b.x_post.vel);
        assert_eq!(a.p_post, b.p_post);
        assert_eq!(a.iters, b.iters);
    }

    #[test]
    fn nonlinear_residual_iterates() {
        // Range-only residual from a far anchor: needs more than one
        // Gauss-Newton step to converge below eps.
        let anchor = Vector3::new(5.0, 0.0, 0.0);
        let provider = move |s: &NavState| {
            let d = (anchor - s.pos).norm();
            let dir = (anchor - s.pos) / d;
            let mut h = DMatrix::zeros(1, STATE_DIM);
            for i in 0..3 {
                h[(0, IDX_POS + i)] = dir[i];
            }
            Ok(vec![ResidualBlock {
                family: ConstraintFamily::UwbDistance,
                r: DVector::from_element(1, 3.0 - d),
                h,
                r_meas: DMatrix::from_element(1, 1, 1e-4),
            }])
        };
        let mut x0 = NavState::identity();
        x0.pos = Vector3::new(1.0, 1.0, 0.0);
        let p = Covariance::identity() * 10.0;
        let out = update(&x0, &p, &provider, &UpdateConfig::default()).unwrap();
        assert!(out.iters >= 2);
        let d_final = (anchor - out.x_post.pos).norm();
        assert_relative_eq!(d_final, 3.0, epsilon = 1e-2);
    }
}
