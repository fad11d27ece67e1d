use nalgebra::{DMatrix, DVector};

use super::UcpOperator;
use crate::error::{Error, Result};
use crate::grid::GridFunction;

#[derive(Debug, Clone)]
pub struct TikhonovSolution {
    pub v: GridFunction,
    /// `‖L v_α − h‖_{H^{-s}(W)}`.
    pub residual: f64,
    /// `‖v_α‖_{H^s}`.
    pub penalty: f64,
}

/// Minimizer of `‖L w − h‖² + α ‖w‖²_{H^s}` over omega-supported `w`.
///
/// Solved as the stacked least-squares problem `[K; √α I] y ≈ [z; 0]` by
/// Householder QR in whitened coordinates, so the normal equations are never
/// formed.
pub fn tikhonov_reconstruct(
    op: &UcpOperator,
    h: &GridFunction,
    alpha: f64,
) -> Result<TikhonovSolution> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let k = op.whitened();
    let (m, n) = k.shape();
    // √α below the relative rounding level of K makes the stack singular in practice
    let top = k.norm();
    if alpha.sqrt() <= f64::EPSILON * top * 1e-2 {
        return Err(Error::InvalidAlpha(alpha));
    }
    let z = op.whiten_range(&op.window_values(h)?);

    let mut stacked = DMatrix::zeros(m + n, n);
    stacked.view_mut((0, 0), (m, n)).copy_from(k);
    stacked.view_mut((m, 0), (n, n)).fill_diagonal(alpha.sqrt());
    let mut rhs = DVector::zeros(m + n);
    rhs.rows_mut(0, m).copy_from(&z);

    let qr = stacked.qr();
    let qtb = qr.q().transpose() * rhs;
    let r = qr.r();
    let y = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Factorization(format!("Tikhonov system at alpha = {alpha:e}")))?;

    let residual = (k * &y - &z).norm();
    let penalty = y.norm();
    Ok(TikhonovSolution {
        v: op.to_omega_function(&op.unwhiten_domain(&y)),
        residual,
        penalty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::bump;
    use crate::ucp::tests::setup;
    use crate::ucp::{assemble_l, svd_l};

    #[test]
    fn zero_data_and_large_alpha() {
        let (m, sets) = setup(256);
        let op = assemble_l(&m, &sets).unwrap();
        let z = GridFunction::zeros(m.grid());
        for a in [1.0, 1e-4, 1e-10] {
            assert!(tikhonov_reconstruct(&op, &z, a).unwrap().v.is_zero());
        }
        let v = GridFunction::from_fn(m.grid(), |x| bump(x, 0.0, 0.8));
        let h = op.apply(&v).unwrap();
        let big = tikhonov_reconstruct(&op, &h, 1e12).unwrap();
        assert!(big.penalty < 1e-6 * m.hs_norm(&v).unwrap());
        assert!(tikhonov_reconstruct(&op, &h, -1.0).is_err());
    }

    #[test]
    fn matches_filter_factors() {
        let (m, sets) = setup(256);
        let op = assemble_l(&m, &sets).unwrap();
        let svd = svd_l(&op).unwrap();
        let v = GridFunction::from_fn(m.grid(), |x| bump(x, 0.2, 0.7));
        let h = op.apply(&v).unwrap();
        let hw = op.window_values(&h).unwrap();
        for alpha in [1e-2, 1e-6, 1e-10] {
            let tik = tikhonov_reconstruct(&op, &h, alpha).unwrap();
            let tv = op.omega_values(&tik.v).unwrap();
            let filt = svd.filtered_inverse(&op, &hw, alpha);
            let rel = op.hs_norm_vec(&(&tv - &filt)) / op.hs_norm_vec(&filt);
            assert!(rel <= 1e-8, "alpha={alpha} rel={rel}");
        }
    }

    #[test]
    fn optimality_gradient_vanishes() {
        let (m, sets) = setup(256);
        let op = assemble_l(&m, &sets).unwrap();
        let v = GridFunction::from_fn(m.grid(), |x| bump(x, -0.1, 0.9));
        let h = op.apply(&v).unwrap();
        let hw = op.window_values(&h).unwrap();
        for alpha in [1e-3, 1e-7] {
            let tik = tikhonov_reconstruct(&op, &h, alpha).unwrap();
            let va = op.omega_values(&tik.v).unwrap();
            let grad = (op.adjoint_vec(&(op.apply_vec(&va) - &hw)) + &va * alpha) * 2.0;
            let scale = op
                .hs_norm_vec(&op.adjoint_vec(&hw))
                .max(alpha * op.hs_norm_vec(&va));
            assert!(op.hs_norm_vec(&grad) <= 1e-8 * scale);
        }
    }
}
