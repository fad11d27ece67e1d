use nalgebra::{DMatrix, DVector, SVD};

use super::UcpOperator;
use crate::error::{Error, Result};
use crate::grid::GridFunction;

/// Singular values below `RANK_CUTOFF * σ₁` are treated as zero.
pub const RANK_CUTOFF: f64 = 1e-12;

/// Weighted singular system `L ψ_j = σ_j φ_j`, `L* φ_j = σ_j ψ_j`.
#[derive(Debug, Clone)]
pub struct UcpSvd {
    pub sigmas: Vec<f64>,
    /// Columns `ψ_j` on omega nodes, orthonormal in `H^s`.
    pub domain_modes: DMatrix<f64>,
    /// Columns `φ_j` on window nodes, orthonormal in `H^{-s}(W)`.
    pub range_modes: DMatrix<f64>,
    pub numerical_rank: usize,
    // singular vectors of the whitened operator
    left: DMatrix<f64>,
    right: DMatrix<f64>,
}

pub fn svd_l(op: &UcpOperator) -> Result<UcpSvd> {
    let k = op.whitened().clone();
    let svd = SVD::try_new(k, true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Factorization("SVD of the whitened operator".into()))?;
    let mut svd = svd;
    svd.sort_by_singular_values();
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let sigmas: Vec<f64> = svd.singular_values.iter().copied().collect();
    let r = sigmas.len();
    let right = vt.transpose();

    let domain_modes = DMatrix::from_columns(
        &(0..r)
            .map(|j| op.unwhiten_domain(&right.column(j).into_owned()))
            .collect::<Vec<_>>(),
    );
    let range_modes = DMatrix::from_columns(
        &(0..r)
            .map(|j| op.unwhiten_range(&u.column(j).into_owned()))
            .collect::<Vec<_>>(),
    );
    let top = sigmas.first().copied().unwrap_or(0.0);
    let numerical_rank = sigmas.iter().filter(|&&s| s > RANK_CUTOFF * top).count();
    Ok(UcpSvd {
        sigmas,
        domain_modes,
        range_modes,
        numerical_rank,
        left: u,
        right,
    })
}

impl UcpSvd {
    pub fn sigma_max(&self) -> f64 {
        self.sigmas.first().copied().unwrap_or(0.0)
    }

    pub fn psi(&self, j: usize) -> DVector<f64> {
        self.domain_modes.column(j).into_owned()
    }

    pub fn phi(&self, j: usize) -> DVector<f64> {
        self.range_modes.column(j).into_owned()
    }

    /// Dual inner products `(h, φ_j)_{H^{-s}(W)}` for all modes.
    pub fn coefficients(&self, op: &UcpOperator, h: &DVector<f64>) -> DVector<f64> {
        self.left.transpose() * op.whiten_range(h)
    }

    /// Truncated expansion `Σ_{σ_k ≥ α} σ_k⁻¹ (h, φ_k) ψ_k` on omega nodes.
    pub fn truncated_inverse(
        &self,
        op: &UcpOperator,
        h: &DVector<f64>,
        alpha: f64,
    ) -> DVector<f64> {
        let c = self.coefficients(op, h);
        let mut y = DVector::zeros(self.right.nrows());
        for k in 0..self.numerical_rank {
            if self.sigmas[k] >= alpha {
                y.axpy(c[k] / self.sigmas[k], &self.right.column(k), 1.0);
            }
        }
        op.unwhiten_domain(&y)
    }

    /// Tikhonov filter `Σ σ_k/(σ_k² + α) (h, φ_k) ψ_k` over all modes.
    pub fn filtered_inverse(&self, op: &UcpOperator, h: &DVector<f64>, alpha: f64) -> DVector<f64> {
        let c = self.coefficients(op, h);
        let mut y = DVector::zeros(self.right.nrows());
        for (k, &s) in self.sigmas.iter().enumerate() {
            y.axpy(c[k] * s / (s * s + alpha), &self.right.column(k), 1.0);
        }
        op.unwhiten_domain(&y)
    }
}

/// Truncated-SVD reconstruction on a window function `h`.
pub fn spectral_reconstruct(
    svd: &UcpSvd,
    op: &UcpOperator,
    h: &GridFunction,
    alpha: f64,
) -> Result<GridFunction> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let hw = op.window_values(h)?;
    Ok(op.to_omega_function(&svd.truncated_inverse(op, &hw, alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ucp::assemble_l;
    use crate::ucp::tests::setup;

    #[test]
    fn singular_relations_and_orthonormality() {
        let (m, sets) = setup(512);
        let op = assemble_l(&m, &sets).unwrap();
        let svd = svd_l(&op).unwrap();
        assert!(svd.sigmas.windows(2).all(|w| w[0] >= w[1]));
        let top = svd.sigma_max();
        let lead = 10.min(svd.numerical_rank);
        assert!(lead >= 10, "rank {}", svd.numerical_rank);
        for j in 0..lead {
            let lpsi = op.apply_vec(&svd.psi(j));
            let err = op.dual_norm_vec(&(lpsi - svd.phi(j) * svd.sigmas[j]));
            assert!(err <= 1e-9 * top, "j={j} err={err}");
            let adj = op.adjoint_vec(&svd.phi(j));
            let err = op.hs_norm_vec(&(adj - svd.psi(j) * svd.sigmas[j]));
            assert!(err <= 1e-9 * top, "j={j} adj err={err}");
        }
        for i in 0..lead {
            for j in 0..lead {
                let d = if i == j { 1.0 } else { 0.0 };
                assert!((op.hs_inner_vec(&svd.psi(i), &svd.psi(j)) - d).abs() < 1e-9);
                assert!((op.dual_inner_vec(&svd.phi(i), &svd.phi(j)) - d).abs() < 1e-9);
            }
        }
        assert!(svd.numerical_rank <= sets.w2.len());
    }

    #[test]
    fn spectral_recovers_single_mode() {
        let (m, sets) = setup(256);
        let op = assemble_l(&m, &sets).unwrap();
        let svd = svd_l(&op).unwrap();
        let psi3 = svd.psi(2);
        let h = op.to_window_function(&op.apply_vec(&psi3));
        let v = spectral_reconstruct(&svd, &op, &h, svd.sigmas[2]).unwrap();
        let v = op.omega_values(&v).unwrap();
        assert!(op.hs_norm_vec(&(v - &psi3)) < 1e-8);
        // above σ₁ nothing survives
        let none = spectral_reconstruct(&svd, &op, &h, 2.0 * svd.sigma_max()).unwrap();
        assert!(none.is_zero());
        let zero = spectral_reconstruct(&svd, &op, &GridFunction::zeros(m.grid()), 1e-6).unwrap();
        assert!(zero.is_zero());
        assert!(spectral_reconstruct(&svd, &op, &h, 0.0).is_err());
    }
}
