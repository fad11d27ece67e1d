//! The unique-continuation operator `L v = (-Δ)^s v|_W` on omega-supported
//! `v`, its weighted singular system and the regularized inverses.
//!
//! Domain geometry is the `H^s` Gram block on omega (`G_Ω = L_Ω L_Ωᵀ`),
//! range geometry is the dual norm on `W` (`‖h‖² = h² hᵀ G_W⁻¹ h`). In the
//! whitened coordinates `y = L_Ωᵀ v`, `z = h L_W⁻¹ h` the operator becomes
//! the plain matrix `K = h L_W⁻¹ L L_Ω⁻ᵀ` and all three schemes reduce to
//! Euclidean linear algebra.

mod config;
mod minimal_l2;
mod runge;
mod svd;
mod tikhonov;

pub use config::{
    AlphaSchedule, RegularizerConfig, Scheme, StopRule, AUTO_STEPS, DISCREPANCY_FACTOR,
};
pub use minimal_l2::{
    minimal_l2_reconstruct, MinimalL2Problem, MinimalL2Solution, MinimalL2Solver,
};
pub use runge::{control_basis, runge_approximate, RungeApproximation};
pub use svd::{spectral_reconstruct, svd_l, UcpSvd, RANK_CUTOFF};
pub use tikhonov::{tikhonov_reconstruct, TikhonovSolution};

use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, IndexSets, SimulationBox, Support};
use crate::sobolev::{RegionFactor, SobolevMachinery};

pub struct UcpOperator {
    bx: SimulationBox,
    omega: Vec<usize>,
    window: Vec<usize>,
    matrix: DMatrix<f64>,
    domain: Arc<Cholesky<f64, Dyn>>,
    range: Arc<RegionFactor>,
    weight: f64,
    whitened: OnceLock<DMatrix<f64>>,
}

impl std::fmt::Debug for UcpOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UcpOperator")
            .field("omega", &self.omega.len())
            .field("window", &self.window.len())
            .finish()
    }
}

/// `L` with the measurement window `W = W2`.
pub fn assemble_l(m: &SobolevMachinery, sets: &IndexSets) -> Result<UcpOperator> {
    UcpOperator::on_window(m, &sets.omega, &sets.w2)
}

impl UcpOperator {
    pub fn on_window(m: &SobolevMachinery, omega: &[usize], window: &[usize]) -> Result<Self> {
        if omega.is_empty() || window.is_empty() {
            return Err(Error::InvalidRegion("L needs nonempty omega and W".into()));
        }
        let g_oo = m.gram_block(omega, omega);
        let domain = Cholesky::new(g_oo)
            .ok_or_else(|| Error::Factorization("H^s Gram block on omega".into()))?;
        Ok(Self {
            bx: *m.grid(),
            omega: omega.to_vec(),
            window: window.to_vec(),
            matrix: m.frac_lap_block(window, omega),
            domain: Arc::new(domain),
            range: m.region_factor(window)?,
            weight: m.mass(),
            whitened: OnceLock::new(),
        })
    }

    pub fn grid(&self) -> &SimulationBox {
        &self.bx
    }

    pub fn omega(&self) -> &[usize] {
        &self.omega
    }

    pub fn window(&self) -> &[usize] {
        &self.window
    }

    /// Rows: window nodes, columns: omega nodes.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    /// `L v` as a grid function living on the window.
    pub fn apply(&self, v: &GridFunction) -> Result<GridFunction> {
        v.ensure_same_box(&self.bx)?;
        let out = self.apply_vec(&DVector::from_vec(v.gather(&self.omega)));
        Ok(
            GridFunction::scatter(&self.bx, &self.window, out.as_slice())?
                .with_support(Support::W2),
        )
    }

    /// Window values of `h`.
    pub fn window_values(&self, h: &GridFunction) -> Result<DVector<f64>> {
        h.ensure_same_box(&self.bx)?;
        Ok(DVector::from_vec(h.gather(&self.window)))
    }

    pub fn omega_values(&self, v: &GridFunction) -> Result<DVector<f64>> {
        v.ensure_same_box(&self.bx)?;
        Ok(DVector::from_vec(v.gather(&self.omega)))
    }

    pub fn to_omega_function(&self, v: &DVector<f64>) -> GridFunction {
        GridFunction::scatter(&self.bx, &self.omega, v.as_slice())
            .expect("omega vector length")
            .with_support(Support::Omega)
    }

    pub fn to_window_function(&self, h: &DVector<f64>) -> GridFunction {
        GridFunction::scatter(&self.bx, &self.window, h.as_slice()).expect("window vector length")
    }

    /// `z = h L_W⁻¹ h`: Euclidean norm of `z` is the dual norm of `h`.
    pub fn whiten_range(&self, h: &DVector<f64>) -> DVector<f64> {
        self.range.whiten(h, self.weight)
    }

    pub fn unwhiten_range(&self, z: &DVector<f64>) -> DVector<f64> {
        (self.range.chol.l_dirty().lower_triangle() * z) / self.weight
    }

    /// `y = L_Ωᵀ v`: Euclidean norm of `y` is the `H^s` norm of `v`.
    pub fn whiten_domain(&self, v: &DVector<f64>) -> DVector<f64> {
        self.domain.l_dirty().lower_triangle().transpose() * v
    }

    pub fn unwhiten_domain(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut v = y.clone();
        self.domain.l_dirty().tr_solve_lower_triangular_mut(&mut v);
        v
    }

    /// Whitened operator `K`.
    pub fn whitened(&self) -> &DMatrix<f64> {
        self.whitened.get_or_init(|| {
            // K = w L_W⁻¹ M L_Ω⁻ᵀ, built as rows of (L_Ω⁻¹ Mᵀ)ᵀ
            let mut mt = self.matrix.transpose();
            self.domain.l_dirty().solve_lower_triangular_mut(&mut mt);
            let mut k = mt.transpose() * self.weight;
            self.range.chol.l_dirty().solve_lower_triangular_mut(&mut k);
            k
        })
    }

    pub fn hs_inner_vec(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.whiten_domain(a).dot(&self.whiten_domain(b))
    }

    pub fn hs_norm_vec(&self, a: &DVector<f64>) -> f64 {
        self.whiten_domain(a).norm()
    }

    pub fn dual_inner_vec(&self, h1: &DVector<f64>, h2: &DVector<f64>) -> f64 {
        self.whiten_range(h1).dot(&self.whiten_range(h2))
    }

    pub fn dual_norm_vec(&self, h: &DVector<f64>) -> f64 {
        self.whiten_range(h).norm()
    }

    /// Adjoint w.r.t. the `H^s(Ω)` and `H^{-s}(W)` inner products:
    /// `L* h = G_Ω⁻¹ Lᵀ (w² G_W⁻¹ h)`.
    pub fn adjoint_vec(&self, h: &DVector<f64>) -> DVector<f64> {
        let t = self.range.chol.solve(h) * (self.weight * self.weight);
        self.domain.solve(&(self.matrix.transpose() * t))
    }

    pub fn adjoint(&self, h: &GridFunction) -> Result<GridFunction> {
        let hw = self.window_values(h)?;
        Ok(self.to_omega_function(&self.adjoint_vec(&hw)))
    }
}

/// `L*h` for a grid function read on the window.
pub fn adjoint_l(op: &UcpOperator, h: &GridFunction) -> Result<GridFunction> {
    op.adjoint(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::bump;
    use crate::grid::{FractionalOrder, Region, SimulationBox};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn setup(points: usize) -> (SobolevMachinery, IndexSets) {
        let bx = SimulationBox::new(16.0, points, 1).unwrap();
        let m = SobolevMachinery::new(&bx, FractionalOrder::new(0.5).unwrap());
        let sets = IndexSets::build(
            &bx,
            &Region::interval(-1.0, 1.0),
            &Region::interval(2.0, 3.0),
            &Region::interval(2.0, 3.0),
        )
        .unwrap();
        (m, sets)
    }

    #[test]
    fn zero_and_columns() {
        let (m, sets) = setup(256);
        let op = assemble_l(&m, &sets).unwrap();
        let z = GridFunction::zeros(m.grid());
        assert!(op.apply(&z).unwrap().is_zero());
        for (c, &j) in sets.omega.iter().enumerate().step_by(3) {
            let mut e = GridFunction::zeros(m.grid());
            e.values_mut()[j] = 1.0;
            let full = m.fraclap_apply(&e).unwrap();
            for (r, &w) in sets.w2.iter().enumerate() {
                assert_eq!(op.matrix()[(r, c)], full.values()[w]);
            }
        }
    }

    #[test]
    fn two_way_agreement_and_pseudolocality() {
        let (m, sets) = setup(512);
        let op = assemble_l(&m, &sets).unwrap();
        let v = GridFunction::from_fn(m.grid(), |x| bump(x, 0.1, 0.7));
        let lv = op.apply(&v).unwrap();
        let direct = m.fraclap_apply(&v).unwrap();
        let scale = direct.max_abs();
        for &w in &sets.w2 {
            assert!((lv.values()[w] - direct.values()[w]).abs() <= 1e-12 * scale);
        }
        let off = lv.l2_norm(Some(&sets.w2));
        let on = direct.l2_norm(Some(&sets.omega));
        assert!(off < 0.05 * on, "off-support {off} vs on-support {on}");
    }

    #[test]
    fn adjoint_identity_on_random_pairs() {
        let (m, sets) = setup(256);
        let op = assemble_l(&m, &sets).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let v = DVector::from_fn(sets.omega.len(), |_, _| rng.random_range(-1.0..1.0));
            let h = DVector::from_fn(sets.w2.len(), |_, _| rng.random_range(-1.0..1.0));
            let lhs = op.dual_inner_vec(&op.apply_vec(&v), &h);
            let rhs = op.hs_inner_vec(&v, &op.adjoint_vec(&h));
            let scale = op.dual_norm_vec(&op.apply_vec(&v)).max(1e-300) * op.dual_norm_vec(&h)
                + op.hs_norm_vec(&v) * op.hs_norm_vec(&op.adjoint_vec(&h));
            assert!((lhs - rhs).abs() <= 1e-10 * scale);
        }
        let z = GridFunction::zeros(m.grid());
        assert!(op.adjoint(&z).unwrap().is_zero());
    }

    #[test]
    fn whitening_round_trips() {
        let (m, sets) = setup(128);
        let op = assemble_l(&m, &sets).unwrap();
        let h = DVector::from_fn(sets.w2.len(), |i, _| (i as f64).sin());
        let back = op.unwhiten_range(&op.whiten_range(&h));
        assert!((back - &h).norm() < 1e-12 * h.norm());
        let v = DVector::from_fn(sets.omega.len(), |i, _| (i as f64 * 0.3).cos());
        let back = op.unwhiten_domain(&op.whiten_domain(&v));
        assert!((back - &v).norm() < 1e-12 * v.norm());
    }

    #[test]
    fn empty_window_rejected() {
        let (m, sets) = setup(128);
        assert!(UcpOperator::on_window(&m, &sets.omega, &[]).is_err());
    }
}
