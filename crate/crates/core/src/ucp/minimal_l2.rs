//! Minimal-L² regularization over exterior controls.
//!
//! `J_α(f) = ½‖P₀f‖²_{L²(Ω)} − (h, f)_{L²(W)} + α‖f‖_{H^s}` for `W`-supported
//! `f`. With `g = L_Wᵀ f` (so `‖g‖ = ‖f‖_{H^s}`) this is
//! `½ gᵀQg − bᵀg + α‖g‖`, `Q = h BᵀB`, `B = S L_W⁻ᵀ`, `S = −A_ΩΩ⁻¹ A_ΩW`,
//! `b = h L_W⁻¹ h_W`, and `‖b‖` is the dual norm of the datum.
//!
//! The minimizer is zero iff `‖b‖ ≤ α`; otherwise `(Q + μ) g = b` with
//! `μ = α/‖g‖`, a scalar secular equation in the eigenbasis of `Q`.
//!
//! On a grid `Q` is singular as soon as `W` has more nodes than Ω: controls
//! in its null space do not reach Ω at all. The functional is then bounded
//! below only while `α` exceeds the part of `b` outside the range of `Q`;
//! exact data `h = Lφ` always lie in the range.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, IndexSets, Support};
use crate::sobolev::{RegionFactor, SobolevMachinery};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinimalL2Solver {
    /// Root of the secular equation in the eigenbasis of `Q`.
    Secular,
    /// Accelerated proximal gradient with radial shrinkage.
    ProximalGradient { max_iter: usize },
}

#[derive(Debug, Clone)]
pub struct MinimalL2Solution {
    pub f_hat: GridFunction,
    pub u_hat: GridFunction,
    pub phi_hat: GridFunction,
    pub j_value: f64,
    /// `‖(-Δ)^s φ̂|_W − h‖_{H^{-s}(W)}`, bounded by `α` at the minimizer.
    pub residual: f64,
    /// `‖û‖²_{L²(Ω)}`.
    pub u_energy: f64,
    /// Relative norm of the subgradient optimality residual.
    pub stationarity: f64,
    pub iterations: usize,
}

/// Factorizations shared by every `(h, α)` solve on one geometry.
pub struct MinimalL2Problem<'a> {
    m: &'a SobolevMachinery,
    sets: &'a IndexSets,
    a_oo: Cholesky<f64, Dyn>,
    a_wo: DMatrix<f64>,
    factor: Arc<RegionFactor>,
    /// `B = S L_W⁻ᵀ`, rows on omega.
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    // thin SVD `√h B = U Σ Vᵀ`, so `Q = V Σ² Vᵀ` with an exact null space
    sv: DVector<f64>,
    u: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl<'a> MinimalL2Problem<'a> {
    pub fn new(m: &'a SobolevMachinery, sets: &'a IndexSets) -> Result<Self> {
        let (omega, w) = (&sets.omega, &sets.w2);
        let a_oo = Cholesky::new(m.frac_lap_block(omega, omega))
            .ok_or_else(|| Error::Factorization("A on omega is not positive definite".into()))?;
        let a_ow = m.frac_lap_block(omega, w);
        let factor = m.region_factor(w)?;
        // S = -A_ΩΩ⁻¹ A_ΩW, then B = S L_W⁻ᵀ via Bᵀ = L_W⁻¹ Sᵀ
        let s = -a_oo.solve(&a_ow);
        let mut bt = s.transpose();
        factor.chol.l_dirty().solve_lower_triangular_mut(&mut bt);
        let b = bt.transpose();
        let q = (b.transpose() * &b) * m.mass();
        let svd = (&b * m.mass().sqrt())
            .try_svd(true, true, f64::EPSILON, 0)
            .ok_or_else(|| Error::Factorization("SVD of the control-to-omega map".into()))?;
        let u = svd.u.expect("requested U");
        let v = svd.v_t.expect("requested V^T").transpose();
        Ok(Self {
            m,
            sets,
            a_oo,
            a_wo: a_ow.transpose(),
            factor,
            b,
            q,
            sv: svd.singular_values,
            u,
            v,
        })
    }

    /// `b = h L_W⁻¹ h_W`.
    fn linear_term(&self, h: &GridFunction) -> Result<DVector<f64>> {
        h.ensure_same_box(self.m.grid())?;
        let hw = DVector::from_vec(h.gather(&self.sets.w2));
        Ok(self.factor.whiten(&hw, self.m.mass()))
    }

    /// Part of the datum no control can reach: `‖b − VVᵀb‖`. The functional
    /// is bounded below only for `α` at least this large.
    pub fn range_floor(&self, h: &GridFunction) -> Result<f64> {
        let b = self.linear_term(h)?;
        Ok((&b - &self.v * (self.v.transpose() * &b)).norm())
    }

    pub fn solve(
        &self,
        h: &GridFunction,
        alpha: f64,
        tol: f64,
        solver: MinimalL2Solver,
    ) -> Result<MinimalL2Solution> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidAlpha(alpha));
        }
        let b = self.linear_term(h)?;
        let zero_omega = DVector::zeros(self.sets.omega.len());
        let (g, u_o, iterations, stationarity) = if b.norm() <= alpha {
            (DVector::zeros(b.len()), zero_omega, 0, 0.0)
        } else {
            let c = self.v.transpose() * &b;
            let floor = (&b - &self.v * &c).norm();
            if floor >= alpha {
                return Err(Error::UnboundedFunctional { floor, alpha });
            }
            match solver {
                MinimalL2Solver::Secular => {
                    let (g, u_o, gap) = self.secular(&b, &c, floor, alpha, tol);
                    (g, u_o, 1, gap)
                }
                MinimalL2Solver::ProximalGradient { max_iter } => {
                    let (g, it) = self.proximal(&b, alpha, tol, max_iter)?;
                    let u_o = &self.b * &g;
                    let st = self.stationarity(&g, &b, alpha);
                    (g, u_o, it, st)
                }
            }
        };
        let mut sol = self.assemble(h, &b, &g, &u_o, alpha, iterations)?;
        sol.stationarity = stationarity;
        Ok(sol)
    }

    /// Minimizer `g` and the interior values `û_Ω`, the latter formed in
    /// singular coordinates: for rough data `‖g‖` is huge while `û` is not,
    /// and `B g` would cancel catastrophically.
    fn secular(
        &self,
        b: &DVector<f64>,
        c: &DVector<f64>,
        floor: f64,
        alpha: f64,
        tol: f64,
    ) -> (DVector<f64>, DVector<f64>, f64) {
        let lam = self.sv.map(|x| x * x);
        // φ(μ) = Σ (c_i μ / (λ_i + μ))² + floor² rises from floor² to ‖b‖² > α²
        let phi = |mu: f64| -> f64 {
            c.iter()
                .zip(lam.iter())
                .map(|(&ci, &li)| (ci * mu / (li + mu)).powi(2))
                .sum::<f64>()
                + floor * floor
        };
        let target = alpha * alpha;
        let (mut lo, mut hi) = (1e-300f64, 1.0f64);
        while phi(hi) < target {
            hi *= 4.0;
        }
        // bisection in log μ
        let stop = tol.min(1e-13);
        for _ in 0..2000 {
            let mid = (0.5 * (lo.ln() + hi.ln())).exp();
            if phi(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= stop * hi {
                break;
            }
        }
        let mu = (0.5 * (lo.ln() + hi.ln())).exp();
        let coef = DVector::from_iterator(
            c.len(),
            c.iter().zip(lam.iter()).map(|(&ci, &li)| ci / (li + mu)),
        );
        let in_range = &self.v * &coef;
        let outside = (b - &self.v * c) / mu;
        let u_o = &self.u * coef.component_mul(&self.sv) / self.m.mass().sqrt();
        // the optimality system holds by construction; what remains is how
        // well μ‖g‖ = α is met
        let gap = (phi(mu).sqrt() - alpha).abs() / alpha;
        (in_range + outside, u_o, gap)
    }

    fn proximal(
        &self,
        b: &DVector<f64>,
        alpha: f64,
        tol: f64,
        max_iter: usize,
    ) -> Result<(DVector<f64>, usize)> {
        let lip = self.sv.max().powi(2).max(f64::MIN_POSITIVE);
        let step = 1.0 / lip;
        let shrink = |x: DVector<f64>| -> DVector<f64> {
            let n = x.norm();
            if n <= step * alpha {
                DVector::zeros(x.len())
            } else {
                x * (1.0 - step * alpha / n)
            }
        };
        let mut g = DVector::zeros(b.len());
        let mut y = g.clone();
        let mut t = 1.0f64;
        let mut last = f64::INFINITY;
        for it in 1..=max_iter {
            let grad = &self.q * &y - b;
            let next = shrink(&y - grad * step);
            // gradient-mapping restart keeps the iteration monotone-ish
            if (&y - &next).dot(&(&next - &g)) > 0.0 {
                t = 1.0;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &next + (&next - &g) * ((t - 1.0) / t_next);
            t = t_next;
            g = next;
            if it % 25 == 0 {
                last = self.stationarity(&g, b, alpha);
                if last <= tol {
                    return Ok((g, it));
                }
            }
        }
        Err(Error::NonConvergence {
            iterations: max_iter,
            stationarity: last,
        })
    }

    fn stationarity(&self, g: &DVector<f64>, b: &DVector<f64>, alpha: f64) -> f64 {
        let gn = g.norm();
        let bn = b.norm().max(f64::MIN_POSITIVE);
        if gn == 0.0 {
            // 0 is optimal iff the smooth gradient fits in the α-ball
            return (bn - alpha).max(0.0) / bn;
        }
        (&self.q * g - b + g * (alpha / gn)).norm() / bn
    }

    fn assemble(
        &self,
        h: &GridFunction,
        b: &DVector<f64>,
        g: &DVector<f64>,
        u_o: &DVector<f64>,
        alpha: f64,
        iterations: usize,
    ) -> Result<MinimalL2Solution> {
        let (bx, omega, w) = (self.m.grid(), &self.sets.omega, &self.sets.w2);
        let mass = self.m.mass();
        let mut f_w = g.clone();
        self.factor
            .chol
            .l_dirty()
            .tr_solve_lower_triangular_mut(&mut f_w);

        let f_hat = GridFunction::scatter(bx, w, f_w.as_slice())?.with_support(Support::W2);
        let mut u_hat = f_hat.clone();
        for (k, &j) in omega.iter().enumerate() {
            u_hat.values_mut()[j] = u_o[k];
        }
        let u_hat = GridFunction::from_values(bx, u_hat.into_values())?;

        let phi_o = self.a_oo.solve(&(-u_o));
        let phi_hat =
            GridFunction::scatter(bx, omega, phi_o.as_slice())?.with_support(Support::Omega);

        let hw = DVector::from_vec(h.gather(w));
        let lphi = &self.a_wo * &phi_o;
        let residual = self.factor.whiten(&(lphi - hw), mass).norm();

        let u_energy = mass * u_o.norm_squared();
        let j_value = 0.5 * u_energy - b.dot(g) + alpha * g.norm();
        Ok(MinimalL2Solution {
            stationarity: 0.0,
            f_hat,
            u_hat,
            phi_hat,
            j_value,
            residual,
            u_energy,
            iterations,
        })
    }

    /// `J_α` at an arbitrary `W`-supported control, for testing optimality.
    pub fn objective(&self, h: &GridFunction, f: &GridFunction, alpha: f64) -> Result<f64> {
        let b = self.linear_term(h)?;
        let fw = DVector::from_vec(f.gather(&self.sets.w2));
        let g = self.factor.chol.l_dirty().lower_triangle().transpose() * fw;
        Ok(0.5 * g.dot(&(&self.q * &g)) - b.dot(&g) + alpha * g.norm())
    }
}

/// One-shot minimal-L² solve with the secular solver on `W = W2`.
pub fn minimal_l2_reconstruct(
    m: &SobolevMachinery,
    sets: &IndexSets,
    h: &GridFunction,
    alpha: f64,
    tol: f64,
) -> Result<MinimalL2Solution> {
    MinimalL2Problem::new(m, sets)?.solve(h, alpha, tol, MinimalL2Solver::Secular)
}
