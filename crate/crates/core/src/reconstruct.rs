//! Single-measurement pipeline: from `(f, Λ_q f|_{W2})` to `q`.
//!
//! 1. `h = g − (-Δ)^s f|_{W2}`
//! 2. `v ≈ L⁻¹ h` by a regularized scheme
//! 3. `u = f + v`
//! 4. `q = −(-Δ)^s u / u` on Ω, away from the nodal set of `u`

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{PoissonOperator, Potential};
use crate::grid::{FractionalOrder, GridFunction, IndexSets, Region, SimulationBox, Support};
use crate::sobolev::SobolevMachinery;
use crate::ucp::{
    assemble_l, svd_l, tikhonov_reconstruct, MinimalL2Problem, MinimalL2Solver, RegularizerConfig,
    Scheme, StopRule, UcpOperator, UcpSvd,
};

/// Default relative nodal threshold.
pub const DEFAULT_TAU: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    File,
}

#[derive(Debug, Clone)]
pub struct MeasurementRecord {
    pub f: GridFunction,
    /// `Λ_q f` on W2 (zero elsewhere).
    pub g: GridFunction,
    pub noise_level: f64,
    pub provenance: Provenance,
}

impl MeasurementRecord {
    pub fn new(
        sets: &IndexSets,
        f: GridFunction,
        g: GridFunction,
        noise_level: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        g.ensure_same_box(f.grid())?;
        if f.is_zero() {
            return Err(Error::ZeroDatum);
        }
        let w1 = sets.indices(Support::W1);
        let mut on_w1 = vec![false; f.values().len()];
        for &j in w1 {
            on_w1[j] = true;
        }
        if f.values()
            .iter()
            .enumerate()
            .any(|(j, &v)| v != 0.0 && !on_w1[j])
        {
            return Err(Error::InvalidRegion(
                "exterior datum must be supported in W1".into(),
            ));
        }
        if !(noise_level >= 0.0) {
            return Err(Error::Config("noise level must be nonnegative".into()));
        }
        Ok(Self {
            f: f.with_support(Support::W1),
            g: g.restricted(sets, Support::W2),
            noise_level,
            provenance,
        })
    }

    /// Forward-solve for `q` and read `Λ_q f` on W2, plus Gaussian noise with
    /// standard deviation `noise_level · ‖g‖_∞`.
    pub fn synthetic(
        m: &SobolevMachinery,
        sets: &IndexSets,
        q: &Potential,
        f: &GridFunction,
        noise_level: f64,
        seed: u64,
    ) -> Result<Self> {
        if f.is_zero() {
            return Err(Error::ZeroDatum);
        }
        let g = PoissonOperator::new(m, sets, q)?.dtn(f, &sets.w2)?;
        let g = add_noise(g, &sets.w2, noise_level, seed);
        Self::new(sets, f.clone(), g, noise_level, Provenance::Synthetic)
    }

    /// Like [`MeasurementRecord::synthetic`], but the forward problem is solved
    /// on the twice finer grid and `g` is averaged back over pairs of fine
    /// cells. The coarse `f` is the same analytic datum sampled on the coarse
    /// grid.
    #[allow(clippy::too_many_arguments)]
    pub fn synthetic_refined(
        m: &SobolevMachinery,
        sets: &IndexSets,
        q: impl Fn(f64) -> f64,
        f: impl Fn(f64) -> f64,
        noise_level: f64,
        seed: u64,
    ) -> Result<Self> {
        let coarse = *m.grid();
        let fine_box = coarse.refined();
        let fine_m = SobolevMachinery::new(&fine_box, m.order());
        let fine_sets = IndexSets::build(
            &fine_box,
            &sets.omega_region,
            &sets.w1_region,
            &sets.w2_region,
        )?;
        let fine_q = Potential::new(
            fine_sets
                .omega
                .iter()
                .map(|&j| q(fine_box.node(j)))
                .collect(),
            crate::forward::Regularity::Bounded,
        )?;
        let fine_f = GridFunction::from_fn(&fine_box, &f).restricted(&fine_sets, Support::W1);
        // A u on every fine node, so each coarse W2 cell has both children
        let sol = PoissonOperator::new(&fine_m, &fine_sets, &fine_q)?.solve(&fine_f)?;
        let full = fine_m.fraclap_apply(&sol.u)?;
        let coarse_vals: Vec<f64> = (0..coarse.points())
            .map(|j| 0.5 * (full.values()[2 * j] + full.values()[2 * j + 1]))
            .collect();
        let g = GridFunction::from_values(&coarse, coarse_vals)?.restricted(sets, Support::W2);
        let g = add_noise(g, &sets.w2, noise_level, seed);
        let fc = GridFunction::from_fn(&coarse, &f).restricted(sets, Support::W1);
        Self::new(sets, fc, g, noise_level, Provenance::Synthetic)
    }
}

fn add_noise(mut g: GridFunction, window: &[usize], level: f64, seed: u64) -> GridFunction {
    if level == 0.0 {
        return g;
    }
    let sigma = level * g.max_abs();
    if sigma == 0.0 {
        return g;
    }
    let normal = Normal::new(0.0, sigma).expect("finite positive deviation");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &j in window {
        g.values_mut()[j] += normal.sample(&mut rng);
    }
    g
}

/// Expected dual norm of i.i.d. noise of deviation `sigma` on `window`:
/// `σ h √tr(G_W⁻¹)`.
pub fn noise_dual_norm(m: &SobolevMachinery, window: &[usize], sigma: f64) -> Result<f64> {
    let factor = m.region_factor(window)?;
    let n = window.len();
    let mut trace = 0.0;
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        trace += factor.whiten(&e, 1.0).norm_squared();
    }
    Ok(sigma * m.mass() * trace.sqrt())
}

/// Step (1): `h = g − (-Δ)^s f` on W2.
pub fn measurement_to_h(
    m: &SobolevMachinery,
    sets: &IndexSets,
    rec: &MeasurementRecord,
) -> Result<GridFunction> {
    rec.f.ensure_same_box(m.grid())?;
    rec.g.ensure_same_box(m.grid())?;
    let af = m.fraclap_apply(&rec.f)?;
    let mut h = GridFunction::zeros(m.grid());
    for &j in &sets.w2 {
        h.values_mut()[j] = rec.g.values()[j] - af.values()[j];
    }
    Ok(h.with_support(Support::W2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub alpha: f64,
    /// `‖L v_α − h‖_{H^{-s}(W)}`.
    pub residual: f64,
    /// `‖v_α‖_{H^s}`.
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct InteriorRecovery {
    pub v: GridFunction,
    pub alpha: f64,
    pub trace: Vec<TraceEntry>,
    /// Index into `trace` of the returned iterate.
    pub selected: usize,
}

/// Operator, singular system and minimal-L² factorizations for one geometry.
pub struct InteriorSolver<'a> {
    m: &'a SobolevMachinery,
    sets: &'a IndexSets,
    op: UcpOperator,
    svd: UcpSvd,
    minimal: MinimalL2Problem<'a>,
}

impl<'a> InteriorSolver<'a> {
    pub fn new(m: &'a SobolevMachinery, sets: &'a IndexSets) -> Result<Self> {
        let op = assemble_l(m, sets)?;
        let svd = svd_l(&op)?;
        let minimal = MinimalL2Problem::new(m, sets)?;
        Ok(Self {
            m,
            sets,
            op,
            svd,
            minimal,
        })
    }

    pub fn operator(&self) -> &UcpOperator {
        &self.op
    }

    pub fn svd(&self) -> &UcpSvd {
        &self.svd
    }

    pub fn minimal_l2(&self) -> &MinimalL2Problem<'a> {
        &self.minimal
    }

    /// Run the schedule of `cfg` and return the stop-rule iterate.
    pub fn recover(&self, h: &GridFunction, cfg: &RegularizerConfig) -> Result<InteriorRecovery> {
        cfg.validate()?;
        let hw = self.op.window_values(h)?;
        let data_norm = self.op.dual_norm_vec(&hw);
        let alphas = cfg
            .alpha_schedule
            .resolve(cfg.scheme, self.svd.sigma_max(), data_norm);
        if data_norm == 0.0 {
            let entry = TraceEntry {
                alpha: alphas[0],
                residual: 0.0,
                penalty: 0.0,
            };
            return Ok(InteriorRecovery {
                v: GridFunction::zeros(self.m.grid()).with_support(Support::Omega),
                alpha: alphas[0],
                trace: vec![entry],
                selected: 0,
            });
        }

        let mut trace = Vec::with_capacity(alphas.len());
        let mut current: Option<(GridFunction, f64)> = None;
        for &alpha in &alphas {
            let v = match cfg.scheme {
                Scheme::Spectral => self
                    .op
                    .to_omega_function(&self.svd.truncated_inverse(&self.op, &hw, alpha)),
                Scheme::Tikhonov => tikhonov_reconstruct(&self.op, h, alpha)?.v,
                Scheme::MinimalL2 => {
                    match self.minimal.solve(
                        h,
                        alpha,
                        cfg.inner_solver_tol,
                        MinimalL2Solver::Secular,
                    ) {
                        Ok(sol) => sol.phi_hat,
                        // below the reachable floor the discrete functional has no
                        // minimizer: the schedule ends here
                        Err(Error::UnboundedFunctional { .. }) if current.is_some() => break,
                        Err(e) => return Err(e),
                    }
                }
            };
            let vo = self.op.omega_values(&v)?;
            let residual = self.op.dual_norm_vec(&(self.op.apply_vec(&vo) - &hw));
            let penalty = self.op.hs_norm_vec(&vo);
            trace.push(TraceEntry {
                alpha,
                residual,
                penalty,
            });
            current = Some((v, alpha));
            if let StopRule::Discrepancy { noise_norm, factor } = cfg.stop_rule {
                if residual <= factor * noise_norm {
                    break;
                }
            }
        }
        let (v, alpha) = current.expect("schedule is nonempty");
        let selected = trace.len() - 1;
        Ok(InteriorRecovery {
            v: v.with_support(Support::Omega),
            alpha,
            trace,
            selected,
        })
    }
}

/// Step (2) for a single call; builds the solver each time.
pub fn recover_interior(
    m: &SobolevMachinery,
    sets: &IndexSets,
    h: &GridFunction,
    cfg: &RegularizerConfig,
) -> Result<InteriorRecovery> {
    InteriorSolver::new(m, sets)?.recover(h, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuotientResult {
    /// Per omega node; `None` where masked (unless infilled).
    pub q_rec: Vec<Option<f64>>,
    pub nodal_mask: Vec<bool>,
    pub mask_fraction: f64,
    /// `‖Au‖_∞` over Ω, the scale of the step-4 identity.
    pub au_sup: f64,
}

/// Step (4): `q = −(Au)/u` on omega nodes with `|u| > τ max_Ω |u|`.
///
/// With `infill`, masked nodes take the value of the nearest unmasked node.
pub fn quotient_q(
    m: &SobolevMachinery,
    sets: &IndexSets,
    u: &GridFunction,
    tau: f64,
    infill: bool,
) -> Result<QuotientResult> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("tau = {tau} must lie in (0, 1)")));
    }
    let au = m.fraclap_apply(u)?;
    let uo = u.gather(&sets.omega);
    let au_o = au.gather(&sets.omega);
    let umax = uo.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if umax == 0.0 {
        return Err(Error::VanishingSolution);
    }
    let nodal_mask: Vec<bool> = uo.iter().map(|v| v.abs() <= tau * umax).collect();
    let mut q_rec: Vec<Option<f64>> = uo
        .iter()
        .zip(&au_o)
        .zip(&nodal_mask)
        .map(|((&u, &a), &masked)| if masked { None } else { Some(-a / u) })
        .collect();
    if infill {
        let known: Vec<usize> = (0..q_rec.len()).filter(|&i| q_rec[i].is_some()).collect();
        let filled: Vec<Option<f64>> = (0..q_rec.len())
            .map(|i| {
                q_rec[i].or_else(|| {
                    known
                        .iter()
                        .min_by_key(|&&k| k.abs_diff(i))
                        .and_then(|&k| q_rec[k])
                })
            })
            .collect();
        q_rec = filled;
    }
    let masked = nodal_mask.iter().filter(|&&b| b).count();
    Ok(QuotientResult {
        q_rec,
        mask_fraction: masked as f64 / nodal_mask.len() as f64,
        nodal_mask,
        au_sup: au_o.iter().fold(0.0f64, |a, v| a.max(v.abs())),
    })
}

#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    pub h: GridFunction,
    pub v: GridFunction,
    pub u: GridFunction,
    pub q_rec: Vec<Option<f64>>,
    pub nodal_mask: Vec<bool>,
    pub mask_fraction: f64,
    pub trace: Vec<TraceEntry>,
    pub alpha: f64,
    pub scheme_used: RegularizerConfig,
    pub tau: f64,
    pub warnings: Vec<String>,
}

impl ReconstructionReport {
    /// Relative `L∞` error against `q_true` (omega node order) on unmasked
    /// nodes; absolute when `q_true` vanishes there.
    pub fn q_error(&self, q_true: &[f64]) -> f64 {
        relative_linf(&self.q_rec, &self.nodal_mask, q_true)
    }
}

pub fn relative_linf(q_rec: &[Option<f64>], mask: &[bool], q_true: &[f64]) -> f64 {
    let mut err = 0.0f64;
    let mut scale = 0.0f64;
    for ((r, &masked), &t) in q_rec.iter().zip(mask).zip(q_true) {
        if masked {
            continue;
        }
        if let Some(r) = r {
            err = err.max((r - t).abs());
            scale = scale.max(t.abs());
        }
    }
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

/// Steps (1)–(4). Errors carry the number of the failing step.
pub fn full_pipeline(
    m: &SobolevMachinery,
    sets: &IndexSets,
    rec: &MeasurementRecord,
    cfg: &RegularizerConfig,
    tau: f64,
) -> Result<ReconstructionReport> {
    let solver = InteriorSolver::new(m, sets).map_err(|e| e.at_step(2))?;
    pipeline_with(&solver, rec, cfg, tau, false)
}

/// [`full_pipeline`] reusing a prepared solver, optionally with infill.
pub fn pipeline_with(
    solver: &InteriorSolver<'_>,
    rec: &MeasurementRecord,
    cfg: &RegularizerConfig,
    tau: f64,
    infill: bool,
) -> Result<ReconstructionReport> {
    let (m, sets) = (solver.m, solver.sets);
    let mut warnings = Vec::new();
    if rec.f.is_zero() {
        return Err(Error::ZeroDatum.at_step(1));
    }
    let h = measurement_to_h(m, sets, rec).map_err(|e| e.at_step(1))?;
    let rv = solver.recover(&h, cfg).map_err(|e| e.at_step(2))?;
    let u = rec.f.axpby(1.0, &rv.v, 1.0).map_err(|e| e.at_step(3))?;
    let quot = quotient_q(m, sets, &u, tau, infill).map_err(|e| e.at_step(4))?;
    if quot.mask_fraction > 0.05 {
        warnings.push(format!(
            "{:.1}% of omega nodes are masked as near-nodal",
            100.0 * quot.mask_fraction
        ));
    }
    Ok(ReconstructionReport {
        h,
        v: rv.v,
        u,
        q_rec: quot.q_rec,
        nodal_mask: quot.nodal_mask,
        mask_fraction: quot.mask_fraction,
        trace: rv.trace,
        alpha: rv.alpha,
        scheme_used: cfg.clone(),
        tau,
        warnings,
    })
}

/// Warning text for potentials outside the `s ≥ 1/4` bounded-potential regime.
pub fn regularity_warning(order: FractionalOrder, q: &Potential) -> Option<String> {
    (q.regularity() == crate::forward::Regularity::Bounded && !order.covers_bounded_potentials())
        .then(|| {
            format!(
                "s = {} < 1/4 with a discontinuous potential: uniqueness is only guaranteed for continuous q",
                order.value()
            )
        })
}

/// Geometry used by the examples and tests: `Ω = (−1, 1)`, `W1 = (2, 3)`,
/// `W2 = (−8, −1.25) ∪ (1.25, 8)` in a box of radius 16.
pub fn reference_geometry(points: usize, s: f64) -> Result<(SobolevMachinery, IndexSets)> {
    let bx = SimulationBox::new(16.0, points, 1)?;
    let m = SobolevMachinery::new(&bx, FractionalOrder::new(s)?);
    let sets = IndexSets::build(
        &bx,
        &Region::interval(-1.0, 1.0),
        &Region::interval(2.0, 3.0),
        &Region::new(vec![(-8.0, -1.25), (1.25, 8.0)]),
    )?;
    Ok((m, sets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{bump, default_datum, solve_dirichlet};

    fn smooth_q(sets: &IndexSets, m: &SobolevMachinery) -> Potential {
        Potential::new(
            sets.omega
                .iter()
                .map(|&j| 2.0 * std::f64::consts::E * bump(m.grid().node(j), 0.0, 0.5))
                .collect(),
            crate::forward::Regularity::Continuous,
        )
        .unwrap()
    }

    #[test]
    fn h_identities() {
        let (m, sets) = reference_geometry(256, 0.5).unwrap();
        let q = smooth_q(&sets, &m);
        let f = default_datum(&m, &sets);
        let rec = MeasurementRecord::synthetic(&m, &sets, &q, &f, 0.0, 1).unwrap();
        let h = measurement_to_h(&m, &sets, &rec).unwrap();
        let u = solve_dirichlet(&m, &sets, &q, &f).unwrap().u;
        let v = u.axpby(1.0, &f, -1.0).unwrap();
        let lv = m.fraclap_apply(&v).unwrap();
        let scale = h.max_abs();
        for &j in &sets.w2 {
            assert!((h.values()[j] - lv.values()[j]).abs() <= 1e-10 * scale);
        }
        // g = A f on W2 gives h = 0
        let af = m.fraclap_apply(&f).unwrap();
        let rec0 =
            MeasurementRecord::new(&sets, f.clone(), af.clone(), 0.0, Provenance::File).unwrap();
        let h0 = measurement_to_h(&m, &sets, &rec0).unwrap();
        assert!(h0.max_abs() <= 1e-14 * af.max_abs());
        // noise shifts h by exactly the noise
        let noisy = MeasurementRecord::synthetic(&m, &sets, &q, &f, 1e-3, 7).unwrap();
        let hn = measurement_to_h(&m, &sets, &noisy).unwrap();
        for &j in &sets.w2 {
            let e = noisy.g.values()[j] - rec.g.values()[j];
            assert!(((hn.values()[j] - h.values()[j]) - e).abs() <= 1e-15 * scale.max(1.0));
        }
    }

    #[test]
    fn zero_datum_rejected() {
        let (m, sets) = reference_geometry(128, 0.5).unwrap();
        let z = GridFunction::zeros(m.grid());
        assert!(matches!(
            MeasurementRecord::new(&sets, z.clone(), z, 0.0, Provenance::File),
            Err(Error::ZeroDatum)
        ));
    }

    #[test]
    fn quotient_reproduces_forward_potential() {
        let (m, sets) = reference_geometry(256, 0.5).unwrap();
        let q = smooth_q(&sets, &m);
        let f = default_datum(&m, &sets);
        let u = solve_dirichlet(&m, &sets, &q, &f).unwrap().u;
        let res = quotient_q(&m, &sets, &u, 1e-3, false).unwrap();
        for (i, r) in res.q_rec.iter().enumerate() {
            if let Some(r) = r {
                let want = q.values()[i];
                assert!((r - want).abs() <= 1e-6 * q.sup_norm());
                // step-4 identity by construction
                let j = sets.omega[i];
                let au = m.fraclap_apply(&u).unwrap().values()[j];
                assert!((au + r * u.values()[j]).abs() <= 1e-12 * res.au_sup);
            }
        }
        assert!(res.mask_fraction <= 0.05);
        assert!(matches!(
            quotient_q(&m, &sets, &GridFunction::zeros(m.grid()), 1e-3, false),
            Err(Error::VanishingSolution)
        ));
    }

    #[test]
    fn infill_fills_only_masked_nodes() {
        let (m, sets) = reference_geometry(128, 0.5).unwrap();
        // sign change in the middle of omega forces a masked node
        let u = GridFunction::from_fn(m.grid(), |x| if x.abs() < 1.0 { x } else { 0.0 });
        let plain = quotient_q(&m, &sets, &u, 0.2, false).unwrap();
        let filled = quotient_q(&m, &sets, &u, 0.2, true).unwrap();
        assert!(plain.nodal_mask.iter().any(|&b| b));
        for i in 0..plain.q_rec.len() {
            match plain.q_rec[i] {
                Some(v) => assert_eq!(filled.q_rec[i], Some(v)),
                None => assert!(filled.q_rec[i].is_some()),
            }
        }
    }

    #[test]
    fn zero_h_gives_zero_v() {
        let (m, sets) = reference_geometry(128, 0.5).unwrap();
        let solver = InteriorSolver::new(&m, &sets).unwrap();
        for scheme in [Scheme::Spectral, Scheme::Tikhonov, Scheme::MinimalL2] {
            let r = solver
                .recover(
                    &GridFunction::zeros(m.grid()),
                    &RegularizerConfig::new(scheme),
                )
                .unwrap();
            assert!(r.v.is_zero());
        }
    }

    #[test]
    fn pipeline_errors_carry_step_labels() {
        let (m, sets) = reference_geometry(128, 0.5).unwrap();
        let f = default_datum(&m, &sets);
        let rec = MeasurementRecord {
            f,
            g: GridFunction::zeros(m.grid()),
            noise_level: 0.0,
            provenance: Provenance::File,
        };
        let err = full_pipeline(
            &m,
            &sets,
            &rec,
            &RegularizerConfig::new(Scheme::Spectral),
            2.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Step { step: 4, .. }), "{err}");
    }
}
