//! Exterior-value problem `((-Δ)^s + q) u = 0` in Ω, `u = f` outside Ω, its
//! solvability check and the pointwise Dirichlet-to-Neumann map.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, IndexSets, Support};
use crate::sobolev::SobolevMachinery;

/// Relative threshold on the smallest singular value of `A_ΩΩ + diag(q)`.
pub const UNIQUENESS_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularity {
    Bounded,
    Continuous,
}

/// Potential sampled on the omega nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    values: Vec<f64>,
    regularity: Regularity,
}

impl Potential {
    pub fn new(values: Vec<f64>, regularity: Regularity) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("potential has non-finite values".into()));
        }
        Ok(Self { values, regularity })
    }

    pub fn zero(sets: &IndexSets) -> Self {
        Self {
            values: vec![0.0; sets.omega.len()],
            regularity: Regularity::Continuous,
        }
    }

    pub fn constant(sets: &IndexSets, c: f64) -> Self {
        Self {
            values: vec![c; sets.omega.len()],
            regularity: Regularity::Continuous,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn regularity(&self) -> Regularity {
        self.regularity
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_len(&self, sets: &IndexSets) -> Result<()> {
        if self.values.len() != sets.omega.len() {
            return Err(Error::Shape {
                expected: sets.omega.len(),
                got: self.values.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Uniqueness {
    Ok { margin: f64 },
    Fail { margin: f64, threshold: f64 },
}

impl Uniqueness {
    pub fn is_ok(&self) -> bool {
        matches!(self, Uniqueness::Ok { .. })
    }

    pub fn margin(&self) -> f64 {
        match *self {
            Uniqueness::Ok { margin } | Uniqueness::Fail { margin, .. } => margin,
        }
    }
}

/// Smallest singular value of `A_ΩΩ + diag(q)` against `1e-8 ‖A_ΩΩ‖₂`.
pub fn check_dirichlet_uniqueness(
    m: &SobolevMachinery,
    sets: &IndexSets,
    q: &Potential,
) -> Result<Uniqueness> {
    q.check_len(sets)?;
    let a_oo = m.frac_lap_block(&sets.omega, &sets.omega);
    let a_norm = a_oo
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let shifted = a_oo + DMatrix::from_diagonal(&DVector::from_column_slice(q.values()));
    let margin = shifted
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    let threshold = UNIQUENESS_THRESHOLD * a_norm;
    Ok(if margin > threshold {
        Uniqueness::Ok { margin }
    } else {
        Uniqueness::Fail { margin, threshold }
    })
}

#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub u: GridFunction,
    pub f: GridFunction,
    /// `‖(Au + qu)|_Ω‖_{L²(Ω)} / ‖u‖_{H^s}`.
    pub interior_residual: f64,
    /// `‖u‖_{H^s} / ‖f‖_{H^s}`.
    pub solver_conditioning: f64,
}

/// Factorized interior operator for a fixed potential; reusable across data.
pub struct PoissonOperator<'a> {
    m: &'a SobolevMachinery,
    sets: &'a IndexSets,
    q: Potential,
    lu: LU<f64, Dyn, Dyn>,
    a_oe: DMatrix<f64>,
}

impl<'a> PoissonOperator<'a> {
    pub fn new(m: &'a SobolevMachinery, sets: &'a IndexSets, q: &Potential) -> Result<Self> {
        match check_dirichlet_uniqueness(m, sets, q)? {
            Uniqueness::Ok { .. } => {}
            Uniqueness::Fail { margin, threshold } => {
                return Err(Error::EigenvalueCondition { margin, threshold })
            }
        }
        let a_oo = m.frac_lap_block(&sets.omega, &sets.omega);
        let system = a_oo + DMatrix::from_diagonal(&DVector::from_column_slice(q.values()));
        Ok(Self {
            m,
            sets,
            q: q.clone(),
            lu: system.lu(),
            a_oe: m.frac_lap_block(&sets.omega, &sets.exterior),
        })
    }

    pub fn potential(&self) -> &Potential {
        &self.q
    }

    /// Interior values `u_Ω` for exterior data `f`.
    pub fn solve_interior(&self, f: &GridFunction) -> Result<DVector<f64>> {
        f.ensure_same_box(self.m.grid())?;
        if self.sets.omega.iter().any(|&j| f.values()[j] != 0.0) {
            return Err(Error::NotExteriorSupported);
        }
        let f_e = DVector::from_vec(f.gather(&self.sets.exterior));
        let rhs = -(&self.a_oe * f_e);
        self.lu
            .solve(&rhs)
            .ok_or_else(|| Error::Factorization("interior system is singular".into()))
    }

    pub fn solve(&self, f: &GridFunction) -> Result<ForwardSolution> {
        let u_o = self.solve_interior(f)?;
        let mut u = f.clone();
        for (k, &j) in self.sets.omega.iter().enumerate() {
            u.values_mut()[j] = u_o[k];
        }
        let au = self.m.fraclap_apply(&u)?;
        let res: f64 = self
            .sets
            .omega
            .iter()
            .zip(self.q.values())
            .map(|(&j, &qj)| (au.values()[j] + qj * u.values()[j]).powi(2))
            .sum::<f64>();
        let res = (res * self.m.mass()).sqrt();
        let u_norm = self.m.hs_norm(&u)?;
        let f_norm = self.m.hs_norm(f)?;
        Ok(ForwardSolution {
            interior_residual: if u_norm > 0.0 { res / u_norm } else { 0.0 },
            solver_conditioning: if f_norm > 0.0 { u_norm / f_norm } else { 0.0 },
            u,
            f: f.clone(),
        })
    }

    /// `Λ_q f` restricted to `where_`.
    pub fn dtn(&self, f: &GridFunction, where_: &[usize]) -> Result<GridFunction> {
        if where_.iter().any(|&j| self.sets.is_omega(j)) {
            return Err(Error::InvalidRegion(
                "DtN evaluation set must lie in the exterior".into(),
            ));
        }
        let sol = self.solve(f)?;
        let au = self.m.fraclap_apply(&sol.u)?;
        GridFunction::scatter(self.m.grid(), where_, &au.gather(where_))
    }
}

pub fn solve_dirichlet(
    m: &SobolevMachinery,
    sets: &IndexSets,
    q: &Potential,
    f: &GridFunction,
) -> Result<ForwardSolution> {
    PoissonOperator::new(m, sets, q)?.solve(f)
}

pub fn dtn_apply(
    m: &SobolevMachinery,
    sets: &IndexSets,
    q: &Potential,
    f: &GridFunction,
    where_: &[usize],
) -> Result<GridFunction> {
    PoissonOperator::new(m, sets, q)?.dtn(f, where_)
}

/// Bilinear form `B_q(u, w) = ((-Δ)^{s/2} u, (-Δ)^{s/2} w) + (q u, w)_Ω`.
pub fn bq_eval(
    m: &SobolevMachinery,
    sets: &IndexSets,
    q: &Potential,
    u: &GridFunction,
    w: &GridFunction,
) -> Result<f64> {
    q.check_len(sets)?;
    let au = m.fraclap_apply(u)?;
    w.ensure_same_box(m.grid())?;
    let form: f64 = au.values().iter().zip(w.values()).map(|(a, b)| a * b).sum();
    let pot: f64 = sets
        .omega
        .iter()
        .zip(q.values())
        .map(|(&j, &qj)| qj * u.values()[j] * w.values()[j])
        .sum();
    Ok((form + pot) * m.mass())
}

/// Smooth bump `exp(-1/(1-t^2))`, `t = (x - center)/width`, supported in
/// `(center - width, center + width)`.
pub fn bump(x: f64, center: f64, width: f64) -> f64 {
    let t = (x - center) / width;
    if t.abs() < 1.0 {
        (-1.0 / (1.0 - t * t)).exp()
    } else {
        0.0
    }
}

/// Bump datum on W1 centred in the hull of its first interval.
pub fn default_datum(m: &SobolevMachinery, sets: &IndexSets) -> GridFunction {
    let (a, b) = sets.w1_region.intervals[0];
    let (c, w) = (0.5 * (a + b), 0.5 * (b - a));
    GridFunction::from_fn(m.grid(), |x| bump(x, c, w)).restricted(sets, Support::W1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{FractionalOrder, Region, SimulationBox};

    fn setup() -> (SobolevMachinery, IndexSets) {
        let bx = SimulationBox::new(16.0, 256, 1).unwrap();
        let m = SobolevMachinery::new(&bx, FractionalOrder::new(0.5).unwrap());
        let sets = IndexSets::build(
            &bx,
            &Region::interval(-1.0, 1.0),
            &Region::interval(2.0, 3.0),
            &Region::interval(-3.0, -2.0),
        )
        .unwrap();
        (m, sets)
    }

    #[test]
    fn uniqueness_examples() {
        let (m, sets) = setup();
        assert!(
            check_dirichlet_uniqueness(&m, &sets, &Potential::zero(&sets))
                .unwrap()
                .is_ok()
        );
        let shifted =
            check_dirichlet_uniqueness(&m, &sets, &Potential::constant(&sets, 5.0)).unwrap();
        assert!(shifted.is_ok());
        assert!(shifted.margin() >= 5.0);

        // oracle: lowest eigenvalue of A_ΩΩ
        let a_oo = m.frac_lap_block(&sets.omega, &sets.omega);
        let lambda1 = a_oo.symmetric_eigenvalues().min();
        let bad = Potential::constant(&sets, -lambda1);
        assert!(!check_dirichlet_uniqueness(&m, &sets, &bad).unwrap().is_ok());
        let f = default_datum(&m, &sets);
        assert!(matches!(
            solve_dirichlet(&m, &sets, &bad, &f),
            Err(Error::EigenvalueCondition { .. })
        ));
    }

    #[test]
    fn zero_datum_gives_zero_solution() {
        let (m, sets) = setup();
        let sol = solve_dirichlet(
            &m,
            &sets,
            &Potential::zero(&sets),
            &GridFunction::zeros(m.grid()),
        )
        .unwrap();
        assert!(sol.u.is_zero());
        let g = dtn_apply(
            &m,
            &sets,
            &Potential::zero(&sets),
            &GridFunction::zeros(m.grid()),
            &sets.w2,
        )
        .unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn solution_matches_datum_outside_and_annihilates_tests_inside() {
        let (m, sets) = setup();
        let q = Potential::new(
            sets.omega
                .iter()
                .map(|&j| 1.0 + m.grid().node(j).powi(2))
                .collect(),
            Regularity::Continuous,
        )
        .unwrap();
        let f = default_datum(&m, &sets);
        let sol = solve_dirichlet(&m, &sets, &q, &f).unwrap();
        assert!(sol.interior_residual <= 1e-8);
        for &j in &sets.exterior {
            assert_eq!(sol.u.values()[j], f.values()[j]);
        }
        let scale = bq_eval(&m, &sets, &q, &sol.u, &sol.u)
            .unwrap()
            .abs()
            .max(1e-300);
        for &j in sets.omega.iter().step_by(5) {
            let mut w = GridFunction::zeros(m.grid());
            w.values_mut()[j] = 1.0;
            let b = bq_eval(&m, &sets, &q, &sol.u, &w).unwrap();
            assert!(b.abs() <= 1e-8 * scale.sqrt() * m.hs_norm(&w).unwrap());
        }
    }

    #[test]
    fn datum_inside_omega_rejected() {
        let (m, sets) = setup();
        let f = GridFunction::from_fn(m.grid(), |x| bump(x, 0.0, 0.5));
        assert!(matches!(
            solve_dirichlet(&m, &sets, &Potential::zero(&sets), &f),
            Err(Error::NotExteriorSupported)
        ));
    }

    #[test]
    fn bq_symmetric_and_plane_wave_value() {
        let (m, sets) = setup();
        let q = Potential::constant(&sets, 0.7);
        let u = GridFunction::from_fn(m.grid(), |x| (0.3 * x).sin() * bump(x, 0.0, 4.0));
        let w = GridFunction::from_fn(m.grid(), |x| bump(x, 1.0, 3.0));
        let a = bq_eval(&m, &sets, &q, &u, &w).unwrap();
        let b = bq_eval(&m, &sets, &q, &w, &u).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());

        let (xi, pw) = crate::sobolev::plane_wave(m.grid(), 4);
        let zero = Potential::zero(&sets);
        let got = bq_eval(&m, &sets, &zero, &pw, &pw).unwrap();
        let want = xi * pw.l2_norm(None).powi(2);
        assert!((got - want).abs() <= 1e-10 * want);
    }

    #[test]
    fn dtn_where_must_be_exterior() {
        let (m, sets) = setup();
        let f = default_datum(&m, &sets);
        assert!(dtn_apply(&m, &sets, &Potential::zero(&sets), &f, &sets.omega).is_err());
    }
}
