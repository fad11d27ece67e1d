use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::forward::{PoissonOperator, Potential};
use crate::grid::{GridFunction, IndexSets, Support};
use crate::sobolev::SobolevMachinery;

#[derive(Debug, Clone)]
pub struct RungeApproximation {
    /// Control on W1.
    pub f: GridFunction,
    /// `‖target − P_q f‖_{L²(Ω)}`.
    pub error: f64,
    pub coefficients: Vec<f64>,
    /// Basis directions discarded as numerically dependent.
    pub dropped: usize,
}

/// Sine modes `sin(kπ(x − a)/(b − a))`, `k = 1..=dim`, on the W1 hull,
/// restricted to W1 nodes.
pub fn control_basis(m: &SobolevMachinery, sets: &IndexSets, dim: usize) -> Vec<GridFunction> {
    let (a, b) = sets.w1_region.hull();
    (1..=dim)
        .map(|k| {
            let w = k as f64 * std::f64::consts::PI / (b - a);
            GridFunction::from_fn(m.grid(), |x| (w * (x - a)).sin()).restricted(sets, Support::W1)
        })
        .collect()
}

/// Least-squares fit of `target|_Ω` by `P_q f` with `f` in the nested
/// `control_dim`-dimensional sine space on W1.
pub fn runge_approximate(
    m: &SobolevMachinery,
    sets: &IndexSets,
    q: &Potential,
    target: &GridFunction,
    control_dim: usize,
) -> Result<RungeApproximation> {
    if control_dim == 0 {
        return Err(Error::Config("control dimension must be positive".into()));
    }
    target.ensure_same_box(m.grid())?;
    let poisson = PoissonOperator::new(m, sets, q)?;
    let basis = control_basis(m, sets, control_dim);
    let weight = m.mass().sqrt();

    let mut cols = Vec::with_capacity(control_dim);
    for b in &basis {
        cols.push(poisson.solve_interior(b)? * weight);
    }
    let mut rhs = DVector::from_vec(target.gather(&sets.omega)) * weight;

    // modified Gram–Schmidt with one reorthogonalization pass; dependent
    // directions are dropped, which makes the fit the least-norm one on the
    // retained span
    let n = sets.omega.len();
    let mut qs: Vec<DVector<f64>> = Vec::new();
    let mut keep: Vec<usize> = Vec::new();
    let mut r = DMatrix::<f64>::zeros(control_dim, control_dim);
    for (j, col) in cols.iter().enumerate() {
        let mut v = col.clone();
        let original = v.norm();
        let mut coeffs = vec![0.0; qs.len()];
        for _ in 0..2 {
            for (i, qi) in qs.iter().enumerate() {
                let c = qi.dot(&v);
                coeffs[i] += c;
                v.axpy(-c, qi, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= 1e-13 * original.max(f64::MIN_POSITIVE) || original == 0.0 {
            continue;
        }
        let row = qs.len();
        for (i, c) in coeffs.into_iter().enumerate() {
            r[(i, row)] = c;
        }
        r[(row, row)] = norm;
        qs.push(v / norm);
        keep.push(j);
    }
    let rank = qs.len();
    let mut proj = DVector::zeros(rank);
    for (i, qi) in qs.iter().enumerate() {
        let c = qi.dot(&rhs);
        proj[i] = c;
        rhs.axpy(-c, qi, 1.0);
    }
    let r = r.view((0, 0), (rank, rank)).into_owned();
    let sol = r
        .solve_upper_triangular(&proj)
        .ok_or_else(|| Error::Factorization("Runge least-squares system".into()))?;

    let mut coefficients = vec![0.0; control_dim];
    for (i, &j) in keep.iter().enumerate() {
        coefficients[j] = sol[i];
    }
    let mut f = GridFunction::zeros(m.grid());
    for (c, b) in coefficients.iter().zip(&basis) {
        if *c != 0.0 {
            f = f.axpby(1.0, b, *c)?;
        }
    }
    debug_assert_eq!(rhs.len(), n);
    Ok(RungeApproximation {
        f: f.with_support(Support::W1),
        error: rhs.norm(),
        coefficients,
        dropped: control_dim - rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{bump, solve_dirichlet};
    use crate::ucp::tests::setup;

    #[test]
    fn representable_target_is_recovered() {
        let (m, sets) = setup(256);
        let q = Potential::constant(&sets, 1.0);
        let basis = control_basis(&m, &sets, 6);
        let f0 = basis[1].axpby(2.0, &basis[4], -0.5).unwrap();
        let target = solve_dirichlet(&m, &sets, &q, &f0)
            .unwrap()
            .u
            .restricted(&sets, Support::Omega);
        let fit = runge_approximate(&m, &sets, &q, &target, 8).unwrap();
        assert!(fit.error <= 1e-8, "{}", fit.error);
        let zero = runge_approximate(&m, &sets, &q, &GridFunction::zeros(m.grid()), 8).unwrap();
        assert!(zero.f.is_zero() && zero.error == 0.0);
    }

    #[test]
    fn error_non_increasing_in_dimension() {
        let (m, sets) = setup(256);
        let q = Potential::zero(&sets);
        let target = GridFunction::from_fn(m.grid(), |x| bump(x, 0.3, 0.5))
            .restricted(&sets, Support::Omega);
        let errs: Vec<f64> = [2, 4, 8, 16]
            .iter()
            .map(|&d| runge_approximate(&m, &sets, &q, &target, d).unwrap().error)
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{errs:?}");
    }
}
