//! Discrete fractional Laplacian and fractional Sobolev inner products.
//!
//! Both operators are Fourier multipliers on the periodized box, realized as
//! dense circulant matrices: `|xi|^{2s}` for `(-Δ)^s` and `(1 + |xi|^2)^s`
//! (times the node weight) for the `H^s` Gram matrix.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::{FractionalOrder, GridFunction, SimulationBox};

/// Angular wavenumbers of the discrete frequency lattice, in FFT order.
pub fn wavenumbers(bx: &SimulationBox) -> Vec<f64> {
    let n = bx.points() as i64;
    let period = 2.0 * bx.radius();
    (0..n)
        .map(|k| {
            let signed = if k <= n / 2 { k } else { k - n };
            2.0 * std::f64::consts::PI * signed as f64 / period
        })
        .collect()
}

/// First column of the circulant matrix with the given even symbol.
fn circulant_column(bx: &SimulationBox, symbol: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = bx.points();
    let mut buf: Vec<Complex64> = wavenumbers(bx)
        .into_iter()
        .map(|k| Complex64::new(symbol(k.abs()), 0.0))
        .collect();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf.into_iter().map(|c| c.re / n as f64).collect()
}

fn circulant(bx: &SimulationBox, symbol: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let col = circulant_column(bx, symbol);
    let n = col.len();
    DMatrix::from_fn(n, n, |i, j| col[(i + n - j) % n])
}

/// Dense `H^t` Gram matrix `h * C_t` with `C_t` the multiplier `(1+|xi|^2)^t`.
pub fn sobolev_gram(bx: &SimulationBox, order: f64) -> DMatrix<f64> {
    let w = bx.cell_volume();
    circulant(bx, |k| (1.0 + k * k).powf(order)) * w
}

/// Discrete plane wave `cos(xi x)` with `xi` on the periodic lattice.
pub fn plane_wave(bx: &SimulationBox, mode: usize) -> (f64, GridFunction) {
    let xi = 2.0 * std::f64::consts::PI * mode as f64 / (2.0 * bx.radius());
    (xi, GridFunction::from_fn(bx, |x| (xi * x).cos()))
}

/// Cholesky factor of a region block of the `H^s` Gram matrix.
#[derive(Debug)]
pub struct RegionFactor {
    pub indices: Vec<usize>,
    pub chol: Cholesky<f64, Dyn>,
}

impl RegionFactor {
    /// `dx * L^{-1} h` with `G_r = L L^T`; its Euclidean norm is the dual norm.
    pub fn whiten(&self, h: &DVector<f64>, weight: f64) -> DVector<f64> {
        let mut out = h * weight;
        self.chol.l_dirty().solve_lower_triangular_mut(&mut out);
        out
    }
}

#[derive(Debug)]
pub struct SobolevMachinery {
    bx: SimulationBox,
    order: FractionalOrder,
    frac_lap: DMatrix<f64>,
    gram_hs: DMatrix<f64>,
    dual_cache: RwLock<HashMap<Vec<usize>, Arc<RegionFactor>>>,
}

impl SobolevMachinery {
    pub fn new(bx: &SimulationBox, order: FractionalOrder) -> Self {
        let s = order.value();
        Self {
            bx: *bx,
            order,
            frac_lap: circulant(bx, |k| k.powf(2.0 * s)),
            gram_hs: sobolev_gram(bx, s),
            dual_cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn grid(&self) -> &SimulationBox {
        &self.bx
    }

    pub fn order(&self) -> FractionalOrder {
        self.order
    }

    /// Dense matrix `A ≈ (-Δ)^s`.
    pub fn frac_lap(&self) -> &DMatrix<f64> {
        &self.frac_lap
    }

    /// Dense `H^s` Gram matrix.
    pub fn gram_hs(&self) -> &DMatrix<f64> {
        &self.gram_hs
    }

    /// Diagonal entry of the L2 mass matrix.
    pub fn mass(&self) -> f64 {
        self.bx.cell_volume()
    }

    pub fn fraclap_apply(&self, u: &GridFunction) -> Result<GridFunction> {
        u.ensure_same_box(&self.bx)?;
        let v = &self.frac_lap * DVector::from_column_slice(u.values());
        GridFunction::from_values(&self.bx, v.as_slice().to_vec())
    }

    /// Rows `rows`, columns `cols` of `A`.
    pub fn frac_lap_block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        block(&self.frac_lap, rows, cols)
    }

    pub fn gram_block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        block(&self.gram_hs, rows, cols)
    }

    pub fn hs_inner(&self, u: &GridFunction, v: &GridFunction) -> Result<f64> {
        u.ensure_same_box(&self.bx)?;
        v.ensure_same_box(&self.bx)?;
        let u = DVector::from_column_slice(u.values());
        let v = DVector::from_column_slice(v.values());
        Ok(u.dot(&(&self.gram_hs * v)))
    }

    pub fn hs_norm(&self, u: &GridFunction) -> Result<f64> {
        Ok(self.hs_inner(u, u)?.max(0.0).sqrt())
    }

    /// Cached Cholesky factor of the Gram block on `region`.
    pub fn region_factor(&self, region: &[usize]) -> Result<Arc<RegionFactor>> {
        if region.is_empty() {
            return Err(Error::InvalidRegion("empty region for dual norm".into()));
        }
        if let Some(f) = self.dual_cache.read().expect("cache poisoned").get(region) {
            return Ok(f.clone());
        }
        let g = self.gram_block(region, region);
        let chol = Cholesky::new(g).ok_or_else(|| {
            Error::Factorization("H^s Gram block is not positive definite".into())
        })?;
        let factor = Arc::new(RegionFactor {
            indices: region.to_vec(),
            chol,
        });
        self.dual_cache
            .write()
            .expect("cache poisoned")
            .entry(region.to_vec())
            .or_insert_with(|| factor.clone());
        Ok(factor)
    }

    /// `H^{-s}(region)` norm of `h` (values read on `region` only), the dual
    /// of the region-supported `H^s` norm under the L2 pairing.
    pub fn hminus_s_norm(&self, h: &GridFunction, region: &[usize]) -> Result<f64> {
        h.ensure_same_box(&self.bx)?;
        let factor = self.region_factor(region)?;
        let hr = DVector::from_vec(h.gather(region));
        Ok(factor.whiten(&hr, self.mass()).norm())
    }

    /// Region-supported maximizer of `(h, φ)_{L2} / ‖φ‖_{H^s}`, scaled so that
    /// `‖φ‖_{H^s} = 1` (zero when `h` vanishes on the region).
    pub fn dual_maximizer(&self, h: &GridFunction, region: &[usize]) -> Result<GridFunction> {
        let factor = self.region_factor(region)?;
        let hr = DVector::from_vec(h.gather(region)) * self.mass();
        let phi = factor.chol.solve(&hr);
        let norm = phi.dot(&(self.gram_block(region, region) * &phi)).sqrt();
        let scaled: Vec<f64> = if norm > 0.0 {
            phi.iter().map(|v| v / norm).collect()
        } else {
            vec![0.0; region.len()]
        };
        GridFunction::scatter(&self.bx, region, &scaled)
    }
}

pub(crate) fn block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn machinery(points: usize, s: f64) -> SobolevMachinery {
        let bx = SimulationBox::new(16.0, points, 1).unwrap();
        SobolevMachinery::new(&bx, FractionalOrder::new(s).unwrap())
    }

    #[test]
    fn frac_lap_is_symmetric_and_psd() {
        let m = machinery(128, 0.5);
        let a = m.frac_lap();
        let amax = a.amax();
        let asym = (a - a.transpose()).amax();
        assert!(asym <= 1e-12 * amax, "asymmetry {asym}");
        let eig = a.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() > -1e-10 * amax);
        assert!(Cholesky::new(m.gram_hs().clone()).is_some());
    }

    #[test]
    fn plane_waves_are_eigenvectors() {
        for &s in &[0.25, 0.5, 0.75] {
            let m = machinery(256, s);
            for mode in [1usize, 7, 40] {
                let (xi, w) = plane_wave(m.grid(), mode);
                let aw = m.fraclap_apply(&w).unwrap();
                let expect = xi.powf(2.0 * s);
                for (a, b) in aw.values().iter().zip(w.values()) {
                    assert!((a - expect * b).abs() <= 1e-10 * expect.max(1.0));
                }
                let l2 = w.l2_norm(None).powi(2);
                let hs = m.hs_inner(&w, &w).unwrap();
                let want = (1.0 + xi * xi).powf(s) * l2;
                assert!((hs - want).abs() <= 1e-10 * want);
            }
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let m = machinery(64, 0.5);
        let z = GridFunction::zeros(m.grid());
        assert!(m.fraclap_apply(&z).unwrap().is_zero());
        let w = plane_wave(m.grid(), 3).1;
        assert_eq!(m.hs_inner(&z, &w).unwrap(), 0.0);
        let all: Vec<usize> = (0..64).collect();
        assert_eq!(m.hminus_s_norm(&z, &all).unwrap(), 0.0);
    }

    #[test]
    fn small_order_gram_tends_to_mass() {
        let m = machinery(64, 1e-9);
        let g = m.gram_hs();
        let mass = m.mass();
        let diff = (g - DMatrix::identity(64, 64) * mass).amax();
        assert!(diff < 1e-8 * mass);
    }

    #[test]
    fn dual_norm_of_plane_wave_on_whole_box() {
        let m = machinery(128, 0.5);
        let all: Vec<usize> = (0..128).collect();
        let (xi, w) = plane_wave(m.grid(), 5);
        let got = m.hminus_s_norm(&w, &all).unwrap();
        let want = w.l2_norm(None) / (1.0 + xi * xi).powf(0.25);
        assert!((got - want).abs() < 1e-10 * want);
    }

    #[test]
    fn box_mismatch_is_rejected() {
        let m = machinery(64, 0.5);
        let other = SimulationBox::new(8.0, 64, 1).unwrap();
        let u = GridFunction::zeros(&other);
        assert!(matches!(m.fraclap_apply(&u), Err(Error::BoxMismatch)));
        assert!(m.hs_inner(&u, &u).is_err());
    }

    #[test]
    fn empty_region_dual_norm_errors() {
        let m = machinery(64, 0.5);
        let z = GridFunction::zeros(m.grid());
        assert!(m.hminus_s_norm(&z, &[]).is_err());
    }

    #[test]
    fn dual_maximizer_attains_the_norm() {
        let m = machinery(128, 0.5);
        let region: Vec<usize> = (80..100).collect();
        let h = GridFunction::from_fn(m.grid(), |x| (3.0 * x).sin() + 0.2 * x);
        let phi = m.dual_maximizer(&h, &region).unwrap();
        let pairing: f64 = region
            .iter()
            .map(|&j| h.values()[j] * phi.values()[j])
            .sum::<f64>()
            * m.mass();
        let norm = m.hminus_s_norm(&h, &region).unwrap();
        assert!((m.hs_norm(&phi).unwrap() - 1.0).abs() < 1e-10);
        assert!((pairing - norm).abs() < 1e-10 * norm);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn cauchy_schwarz_for_dual_pairing(
            hv in proptest::collection::vec(-1.0f64..1.0, 20),
            pv in proptest::collection::vec(-1.0f64..1.0, 20),
        ) {
            let m = machinery(128, 0.5);
            let region: Vec<usize> = (90..110).collect();
            let h = GridFunction::scatter(m.grid(), &region, &hv).unwrap();
            let phi = GridFunction::scatter(m.grid(), &region, &pv).unwrap();
            let pairing: f64 = hv.iter().zip(&pv).map(|(a, b)| a * b).sum::<f64>() * m.mass();
            let bound = m.hminus_s_norm(&h, &region).unwrap() * m.hs_norm(&phi).unwrap();
            prop_assert!(pairing.abs() <= bound * (1.0 + 1e-12) + 1e-15);
        }

        #[test]
        fn hs_inner_symmetric_positive(
            uv in proptest::collection::vec(-1.0f64..1.0, 64),
            wv in proptest::collection::vec(-1.0f64..1.0, 64),
        ) {
            let m = machinery(64, 0.4);
            let u = GridFunction::from_values(m.grid(), uv).unwrap();
            let w = GridFunction::from_values(m.grid(), wv).unwrap();
            let a = m.hs_inner(&u, &w).unwrap();
            let b = m.hs_inner(&w, &u).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            prop_assert!(m.hs_inner(&u, &u).unwrap() >= m.mass() * u.values().iter().map(|x| x * x).sum::<f64>() * (1.0 - 1e-10));
        }
    }
}
