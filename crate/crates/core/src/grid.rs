//! Truncated computational box, region index sets and grid functions.
//!
//! The box `[-R, R]` carries `N` cell-centered nodes `x_j = -R + (j + 1/2) h`
//! with `h = 2R / N`, so no node ever sits on a region boundary that is
//! aligned with the cell faces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible number of nodes per axis.
pub const MIN_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationBox {
    radius: f64,
    points: usize,
    dimension: usize,
}

impl SimulationBox {
    /// Build a box `[-radius, radius]^n`. Only `n = 1` is supported.
    pub fn new(radius: f64, points: usize, dimension: usize) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "radius must be positive, got {radius}"
            )));
        }
        if !points.is_power_of_two() || points < MIN_POINTS {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= {MIN_POINTS}, got {points}"
            )));
        }
        if dimension != 1 {
            return Err(Error::InvalidGrid(format!(
                "only dimension 1 is supported, got {dimension}"
            )));
        }
        Ok(Self {
            radius,
            points,
            dimension,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.radius / self.points as f64
    }

    /// Quadrature weight of one node (`h^n`).
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dimension as i32)
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dimension as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, j: usize) -> f64 {
        -self.radius + (j as f64 + 0.5) * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points).map(|j| self.node(j)).collect()
    }

    /// Same box refined by a factor of two.
    pub fn refined(&self) -> Self {
        Self {
            points: self.points * 2,
            ..*self
        }
    }
}

/// A finite union of open intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub intervals: Vec<(f64, f64)>,
}

impl Region {
    pub fn new(intervals: Vec<(f64, f64)>) -> Self {
        Self { intervals }
    }

    pub fn interval(a: f64, b: f64) -> Self {
        Self {
            intervals: vec![(a, b)],
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a < x && x < b)
    }

    fn validate(&self, name: &str, bx: &SimulationBox) -> Result<()> {
        if self.intervals.is_empty() {
            return Err(Error::InvalidRegion(format!("{name} has no intervals")));
        }
        let r = bx.radius();
        for &(a, b) in &self.intervals {
            if !(a.is_finite() && b.is_finite()) || a >= b {
                return Err(Error::InvalidRegion(format!(
                    "{name}: interval ({a}, {b}) is malformed"
                )));
            }
            if a < -r || b > r {
                return Err(Error::InvalidRegion(format!(
                    "{name}: interval ({a}, {b}) leaves the box [-{r}, {r}]"
                )));
            }
        }
        Ok(())
    }

    /// Distance between the closures of two regions (zero when they touch).
    pub fn distance(&self, other: &Region) -> f64 {
        let mut best = f64::INFINITY;
        for &(a, b) in &self.intervals {
            for &(c, d) in &other.intervals {
                let gap = if b < c {
                    c - b
                } else if d < a {
                    a - d
                } else {
                    0.0
                };
                best = best.min(gap);
            }
        }
        best
    }

    /// Hull `[min a, max b]` of the intervals.
    pub fn hull(&self) -> (f64, f64) {
        let lo = self
            .intervals
            .iter()
            .map(|i| i.0)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .intervals
            .iter()
            .map(|i| i.1)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    fn indices(&self, bx: &SimulationBox) -> Vec<usize> {
        (0..bx.points())
            .filter(|&j| self.contains(bx.node(j)))
            .collect()
    }
}

/// Which region a grid function is known to be supported in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Support {
    Omega,
    W1,
    W2,
    Exterior,
}

/// Node index sets of the inverse-problem geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSets {
    pub omega: Vec<usize>,
    pub w1: Vec<usize>,
    pub w2: Vec<usize>,
    pub exterior: Vec<usize>,
    /// Smallest distance between an omega node and a W1 node.
    pub gap: f64,
    pub omega_region: Region,
    pub w1_region: Region,
    pub w2_region: Region,
    in_omega: Vec<bool>,
}

impl IndexSets {
    pub fn build(bx: &SimulationBox, omega: &Region, w1: &Region, w2: &Region) -> Result<Self> {
        omega.validate("omega", bx)?;
        w1.validate("W1", bx)?;
        w2.validate("W2", bx)?;
        if omega.distance(w1) <= 0.0 {
            return Err(Error::Overlap("closures of omega and W1 intersect".into()));
        }
        if omega.distance(w2) <= 0.0 {
            return Err(Error::Overlap("closures of omega and W2 intersect".into()));
        }
        let omega_idx = omega.indices(bx);
        let w1_idx = w1.indices(bx);
        let w2_idx = w2.indices(bx);
        for (name, idx) in [("omega", &omega_idx), ("W1", &w1_idx), ("W2", &w2_idx)] {
            if idx.is_empty() {
                return Err(Error::InvalidRegion(format!(
                    "{name} contains no grid nodes"
                )));
            }
        }
        let mut in_omega = vec![false; bx.points()];
        for &j in &omega_idx {
            in_omega[j] = true;
        }
        let exterior: Vec<usize> = (0..bx.points()).filter(|&j| !in_omega[j]).collect();
        let gap = omega_idx
            .iter()
            .flat_map(|&i| w1_idx.iter().map(move |&j| (bx.node(i) - bx.node(j)).abs()))
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            omega: omega_idx,
            w1: w1_idx,
            w2: w2_idx,
            exterior,
            gap,
            omega_region: omega.clone(),
            w1_region: w1.clone(),
            w2_region: w2.clone(),
            in_omega,
        })
    }

    pub fn is_omega(&self, j: usize) -> bool {
        self.in_omega[j]
    }

    pub fn indices(&self, support: Support) -> &[usize] {
        match support {
            Support::Omega => &self.omega,
            Support::W1 => &self.w1,
            Support::W2 => &self.w2,
            Support::Exterior => &self.exterior,
        }
    }
}

/// Real function sampled on every node of a box.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
    bx: SimulationBox,
    support: Option<Support>,
}

impl GridFunction {
    pub fn zeros(bx: &SimulationBox) -> Self {
        Self {
            values: vec![0.0; bx.len()],
            bx: *bx,
            support: None,
        }
    }

    pub fn from_values(bx: &SimulationBox, values: Vec<f64>) -> Result<Self> {
        if values.len() != bx.len() {
            return Err(Error::Shape {
                expected: bx.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            values,
            bx: *bx,
            support: None,
        })
    }

    pub fn from_fn(bx: &SimulationBox, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: bx.nodes().into_iter().map(f).collect(),
            bx: *bx,
            support: None,
        }
    }

    /// Zero extension of `values` given on `indices`.
    pub fn scatter(bx: &SimulationBox, indices: &[usize], values: &[f64]) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Shape {
                expected: indices.len(),
                got: values.len(),
            });
        }
        let mut out = Self::zeros(bx);
        for (&j, &v) in indices.iter().zip(values) {
            out.values[j] = v;
        }
        Ok(out)
    }

    /// Zero everything outside `support` and tag the result.
    pub fn restricted(&self, sets: &IndexSets, support: Support) -> Self {
        let mut out = Self::zeros(&self.bx);
        for &j in sets.indices(support) {
            out.values[j] = self.values[j];
        }
        out.support = Some(support);
        out
    }

    pub fn with_support(mut self, support: Support) -> Self {
        self.support = Some(support);
        self
    }

    pub fn support(&self) -> Option<Support> {
        self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn grid(&self) -> &SimulationBox {
        &self.bx
    }

    pub fn gather(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&j| self.values[j]).collect()
    }

    pub fn ensure_same_box(&self, bx: &SimulationBox) -> Result<()> {
        if &self.bx != bx {
            return Err(Error::BoxMismatch);
        }
        Ok(())
    }

    /// Discrete L2 norm over `indices` (all nodes when `None`).
    pub fn l2_norm(&self, indices: Option<&[usize]>) -> f64 {
        let w = self.bx.cell_volume();
        let sum: f64 = match indices {
            Some(idx) => idx.iter().map(|&j| self.values[j].powi(2)).sum(),
            None => self.values.iter().map(|v| v * v).sum(),
        };
        (sum * w).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &GridFunction, b: f64) -> Result<GridFunction> {
        other.ensure_same_box(&self.bx)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(GridFunction {
            values,
            bx: self.bx,
            support: None,
        })
    }
}

/// Fractional order `s` in `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct FractionalOrder(f64);

impl FractionalOrder {
    pub fn new(s: f64) -> Result<Self> {
        if s > 0.0 && s < 1.0 {
            Ok(Self(s))
        } else {
            Err(Error::InvalidOrder(s))
        }
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    /// Orders below 1/4 are outside the measurable unique continuation
    /// regime, so discontinuous potentials are not covered there.
    pub fn covers_bounded_potentials(&self) -> bool {
        self.0 >= 0.25
    }
}
