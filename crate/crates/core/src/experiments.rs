//! Spectrum of `L`, the logarithmic-stability sweep and the instability
//! series built from Dirichlet eigenfunctions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::bump;
use crate::grid::{FractionalOrder, GridFunction, IndexSets, Region, SimulationBox, Support};
use crate::reconstruct::{noise_dual_norm, InteriorSolver};
use crate::sobolev::{sobolev_gram, SobolevMachinery};
use crate::ucp::{RegularizerConfig, StopRule, UcpSvd, DISCREPANCY_FACTOR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y ≈ intercept + slope · x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    LinearFit {
        slope,
        intercept,
        r2,
    }
}

// ---------------------------------------------------------------- spectrum

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub j: usize,
    pub sigma: f64,
    pub log10_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub rows: Vec<SpectrumRow>,
    /// Fit of `ln σ_j` against `j` over `j = 1..=min(20, rank)`.
    pub fit: LinearFit,
    pub fit_range: (usize, usize),
    pub numerical_rank: usize,
}

pub const SPECTRUM_FIT_MAX: usize = 20;

pub fn spectrum_report(svd: &UcpSvd) -> SpectrumReport {
    let rows: Vec<SpectrumRow> = svd
        .sigmas
        .iter()
        .enumerate()
        .map(|(i, &s)| SpectrumRow {
            j: i + 1,
            sigma: s,
            log10_sigma: s.log10(),
        })
        .collect();
    let upper = SPECTRUM_FIT_MAX
        .min(svd.numerical_rank)
        .max(2.min(rows.len()));
    let xs: Vec<f64> = (1..=upper).map(|j| j as f64).collect();
    let ys: Vec<f64> = svd.sigmas[..upper].iter().map(|s| s.ln()).collect();
    SpectrumReport {
        rows,
        fit: linear_fit(&xs, &ys),
        fit_range: (1, upper),
        numerical_rank: svd.numerical_rank,
    }
}

// ------------------------------------------------------------- instability

/// `v_k = sin(kπ(x − a)/(b − a))` on the single omega interval `(a, b)`,
/// normalized to unit discrete `L²(Ω)` norm and zero outside Ω.
pub fn dirichlet_eigenfunctions(
    m: &SobolevMachinery,
    sets: &IndexSets,
    k_max: usize,
) -> Result<Vec<GridFunction>> {
    let [(a, b)] = sets.omega_region.intervals.as_slice() else {
        return Err(Error::Geometry("omega must be a single interval".into()));
    };
    let (a, b) = (*a, *b);
    (1..=k_max)
        .map(|k| {
            let w = k as f64 * std::f64::consts::PI / (b - a);
            let v = GridFunction::from_fn(m.grid(), |x| (w * (x - a)).sin())
                .restricted(sets, Support::Omega);
            let n = v.l2_norm(Some(&sets.omega));
            Ok(
                GridFunction::from_values(m.grid(), v.values().iter().map(|x| x / n).collect())?
                    .with_support(Support::Omega),
            )
        })
        .collect()
}

/// Smallest shell radius for which the series argument applies.
pub const INSTABILITY_MIN_RADIUS: f64 = 13.0;

/// `Ω = (−1, 1)`, `W1 = W2 = {R − 1 < |x| < R}` in a box of radius `box_radius`.
pub fn instability_geometry(
    shell_radius: f64,
    s: f64,
    points: usize,
    box_radius: f64,
) -> Result<(SobolevMachinery, IndexSets)> {
    if !(shell_radius >= INSTABILITY_MIN_RADIUS) {
        return Err(Error::Geometry(format!(
            "shell radius R = {shell_radius} must be at least {INSTABILITY_MIN_RADIUS} so that the \
             expansion ratio of the kernel stays below 1/2"
        )));
    }
    if !(box_radius > shell_radius) {
        return Err(Error::Geometry(format!(
            "box radius {box_radius} must exceed the shell radius {shell_radius}"
        )));
    }
    let bx = SimulationBox::new(box_radius, points, 1)?;
    let m = SobolevMachinery::new(&bx, FractionalOrder::new(s)?);
    let shell = Region::new(vec![
        (-shell_radius, -(shell_radius - 1.0)),
        (shell_radius - 1.0, shell_radius),
    ]);
    let sets = IndexSets::build(&bx, &Region::interval(-1.0, 1.0), &shell, &shell)?;
    Ok((m, sets))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilitySeries {
    pub k_values: Vec<usize>,
    /// `‖v_k‖_{L²(Ω)}`, one per `k`.
    pub vk_norms: Vec<f64>,
    pub hk_norms: Vec<f64>,
    /// Fit of `ln ‖h_k‖` against `k` over `k ∈ [2, k_max]`.
    pub decay_fit: LinearFit,
    /// `max_k ‖h_k‖ 2^k` over the fit range.
    pub max_scaled: f64,
    /// `‖h_{k+1}‖ / ‖h_k‖`.
    pub ratios: Vec<f64>,
}

pub fn instability_series(
    m: &SobolevMachinery,
    sets: &IndexSets,
    k_max: usize,
) -> Result<InstabilitySeries> {
    if k_max < 3 {
        return Err(Error::Config("k_max must be at least 3".into()));
    }
    let vs = dirichlet_eigenfunctions(m, sets, k_max)?;
    let mut hk_norms = Vec::with_capacity(k_max);
    let mut vk_norms = Vec::with_capacity(k_max);
    for v in &vs {
        vk_norms.push(v.l2_norm(Some(&sets.omega)));
        let h = m.fraclap_apply(v)?;
        // guard against an exact numerical zero
        hk_norms.push(m.hminus_s_norm(&h, &sets.w2)?.max(1e-300));
    }
    let k_values: Vec<usize> = (1..=k_max).collect();
    let xs: Vec<f64> = (2..=k_max).map(|k| k as f64).collect();
    let ys: Vec<f64> = hk_norms[1..].iter().map(|h| h.ln()).collect();
    let max_scaled = (2..=k_max)
        .map(|k| hk_norms[k - 1] * 2f64.powi(k as i32))
        .fold(0.0, f64::max);
    let ratios = hk_norms.windows(2).map(|w| w[1] / w[0]).collect();
    Ok(InstabilitySeries {
        k_values,
        vk_norms,
        hk_norms,
        decay_fit: linear_fit(&xs, &ys),
        max_scaled,
        ratios,
    })
}

// --------------------------------------------------------------- stability

#[derive(Debug, Clone, PartialEq)]
pub struct SweepParams {
    /// Relative noise levels `η`; noise deviation is `η ‖L v‖_∞`.
    pub noise_levels: Vec<f64>,
    /// Trials per level, used in antithetic pairs.
    pub trials: usize,
    pub s_prime: f64,
    pub seed: u64,
}

impl SweepParams {
    /// Decades `10⁻²…10⁻⁸`, 8 trials, `s' = 1/4`.
    pub fn standard(seed: u64) -> Self {
        Self {
            noise_levels: (2..=8).map(|k| 10f64.powi(-k)).collect(),
            trials: 8,
            s_prime: 0.25,
            seed,
        }
    }
}

/// Smooth reference interior function used by the sweep.
pub fn sweep_truth(m: &SobolevMachinery, sets: &IndexSets) -> GridFunction {
    GridFunction::from_fn(m.grid(), |x| bump(x, 0.1, 0.8)).restricted(sets, Support::Omega)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogModelFit {
    pub c: f64,
    pub sigma: f64,
    /// Residual sum of squares in `ln error`.
    pub rss: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub c: f64,
    pub p: f64,
    pub rss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySweep {
    pub noise_levels: Vec<f64>,
    /// Mean `H^{s'}` error per level.
    pub recon_errors: Vec<f64>,
    /// Per level, per trial.
    pub trial_errors: Vec<Vec<f64>>,
    /// Error with exact data.
    pub exact_error: f64,
    pub energy: f64,
    pub s_prime: f64,
    pub seed: u64,
    pub fitted_modulus: LogModelFit,
    pub power_fit: PowerFit,
}

/// Stream for `trial`; odd trials reuse the previous draw with flipped sign.
fn trial_noise(seed: u64, trial: usize, n: usize) -> Vec<f64> {
    let base = (trial / 2) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(base);
    let sign = if trial % 2 == 0 { 1.0 } else { -1.0 };
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sign * z
        })
        .collect::<Vec<f64>>()
}

pub fn stability_sweep(
    solver: &InteriorSolver<'_>,
    m: &SobolevMachinery,
    sets: &IndexSets,
    cfg: &RegularizerConfig,
    params: &SweepParams,
) -> Result<StabilitySweep> {
    let s = m.order().value();
    if !(params.s_prime < s && params.s_prime >= 0.0) {
        return Err(Error::Config(format!(
            "s' = {} must lie in [0, s = {s})",
            params.s_prime
        )));
    }
    if params.trials == 0 || params.noise_levels.is_empty() {
        return Err(Error::Config("sweep needs trials and noise levels".into()));
    }
    if params.noise_levels.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Config("noise levels must be positive".into()));
    }
    let op = solver.operator();
    let v_true = sweep_truth(m, sets);
    let energy = m.hs_norm(&v_true)?;
    let h_true = op.apply(&v_true)?;
    let scale = h_true.max_abs();
    let w = op.window().to_vec();
    let omega = op.omega().to_vec();
    let gram_sp = sobolev_gram(m.grid(), params.s_prime);
    let gram_o = crate::sobolev::block(&gram_sp, &omega, &omega);
    let error_of = |v: &GridFunction| -> f64 {
        let d = nalgebra::DVector::from_iterator(
            omega.len(),
            omega.iter().map(|&j| v.values()[j] - v_true.values()[j]),
        );
        d.dot(&(&gram_o * &d)).max(0.0).sqrt()
    };

    let exact = solver.recover(&h_true, cfg)?;
    let exact_error = error_of(&exact.v);

    let noises: Vec<Vec<f64>> = (0..params.trials)
        .map(|t| trial_noise(params.seed, t, w.len()))
        .collect();
    let mut trial_errors = Vec::with_capacity(params.noise_levels.len());
    for &eta in &params.noise_levels {
        let sigma = eta * scale;
        let noise_norm = noise_dual_norm(m, &w, sigma)?;
        let level_cfg = cfg.clone().with_stop_rule(StopRule::Discrepancy {
            noise_norm,
            factor: DISCREPANCY_FACTOR,
        });
        let errs: Result<Vec<f64>> = noises
            .par_iter()
            .map(|z| {
                let mut h = h_true.clone();
                for (&j, zi) in w.iter().zip(z) {
                    h.values_mut()[j] += sigma * zi;
                }
                let rec = solver.recover(&h, &level_cfg)?;
                Ok(error_of(&rec.v))
            })
            .collect();
        trial_errors.push(errs?);
    }
    let recon_errors: Vec<f64> = trial_errors
        .iter()
        .map(|e| e.iter().sum::<f64>() / e.len() as f64)
        .collect();
    let fitted_modulus = fit_log_model(&params.noise_levels, &recon_errors, energy);
    let power_fit = fit_power_law(&params.noise_levels, &recon_errors);
    Ok(StabilitySweep {
        noise_levels: params.noise_levels.clone(),
        recon_errors,
        trial_errors,
        exact_error,
        energy,
        s_prime: params.s_prime,
        seed: params.seed,
        fitted_modulus,
        power_fit,
    })
}

/// `error ≈ C ηᵖ`, least squares in log-log.
pub fn fit_power_law(eta: &[f64], err: &[f64]) -> PowerFit {
    let xs: Vec<f64> = eta.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let fit = linear_fit(&xs, &ys);
    let rss = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - fit.intercept - fit.slope * x).powi(2))
        .sum();
    PowerFit {
        c: fit.intercept.exp(),
        p: fit.slope,
        rss,
    }
}

/// `error ≈ C E / ln(C E / η)^σ`, fitted in `ln error`. For fixed `C` the
/// problem is linear in `σ`; `ln C` is found by a scan and golden-section
/// refinement of the profile residual.
pub fn fit_log_model(eta: &[f64], err: &[f64], energy: f64) -> LogModelFit {
    let le: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let profile = |lc: f64| -> Option<(f64, f64)> {
        let mut ll = Vec::with_capacity(eta.len());
        for &e in eta {
            let z = lc + energy.ln() - e.ln();
            if !(z > 0.0) {
                return None;
            }
            ll.push(z.ln());
        }
        let y: Vec<f64> = le.iter().map(|v| v - lc - energy.ln()).collect();
        let lsq: f64 = ll.iter().map(|v| v * v).sum();
        if lsq == 0.0 {
            return None;
        }
        let sigma = -ll.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / lsq;
        let rss = ll
            .iter()
            .zip(&y)
            .map(|(a, b)| (b + sigma * a).powi(2))
            .sum();
        Some((rss, sigma))
    };
    let (lo, hi, steps) = (-10.0f64, 30.0f64, 4000usize);
    let mut best: Option<(f64, f64, f64)> = None;
    for i in 0..=steps {
        let lc = lo + (hi - lo) * i as f64 / steps as f64;
        if let Some((rss, sigma)) = profile(lc) {
            if best.is_none_or(|(r, _, _)| rss < r) {
                best = Some((rss, lc, sigma));
            }
        }
    }
    let Some((_, lc0, _)) = best else {
        return LogModelFit {
            c: f64::NAN,
            sigma: f64::NAN,
            rss: f64::INFINITY,
            converged: false,
        };
    };
    // golden section on the bracketing cells
    let step = (hi - lo) / steps as f64;
    let (mut a, mut b) = (lc0 - step, lc0 + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let eval = |x: f64| profile(x).map_or(f64::INFINITY, |p| p.0);
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if eval(c) < eval(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let lc = 0.5 * (a + b);
    let (rss, sigma) = match profile(lc) {
        Some(p) if p.0 <= best.expect("checked").0 => p,
        _ => {
            let (r, _, s) = best.expect("checked");
            (r, s)
        }
    };
    // a minimizer on the edge of the scan means the fit ran away
    let converged = lc0 > lo + step && lc0 < hi - step && sigma.is_finite();
    LogModelFit {
        c: lc.exp(),
        sigma,
        rss,
        converged,
    }
}
