//! wasm-bindgen entry points for the browser demo. Every call returns a JSON
//! string; errors come back as a rejected string.

use std::path::Path;

use frac_calderon::experiments::{instability_geometry, instability_series, spectrum_report};
use frac_calderon::io::{ProblemFile, StopSpec};
use frac_calderon::profile::PotentialProfile;
use frac_calderon::reconstruct::{pipeline_with, InteriorSolver};
use serde_json::json;
use wasm_bindgen::prelude::*;

// dense factorizations are cubic in the node count; keep the page responsive
const MAX_POINTS: usize = 1024;

fn check_points(points: usize) -> Result<(), String> {
    if !(64..=MAX_POINTS).contains(&points) {
        return Err(format!("points must lie in 64..={MAX_POINTS}"));
    }
    Ok(())
}

fn problem(points: usize, s: f64) -> ProblemFile {
    let mut file = ProblemFile::reference();
    file.grid.points = points;
    file.s = s;
    file
}

pub fn spectrum(points: usize, s: f64) -> Result<String, String> {
    check_points(points)?;
    let p = problem(points, s)
        .build(Path::new("."))
        .map_err(|e| e.to_string())?;
    let solver = InteriorSolver::new(&p.m, &p.sets).map_err(|e| e.to_string())?;
    let rep = spectrum_report(solver.svd());
    let sigma: Vec<f64> = rep.rows.iter().map(|r| r.sigma).collect();
    Ok(json!({
        "sigma": sigma,
        "rank": rep.numerical_rank,
        "slope": rep.fit.slope,
    })
    .to_string())
}

pub fn reconstruct(
    points: usize,
    s: f64,
    amplitude: f64,
    width: f64,
    noise: f64,
    scheme: &str,
    seed: u64,
) -> Result<String, String> {
    check_points(points)?;
    let mut file = problem(points, s);
    file.q = Some(PotentialProfile::Bump {
        amplitude,
        center: 0.0,
        width,
    });
    file.noise.level = noise;
    file.noise.seed = seed;
    file.scheme.name = scheme
        .parse()
        .map_err(|e: frac_calderon::Error| e.to_string())?;
    if noise > 0.0 {
        file.scheme.stop_rule = StopSpec::Discrepancy;
    }
    let run = || -> frac_calderon::Result<String> {
        let p = file.build(Path::new("."))?;
        let rec = p.measurement()?;
        let cfg = p.regularizer(&rec)?;
        let solver = InteriorSolver::new(&p.m, &p.sets)?;
        let report = pipeline_with(&solver, &rec, &cfg, file.tau, false)?;
        let q_true =
            p.q.as_ref()
                .map(|q| q.values().to_vec())
                .unwrap_or_default();
        let x: Vec<f64> = p.sets.omega.iter().map(|&j| p.m.grid().node(j)).collect();
        Ok(json!({
            "x": x,
            "q_true": q_true,
            "q_rec": report.q_rec,
            "alpha": report.alpha,
            "q_error": report.q_error(&q_true),
            "mask_fraction": report.mask_fraction,
            "warnings": report.warnings,
        })
        .to_string())
    };
    run().map_err(|e| e.to_string())
}

pub fn instability(radius: f64, k_max: usize, points: usize) -> Result<String, String> {
    if !(512..=4096).contains(&points) {
        return Err("points must lie in 512..=4096".into());
    }
    let (m, sets) = instability_geometry(radius, 0.5, points, (radius + 12.0).max(32.0))
        .map_err(|e| e.to_string())?;
    let series = instability_series(&m, &sets, k_max).map_err(|e| e.to_string())?;
    Ok(json!({
        "k": series.k_values,
        "hk": series.hk_norms,
        "slope": series.decay_fit.slope,
    })
    .to_string())
}

#[wasm_bindgen(js_name = spectrum)]
pub fn spectrum_js(points: usize, s: f64) -> Result<String, JsValue> {
    spectrum(points, s).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = reconstruct)]
pub fn reconstruct_js(
    points: usize,
    s: f64,
    amplitude: f64,
    width: f64,
    noise: f64,
    scheme: &str,
    seed: u32,
) -> Result<String, JsValue> {
    reconstruct(points, s, amplitude, width, noise, scheme, seed as u64)
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = instability)]
pub fn instability_js(radius: f64, k_max: usize, points: usize) -> Result<String, JsValue> {
    instability(radius, k_max, points).map_err(|e| JsValue::from_str(&e))
}
