use std::path::PathBuf;

use frac_calderon::experiments::spectrum_report;
use frac_calderon::io::{fmt_f64, CsvTable, MeasurementSpec, ProblemFile, ReportFile};
use frac_calderon::reconstruct::{full_pipeline, InteriorSolver};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fcal-core-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn small_reference() -> ProblemFile {
    let mut file = ProblemFile::reference();
    file.grid.points = 256;
    file
}

#[test]
fn reference_problem_reconstructs_and_round_trips() {
    let file = small_reference();
    let problem = file.build(&scratch("ref")).unwrap();
    let rec = problem.measurement().unwrap();
    let cfg = problem.regularizer(&rec).unwrap();
    let report = full_pipeline(&problem.m, &problem.sets, &rec, &cfg, file.tau).unwrap();

    let q_true = problem.q.as_ref().unwrap().values().to_vec();
    let err = report.q_error(&q_true);
    assert!(err < 0.05, "q error {err}");
    assert!(report.mask_fraction <= 0.05);

    let out = ReportFile::new(&problem, &rec, &report);
    let json = out.to_json();
    let back = ReportFile::from_json(&json).unwrap();
    assert_eq!(back.to_json(), json);
    assert_eq!(back.config_hash, file.config_hash());
}

#[test]
fn measurement_file_matches_synthetic_path() {
    let dir = scratch("meas");
    let file = small_reference();
    let problem = file.build(&dir).unwrap();
    let rec = problem.measurement().unwrap();

    let mut table = CsvTable::new(&["x", "g"]);
    for &j in &problem.sets.w2 {
        table.row(vec![
            fmt_f64(problem.m.grid().node(j)),
            fmt_f64(rec.g.values()[j]),
        ]);
    }
    std::fs::write(dir.join("g.csv"), table.render()).unwrap();

    let mut measured = file.clone();
    measured.q = None;
    measured.measurement = Some(MeasurementSpec {
        file: "g.csv".into(),
    });
    let text = measured.to_toml();
    let reparsed = ProblemFile::parse(&text).unwrap();
    let from_file = reparsed.build(&dir).unwrap();
    let rec_file = from_file.measurement().unwrap();
    let diff = rec
        .g
        .values()
        .iter()
        .zip(rec_file.g.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff <= 1e-15 * rec.g.max_abs(), "round trip {diff}");

    let cfg = problem.regularizer(&rec).unwrap();
    let a = full_pipeline(&problem.m, &problem.sets, &rec, &cfg, file.tau).unwrap();
    let b = full_pipeline(&from_file.m, &from_file.sets, &rec_file, &cfg, file.tau).unwrap();
    for (x, y) in a.q_rec.iter().zip(&b.q_rec) {
        match (x, y) {
            (Some(x), Some(y)) => assert!((x - y).abs() < 1e-8 * x.abs().max(1.0)),
            (None, None) => {}
            _ => panic!("masks differ"),
        }
    }
}

#[test]
fn singular_values_decay_geometrically() {
    let problem = small_reference().build(&scratch("svd")).unwrap();
    let solver = InteriorSolver::new(&problem.m, &problem.sets).unwrap();
    let spec = spectrum_report(solver.svd());
    assert!(spec.numerical_rank >= 10);
    assert!(spec.fit.slope < 0.0 && spec.fit.r2 > 0.9, "{:?}", spec.fit);
    assert!(spec.rows.windows(2).all(|w| w[1].sigma <= w[0].sigma));
}
