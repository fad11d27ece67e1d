use std::path::PathBuf;

use frac_calderon::io::ProblemFile;
use frac_calderon_cli::{run, EXIT_INVALID, EXIT_OK};

fn dir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("fcal-verbs-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn cli(args: &[&str]) -> i32 {
    let mut v = vec!["fcal", "--quiet"];
    v.extend_from_slice(args);
    run(v)
}

fn small_problem(d: &std::path::Path) -> String {
    let mut file = ProblemFile::reference();
    file.grid.points = 256;
    let path = d.join("problem.toml");
    std::fs::write(&path, file.to_toml()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn init_writes_a_loadable_problem() {
    let d = dir("init");
    let p = d.join("ref.toml");
    assert_eq!(cli(&["init", p.to_str().unwrap()]), EXIT_OK);
    let file = ProblemFile::load(&p).unwrap();
    assert_eq!(file, ProblemFile::reference());
}

#[test]
fn forward_then_reconstruct() {
    let d = dir("fr");
    let p = small_problem(&d);
    let fwd = d.join("fwd.csv");
    let rep = d.join("report.json");
    assert_eq!(cli(&["forward", &p, fwd.to_str().unwrap()]), EXIT_OK);
    let csv = std::fs::read_to_string(&fwd).unwrap();
    assert!(csv.starts_with("x,f,u,g"));
    assert_eq!(cli(&["reconstruct", &p, rep.to_str().unwrap()]), EXIT_OK);
    let json = std::fs::read_to_string(&rep).unwrap();
    assert!(json.contains("\"q_rec\""));
    assert!(!json.contains("wall_time_s"));
}

#[test]
fn malformed_input_is_rejected() {
    let d = dir("bad");
    let p = d.join("bad.toml");
    std::fs::write(&p, "version = 1\nunknown_key = 3\n").unwrap();
    let out = d.join("out.json");
    assert_eq!(
        cli(&["reconstruct", p.to_str().unwrap(), out.to_str().unwrap()]),
        EXIT_INVALID
    );
    assert!(!out.exists());
    assert_eq!(
        cli(&["instability", d.join("i.csv").to_str().unwrap(), "--R", "5"]),
        EXIT_INVALID
    );
}
