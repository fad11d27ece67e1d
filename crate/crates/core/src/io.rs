//! Problem files (TOML), report files (JSON), CSV tables and a small SVG
//! line plot. Every writer goes through [`write_atomic`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::Potential;
use crate::grid::{FractionalOrder, GridFunction, IndexSets, Region, SimulationBox};
use crate::profile::{DatumProfile, PotentialProfile};
use crate::reconstruct::{
    noise_dual_norm, MeasurementRecord, Provenance, ReconstructionReport, TraceEntry, DEFAULT_TAU,
};
use crate::sobolev::SobolevMachinery;
use crate::ucp::{AlphaSchedule, RegularizerConfig, Scheme, StopRule, DISCREPANCY_FACTOR};

pub const PROBLEM_VERSION: u32 = 1;
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub version: u32,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    pub s: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(rename = "box")]
    pub grid: BoxSpec,
    pub omega: RegionSpec,
    pub w1: RegionSpec,
    pub w2: RegionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<PotentialProfile>,
    #[serde(default)]
    pub f: DatumProfile,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub scheme: SchemeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement: Option<MeasurementSpec>,
}

fn default_dimension() -> usize {
    1
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub radius: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub intervals: Vec<[f64; 2]>,
}

impl RegionSpec {
    pub fn region(&self) -> Region {
        Region::new(self.intervals.iter().map(|&[a, b]| (a, b)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoKeyword {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Auto(AutoKeyword),
    List(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopSpec {
    #[default]
    FixedList,
    Discrepancy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    #[serde(default = "default_scheme")]
    pub name: Scheme,
    #[serde(default = "auto_schedule")]
    pub alpha_schedule: ScheduleSpec,
    #[serde(default)]
    pub stop_rule: StopSpec,
}

fn default_scheme() -> Scheme {
    Scheme::Spectral
}

fn auto_schedule() -> ScheduleSpec {
    ScheduleSpec::Auto(AutoKeyword::Auto)
}

impl Default for SchemeSpec {
    fn default() -> Self {
        Self {
            name: default_scheme(),
            alpha_schedule: auto_schedule(),
            stop_rule: StopSpec::FixedList,
        }
    }
}

/// Measured `Λ_q f` on the W2 nodes, read from a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    pub file: String,
}

impl ProblemFile {
    /// The reference configuration: `Ω = (−1, 1)`, `W1 = (2, 3)`,
    /// `W2 = (−8, −1.25) ∪ (1.25, 8)`, smooth `q` of amplitude 2.
    pub fn reference() -> Self {
        Self {
            version: PROBLEM_VERSION,
            dimension: 1,
            s: 0.5,
            tau: DEFAULT_TAU,
            grid: BoxSpec {
                radius: 16.0,
                points: 512,
            },
            omega: RegionSpec {
                intervals: vec![[-1.0, 1.0]],
            },
            w1: RegionSpec {
                intervals: vec![[2.0, 3.0]],
            },
            w2: RegionSpec {
                intervals: vec![[-8.0, -1.25], [1.25, 8.0]],
            },
            q: Some(PotentialProfile::Bump {
                amplitude: 2.0,
                center: 0.0,
                width: 0.5,
            }),
            f: DatumProfile::default(),
            noise: NoiseSpec::default(),
            scheme: SchemeSpec::default(),
            measurement: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("problem file: {e}")))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != PROBLEM_VERSION {
            return Err(Error::Config(format!(
                "unsupported problem file version {} (expected {PROBLEM_VERSION})",
                self.version
            )));
        }
        FractionalOrder::new(self.s)?;
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config("tau must lie in (0, 1)".into()));
        }
        if !(self.noise.level >= 0.0) {
            return Err(Error::Config("noise level must be nonnegative".into()));
        }
        if let Some(q) = &self.q {
            q.validate()?;
        }
        if self.q.is_none() && self.measurement.is_none() {
            return Err(Error::Config(
                "either a potential q (synthetic data) or a measurement file is required".into(),
            ));
        }
        self.regularizer_base().validate()
    }

    /// Canonical serialization; the config hash is taken over these bytes.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("problem file serializes")
    }

    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    fn regularizer_base(&self) -> RegularizerConfig {
        let mut cfg = RegularizerConfig::new(self.scheme.name);
        if let ScheduleSpec::List(v) = &self.scheme.alpha_schedule {
            cfg.alpha_schedule = AlphaSchedule::List(v.clone());
        }
        cfg
    }

    /// Grid, index sets and sampled inputs. Relative file paths are resolved
    /// against `base`.
    pub fn build(&self, base: &Path) -> Result<Problem> {
        self.validate()?;
        let bx = SimulationBox::new(self.grid.radius, self.grid.points, self.dimension)?;
        let m = SobolevMachinery::new(&bx, FractionalOrder::new(self.s)?);
        let sets = IndexSets::build(
            &bx,
            &self.omega.region(),
            &self.w1.region(),
            &self.w2.region(),
        )?;
        let q = match &self.q {
            Some(PotentialProfile::File { path }) => Some(
                PotentialProfile::Samples {
                    values: read_samples(&base.join(path))?,
                }
                .sample(&m, &sets)?,
            ),
            Some(p) => Some(p.sample(&m, &sets)?),
            None => None,
        };
        let f = match &self.f {
            DatumProfile::File { path } => DatumProfile::Samples {
                values: read_samples(&base.join(path))?,
            }
            .sample(&m, &sets)?,
            d => d.sample(&m, &sets)?,
        };
        let measured = match &self.measurement {
            Some(spec) => {
                let values = read_samples(&base.join(&spec.file))?;
                Some(GridFunction::scatter(&bx, &sets.w2, &values)?)
            }
            None => None,
        };
        Ok(Problem {
            file: self.clone(),
            m,
            sets,
            q,
            f,
            measured,
        })
    }
}

pub struct Problem {
    pub file: ProblemFile,
    pub m: SobolevMachinery,
    pub sets: IndexSets,
    pub q: Option<Potential>,
    pub f: GridFunction,
    measured: Option<GridFunction>,
}

impl Problem {
    pub fn seed(&self) -> u64 {
        self.file.noise.seed
    }

    /// Measured data when a file is given, otherwise synthetic data for `q`.
    pub fn measurement(&self) -> Result<MeasurementRecord> {
        match &self.measured {
            Some(g) => MeasurementRecord::new(
                &self.sets,
                self.f.clone(),
                g.clone(),
                self.file.noise.level,
                Provenance::File,
            ),
            None => {
                let q = self.q.as_ref().expect("validated: q or measurement");
                MeasurementRecord::synthetic(
                    &self.m,
                    &self.sets,
                    q,
                    &self.f,
                    self.file.noise.level,
                    self.seed(),
                )
            }
        }
    }

    /// Regularizer for `rec`; the discrepancy level assumes i.i.d. noise of
    /// deviation `level · ‖g‖_∞` on W2.
    pub fn regularizer(&self, rec: &MeasurementRecord) -> Result<RegularizerConfig> {
        let mut cfg = self.file.regularizer_base();
        if self.file.scheme.stop_rule == StopSpec::Discrepancy {
            let sigma = rec.noise_level * rec.g.max_abs();
            cfg.stop_rule = StopRule::Discrepancy {
                noise_norm: noise_dual_norm(&self.m, &self.sets.w2, sigma)?,
                factor: DISCREPANCY_FACTOR,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Numbers from the last column of a CSV file; blank lines, `#` comments and
/// a non-numeric header line are skipped.
pub fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read '{}': {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let last = line.rsplit(',').next().unwrap_or("").trim();
        match last.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if out.is_empty() && i == 0 => continue,
            Err(_) => {
                return Err(Error::Config(format!(
                    "{}:{}: '{last}' is not a number",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

// ------------------------------------------------------------------ report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub radius: f64,
    pub points: usize,
    pub spacing: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub grid: GridMeta,
    pub provenance: Provenance,
    pub scheme: Scheme,
    pub alpha: f64,
    pub tau: f64,
    pub omega_nodes: Vec<f64>,
    pub q_rec: Vec<Option<f64>>,
    pub nodal_mask: Vec<bool>,
    pub mask_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_error: Option<f64>,
    pub u_omega: Vec<f64>,
    pub w2_nodes: Vec<f64>,
    pub h_w2: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl ReportFile {
    pub fn new(problem: &Problem, rec: &MeasurementRecord, report: &ReconstructionReport) -> Self {
        let bx = problem.m.grid();
        let sets = &problem.sets;
        Self {
            version: REPORT_VERSION,
            config_hash: problem.file.config_hash(),
            seed: problem.seed(),
            grid: GridMeta {
                radius: bx.radius(),
                points: bx.points(),
                spacing: bx.spacing(),
                s: problem.file.s,
            },
            provenance: rec.provenance,
            scheme: report.scheme_used.scheme,
            alpha: report.alpha,
            tau: report.tau,
            omega_nodes: sets.omega.iter().map(|&j| bx.node(j)).collect(),
            q_rec: report.q_rec.clone(),
            nodal_mask: report.nodal_mask.clone(),
            mask_fraction: report.mask_fraction,
            q_error: problem.q.as_ref().map(|q| report.q_error(q.values())),
            u_omega: report.u.gather(&sets.omega),
            w2_nodes: sets.w2.iter().map(|&j| bx.node(j)).collect(),
            h_w2: report.h.gather(&sets.w2),
            trace: report.trace.clone(),
            warnings: report.warnings.clone(),
            wall_time_s: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("report file: {e}")))
    }
}

// --------------------------------------------------------------------- csv

/// 17 significant digits, enough to round-trip any double.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    footer: Vec<(String, String)>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.header.len(), "csv row width");
        self.rows.push(cells);
    }

    /// `# key = value` line after the data.
    pub fn footer(&mut self, key: &str, value: impl ToString) {
        self.footer.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        for (k, v) in &self.footer {
            let _ = writeln!(out, "# {k} = {v}");
        }
        out
    }
}

// --------------------------------------------------------------------- svg

/// Single-series line plot with axes, min/max tick labels and titles.
pub fn svg_line_plot(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let (w, h, pad) = (640.0, 420.0, 60.0);
    let finite: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = finite.iter().fold(
        (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        ),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if finite.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let poly: Vec<String> = finite
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect();
    let esc = |s: &str| {
        s.replace('&', "&amp;")
            .replace('<', "&lt;")
            .replace('>', "&gt;")
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{b}" stroke="black"/>"#,
        b = h - pad
    );
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
        poly.join(" ")
    );
    let text = |s: &mut String, x: f64, y: f64, anchor: &str, body: &str| {
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="12" text-anchor="{anchor}">{}</text>"#,
            esc(body)
        );
    };
    text(&mut s, w / 2.0, pad / 2.0, "middle", title);
    text(&mut s, w / 2.0, h - 15.0, "middle", x_label);
    text(&mut s, 15.0, h / 2.0, "start", y_label);
    text(&mut s, pad, h - pad + 16.0, "middle", &format!("{x0:.3}"));
    text(
        &mut s,
        w - pad,
        h - pad + 16.0,
        "middle",
        &format!("{x1:.3}"),
    );
    text(&mut s, pad - 4.0, h - pad, "end", &format!("{y0:.3}"));
    text(&mut s, pad - 4.0, pad + 4.0, "end", &format!("{y1:.3}"));
    s.push_str("</svg>\n");
    s
}

// ------------------------------------------------------------------ writes

/// Write through a sibling temporary file and rename it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("'{}' is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
version = 1
s = 0.5

[box]
radius = 16.0
points = 256

[omega]
intervals = [[-1.0, 1.0]]

[w1]
intervals = [[2.0, 3.0]]

[w2]
intervals = [[-8.0, -1.25], [1.25, 8.0]]

[q]
kind = "piecewise"
breaks = [0.0]
values = [1.0, 2.0]

[scheme]
name = "tikhonov"
alpha_schedule = [1e-2, 1e-4]
stop_rule = "discrepancy"
"#;

    #[test]
    fn problem_round_trip() {
        let p = ProblemFile::parse(SAMPLE).unwrap();
        assert_eq!(p.scheme.name, Scheme::Tikhonov);
        assert_eq!(p.tau, DEFAULT_TAU);
        let again = ProblemFile::parse(&p.to_toml()).unwrap();
        assert_eq!(p, again);
        assert_eq!(p.config_hash(), again.config_hash());
        let r = ProblemFile::reference();
        assert_eq!(ProblemFile::parse(&r.to_toml()).unwrap(), r);
    }

    #[test]
    fn strict_keys_and_version() {
        let extra = SAMPLE.replace("s = 0.5", "s = 0.5\ncolour = 3");
        assert!(ProblemFile::parse(&extra).is_err());
        let bad_q = SAMPLE.replace("breaks = [0.0]", "breaks = [0.0]\nslope = 1");
        assert!(ProblemFile::parse(&bad_q).is_err());
        let v2 = SAMPLE.replace("version = 1", "version = 2");
        assert!(ProblemFile::parse(&v2).is_err());
        let bad_schedule = SAMPLE.replace("[1e-2, 1e-4]", "\"sometimes\"");
        assert!(ProblemFile::parse(&bad_schedule).is_err());
    }

    #[test]
    fn report_json_is_stable() {
        let p = ProblemFile::parse(SAMPLE).unwrap();
        let problem = p.build(Path::new(".")).unwrap();
        let rec = problem.measurement().unwrap();
        let cfg = problem.regularizer(&rec).unwrap();
        let rep = crate::reconstruct::full_pipeline(&problem.m, &problem.sets, &rec, &cfg, p.tau)
            .unwrap();
        let file = ReportFile::new(&problem, &rec, &rep);
        let json = file.to_json();
        let back = ReportFile::from_json(&json).unwrap();
        assert_eq!(back.to_json(), json);
        assert_eq!(back.config_hash, p.config_hash());
    }

    #[test]
    fn csv_and_svg_shapes() {
        let mut t = CsvTable::new(&["k", "v"]);
        t.row(vec!["1".into(), fmt_f64(0.1)]);
        t.footer("slope", -1.5);
        let text = t.render();
        assert_eq!(text, "k,v\n1,1.0000000000000001e-1\n# slope = -1.5\n");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
        let svg = svg_line_plot("t", "x", "y<", &[(0.0, 1.0), (1.0, 0.5)]);
        assert!(svg.starts_with("<svg") && svg.contains("<polyline") && svg.contains("y&lt;"));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = std::env::temp_dir().join(format!("fcal-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(&dir).unwrap().count(), 1);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn samples_file() {
        let dir = std::env::temp_dir().join(format!("fcal-samples-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("g.csv");
        std::fs::write(&p, "x,g\n# note\n1.0,2.5\n2.0,-1e-3\n").unwrap();
        assert_eq!(read_samples(&p).unwrap(), vec![2.5, -1e-3]);
        std::fs::write(&p, "1.0,2.5\n2.0,oops\n").unwrap();
        assert!(read_samples(&p).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
