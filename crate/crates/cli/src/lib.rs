//! `fcal`: problem files in, CSV / JSON / SVG out.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use frac_calderon::experiments::{
    instability_geometry, instability_series, spectrum_report, stability_sweep, SweepParams,
};
use frac_calderon::forward::PoissonOperator;
use frac_calderon::io::{
    fmt_f64, svg_line_plot, write_atomic, CsvTable, Problem, ProblemFile, ReportFile,
};
use frac_calderon::reconstruct::{pipeline_with, regularity_warning, InteriorSolver};
use frac_calderon::ucp::{AlphaSchedule, Scheme};
use frac_calderon::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_EIGENVALUE: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

const EXIT_HELP: &str = "\
Exit codes:
  0  success
  1  invalid input: problem file, regions, flags, zero datum, I/O
  2  zero is (numerically) a Dirichlet eigenvalue of (-Δ)^s + q on omega
  3  the regularized reconstruction failed (optimizer non-convergence or an
     unbounded minimal-L2 functional)
  4  an experiment ran but its expected property did not hold
     (instability: slope > -ln 2; stability: fitted sigma <= 0 or errors not
     monotone in the mean)";

#[derive(Debug, Parser)]
#[command(name = "fcal", version, about = "Fractional Calderón single-measurement reconstruction", after_help = EXIT_HELP)]
struct Cli {
    /// Override the seed of the problem file
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only diagnostics on standard error
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the reference problem file
    Init { out: PathBuf },
    /// Solve the exterior value problem; CSV of x, f, u, Λ_q f on W2
    Forward { problem: PathBuf, out: PathBuf },
    /// Run steps (1)-(4) and write a JSON report
    Reconstruct(ReconstructArgs),
    /// Singular values of the unique-continuation operator
    Spectrum {
        problem: PathBuf,
        out: PathBuf,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// ‖h_k‖ for Dirichlet eigenfunctions against a far shell
    Instability {
        out: PathBuf,
        /// Outer shell radius R; W = {R-1 < |x| < R}
        #[arg(long = "R", default_value_t = 13.0)]
        radius: f64,
        #[arg(long, default_value_t = 0.5)]
        s: f64,
        #[arg(long, default_value_t = 12)]
        kmax: usize,
        #[arg(long, default_value_t = 1024)]
        points: usize,
        #[arg(long, default_value_t = 32.0)]
        box_radius: f64,
    },
    /// Noise sweep of the interior recovery with log / power fits
    Stability {
        problem: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        trials: usize,
        #[arg(long, default_value_t = 0.25)]
        s_prime: f64,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Run all three schemes on one problem
    Compare { problem: PathBuf, out: PathBuf },
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    problem: PathBuf,
    out: PathBuf,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    /// Comma-separated, strictly decreasing
    #[arg(long, value_delimiter = ',')]
    alpha_list: Option<Vec<f64>>,
    /// Record the wall time (makes the report run-dependent)
    #[arg(long)]
    wall_time: bool,
}

pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::EigenvalueCondition { .. } => EXIT_EIGENVALUE,
        Error::NonConvergence { .. } | Error::UnboundedFunctional { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_INVALID,
    }
}

struct Ctx {
    seed: Option<u64>,
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn load(&self, path: &Path) -> frac_calderon::Result<Problem> {
        let mut file = ProblemFile::load(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(seed) = self.seed {
            file.noise.seed = seed;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let problem = file.build(base)?;
        if let Some(q) = &problem.q {
            if let Some(w) = regularity_warning(problem.m.order(), q) {
                eprintln!("warning: {w}");
            }
        }
        Ok(problem)
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_INVALID;
        }
        // only the first configuration in a process takes effect
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let ctx = Ctx {
        seed: cli.seed,
        quiet: cli.quiet,
    };
    let result = match cli.command {
        Command::Init { out } => cmd_init(&ctx, &out),
        Command::Forward { problem, out } => cmd_forward(&ctx, &problem, &out),
        Command::Reconstruct(a) => cmd_reconstruct(&ctx, &a),
        Command::Spectrum { problem, out, plot } => {
            cmd_spectrum(&ctx, &problem, &out, plot.as_deref())
        }
        Command::Instability {
            out,
            radius,
            s,
            kmax,
            points,
            box_radius,
        } => cmd_instability(&ctx, &out, radius, s, kmax, points, box_radius),
        Command::Stability {
            problem,
            out,
            trials,
            s_prime,
            plot,
        } => cmd_stability(&ctx, &problem, &out, trials, s_prime, plot.as_deref()),
        Command::Compare { problem, out } => cmd_compare(&ctx, &problem, &out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

type CmdResult = frac_calderon::Result<i32>;

fn cmd_init(ctx: &Ctx, out: &Path) -> CmdResult {
    write_atomic(out, ProblemFile::reference().to_toml().as_bytes())?;
    ctx.say(format!("wrote {}", out.display()));
    Ok(EXIT_OK)
}

fn cmd_forward(ctx: &Ctx, path: &Path, out: &Path) -> CmdResult {
    let p = ctx.load(path)?;
    let q =
        p.q.as_ref()
            .ok_or_else(|| Error::Config("forward needs a potential q".into()))?;
    let op = PoissonOperator::new(&p.m, &p.sets, q)?;
    let sol = op.solve(&p.f)?;
    let g = op.dtn(&p.f, &p.sets.w2)?;
    let bx = p.m.grid();
    let mut t = CsvTable::new(&["x", "f", "u", "g"]);
    for j in 0..bx.points() {
        t.row(vec![
            fmt_f64(bx.node(j)),
            fmt_f64(p.f.values()[j]),
            fmt_f64(sol.u.values()[j]),
            fmt_f64(g.values()[j]),
        ]);
    }
    t.footer("interior_residual", fmt_f64(sol.interior_residual));
    t.footer("solver_conditioning", fmt_f64(sol.solver_conditioning));
    t.footer("config_hash", p.file.config_hash());
    write_atomic(out, t.render().as_bytes())?;
    ctx.say(format!(
        "forward: interior residual {:.3e}, wrote {}",
        sol.interior_residual,
        out.display()
    ));
    Ok(EXIT_OK)
}

fn cmd_reconstruct(ctx: &Ctx, a: &ReconstructArgs) -> CmdResult {
    let start = Instant::now();
    let mut p = ctx.load(&a.problem)?;
    if let Some(s) = &a.scheme {
        p.file.scheme.name = s.parse::<Scheme>()?;
    }
    if let Some(t) = a.tau {
        p.file.tau = t;
    }
    if let Some(list) = &a.alpha_list {
        p.file.scheme.alpha_schedule = frac_calderon::io::ScheduleSpec::List(list.clone());
    }
    p.file.validate()?;
    let rec = p.measurement()?;
    let cfg = p.regularizer(&rec)?;
    let solver = InteriorSolver::new(&p.m, &p.sets)?;
    let report = pipeline_with(&solver, &rec, &cfg, p.file.tau, false)?;
    let mut file = ReportFile::new(&p, &rec, &report);
    if a.wall_time {
        file.wall_time_s = Some(start.elapsed().as_secs_f64());
    }
    write_atomic(&a.out, file.to_json().as_bytes())?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let err = file
        .q_error
        .map_or(String::new(), |e| format!(", relative q error {e:.3e}"));
    ctx.say(format!(
        "reconstruct ({}): alpha {:.3e}, mask {:.1}%{err}, wrote {}",
        cfg.scheme.name(),
        report.alpha,
        100.0 * report.mask_fraction,
        a.out.display()
    ));
    Ok(EXIT_OK)
}

fn cmd_spectrum(ctx: &Ctx, path: &Path, out: &Path, plot: Option<&Path>) -> CmdResult {
    let p = ctx.load(path)?;
    let solver = InteriorSolver::new(&p.m, &p.sets)?;
    let rep = spectrum_report(solver.svd());
    let mut t = CsvTable::new(&["j", "sigma", "log10_sigma"]);
    for r in &rep.rows {
        t.row(vec![
            r.j.to_string(),
            fmt_f64(r.sigma),
            fmt_f64(r.log10_sigma),
        ]);
    }
    t.footer("slope_ln_sigma_per_j", fmt_f64(rep.fit.slope));
    t.footer(
        "fit_range",
        format!("{}..{}", rep.fit_range.0, rep.fit_range.1),
    );
    t.footer("numerical_rank", rep.numerical_rank);
    write_atomic(out, t.render().as_bytes())?;
    if let Some(plot) = plot {
        let pts: Vec<(f64, f64)> = rep
            .rows
            .iter()
            .map(|r| (r.j as f64, r.log10_sigma))
            .collect();
        write_atomic(
            plot,
            svg_line_plot("singular values of L", "j", "log10 sigma_j", &pts).as_bytes(),
        )?;
    }
    ctx.say(format!(
        "spectrum: {} values, rank {}, slope {:.3}, wrote {}",
        rep.rows.len(),
        rep.numerical_rank,
        rep.fit.slope,
        out.display()
    ));
    Ok(EXIT_OK)
}

fn cmd_instability(
    ctx: &Ctx,
    out: &Path,
    radius: f64,
    s: f64,
    kmax: usize,
    points: usize,
    box_radius: f64,
) -> CmdResult {
    let (m, sets) = instability_geometry(radius, s, points, box_radius)?;
    let series = instability_series(&m, &sets, kmax)?;
    let mut t = CsvTable::new(&["k", "hk_norm", "log2_hk_norm"]);
    for (k, h) in series.k_values.iter().zip(&series.hk_norms) {
        t.row(vec![k.to_string(), fmt_f64(*h), fmt_f64(h.log2())]);
    }
    let bound = -std::f64::consts::LN_2;
    t.footer("slope_ln_per_k", fmt_f64(series.decay_fit.slope));
    t.footer("r2", fmt_f64(series.decay_fit.r2));
    t.footer("max_hk_times_2k", fmt_f64(series.max_scaled));
    t.footer("R", radius);
    t.footer("s", s);
    write_atomic(out, t.render().as_bytes())?;
    ctx.say(format!(
        "instability: slope {:.4} per k (bound {bound:.4}), wrote {}",
        series.decay_fit.slope,
        out.display()
    ));
    if series.decay_fit.slope > bound {
        eprintln!(
            "check failed: fitted slope {:.4} is shallower than -ln 2",
            series.decay_fit.slope
        );
        return Ok(EXIT_CHECK_FAILED);
    }
    Ok(EXIT_OK)
}

fn cmd_stability(
    ctx: &Ctx,
    path: &Path,
    out: &Path,
    trials: usize,
    s_prime: f64,
    plot: Option<&Path>,
) -> CmdResult {
    let p = ctx.load(path)?;
    let solver = InteriorSolver::new(&p.m, &p.sets)?;
    let cfg = p.regularizer(&p.measurement()?)?;
    let mut params = SweepParams::standard(p.seed());
    params.trials = trials;
    params.s_prime = s_prime;
    let sw = stability_sweep(&solver, &p.m, &p.sets, &cfg, &params)?;
    let mut t = CsvTable::new(&["noise", "error", "error_min", "error_max"]);
    for (eta, (mean, trial)) in sw
        .noise_levels
        .iter()
        .zip(sw.recon_errors.iter().zip(&sw.trial_errors))
    {
        let lo = trial.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = trial.iter().copied().fold(0.0, f64::max);
        t.row(vec![
            fmt_f64(*eta),
            fmt_f64(*mean),
            fmt_f64(lo),
            fmt_f64(hi),
        ]);
    }
    let lm = sw.fitted_modulus;
    t.footer("C", fmt_f64(lm.c));
    t.footer("sigma", fmt_f64(lm.sigma));
    t.footer("rss_log", fmt_f64(lm.rss));
    t.footer("fit_converged", lm.converged);
    t.footer("power_C", fmt_f64(sw.power_fit.c));
    t.footer("power_p", fmt_f64(sw.power_fit.p));
    t.footer("rss_power", fmt_f64(sw.power_fit.rss));
    t.footer("exact_error", fmt_f64(sw.exact_error));
    t.footer("energy", fmt_f64(sw.energy));
    t.footer("s_prime", s_prime);
    t.footer("trials", trials);
    t.footer("seed", sw.seed);
    t.footer("scheme", cfg.scheme.name());
    write_atomic(out, t.render().as_bytes())?;
    if let Some(plot) = plot {
        let pts: Vec<(f64, f64)> = sw
            .noise_levels
            .iter()
            .zip(&sw.recon_errors)
            .map(|(e, r)| (e.log10(), r.log10()))
            .collect();
        write_atomic(
            plot,
            svg_line_plot(
                "reconstruction error vs noise",
                "log10 eta",
                "log10 error",
                &pts,
            )
            .as_bytes(),
        )?;
    }
    ctx.say(format!(
        "stability: sigma {:.3}, rss log {:.3e} vs power {:.3e}, wrote {}",
        lm.sigma,
        lm.rss,
        sw.power_fit.rss,
        out.display()
    ));
    let monotone = sw.recon_errors.windows(2).all(|w| w[1] <= w[0]);
    if !(lm.sigma > 0.0) || !monotone {
        eprintln!(
            "check failed: fitted sigma {} / monotone in the mean: {monotone}",
            lm.sigma
        );
        return Ok(EXIT_CHECK_FAILED);
    }
    Ok(EXIT_OK)
}

fn cmd_compare(ctx: &Ctx, path: &Path, out: &Path) -> CmdResult {
    let p = ctx.load(path)?;
    let rec = p.measurement()?;
    let solver = InteriorSolver::new(&p.m, &p.sets)?;
    let mut t = CsvTable::new(&["scheme", "alpha", "residual", "q_error", "mask_fraction"]);
    let mut qs: Vec<(Scheme, Vec<Option<f64>>)> = Vec::new();
    for scheme in [Scheme::Spectral, Scheme::Tikhonov, Scheme::MinimalL2] {
        let mut cfg = p.regularizer(&rec)?;
        cfg.scheme = scheme;
        // explicit lists are scheme specific; fall back to each scheme's own schedule
        cfg.alpha_schedule = AlphaSchedule::Auto;
        match pipeline_with(&solver, &rec, &cfg, p.file.tau, false) {
            Ok(r) => {
                let qe = p.q.as_ref().map_or(f64::NAN, |q| r.q_error(q.values()));
                let res = r.trace.last().map_or(f64::NAN, |e| e.residual);
                t.row(vec![
                    scheme.name().into(),
                    fmt_f64(r.alpha),
                    fmt_f64(res),
                    fmt_f64(qe),
                    fmt_f64(r.mask_fraction),
                ]);
                qs.push((scheme, r.q_rec));
            }
            Err(e) => {
                eprintln!("{}: {e}", scheme.name());
                t.footer(
                    &format!("{}_failed", scheme.name()),
                    e.to_string().replace('\n', " "),
                );
            }
        }
    }
    for i in 0..qs.len() {
        for j in i + 1..qs.len() {
            let d = qs[i]
                .1
                .iter()
                .zip(&qs[j].1)
                .filter_map(|(a, b)| Some((a.as_ref()? - b.as_ref()?).abs()))
                .fold(0.0, f64::max);
            t.footer(
                &format!("max_abs_q_diff_{}_{}", qs[i].0.name(), qs[j].0.name()),
                fmt_f64(d),
            );
        }
    }
    write_atomic(out, t.render().as_bytes())?;
    ctx.say(format!("compare: wrote {}", out.display()));
    Ok(EXIT_OK)
}
