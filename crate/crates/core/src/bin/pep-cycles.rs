use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pep_cycles::cycle::{analytic_oracles, analyze, verify_certificate, AnalysisConfig, CycleCertificate, Thresholds, Verdict};
use pep_cycles::methods::{gallery_f_rho, logistic_two_cycle};
use pep_cycles::pep::{build_cycle_problem, default_classes, ConicProgram};
use pep_cycles::sdp::{solve, SolverOptions};
use pep_cycles::sweep::{run_sweep_to_dir, Axis, CellStatus, MethodName, RunOptions, SweepConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_FAILURES: u8 = 2;

#[derive(Parser)]
#[command(name = "pep-cycles", version, about = "Search for cycles of first-order methods with performance-estimation SDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep a parameter grid and write region.csv and region.svg.
    Sweep(SweepArgs),
    /// Scan cycle lengths at one parameter point.
    SolveOne(SolveOneArgs),
    /// Check a certificate JSON document independently of the solver.
    VerifyCertificate(VerifyArgs),
    /// Closed-form cycles and the logistic-map gallery checks.
    Gallery(GalleryArgs),
    /// Solve a conic program stored as JSON.
    SolveDump(SolveDumpArgs),
}

#[derive(Args, Clone, Default)]
struct TolArgs {
    /// Score at or below which a cycle is reported.
    #[arg(long)]
    tol_cycle: Option<f64>,
    /// Score at or above which the cycle length is ruled out.
    #[arg(long)]
    tol_separate: Option<f64>,
    /// Relative eigenvalue cutoff when factoring the Gram matrix.
    #[arg(long)]
    tol_rank: Option<f64>,
    /// Residual tolerance for certificate checks.
    #[arg(long)]
    tol_verify: Option<f64>,
    /// Solver feasibility tolerance.
    #[arg(long)]
    tol_feas: Option<f64>,
    /// Solver relative gap tolerance.
    #[arg(long)]
    tol_gap: Option<f64>,
    /// Solver iteration cap.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Print solver iterations to stderr.
    #[arg(long)]
    verbose: bool,
}

impl TolArgs {
    fn apply(&self, t: &mut Thresholds, s: &mut SolverOptions) {
        set(&mut t.delta_cycle, self.tol_cycle);
        set(&mut t.delta_separate, self.tol_separate);
        set(&mut t.tau_rank, self.tol_rank);
        set(&mut t.verify_tol, self.tol_verify);
        set(&mut s.feas_tol, self.tol_feas);
        set(&mut s.gap_tol, self.tol_gap);
        set(&mut s.max_iters, self.max_iters);
        s.verbose |= self.verbose;
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or("expected NxM")?;
    let n = a.trim().parse().map_err(|_| format!("bad count {a:?}"))?;
    let m = b.trim().parse().map_err(|_| format!("bad count {b:?}"))?;
    if n == 0 || m == 0 {
        return Err("grid sizes must be positive".into());
    }
    Ok((n, m))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected MIN:MAX")?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number {a:?}"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number {b:?}"))?;
    if !(lo <= hi) {
        return Err("MIN must not exceed MAX".into());
    }
    Ok((lo, hi))
}

#[derive(Args)]
struct SweepArgs {
    /// TOML config; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(long, value_enum)]
    method: Option<MethodName>,
    #[arg(long = "L")]
    l: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    /// Resolvent scale of TOS.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    kmin: Option<usize>,
    #[arg(long)]
    kmax: Option<usize>,
    /// Points along gamma and along the second parameter.
    #[arg(long, value_parser = parse_grid, value_name = "NxM")]
    grid: Option<(usize, usize)>,
    #[arg(long, value_parser = parse_range, value_name = "MIN:MAX")]
    gamma_range: Option<(f64, f64)>,
    /// Range of beta (eps for igd).
    #[arg(long, value_parser = parse_range, value_name = "MIN:MAX")]
    param2_range: Option<(f64, f64)>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Keep the cells already recorded in DIR/region.csv.
    #[arg(long)]
    resume: bool,
    /// Solve cells outside the method's region of interest too.
    #[arg(long)]
    no_region_filter: bool,
    /// Keep grid points as they are instead of moving one per row onto a curved boundary.
    #[arg(long)]
    no_snap: bool,
    /// Leave the ms column empty.
    #[arg(long)]
    omit_timing: bool,
    /// Solved cells per CSV rewrite.
    #[arg(long)]
    chunk: Option<usize>,
    #[arg(long)]
    max_failure_fraction: Option<f64>,
    /// Stop after solving this many new cells; continue later with --resume.
    #[arg(long)]
    max_cells: Option<usize>,
    #[arg(long)]
    quiet: bool,
    #[command(flatten)]
    tol: TolArgs,
}

fn sweep_config(a: &SweepArgs) -> Result<SweepConfig, String> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            SweepConfig::from_toml(&text).map_err(|e| e.to_string())?
        }
        None => SweepConfig::default(),
    };
    if let Some(m) = a.method {
        if m != cfg.method {
            // Axis defaults belong to the method.
            cfg.gamma = None;
            cfg.param2 = None;
        }
        cfg.method = m;
    }
    set(&mut cfg.l, a.l);
    set(&mut cfg.mu, a.mu);
    set(&mut cfg.alpha, a.alpha);
    set(&mut cfg.kmin, a.kmin);
    set(&mut cfg.kmax, a.kmax);
    let mut cfg = cfg.resolved();
    let (g, p) = (cfg.gamma.as_mut().unwrap(), cfg.param2.as_mut().unwrap());
    if let Some((n, m)) = a.grid {
        g.points = n;
        p.points = m;
    }
    let within = |axis: &mut Axis, r: Option<(f64, f64)>| {
        if let Some((lo, hi)) = r {
            axis.min = lo;
            axis.max = hi;
        }
    };
    within(g, a.gamma_range);
    within(p, a.param2_range);
    cfg.region_filter &= !a.no_region_filter;
    cfg.snap_boundary &= !a.no_snap;
    set(&mut cfg.output.dir, a.out.clone());
    set(&mut cfg.output.jobs, a.jobs);
    set(&mut cfg.output.chunk, a.chunk);
    set(&mut cfg.output.max_failure_fraction, a.max_failure_fraction);
    cfg.output.resume |= a.resume;
    cfg.output.omit_timing |= a.omit_timing;
    a.tol.apply(&mut cfg.thresholds, &mut cfg.solver);
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn run_sweep_cmd(a: SweepArgs) -> ExitCode {
    let cfg = match sweep_config(&a) {
        Ok(c) => c,
        Err(e) => return usage(&e),
    };
    if a.print_config {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    let opts = RunOptions {
        max_new_cells: a.max_cells,
        progress: !a.quiet,
    };
    let out = match run_sweep_to_dir(&cfg, &opts) {
        Ok(o) => o,
        Err(e) => return usage(&e.to_string()),
    };
    let m = &out.map;
    println!(
        "{} cells ({} new): cycle {}, no_cycle {}, inconclusive {}, failed {}, skipped {}",
        m.records.len(),
        out.solved,
        m.count(CellStatus::Cycle),
        m.count(CellStatus::NoCycle),
        m.count(CellStatus::Inconclusive),
        m.count(CellStatus::Failed),
        m.count(CellStatus::Skipped)
    );
    println!("csv: {}", out.csv.display());
    match &out.svg {
        Some(p) => println!("svg: {}", p.display()),
        None => println!("incomplete; rerun with --resume"),
    }
    if m.failure_fraction() > cfg.output.max_failure_fraction {
        eprintln!(
            "failed cells {:.1}% exceed the allowed {:.1}%",
            100.0 * m.failure_fraction(),
            100.0 * cfg.output.max_failure_fraction
        );
        return ExitCode::from(EXIT_FAILURES);
    }
    ExitCode::SUCCESS
}

#[derive(Args)]
struct SolveOneArgs {
    #[arg(long, value_enum)]
    method: MethodName,
    #[arg(long)]
    gamma: f64,
    /// Momentum (hb, nag) or relaxation (tos).
    #[arg(long)]
    beta: Option<f64>,
    /// Relative gradient error of igd.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long = "L", default_value_t = 1.0)]
    l: f64,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// A single cycle length; otherwise scan --kmin..=--kmax.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 2)]
    kmin: usize,
    #[arg(long, default_value_t = 25)]
    kmax: usize,
    /// Write the certificate of the first cycle found.
    #[arg(long, value_name = "FILE")]
    cert_out: Option<PathBuf>,
    /// Write each solved program in SDPA format; `{k}` in the path expands to K.
    #[arg(long, value_name = "FILE")]
    dump_sdpa: Option<PathBuf>,
    /// Write each solved program as JSON; `{k}` in the path expands to K.
    #[arg(long, value_name = "FILE")]
    dump_json: Option<PathBuf>,
    #[command(flatten)]
    tol: TolArgs,
}

fn expand(path: &Path, k: usize) -> PathBuf {
    PathBuf::from(path.to_string_lossy().replace("{k}", &k.to_string()))
}

fn write(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn solve_one(a: SolveOneArgs) -> ExitCode {
    let p2 = match a.method {
        MethodName::Igd => a.eps,
        _ => a.beta,
    };
    let Some(p2) = p2 else {
        return usage(&format!(
            "--{} is required for {}",
            a.method.second_parameter(),
            a.method.as_str()
        ));
    };
    let method = match a.method.build(a.gamma, p2, a.alpha) {
        Ok(m) => m,
        Err(e) => return usage(&e.to_string()),
    };
    let mut cfg = AnalysisConfig::default();
    a.tol.apply(&mut cfg.thresholds, &mut cfg.solver);
    let ks: Vec<usize> = match a.k {
        Some(k) => vec![k],
        None => (a.kmin..=a.kmax).collect(),
    };
    let classes = default_classes(&method, a.mu, a.l);
    let mut failures = 0;
    for &k in &ks {
        let problem = match build_cycle_problem(&method, &classes, k) {
            Ok(p) => p,
            Err(e) => return usage(&e.to_string()),
        };
        let an = match analyze(&problem, &cfg) {
            Ok(an) => an,
            Err(e) => {
                println!("K={k} error: {e}");
                failures += 1;
                continue;
            }
        };
        for (dump, text) in [(&a.dump_sdpa, an.program.to_sdpa()), (&a.dump_json, an.program.to_json())] {
            if let Some(p) = dump {
                if let Err(e) = write(&expand(p, k), &text) {
                    return usage(&e);
                }
            }
        }
        let d = &an.decision;
        println!(
            "K={k} verdict={:?} score={:.6e} status={:?} iters={} residuals=({:.1e}, {:.1e}, {:.1e}) {}",
            d.verdict,
            d.score,
            d.status,
            an.iterations,
            an.solution.residuals.primal,
            an.solution.residuals.dual,
            an.solution.residuals.gap,
            d.reason
        );
        if !matches!(d.status, pep_cycles::sdp::SolveStatus::Optimal | pep_cycles::sdp::SolveStatus::SlowProgress)
            && d.verdict == Verdict::Inconclusive
        {
            failures += 1;
        }
        if d.verdict == Verdict::CycleFound {
            println!("K_min={k}");
            if let (Some(p), Some(c)) = (&a.cert_out, &d.certificate) {
                if let Err(e) = write(p, &c.to_json()) {
                    return usage(&e);
                }
                println!("certificate: {}", p.display());
            }
            break;
        }
    }
    if failures > 0 {
        return ExitCode::from(EXIT_FAILURES);
    }
    ExitCode::SUCCESS
}

#[derive(Args)]
struct VerifyArgs {
    file: PathBuf,
    #[arg(long, default_value_t = 1e-5)]
    tol_verify: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol_cycle: f64,
}

fn verify_cmd(a: VerifyArgs) -> ExitCode {
    let text = match std::fs::read_to_string(&a.file) {
        Ok(t) => t,
        Err(e) => return usage(&format!("{}: {e}", a.file.display())),
    };
    let cert = match CycleCertificate::from_json(&text) {
        Ok(c) => c,
        Err(e) => return usage(&format!("{}: {e}", a.file.display())),
    };
    let v = match verify_certificate(&cert, a.tol_verify, a.tol_cycle) {
        Ok(v) => v,
        Err(e) => {
            println!("REJECTED: {e}");
            return ExitCode::from(EXIT_FAILURES);
        }
    };
    let r = &v.residuals;
    println!("method {:?} K={} dimension {}", cert.method, cert.k, cert.dimension);
    for (fam, x) in &r.interpolation {
        println!("interpolation[{fam}] {x:.3e}");
    }
    println!("inexactness     {:.3e}", r.inexactness);
    println!("method          {:.3e}", r.method);
    println!("resolvent       {:.3e}", r.resolvent);
    println!("score           {:.3e}", r.score);
    println!("normalization   {:.6}", r.normalization);
    println!("replay gap      {:.3e}", r.replay_gap);
    if v.passed() {
        println!("PASSED");
        ExitCode::SUCCESS
    } else {
        for f in &v.failures {
            println!("failure: {f}");
        }
        println!("REJECTED");
        ExitCode::from(EXIT_FAILURES)
    }
}

#[derive(Args)]
struct GalleryArgs {
    /// Parameters of f_rho to tabulate.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 2.0, 2.5, 3.2, 3.8])]
    rho: Vec<f64>,
    #[arg(long, default_value_t = 0.3)]
    x0: f64,
    #[arg(long, default_value_t = 500)]
    steps: usize,
}

fn gallery_cmd(a: GalleryArgs) -> ExitCode {
    println!("closed-form cycles");
    for c in analytic_oracles() {
        match c.trajectory() {
            Ok(traj) => println!(
                "  {:<44} K={} gap {:.1e} interpolation violation {:.1e}",
                c.name,
                c.k,
                (&traj.points[c.k] - &traj.points[0]).norm(),
                c.interpolation_violation(&traj)
            ),
            Err(e) => println!("  {:<44} error: {e}", c.name),
        }
    }
    println!("logistic gallery, gradient descent with unit step from x0 = {}", a.x0);
    for &rho in &a.rho {
        let f = match gallery_f_rho(rho) {
            Ok(f) => f,
            Err(e) => return usage(&e.to_string()),
        };
        let jump = [1.0, 1.5, -1.0, -1.5]
            .iter()
            .map(|&x| {
                let h = 1e-12;
                ((f.value(x + h) - f.value(x - h)).abs()).max((f.derivative(x + h) - f.derivative(x - h)).abs())
            })
            .fold(0.0, f64::max);
        let mut x = a.x0;
        for _ in 0..a.steps {
            x = f.gd_step(x);
        }
        let next = f.gd_step(x);
        let after = f.gd_step(next);
        let mut line = format!("  rho={rho}: breakpoint jump {jump:.1e}, x_T={x:.10} x_T+1={next:.10} x_T+2={after:.10}");
        if let Some((p, q)) = logistic_two_cycle(rho) {
            line.push_str(&format!(", 2-cycle {{{p:.10}, {q:.10}}}"));
        } else if rho > 1.0 {
            line.push_str(&format!(", fixed point {:.10}", 1.0 - 1.0 / rho));
        }
        println!("{line}");
    }
    ExitCode::SUCCESS
}

#[derive(Args)]
struct SolveDumpArgs {
    file: PathBuf,
    #[command(flatten)]
    tol: TolArgs,
}

fn solve_dump(a: SolveDumpArgs) -> ExitCode {
    let text = match std::fs::read_to_string(&a.file) {
        Ok(t) => t,
        Err(e) => return usage(&format!("{}: {e}", a.file.display())),
    };
    let program = match ConicProgram::from_json(&text) {
        Ok(p) => p,
        Err(e) => return usage(&format!("{}: {e}", a.file.display())),
    };
    let mut t = Thresholds::default();
    let mut opts = SolverOptions::default();
    a.tol.apply(&mut t, &mut opts);
    match solve(&program, &opts) {
        Ok(s) => {
            println!(
                "status={:?} primal={:.12e} dual={:.12e} iterations={}",
                s.status, s.primal_objective, s.dual_objective, s.iterations
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!("solver error: {e}");
            ExitCode::from(EXIT_FAILURES)
        }
    }
}

fn usage(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Sweep(a) => run_sweep_cmd(a),
        Command::SolveOne(a) => solve_one(a),
        Command::VerifyCertificate(a) => verify_cmd(a),
        Command::Gallery(a) => gallery_cmd(a),
        Command::SolveDump(a) => solve_dump(a),
    }
}
