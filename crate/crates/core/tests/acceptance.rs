//! One pass/fail line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pep_cycles::cycle::{analyze, verify_certificate, AnalysisConfig, CycleCertificate, TableOracle, Verdict};
use pep_cycles::methods::{
    check_cycle_prefix, gallery_f_rho, heavy_ball, inexact_gradient, nesterov, simulate, three_operator_splitting,
    MethodSpec, Quadratic,
};
use pep_cycles::pep::{build_cycle_problem, default_classes, lower_to_conic, BasisOrigin, CycleProblem};
use pep_cycles::sdp::{solve, SolveStatus, SolverOptions};
use pep_cycles::sweep::{
    evaluate_cell, run_sweep, run_sweep_to_dir, Cell, CellStatus, Grid, MethodName, RunOptions, SweepConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn problem(method: &MethodSpec, mu: f64, l: f64, k: usize) -> CycleProblem {
    build_cycle_problem(method, &default_classes(method, mu, l), k).unwrap()
}

fn cell_config(method: MethodName, kmax: usize) -> SweepConfig {
    let mut cfg = SweepConfig::for_method(method);
    cfg.kmax = kmax;
    cfg.output.omit_timing = true;
    cfg
}

fn scan(cfg: &SweepConfig, gamma: f64, p2: f64) -> pep_cycles::sweep::CellRecord {
    let cell = Cell {
        index: 0,
        param1: gamma,
        param2: p2,
        in_region: true,
    };
    evaluate_cell(cfg, &cell)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let method = heavy_ball(1.0 / 9.0, 4.0 / 9.0);
    let a = analyze(&problem(&method, 1.0, 25.0, 3), &AnalysisConfig::default()).unwrap();
    let Some(cert) = a.decision.certificate.clone() else {
        return outcome(false, format!("no certificate: {}", a.decision.reason));
    };
    let v = verify_certificate(&cert, 1e-5, 1e-6).unwrap();
    let table = TableOracle::from_certificate(&cert).unwrap();
    let init: Vec<DVector<f64>> = (0..2).map(|t| cert.point(t)).collect();
    let run = simulate(&method, &table, &init, 9).unwrap();
    let replay = check_cycle_prefix(&run, 3, 2, 1e-5).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let r = &v.residuals;
    let pass = a.decision.verdict == Verdict::CycleFound
        && cert.score <= 1e-6
        && r.max_interpolation() <= 1e-5
        && r.method <= 1e-5
        && replay
        && secs <= 10.0;
    outcome(
        pass,
        format!(
            "verdict {:?}, score {:.1e}, interpolation {:.1e}, method {:.1e}, replay {}, {:.2} s",
            a.decision.verdict,
            cert.score,
            r.max_interpolation(),
            r.method,
            replay,
            secs
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cfg = cell_config(MethodName::Igd, 6);
    // Step of the default 50-point axis over [0, 2/L].
    let h = 2.0 / 49.0;
    let mut bad = Vec::new();
    let mut cells = 0;
    for &eps in &[0.25, 0.5, 0.75] {
        let edge = 2.0 / (1.0 + eps);
        for m in [-5, -4, -3, -2, -1, 1, 2, 3, 4, 5] {
            let gamma = edge + h * m as f64;
            let rec = scan(&cfg, gamma, eps);
            cells += 1;
            let ok = if m > 0 {
                rec.status == CellStatus::Cycle && rec.k_min == Some(2)
            } else {
                rec.status == CellStatus::NoCycle
            };
            if !ok {
                bad.push(format!("eps {eps} gamma {gamma:.4}: {:?} {:?}", rec.status, rec.k_min));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        bad.is_empty() && secs <= 300.0,
        format!("{} of {cells} cells as expected, {secs:.1} s {}", cells - bad.len(), bad.join("; ")),
    )
}

/// Gram matrix of the certificate's basis vectors, in the problem's basis order.
fn certificate_gram(p: &CycleProblem, cert: &CycleCertificate) -> DMatrix<f64> {
    let rows: Vec<DVector<f64>> = p
        .basis_origins
        .iter()
        .map(|o| match *o {
            BasisOrigin::InitialState { index } => cert.point(index) - cert.point(0),
            BasisOrigin::Oracle { t, slot } => DVector::from_column_slice(&cert.oracle_values[t][slot]),
        })
        .collect();
    DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i].dot(&rows[j]))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let cfg = cell_config(MethodName::Nag, 10);
    let mut bad = Vec::new();
    let mut worst_gram: f64 = 0.0;
    for &beta in &[0.1, 0.3, 0.5, 0.7, 0.9] {
        let edge = 2.0 * (1.0 + beta) / (1.0 + 2.0 * beta);
        let inner = scan(&cfg, 0.8 * edge, beta);
        if inner.status != CellStatus::NoCycle {
            bad.push(format!("beta {beta} interior: {:?}", inner.status));
        }
        let method = nesterov(edge, beta);
        let p = problem(&method, 0.0, 1.0, 2);
        let a = analyze(&p, &AnalysisConfig::default()).unwrap();
        let Some(cert) = a.decision.certificate.filter(|_| a.decision.verdict == Verdict::CycleFound) else {
            bad.push(format!("beta {beta} boundary: {}", a.decision.reason));
            continue;
        };
        // Independent witness: x -> -x on x^2/2.
        let traj = simulate(
            &method,
            &Quadratic::scalar(1.0),
            &[DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
            2,
        )
        .unwrap();
        let (gw, _) = p.witness(&traj).unwrap();
        let gram = certificate_gram(&p, &cert);
        let err = (&gw / gw[(0, 0)] - &gram / gram[(0, 0)]).amax();
        worst_gram = worst_gram.max(err);
        if err > 1e-5 {
            bad.push(format!("beta {beta} Gram mismatch {err:.1e}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        bad.is_empty() && secs <= 300.0,
        format!("worst Gram mismatch {worst_gram:.1e}, {secs:.1} s {}", bad.join("; ")),
    )
}

/// Cycle programs cross-checked against the external solver.
fn reference_programs() -> Vec<(String, CycleProblem)> {
    let mut out = Vec::new();
    let mut add = |name: &str, m: MethodSpec, mu: f64, l: f64, ks: &[usize]| {
        for &k in ks {
            out.push((format!("{name}-k{k}"), problem(&m, mu, l, k)));
        }
    };
    add("gd", heavy_ball(1.0, 0.0), 0.0, 1.0, &[2, 3, 4, 5, 6]);
    add("example1", heavy_ball(1.0 / 9.0, 4.0 / 9.0), 1.0, 25.0, &[2, 3]);
    add("nag", nesterov(0.8, 0.5), 0.0, 1.0, &[2, 3, 4]);
    add("nag-edge", nesterov(1.5, 0.5), 0.0, 1.0, &[2]);
    add("hb", heavy_ball(1.0 / 9.0, 4.0 / 9.0), 0.0, 1.0, &[4]);
    add("igd", inexact_gradient(1.0, 0.5).unwrap(), 0.0, 1.0, &[2, 3]);
    add("igd-fast", inexact_gradient(1.6, 0.5).unwrap(), 0.0, 1.0, &[2]);
    add("tos", three_operator_splitting(1.0, 1.0, 1.0).unwrap(), 0.0, 1.0, &[2, 3]);
    add("hb-fast", heavy_ball(2.5, 0.25), 0.0, 1.0, &[2, 3]);
    add("hb-slow", heavy_ball(0.5, 0.5), 0.0, 1.0, &[5]);
    out
}

struct Reference {
    name: String,
    ours: f64,
    theirs: Option<f64>,
}

fn run_reference(dir: &Path) -> Result<Vec<Reference>, String> {
    let mut files = Vec::new();
    let mut ours = Vec::new();
    for (name, p) in reference_programs() {
        let (cp, _) = lower_to_conic(&p).unwrap();
        let sol = solve(&cp, &SolverOptions::default()).unwrap();
        let path = dir.join(format!("{name}.dat-s"));
        std::fs::write(&path, cp.to_sdpa()).map_err(|e| e.to_string())?;
        files.push(path);
        ours.push((name, sol.primal_objective, cp.objective_constant));
    }
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/support/sdpa_reference.py");
    let out = Command::new("python3")
        .arg(&script)
        .args(&files)
        .output()
        .map_err(|e| format!("python3 unavailable: {e}"))?;
    if !out.status.success() {
        return Err(format!("reference script failed: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let values: Vec<Option<f64>> = text
        .lines()
        .map(|l| l.split_whitespace().nth(1).and_then(|v| v.parse().ok()))
        .collect();
    if values.len() != ours.len() {
        return Err(format!("reference script printed {} lines for {} files", values.len(), ours.len()));
    }
    Ok(ours
        .into_iter()
        .zip(values)
        .map(|((name, obj, constant), v)| Reference {
            name,
            ours: obj,
            // The SDPA optimum is the negated objective without its constant.
            theirs: v.map(|v| constant - v),
        })
        .collect())
}

fn criterion_4(refs: &Result<Vec<Reference>, String>) -> Outcome {
    let method = heavy_ball(1.0, 0.0);
    let mut lines = Vec::new();
    let mut pass = true;
    for k in 2..=6 {
        let a = analyze(&problem(&method, 0.0, 1.0, k), &AnalysisConfig::default()).unwrap();
        let ok = a.decision.verdict == Verdict::NoCycleAtThisK && a.decision.score >= 1e-3;
        pass &= ok;
        let agree = match refs {
            Ok(r) => match r.iter().find(|x| x.name == format!("gd-k{k}")).and_then(|x| x.theirs) {
                Some(t) => {
                    let d = (t - a.decision.score).abs();
                    pass &= d <= 1e-6;
                    format!(" (ref {d:.0e})")
                }
                None => {
                    pass = false;
                    " (no reference)".into()
                }
            },
            Err(_) => {
                pass = false;
                " (no reference)".into()
            }
        };
        lines.push(format!("K={k} {:.4}{agree}", a.decision.score));
    }
    outcome(pass, lines.join(", "))
}

fn criterion_5(refs: &Result<Vec<Reference>, String>) -> Outcome {
    let opts = SolverOptions::default();
    let (mut worst_rel, mut worst_gap) = (0.0f64, 0.0f64);
    let mut planted_ok = true;
    for k in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + k as u64);
        let (n, m, q, p) = common::planted_sizes(k);
        let inst = common::planted(&mut rng, n, m, q, p);
        assert!(inst.program.psd_dim <= 40 && inst.program.constraints.len() <= 500);
        let sol = solve(&inst.program, &opts).unwrap();
        let rel = (sol.primal_objective - inst.optimum).abs() / (1.0 + inst.optimum.abs());
        worst_rel = worst_rel.max(rel);
        worst_gap = worst_gap.max(sol.residuals.gap);
        planted_ok &= sol.status == SolveStatus::Optimal && rel <= 1e-7 && sol.residuals.gap <= 1e-8;
    }
    let (ref_ok, ref_detail) = match refs {
        Ok(r) => {
            let worst = r
                .iter()
                .map(|x| x.theirs.map_or(f64::INFINITY, |t| (t - x.ours).abs()))
                .fold(0.0, f64::max);
            (r.len() == 20 && worst <= 1e-6, format!("{} dumps, worst |diff| {worst:.1e}", r.len()))
        }
        Err(e) => (false, e.clone()),
    };
    outcome(
        planted_ok && ref_ok,
        format!("planted: worst rel error {worst_rel:.1e}, worst gap {worst_gap:.1e}; reference: {ref_detail}"),
    )
}

fn criterion_6() -> Outcome {
    let mut jump: f64 = 0.0;
    for &rho in &[0.5, 2.0, 3.2, 3.8] {
        let f = gallery_f_rho(rho).unwrap();
        for &x in &[1.0, 1.5, -1.0, -1.5] {
            let d = 1e-13;
            jump = jump
                .max((f.value(x + d) - f.value(x - d)).abs())
                .max((f.derivative(x + d) - f.derivative(x - d)).abs());
        }
    }
    let run = |rho: f64| {
        let f = gallery_f_rho(rho).unwrap();
        let mut x = 0.3;
        for _ in 0..500 {
            x = f.gd_step(x);
        }
        (x, f.gd_step(x))
    };
    let rho: f64 = 3.2;
    let root = ((rho - 3.0) * (rho + 1.0)).sqrt();
    let (lo, hi) = ((rho + 1.0 - root) / (2.0 * rho), (rho + 1.0 + root) / (2.0 * rho));
    let (a, b) = run(rho);
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    let two = (a - lo).abs().max((b - hi).abs());
    let (c, _) = run(2.5);
    let fixed = (c - (1.0 - 1.0 / 2.5)).abs();
    outcome(
        jump <= 1e-10 && two <= 1e-6 && fixed <= 1e-6,
        format!("breakpoint jump {jump:.1e}, 2-cycle error {two:.1e}, fixed point error {fixed:.1e}"),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut cfg = cell_config(MethodName::Hb, 8);
    cfg.gamma.as_mut().unwrap().points = 20;
    cfg.param2.as_mut().unwrap().points = 20;
    cfg.output.jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let map = run_sweep(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let grid = Grid::new(&cfg);
    let n1 = grid.axis1.points;
    let mut problems = Vec::new();
    // Along each beta row, cycles form one run that ends at the boundary cell.
    let mut boundary_k2 = 0;
    let mut rows_with_cycles = 0;
    let (mut concordant, mut discordant) = (0usize, 0usize);
    for (j, row) in map.records.chunks(n1).enumerate() {
        let inside: Vec<_> = row.iter().filter(|r| r.status != CellStatus::Skipped).collect();
        let cyc: Vec<usize> = inside
            .iter()
            .enumerate()
            .filter(|(_, r)| r.status == CellStatus::Cycle)
            .map(|(i, _)| i)
            .collect();
        if cyc.is_empty() {
            problems.push(format!("row {j} has no cycle"));
            continue;
        }
        rows_with_cycles += 1;
        let contiguous = cyc.windows(2).all(|w| w[1] == w[0] + 1);
        if !contiguous || *cyc.last().unwrap() != inside.len() - 1 {
            problems.push(format!("row {j}: cycles not a run ending at the boundary"));
        }
        if inside.last().unwrap().k_min == Some(2) {
            boundary_k2 += 1;
        }
        let ks: Vec<usize> = cyc.iter().map(|&i| inside[i].k_min.unwrap()).collect();
        for a in 0..ks.len() {
            for b in a + 1..ks.len() {
                if ks[a] > ks[b] {
                    concordant += 1;
                } else if ks[a] < ks[b] {
                    discordant += 1;
                }
            }
        }
    }
    // Near the origin, every method converges.
    for r in &map.records {
        if r.param1 <= 1.0 && r.param2 <= 0.5 && r.status != CellStatus::NoCycle {
            problems.push(format!("({}, {}) is {:?}", r.param1, r.param2, r.status));
        }
    }
    let tau = (concordant as f64 - discordant as f64) / ((concordant + discordant).max(1)) as f64;
    let counts = format!(
        "cycle {}, no_cycle {}, inconclusive {}, failed {}",
        map.count(CellStatus::Cycle),
        map.count(CellStatus::NoCycle),
        map.count(CellStatus::Inconclusive),
        map.count(CellStatus::Failed)
    );
    outcome(
        problems.is_empty() && boundary_k2 == rows_with_cycles && tau >= 0.8 && secs <= 1800.0,
        format!(
            "{counts}; boundary K_min=2 in {boundary_k2}/{rows_with_cycles} rows, K_min trend toward boundary {tau:.2}, {secs:.1} s {}",
            problems.join("; ")
        ),
    )
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = cell_config(MethodName::Nag, 5);
    cfg.gamma.as_mut().unwrap().points = 8;
    cfg.param2.as_mut().unwrap().points = 6;
    cfg.output.chunk = 4;
    let run_in = |name: &str, jobs: usize, resume: bool, stop: Option<usize>| {
        let mut c = cfg.clone();
        c.output.dir = tmp.path().join(name);
        c.output.jobs = jobs;
        c.output.resume = resume;
        let opts = RunOptions {
            max_new_cells: stop,
            progress: false,
        };
        run_sweep_to_dir(&c, &opts).unwrap()
    };
    let read = |name: &str, file: &str| std::fs::read(tmp.path().join(name).join(file)).unwrap();
    let first = run_in("a", 1, false, None);
    run_in("b", 3, false, None);
    let same_csv = read("a", "region.csv") == read("b", "region.csv");
    let same_svg = read("a", "region.svg") == read("b", "region.svg");
    // Interrupt after 11 cells, then tear the last line as a killed writer would.
    run_in("c", 2, false, Some(11));
    let csv = tmp.path().join("c").join("region.csv");
    let text = std::fs::read(&csv).unwrap();
    std::fs::write(&csv, &text[..text.len() - 9]).unwrap();
    let resumed = run_in("c", 2, true, None);
    let same_resumed = read("c", "region.csv") == read("a", "region.csv");
    let again = run_in("c", 2, true, None);
    outcome(
        same_csv && same_svg && same_resumed && again.solved == 0 && first.complete,
        format!(
            "repeat csv {same_csv}, svg {same_svg}; resumed run solved {} cells, identical {same_resumed}; rerun solved {}",
            resumed.solved, again.solved
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let refs = run_reference(tmp.path());
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 example-1 three-cycle", Box::new(criterion_1)),
        ("2 IGD boundary sharpness", Box::new(criterion_2)),
        ("3 NAG interior/boundary", Box::new(criterion_3)),
        ("4 GD sanity", Box::new(|| criterion_4(&refs))),
        ("5 solver correctness", Box::new(|| criterion_5(&refs))),
        ("6 gallery/logistic", Box::new(criterion_6)),
        ("7 HB region structure", Box::new(criterion_7)),
        ("8 determinism and resume", Box::new(criterion_8)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let o = check();
        println!("[{}] criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
