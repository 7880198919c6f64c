//! Verdicts for one cycle-search problem.
//!
//! A small optimal score is only a hint. The verdict `CycleFound` requires an
//! explicit trajectory that passes [`verify_certificate`]; the trajectory is
//! read off a Gram matrix restricted to the face `x_t = x_{t+K}` (for
//! `t < l`), of minimal trace, so that the cycle closes exactly rather than
//! up to the solver tolerance.

mod analytic;
mod certificate;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analytic::{analytic_oracles, smooth_nonconvex_margins, AnalyticCycle};
pub use certificate::{
    verify_certificate, CertificateError, CertificateResiduals, CycleCertificate, TableOracle, Verification, Verdict,
};

use crate::pep::{lower_to_conic, triplet_matrix, ConicConstraint, ConicProgram, CycleProblem, PepError, Sense};
use crate::sdp::{solve, ConicSolution, SolveStatus, SolverError, SolverOptions};

#[derive(Debug, Error, PartialEq)]
pub enum CycleError {
    #[error("Gram matrix has no positive eigenvalue")]
    ZeroGram,
    #[error("Gram matrix is {got}x{got}, problem has {want} basis vectors")]
    DimensionMismatch { want: usize, got: usize },
    #[error(transparent)]
    Pep(#[from] PepError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Decision thresholds, all relative to the `|x_1 - x_0|^2 >= 1` scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub delta_cycle: f64,
    pub delta_separate: f64,
    pub tau_rank: f64,
    pub verify_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            delta_cycle: 1e-6,
            delta_separate: 1e-4,
            tau_rank: 1e-7,
            verify_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub thresholds: Thresholds,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub verdict: Verdict,
    /// Optimal value of the score program.
    pub score: f64,
    pub status: SolveStatus,
    /// Present whenever reconstruction was attempted; verified iff `CycleFound`.
    pub certificate: Option<CycleCertificate>,
    pub reason: String,
}

/// Everything produced for one `(method, classes, K)` cell.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub program: ConicProgram,
    pub solution: ConicSolution,
    pub decision: Decision,
    /// Iterations of the score solve plus the face solve, if any.
    pub iterations: usize,
}

/// Realizes `g` as explicit vectors: the eigenpairs with
/// `lambda > tau_rank * lambda_max` give one coordinate each, basis vector `i`
/// is row `i` of `V diag(sqrt(lambda))`. Iterates and oracle outputs follow
/// from the problem's linear relations; values are read from `f`.
pub fn reconstruct(
    g: &DMatrix<f64>,
    f: &DVector<f64>,
    problem: &CycleProblem,
    tau_rank: f64,
) -> Result<CycleCertificate, CycleError> {
    let basis = gram_factor(g, tau_rank, problem.context.basis_dim())?;
    let points: Vec<Vec<f64>> = problem
        .iterates
        .iter()
        .map(|e| e.realize(&basis).as_slice().to_vec())
        .collect();
    let oracle_values = problem
        .oracle_outputs
        .iter()
        .map(|stage| stage.iter().map(|e| e.realize(&basis).as_slice().to_vec()).collect())
        .collect();
    let mut function_values: BTreeMap<_, Vec<f64>> = BTreeMap::new();
    for (i, o) in problem.value_origins.iter().enumerate() {
        function_values.entry(o.family).or_default().push(f[i]);
    }
    let order = problem.method.order;
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let score = (0..order).map(|t| diff(&points[t], &points[t + problem.k])).sum();
    let normalization = diff(&points[1], &points[0]);
    Ok(CycleCertificate {
        method: problem.method.kind,
        classes: problem.classes.clone(),
        k: problem.k,
        order,
        dimension: basis.ncols(),
        points,
        oracle_values,
        function_values,
        score,
        normalization,
        residuals: CertificateResiduals::default(),
        verdict: Verdict::Inconclusive,
    })
}

/// Rows are the coordinates of the basis vectors; `B B^T` is the truncated `g`.
pub fn gram_factor(g: &DMatrix<f64>, tau_rank: f64, n: usize) -> Result<DMatrix<f64>, CycleError> {
    if g.nrows() != n || g.ncols() != n {
        return Err(CycleError::DimensionMismatch { want: n, got: g.nrows() });
    }
    let eig = SymmetricEigen::new((g + g.transpose()) * 0.5);
    let lmax = eig.eigenvalues.max();
    if !(lmax > 0.0) {
        return Err(CycleError::ZeroGram);
    }
    let mut keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > tau_rank * lmax).collect();
    keep.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut basis = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        basis
            .column_mut(c)
            .copy_from(&(eig.eigenvectors.column(i) * eig.eigenvalues[i].sqrt()));
    }
    Ok(basis)
}

/// Orthonormal basis `N` of the Gram coordinates on which every closing
/// difference `x_t - x_{t+K}`, `t < l`, vanishes. Empty when only the zero
/// matrix closes the cycle.
pub fn cycle_face_basis(problem: &CycleProblem) -> DMatrix<f64> {
    let n = problem.context.basis_dim();
    let order = problem.method.order;
    let mut d = DMatrix::zeros(order, n);
    for t in 0..order {
        let diff = problem.iterates[t]
            .checked_axpy(-1.0, &problem.iterates[t + problem.k])
            .expect("iterates share a context");
        for (&i, &c) in diff.coeffs() {
            d[(t, i)] = c;
        }
    }
    let eig = SymmetricEigen::new(d.transpose() * &d);
    let scale = eig.eigenvalues.amax().max(1.0);
    let null: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= 1e-12 * scale).collect();
    let mut out = DMatrix::zeros(n, null.len());
    for (c, &i) in null.iter().enumerate() {
        out.column_mut(c).copy_from(&eig.eigenvectors.column(i));
    }
    out
}

/// Upper-triangle entries of `m` above `tol`.
fn upper_triplets(m: &DMatrix<f64>, tol: f64) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..=j {
            if m[(i, j)].abs() > tol {
                out.push((i, j, m[(i, j)]));
            }
        }
    }
    out
}

/// `p` with `G = N H N^T` substituted and objective `tr(H)`. Rows that vanish
/// identically are dropped; `None` if one of them cannot hold.
pub fn restrict_to_face(p: &ConicProgram, face: &DMatrix<f64>) -> Option<ConicProgram> {
    let r = face.ncols();
    if r == 0 {
        return None;
    }
    let mut constraints = Vec::with_capacity(p.constraints.len());
    for c in &p.constraints {
        let a = triplet_matrix(p.psd_dim, &c.psd);
        let psd = upper_triplets(&(face.transpose() * &a * face), 1e-13 * a.amax());
        if psd.is_empty() && c.free.is_empty() {
            let holds = match c.sense {
                Sense::Eq => c.rhs.abs() <= 1e-12,
                Sense::Ge => c.rhs <= 1e-12,
            };
            if !holds {
                return None;
            }
            continue;
        }
        constraints.push(ConicConstraint {
            label: c.label.clone(),
            psd,
            free: c.free.clone(),
            sense: c.sense,
            rhs: c.rhs,
        });
    }
    Some(ConicProgram {
        psd_dim: r,
        free_dim: p.free_dim,
        objective_psd: (0..r).map(|i| (i, i, 1.0)).collect(),
        objective_free: Vec::new(),
        objective_constant: 0.0,
        constraints,
    })
}

struct Attempt {
    certificate: CycleCertificate,
    verification: Verification,
    iterations: usize,
}

fn attempt(
    g: &DMatrix<f64>,
    f: &DVector<f64>,
    problem: &CycleProblem,
    th: &Thresholds,
    iterations: usize,
) -> Option<Attempt> {
    let mut certificate = reconstruct(g, f, problem, th.tau_rank).ok()?;
    let verification = verify_certificate(&certificate, th.verify_tol, th.delta_cycle).ok()?;
    certificate.residuals = verification.residuals.clone();
    Some(Attempt {
        certificate,
        verification,
        iterations,
    })
}

/// Minimal-trace Gram matrix on the cycle face, lifted back to the full basis.
fn face_solution(problem: &CycleProblem, opts: &SolverOptions) -> Option<(DMatrix<f64>, DVector<f64>, usize)> {
    let (program, _) = lower_to_conic(problem).ok()?;
    let face = cycle_face_basis(problem);
    let restricted = restrict_to_face(&program, &face)?;
    // Any status will do: the certificate check is independent of the solve.
    let sol = solve(&restricted, opts).ok()?;
    Some((&face * &sol.g * face.transpose(), sol.f, sol.iterations))
}

/// Verdict for `problem` from its score solve `sol`.
pub fn decide(sol: &ConicSolution, problem: &CycleProblem, cfg: &AnalysisConfig) -> Decision {
    decide_counting(sol, problem, cfg).0
}

fn decide_counting(sol: &ConicSolution, problem: &CycleProblem, cfg: &AnalysisConfig) -> (Decision, usize) {
    let th = &cfg.thresholds;
    let score = sol.primal_objective;
    let mut decision = Decision {
        verdict: Verdict::Inconclusive,
        score,
        status: sol.status,
        certificate: None,
        reason: String::new(),
    };
    if sol.status == SolveStatus::PrimalInfeasible {
        // No trajectory moves at all, so none cycles.
        decision.verdict = Verdict::NoCycleAtThisK;
        decision.score = f64::INFINITY;
        decision.reason = "normalization infeasible: every trajectory is stationary".into();
        return (decision, 0);
    }
    if !matches!(sol.status, SolveStatus::Optimal | SolveStatus::SlowProgress) {
        decision.reason = format!("solver ended with {:?}", sol.status);
        return (decision, 0);
    }
    if score <= th.delta_cycle {
        let mut attempts = Vec::new();
        if let Some((g, f, iters)) = face_solution(problem, &cfg.solver) {
            attempts.extend(attempt(&g, &f, problem, th, iters));
        }
        if attempts.iter().all(|a| !a.verification.passed()) {
            attempts.extend(attempt(&sol.g, &sol.f, problem, th, 0));
        }
        let extra = attempts.iter().map(|a| a.iterations).sum();
        let best = match attempts.iter().position(|a| a.verification.passed()) {
            Some(i) => Some(attempts.swap_remove(i)),
            None => attempts.into_iter().next(),
        };
        match best {
            Some(a) if a.verification.passed() => {
                let mut cert = a.certificate;
                cert.verdict = Verdict::CycleFound;
                decision.verdict = Verdict::CycleFound;
                decision.reason = format!("verified cycle in dimension {}", cert.dimension);
                decision.certificate = Some(cert);
            }
            Some(a) => {
                decision.reason = format!("certificate rejected: {}", a.verification.failures.join("; "));
                decision.certificate = Some(a.certificate);
            }
            None => decision.reason = "no certificate could be reconstructed".into(),
        }
        return (decision, extra);
    }
    // A nearly feasible dual bounds the optimum from below even when the
    // primal stalls.
    let dual_bound = sol.residuals.dual <= 100.0 * cfg.solver.feas_tol && sol.dual_objective >= th.delta_separate;
    if score >= th.delta_separate && sol.status == SolveStatus::Optimal {
        decision.verdict = Verdict::NoCycleAtThisK;
        decision.reason = format!("score {score:.3e} separated from zero");
    } else if score >= th.delta_separate && dual_bound {
        decision.verdict = Verdict::NoCycleAtThisK;
        decision.reason = format!("dual bound {:.3e} separated from zero", sol.dual_objective);
    } else if score >= th.delta_separate {
        decision.reason = format!("score {score:.3e} from a non-optimal solve");
    } else {
        decision.reason = format!("score {score:.3e} in the dead band");
    }
    (decision, 0)
}

/// Lowers, solves and decides one problem.
pub fn analyze(problem: &CycleProblem, cfg: &AnalysisConfig) -> Result<Analysis, CycleError> {
    let (program, _) = lower_to_conic(problem)?;
    let solution = solve(&program, &cfg.solver)?;
    let (decision, extra) = decide_counting(&solution, problem, cfg);
    let iterations = solution.iterations + extra;
    Ok(Analysis {
        program,
        solution,
        decision,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::methods::{check_cycle_prefix, heavy_ball, nesterov, simulate, MethodSpec};
    use crate::pep::{build_cycle_problem, default_classes};

    fn problem(method: &crate::methods::MethodSpec, mu: f64, l: f64, k: usize) -> CycleProblem {
        build_cycle_problem(method, &default_classes(method, mu, l), k).unwrap()
    }

    fn example_one() -> Analysis {
        let p = problem(&heavy_ball(1.0 / 9.0, 4.0 / 9.0), 1.0, 25.0, 3);
        analyze(&p, &AnalysisConfig::default()).unwrap()
    }

    #[test]
    fn rank_one_gram_gives_scalar_points() {
        let p = problem(&heavy_ball(1.0, 0.0), 0.0, 1.0, 2);
        let n = p.context.basis_dim();
        let v = DVector::from_fn(n, |i, _| (i + 1) as f64);
        let g = &v * v.transpose();
        let f = DVector::zeros(p.context.value_dim());
        let cert = reconstruct(&g, &f, &p, 1e-7).unwrap();
        assert_eq!(cert.dimension, 1);
        // x_1 - x_0 is the first basis vector.
        assert!((cert.points[1][0].abs() - 1.0).abs() < 1e-12);
        let basis = gram_factor(&g, 1e-7, n).unwrap();
        assert!((basis.column(0).abs() - &v).norm() < 1e-10);
    }

    #[test]
    fn zero_gram_is_an_error() {
        let p = problem(&heavy_ball(1.0, 0.0), 0.0, 1.0, 2);
        let n = p.context.basis_dim();
        let err = reconstruct(&DMatrix::zeros(n, n), &DVector::zeros(p.context.value_dim()), &p, 1e-7);
        assert_eq!(err.unwrap_err(), CycleError::ZeroGram);
        assert!(matches!(
            gram_factor(&DMatrix::identity(2, 2), 1e-7, 3),
            Err(CycleError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gram_factor_reproduces_truncated_gram() {
        let m = DMatrix::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let g = &m * m.transpose();
        let b = gram_factor(&g, 1e-7, 6).unwrap();
        assert_eq!(b.ncols(), 4);
        assert!((&b * b.transpose() - &g).norm() <= 1e-9 * g.norm());
    }

    #[test]
    fn gradient_descent_converges() {
        let a = analyze(&problem(&heavy_ball(1.0, 0.0), 0.0, 1.0, 2), &AnalysisConfig::default()).unwrap();
        assert_eq!(a.decision.verdict, Verdict::NoCycleAtThisK);
        assert!(a.decision.certificate.is_none());
    }

    #[test]
    fn example_one_cycles_with_length_three() {
        let a = example_one();
        let cert = a.decision.certificate.expect("certificate");
        assert_eq!(a.decision.verdict, Verdict::CycleFound);
        assert!(cert.dimension <= 3);
        assert!(cert.score <= 1e-6);
        let v = verify_certificate(&cert, 1e-5, 1e-6).unwrap();
        assert!(v.passed(), "{:?}", v.failures);
        // Replay on the recorded table visits three distinct points in turn.
        let method = MethodSpec::from_kind(cert.method).unwrap();
        let init: Vec<_> = (0..2).map(|t| cert.point(t)).collect();
        let table = table_for(&cert);
        let run = simulate(&method, &table, &init, 9).unwrap();
        for t in 0..8 {
            assert!((&run.points[t] - &run.points[t + 3]).norm() <= 1e-5);
        }
        assert!((&run.points[0] - &run.points[1]).norm() >= 0.5);
        assert!(check_cycle_prefix(&run, 3, 2, 1e-5).unwrap());
    }

    fn table_for(cert: &CycleCertificate) -> TableOracle {
        TableOracle::from_certificate(cert).unwrap()
    }

    #[test]
    fn certificate_round_trips_through_json() {
        let cert = example_one().decision.certificate.unwrap();
        let back = CycleCertificate::from_json(&cert.to_json()).unwrap();
        assert_eq!(back, cert);
        assert!(verify_certificate(&back, 1e-5, 1e-6).unwrap().passed());
    }

    #[test]
    fn tampered_certificates_fail() {
        let cert = example_one().decision.certificate.unwrap();
        let mut moved = cert.clone();
        moved.points[2][0] += 1e-3;
        let v = verify_certificate(&moved, 1e-5, 1e-6).unwrap();
        assert!(!v.passed());
        assert!(v.residuals.method >= 1e-4);

        let mut values = cert.clone();
        let fv = values.function_values.get_mut(&crate::methods::OracleFamily::Objective).unwrap();
        fv[0] = fv[1] - 100.0;
        let v = verify_certificate(&values, 1e-5, 1e-6).unwrap();
        assert!(v.failures.iter().any(|f| f.contains("interpolation")), "{:?}", v.failures);

        let mut short = cert;
        short.points.pop();
        assert!(verify_certificate(&short, 1e-5, 1e-6).is_err());
    }

    #[test]
    fn nesterov_boundary_matches_the_quadratic_two_cycle() {
        let beta = 0.5;
        let gamma = 2.0 * (1.0 + beta) / (1.0 + 2.0 * beta);
        let method = nesterov(gamma, beta);
        let p = problem(&method, 0.0, 1.0, 2);
        let a = analyze(&p, &AnalysisConfig::default()).unwrap();
        assert_eq!(a.decision.verdict, Verdict::CycleFound);
        let cert = a.decision.certificate.unwrap();
        let analytic = analytic_oracles().into_iter().find(|c| c.name == "nesterov boundary beta=0.5").unwrap();
        let (gw, _) = p.witness(&analytic.trajectory().unwrap()).unwrap();
        let gram = certificate_gram(&p, &cert);
        let (sw, sc) = (gw[(0, 0)], gram[(0, 0)]);
        assert!((&gw / sw - &gram / sc).norm() <= 1e-5, "{gw} vs {gram}");
    }

    /// Gram matrix of the certificate's basis vectors, in the problem's basis order.
    fn certificate_gram(p: &CycleProblem, cert: &CycleCertificate) -> DMatrix<f64> {
        let rows: Vec<DVector<f64>> = p
            .basis_origins
            .iter()
            .map(|o| match *o {
                crate::pep::BasisOrigin::InitialState { index } => cert.point(index) - cert.point(0),
                crate::pep::BasisOrigin::Oracle { t, slot } => DVector::from_column_slice(&cert.oracle_values[t][slot]),
            })
            .collect();
        DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i].dot(&rows[j]))
    }

    #[test]
    fn face_basis_annihilates_the_closing_differences() {
        let p = problem(&heavy_ball(1.0 / 9.0, 4.0 / 9.0), 1.0, 25.0, 3);
        let face = cycle_face_basis(&p);
        assert_eq!(face.ncols(), p.context.basis_dim() - 2);
        for t in 0..2 {
            let diff = p.iterates[t].checked_axpy(-1.0, &p.iterates[t + 3]).unwrap();
            let d = DVector::from_fn(p.context.basis_dim(), |i, _| diff.coeff(crate::symbolic::BasisIndex(i)));
            assert!((face.transpose() * d).norm() < 1e-12);
        }
        assert!((face.transpose() * &face - DMatrix::identity(face.ncols(), face.ncols())).norm() < 1e-12);
    }

    #[test]
    fn dead_band_and_failures_are_inconclusive() {
        let p = problem(&heavy_ball(1.0, 0.0), 0.0, 1.0, 2);
        let (program, _) = lower_to_conic(&p).unwrap();
        let mut sol = solve(&program, &SolverOptions::default()).unwrap();
        let cfg = AnalysisConfig::default();
        sol.primal_objective = 1e-5;
        assert_eq!(decide(&sol, &p, &cfg).verdict, Verdict::Inconclusive);
        sol.primal_objective = 0.5;
        sol.status = SolveStatus::SlowProgress;
        assert_eq!(decide(&sol, &p, &cfg).verdict, Verdict::NoCycleAtThisK);
        sol.residuals.dual = 1e-3;
        assert_eq!(decide(&sol, &p, &cfg).verdict, Verdict::Inconclusive);
        sol.status = SolveStatus::IterationLimit;
        assert_eq!(decide(&sol, &p, &cfg).verdict, Verdict::Inconclusive);
        // A small score without an exact cycle behind it is rejected.
        sol.status = SolveStatus::Optimal;
        sol.primal_objective = 1e-9;
        let d = decide(&sol, &p, &cfg);
        assert_eq!(d.verdict, Verdict::Inconclusive);
        assert!(d.reason.contains("certificate") || d.reason.contains("reconstructed"), "{}", d.reason);
    }

    #[test]
    fn stalled_solves_separate_through_the_dual_bound() {
        let method = crate::methods::inexact_gradient(0.8, 0.0).unwrap();
        let a = analyze(&problem(&method, 0.0, 1.0, 2), &AnalysisConfig::default()).unwrap();
        assert_eq!(a.decision.verdict, Verdict::NoCycleAtThisK, "{}", a.decision.reason);
        // Gradient descent on x^2/2 with step 0.8 contracts by 0.2 per step.
        assert!((a.solution.dual_objective - 1.44).abs() <= 1e-4);
    }

    #[test]
    fn stationary_methods_have_no_cycle() {
        let method = crate::methods::inexact_gradient(0.0, 0.5).unwrap();
        let a = analyze(&problem(&method, 0.0, 1.0, 2), &AnalysisConfig::default()).unwrap();
        assert_eq!(a.solution.status, SolveStatus::PrimalInfeasible);
        assert_eq!(a.decision.verdict, Verdict::NoCycleAtThisK);
        assert_eq!(a.decision.score, f64::INFINITY);
    }

    #[test]
    fn analytic_cycles_close_and_interpolate() {
        for c in analytic_oracles() {
            let traj = c.trajectory().unwrap();
            assert!(check_cycle_prefix(&traj, c.k, c.method.order, 1e-9).unwrap(), "{}", c.name);
            assert!(c.interpolation_violation(&traj) <= 1e-9, "{}", c.name);
        }
    }

    #[test]
    fn logistic_two_cycle_points() {
        let c = analytic_oracles().into_iter().find(|c| c.name.starts_with("logistic rho=3.2")).unwrap();
        let traj = c.trajectory().unwrap();
        let mut xs = vec![traj.points[0][0], traj.points[1][0]];
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] - 0.5130).abs() < 1e-4 && (xs[1] - 0.7995).abs() < 1e-4);
    }
}
