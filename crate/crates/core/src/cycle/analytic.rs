use nalgebra::DVector;

use crate::classes::{explicit_inexactness_margin, explicit_margins, ExplicitRecord};
use crate::methods::{
    gallery_f_rho, heavy_ball, inexact_gradient, logistic_two_cycle, nesterov, simulate, ExplicitOracle, MethodError,
    MethodKind, MethodSpec, OracleFamily, Quadratic, TrajectoryState,
};
use crate::pep::{default_classes, ClassMap};

/// A closed-form cycle: `method` started at `init` on `oracle` returns to
/// `init` after `k` steps.
pub struct AnalyticCycle {
    pub name: String,
    pub method: MethodSpec,
    /// Classes the oracle belongs to, when the cycle is in scope of the
    /// convex searches; `None` for the nonconvex logistic instances.
    pub classes: Option<ClassMap>,
    /// Smoothness constant of the objective.
    pub smoothness: f64,
    pub k: usize,
    pub init: Vec<DVector<f64>>,
    pub oracle: Box<dyn ExplicitOracle + Send + Sync>,
}

impl AnalyticCycle {
    /// Runs `k` steps from `init`, evaluating the oracle at every state.
    pub fn trajectory(&self) -> Result<TrajectoryState, MethodError> {
        simulate(&self.method, self.oracle.as_ref(), &self.init, self.k)
    }

    /// Largest violation of the interpolation conditions (and of the
    /// inexactness bound) on the evaluations of `traj`.
    pub fn interpolation_violation(&self, traj: &TrajectoryState) -> f64 {
        let records: Vec<ExplicitRecord> = traj
            .evaluations
            .iter()
            .filter(|e| e.family == OracleFamily::Objective)
            .map(|e| e.record.clone())
            .collect();
        let margins = match &self.classes {
            Some(classes) => explicit_margins(&classes[&OracleFamily::Objective], &records).unwrap_or_default(),
            None => smooth_nonconvex_margins(self.smoothness, &records),
        };
        let mut worst = margins.into_iter().fold(0.0, |acc: f64, m| acc.max(-m));
        if let MethodKind::InexactGradient { eps, .. } = self.method.kind {
            for out in &traj.oracle_values {
                worst = worst.max(-explicit_inexactness_margin(&out[0], &out[1], eps));
            }
        }
        worst
    }
}

/// Interpolation margins for `L`-smooth, possibly nonconvex functions, over
/// ordered pairs `(i, j)`: `f_i - f_j - <g_j, dx> - |dg|^2/(4L) + L|dx|^2/4 -
/// <dg, dx>/2 >= 0` with `dx = x_i - x_j`, `dg = g_i - g_j`.
pub fn smooth_nonconvex_margins(l: f64, records: &[ExplicitRecord]) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, ri) in records.iter().enumerate() {
        for (j, rj) in records.iter().enumerate() {
            if i == j {
                continue;
            }
            let dx = &ri.point - &rj.point;
            let dg = &ri.oracle - &rj.oracle;
            let (fi, fj) = (ri.value.unwrap_or(0.0), rj.value.unwrap_or(0.0));
            out.push(
                fi - fj - rj.oracle.dot(&dx) - dg.norm_squared() / (4.0 * l) + l * dx.norm_squared() / 4.0
                    - dg.dot(&dx) / 2.0,
            );
        }
    }
    out
}

fn scalar(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

/// A point on the attracting `k`-cycle of the logistic map at `rho`.
fn logistic_attractor(rho: f64, k: usize) -> f64 {
    let step = |x: f64| rho * x * (1.0 - x);
    let mut x = 0.3;
    for _ in 0..20_000 {
        x = step(x);
    }
    // Polish the period-k fixed point with Newton on x - step^k(x).
    for _ in 0..20 {
        let (mut y, mut dy) = (x, 1.0);
        for _ in 0..k {
            dy *= rho * (1.0 - 2.0 * y);
            y = step(y);
        }
        let r = y - x;
        if r.abs() < 1e-16 {
            break;
        }
        x -= r / (dy - 1.0);
    }
    x
}

/// Closed-form cycles used to calibrate the decision thresholds:
/// Nesterov and gradient descent on the step-size boundary, inexact gradient
/// descent inside its cycling interval, and gradient descent with unit step
/// on `f_rho` where the logistic map has periods 2, 3 and 4.
pub fn analytic_oracles() -> Vec<AnalyticCycle> {
    let l = 1.0;
    let mut out = Vec::new();
    for &beta in &[0.25, 0.5, 0.75] {
        // Characteristic root -1 at (2/L)(1+beta)/(1+2 beta).
        let gamma = 2.0 / l * (1.0 + beta) / (1.0 + 2.0 * beta);
        let method = nesterov(gamma, beta);
        out.push(AnalyticCycle {
            name: format!("nesterov boundary beta={beta}"),
            classes: Some(default_classes(&method, 0.0, l)),
            method,
            smoothness: l,
            k: 2,
            init: vec![scalar(1.0), scalar(-1.0)],
            oracle: Box::new(Quadratic::scalar(l)),
        });
    }
    let method = heavy_ball(2.0 / l, 0.0);
    out.push(AnalyticCycle {
        name: "gradient descent gamma=2/L".into(),
        classes: Some(default_classes(&method, 0.0, l)),
        method,
        smoothness: l,
        k: 2,
        init: vec![scalar(1.0), scalar(-1.0)],
        oracle: Box::new(Quadratic::scalar(l)),
    });
    for &eps in &[0.25, 0.5] {
        let (lo, hi) = (2.0 / (l * (1.0 + eps)), 2.0 / (l * (1.0 - eps)));
        for gamma in [lo, 0.5 * (lo + hi), hi] {
            // d = (2/(gamma L)) g sends x to -x.
            let method = inexact_gradient(gamma, eps).expect("valid parameters");
            let mut q = Quadratic::scalar(l);
            q.direction_scale = Some(2.0 / (gamma * l));
            out.push(AnalyticCycle {
                name: format!("inexact gradient eps={eps} gamma={gamma:.6}"),
                classes: Some(default_classes(&method, 0.0, l)),
                method,
                smoothness: l,
                k: 2,
                init: vec![scalar(1.0)],
                oracle: Box::new(q),
            });
        }
    }
    let gd = heavy_ball(1.0, 0.0);
    let two = logistic_two_cycle(3.2).expect("rho > 3").0;
    for (rho, k, x) in [(3.2, 2, two), (3.83, 3, logistic_attractor(3.83, 3)), (3.5, 4, logistic_attractor(3.5, 4))] {
        let f = gallery_f_rho(rho).expect("rho in range");
        out.push(AnalyticCycle {
            name: format!("logistic rho={rho} period {k}"),
            method: gd.clone(),
            classes: None,
            smoothness: 1.0 + rho,
            k,
            init: vec![scalar(x), scalar(f.gd_step(x))],
            oracle: Box::new(f),
        });
    }
    out
}
