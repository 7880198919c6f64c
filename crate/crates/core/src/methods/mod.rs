//! Stationary first-order methods as step programs.
//!
//! A method of order `l` is split into an oracle stage, run once at every
//! state, and an update that maps the last `l` states (with their oracle
//! outputs) to the next state. Neither stage sees an iteration counter.
//! Both are written against [`Realm`], so the same program drives the
//! symbolic unrolling used to build cycle problems and explicit simulation
//! on concrete functions.

mod explicit;
mod gallery;

pub use explicit::{
    check_cycle_prefix, simulate, ExplicitOracle, ExplicitRealm, OracleFn, Quadratic, TrajectoryState,
};
pub use gallery::{gallery_f_rho, logistic_two_cycle, FRho};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MethodError {
    #[error("invalid method parameters: {0}")]
    InvalidParameters(String),
    #[error("oracle {oracle} undefined at the point visited at step {t}")]
    OracleUndefined { oracle: String, t: usize },
    #[error("expected {expected} initial points, got {got}")]
    WrongInitialization { expected: usize, got: usize },
    #[error("trajectory of length {len} too short for K={k}, order {order}")]
    TrajectoryTooShort { len: usize, k: usize, order: usize },
    #[error("cycle length must be at least 2, got {0}")]
    CycleTooShort(usize),
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
}

/// Which oracle a method queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OracleFamily {
    /// Gradient and value of the objective.
    #[serde(rename = "f")]
    Objective,
    /// The monotone operator of a splitting method.
    #[serde(rename = "A")]
    OperatorA,
    /// The cocoercive operator of a splitting method.
    #[serde(rename = "B")]
    OperatorB,
}

impl fmt::Display for OracleFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleFamily::Objective => "f",
            OracleFamily::OperatorA => "A",
            OracleFamily::OperatorB => "B",
        })
    }
}

/// How an oracle family is accessed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleAccess {
    Gradient,
    Resolvent,
}

/// Vector arithmetic plus oracle access for one trajectory.
pub trait Realm {
    type Vector: Clone;
    type Error;

    /// Called before the oracle stage of state `t`.
    fn begin_state(&mut self, _t: usize) {}

    fn combine(&self, terms: &[(f64, &Self::Vector)]) -> Self::Vector;

    /// Gradient of the objective family at `x`; the value is recorded by the realm.
    fn gradient(&mut self, family: OracleFamily, x: &Self::Vector) -> Result<Self::Vector, Self::Error>;

    /// A direction `d` with `|d - g| <= eps |g|`.
    fn inexact_direction(
        &mut self,
        x: &Self::Vector,
        g: &Self::Vector,
        eps: f64,
    ) -> Result<Self::Vector, Self::Error>;

    /// `x = J_{alpha O}(w)`; returns `x` and the operator value `(w - x) / alpha`.
    fn resolvent(
        &mut self,
        family: OracleFamily,
        alpha: f64,
        w: &Self::Vector,
    ) -> Result<(Self::Vector, Self::Vector), Self::Error>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum MethodKind {
    HeavyBall { gamma: f64, beta: f64 },
    Nesterov { gamma: f64, beta: f64 },
    InexactGradient { gamma: f64, eps: f64 },
    ThreeOperatorSplitting { gamma: f64, beta: f64, alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub order: usize,
    pub parameters: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub kind: MethodKind,
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// `x_{t+1} = x_t + beta (x_t - x_{t-1}) - gamma grad f(x_t)`.
pub fn heavy_ball(gamma: f64, beta: f64) -> MethodSpec {
    MethodSpec {
        name: "hb".into(),
        order: 2,
        parameters: params(&[("gamma", gamma), ("beta", beta)]),
        notes: Vec::new(),
        kind: MethodKind::HeavyBall { gamma, beta },
    }
}

/// Nesterov's method in the one-sequence form
/// `y_{t+1} = (1 + beta)(y_t - gamma g(y_t)) - beta (y_{t-1} - gamma g(y_{t-1}))`.
pub fn nesterov(gamma: f64, beta: f64) -> MethodSpec {
    MethodSpec {
        name: "nag".into(),
        order: 2,
        parameters: params(&[("gamma", gamma), ("beta", beta)]),
        notes: Vec::new(),
        kind: MethodKind::Nesterov { gamma, beta },
    }
}

/// `x_{t+1} = x_t - gamma d_t` with `|d_t - grad f(x_t)| <= eps |grad f(x_t)|`.
pub fn inexact_gradient(gamma: f64, eps: f64) -> Result<MethodSpec, MethodError> {
    if !(eps >= 0.0) {
        return Err(MethodError::InvalidParameters(format!(
            "relative error must be nonnegative, got {eps}"
        )));
    }
    let mut notes = Vec::new();
    if eps >= 1.0 {
        notes.push("degenerate: eps >= 1 allows d_t = 0".to_string());
    }
    Ok(MethodSpec {
        name: "igd".into(),
        order: 1,
        parameters: params(&[("gamma", gamma), ("eps", eps)]),
        notes,
        kind: MethodKind::InexactGradient { gamma, eps },
    })
}

/// Davis-Yin splitting on the state `w`:
/// `x = J_{aB}(w)`, `y = J_{aA}(2x - w - (gamma/beta) grad f(x))`, `w+ = w - beta (x - y)`.
pub fn three_operator_splitting(gamma: f64, beta: f64, alpha: f64) -> Result<MethodSpec, MethodError> {
    if beta == 0.0 {
        return Err(MethodError::InvalidParameters(
            "beta = 0 freezes the state (w_{t+1} = w_t)".into(),
        ));
    }
    if !(alpha > 0.0) {
        return Err(MethodError::InvalidParameters(format!(
            "resolvent scale alpha must be positive, got {alpha}"
        )));
    }
    if !(gamma >= 0.0) {
        return Err(MethodError::InvalidParameters(format!(
            "step-size must be nonnegative, got {gamma}"
        )));
    }
    Ok(MethodSpec {
        name: "tos".into(),
        order: 1,
        parameters: params(&[("gamma", gamma), ("beta", beta), ("alpha", alpha)]),
        notes: Vec::new(),
        kind: MethodKind::ThreeOperatorSplitting { gamma, beta, alpha },
    })
}

impl MethodSpec {
    pub fn from_kind(kind: MethodKind) -> Result<MethodSpec, MethodError> {
        match kind {
            MethodKind::HeavyBall { gamma, beta } => Ok(heavy_ball(gamma, beta)),
            MethodKind::Nesterov { gamma, beta } => Ok(nesterov(gamma, beta)),
            MethodKind::InexactGradient { gamma, eps } => inexact_gradient(gamma, eps),
            MethodKind::ThreeOperatorSplitting { gamma, beta, alpha } => {
                three_operator_splitting(gamma, beta, alpha)
            }
        }
    }

    pub fn parameter(&self, name: &str) -> Option<f64> {
        self.parameters.get(name).copied()
    }

    /// Oracle families queried by the oracle stage.
    pub fn oracle_families(&self) -> Vec<(OracleFamily, OracleAccess)> {
        match self.kind {
            MethodKind::HeavyBall { .. }
            | MethodKind::Nesterov { .. }
            | MethodKind::InexactGradient { .. } => {
                vec![(OracleFamily::Objective, OracleAccess::Gradient)]
            }
            MethodKind::ThreeOperatorSplitting { .. } => vec![
                (OracleFamily::OperatorB, OracleAccess::Resolvent),
                (OracleFamily::Objective, OracleAccess::Gradient),
                (OracleFamily::OperatorA, OracleAccess::Resolvent),
            ],
        }
    }

    /// Families whose first oracle output may be taken as zero. Translating
    /// each operator graph (and tilting `f` by a linear term) with offsets
    /// that cancel in the update leaves every state and every class
    /// unchanged, so three families carry two free offsets.
    pub fn gauge_pins(&self) -> &'static [OracleFamily] {
        match self.kind {
            MethodKind::ThreeOperatorSplitting { .. } => &[OracleFamily::OperatorB, OracleFamily::Objective],
            _ => &[],
        }
    }

    /// Names of the vectors returned by the oracle stage, in order.
    pub fn oracle_labels(&self) -> &'static [&'static str] {
        match self.kind {
            MethodKind::HeavyBall { .. } | MethodKind::Nesterov { .. } => &["g"],
            MethodKind::InexactGradient { .. } => &["g", "d"],
            MethodKind::ThreeOperatorSplitting { .. } => &["x", "Bx", "g", "y", "Ay"],
        }
    }

    /// Oracle stage at state `x`.
    pub fn oracle<R: Realm>(&self, realm: &mut R, x: &R::Vector) -> Result<Vec<R::Vector>, R::Error> {
        match self.kind {
            MethodKind::HeavyBall { .. } | MethodKind::Nesterov { .. } => {
                Ok(vec![realm.gradient(OracleFamily::Objective, x)?])
            }
            MethodKind::InexactGradient { eps, .. } => {
                let g = realm.gradient(OracleFamily::Objective, x)?;
                let d = realm.inexact_direction(x, &g, eps)?;
                Ok(vec![g, d])
            }
            MethodKind::ThreeOperatorSplitting { gamma, beta, alpha } => {
                let (xb, bx) = realm.resolvent(OracleFamily::OperatorB, alpha, x)?;
                let g = realm.gradient(OracleFamily::Objective, &xb)?;
                let v = realm.combine(&[(2.0, &xb), (-1.0, x), (-gamma / beta, &g)]);
                let (ya, ay) = realm.resolvent(OracleFamily::OperatorA, alpha, &v)?;
                Ok(vec![xb, bx, g, ya, ay])
            }
        }
    }

    /// Next state from the last `order` states (oldest first) and their
    /// oracle outputs.
    pub fn update<R: Realm>(&self, realm: &R, states: &[R::Vector], outputs: &[Vec<R::Vector>]) -> R::Vector {
        debug_assert_eq!(states.len(), self.order);
        debug_assert_eq!(outputs.len(), self.order);
        match self.kind {
            MethodKind::HeavyBall { gamma, beta } => {
                let (prev, cur) = (&states[0], &states[1]);
                let g = &outputs[1][0];
                realm.combine(&[(1.0 + beta, cur), (-beta, prev), (-gamma, g)])
            }
            MethodKind::Nesterov { gamma, beta } => {
                let (prev, cur) = (&states[0], &states[1]);
                let (gp, gc) = (&outputs[0][0], &outputs[1][0]);
                realm.combine(&[
                    (1.0 + beta, cur),
                    (-(1.0 + beta) * gamma, gc),
                    (-beta, prev),
                    (beta * gamma, gp),
                ])
            }
            MethodKind::InexactGradient { gamma, .. } => {
                realm.combine(&[(1.0, &states[0]), (-gamma, &outputs[0][1])])
            }
            MethodKind::ThreeOperatorSplitting { beta, .. } => {
                let out = &outputs[0];
                realm.combine(&[(1.0, &states[0]), (-beta, &out[0]), (beta, &out[3])])
            }
        }
    }

    /// Recognized named tunings for a class with parameters `(mu, l)`.
    pub fn tuning_notes(&self, mu: f64, l: f64) -> Vec<String> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
        let (sl, sm) = (l.sqrt(), mu.sqrt());
        let mut out = Vec::new();
        match self.kind {
            MethodKind::HeavyBall { gamma, beta } => {
                let g = (2.0 / (sl + sm)).powi(2);
                let b = ((sl - sm) / (sl + sm)).powi(2);
                if close(gamma, g) && close(beta, b) {
                    out.push("Chebyshev-limit tuning (optimal on quadratics)".into());
                }
            }
            MethodKind::Nesterov { gamma, beta } => {
                if close(gamma, 1.0 / l) && close(beta, (sl - sm) / (sl + sm)) {
                    out.push("accelerated tuning (gamma = 1/L, beta = (sqrt L - sqrt mu)/(sqrt L + sqrt mu))".into());
                }
            }
            _ => {}
        }
        out
    }
}

/// States and oracle outputs produced by [`unroll`].
#[derive(Debug, Clone)]
pub struct Unrolled<V> {
    pub states: Vec<V>,
    pub outputs: Vec<Vec<V>>,
}

/// Runs `method` from `init` until `total` states exist. The oracle is called
/// at every state except the last one unless `oracle_at_last` is set.
pub fn unroll<R: Realm>(
    method: &MethodSpec,
    realm: &mut R,
    init: Vec<R::Vector>,
    total: usize,
    oracle_at_last: bool,
) -> Result<Unrolled<R::Vector>, R::Error> {
    let order = method.order;
    assert_eq!(init.len(), order, "initialization must hold `order` states");
    assert!(total >= order);
    let mut states = init;
    let mut outputs: Vec<Vec<R::Vector>> = Vec::new();
    for t in 0..order {
        if t + 1 < total || oracle_at_last {
            realm.begin_state(t);
            let out = method.oracle(realm, &states[t])?;
            outputs.push(out);
        }
    }
    while states.len() < total {
        let n = states.len();
        let next = method.update(realm, &states[n - order..], &outputs[n - order..]);
        states.push(next);
        if states.len() < total || oracle_at_last {
            realm.begin_state(n);
            let out = method.oracle(realm, &states[n])?;
            outputs.push(out);
        }
    }
    Ok(Unrolled { states, outputs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_one_tuning_is_recognized() {
        let (mu, l) = (1.0f64, 25.0f64);
        let gamma = (2.0 / (l.sqrt() + mu.sqrt())).powi(2);
        let beta = ((l.sqrt() - mu.sqrt()) / (l.sqrt() + mu.sqrt())).powi(2);
        assert!((gamma - 1.0 / 9.0).abs() < 1e-15);
        assert!((beta - 4.0 / 9.0).abs() < 1e-15);
        assert_eq!(heavy_ball(1.0 / 9.0, 4.0 / 9.0).tuning_notes(mu, l).len(), 1);
    }

    #[test]
    fn nesterov_accelerated_tuning_is_recognized() {
        let (mu, l) = (1.0f64, 16.0f64);
        let m = nesterov(1.0 / l, (4.0 - 1.0) / (4.0 + 1.0));
        assert_eq!(m.tuning_notes(mu, l).len(), 1);
        assert!(nesterov(0.5 / l, 0.6).tuning_notes(mu, l).is_empty());
    }

    #[test]
    fn degenerate_inexactness_is_flagged() {
        assert!(inexact_gradient(1.0, 1.0).unwrap().notes[0].contains("degenerate"));
        assert!(inexact_gradient(1.0, 0.5).unwrap().notes.is_empty());
        assert!(inexact_gradient(1.0, -0.5).is_err());
    }

    #[test]
    fn splitting_rejects_zero_relaxation() {
        assert!(three_operator_splitting(1.0, 0.0, 1.0).is_err());
        assert!(three_operator_splitting(1.0, 1.0, 0.0).is_err());
        assert!(three_operator_splitting(1.0, 1.5, 1.0).is_ok());
    }

    #[test]
    fn orders() {
        assert_eq!(heavy_ball(1.0, 0.5).order, 2);
        assert_eq!(nesterov(1.0, 0.5).order, 2);
        assert_eq!(inexact_gradient(1.0, 0.5).unwrap().order, 1);
        assert_eq!(three_operator_splitting(1.0, 1.0, 1.0).unwrap().order, 1);
    }

    use nalgebra::DVector;
    use proptest::prelude::*;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn gd_on_half_square() {
        let q = Quadratic::scalar(1.0);
        let traj = simulate(&heavy_ball(1.0, 0.0), &q, &[v1(4.0), v1(4.0)], 2).unwrap();
        assert_eq!(traj.scalars()[1..], [4.0, 0.0, 0.0]);
        let traj = simulate(&heavy_ball(1.0, 0.0), &q, &[v1(1.0), v1(1.0)], 1).unwrap();
        assert_eq!(traj.scalars()[2], 0.0);
        let traj = simulate(&inexact_gradient(1.0, 0.0).unwrap(), &q, &[v1(4.0)], 2).unwrap();
        assert_eq!(traj.scalars(), [4.0, 0.0, 0.0]);
    }

    #[test]
    fn momentum_off_is_gradient_descent() {
        let q = Quadratic::scalar(3.0);
        let hb = simulate(&heavy_ball(0.2, 0.0), &q, &[v1(7.0), v1(2.0)], 20).unwrap();
        let nag = simulate(&nesterov(0.2, 0.0), &q, &[v1(7.0), v1(2.0)], 20).unwrap();
        let mut x = 2.0;
        for t in 1..22 {
            assert!((hb.points[t][0] - x).abs() < 1e-14);
            assert!((nag.points[t][0] - x).abs() < 1e-14);
            x -= 0.2 * 3.0 * x;
        }
    }

    #[test]
    fn wrong_initialization_is_rejected() {
        let q = Quadratic::scalar(1.0);
        assert_eq!(
            simulate(&heavy_ball(1.0, 0.5), &q, &[v1(1.0)], 3).unwrap_err(),
            MethodError::WrongInitialization { expected: 2, got: 1 }
        );
    }

    #[test]
    fn undefined_oracle_reports_the_state() {
        let o = OracleFn::new().with_gradient(|_, x| (x[0] < 2.5).then(|| (x.clone(), 0.0)));
        // x_{t+1} = x_t + 1 on g = x with gamma = -1/x: use a shift that crosses 2.5 at t = 3.
        let m = inexact_gradient(-1.0, 0.0).unwrap();
        let o = o.with_direction(|_, _, _| Some(DVector::from_element(1, 1.0)));
        let err = simulate(&m, &o, &[v1(0.0)], 5).unwrap_err();
        assert_eq!(
            err,
            MethodError::OracleUndefined { oracle: "gradient of f".into(), t: 3 }
        );
    }

    #[test]
    fn nesterov_boundary_two_cycle() {
        for &(l, beta) in &[(1.0, 0.0), (1.0, 0.5), (4.0, 0.9), (2.5, 0.25)] {
            let gamma = 2.0 / l * (1.0 + beta) / (1.0 + 2.0 * beta);
            let traj = simulate(&nesterov(gamma, beta), &Quadratic::scalar(l), &[v1(1.0), v1(-1.0)], 40).unwrap();
            for t in 0..traj.len() - 1 {
                assert!((traj.points[t + 1][0] + traj.points[t][0]).abs() < 1e-12);
            }
            assert!(check_cycle_prefix(&traj, 2, 2, 1e-12).unwrap());
        }
    }

    #[test]
    fn igd_scaled_direction_two_cycle() {
        // d = c g with c = 2 / (gamma L) sends x to -x.
        let (l, gamma) = (2.0, 0.8);
        let mut q = Quadratic::scalar(l);
        q.direction_scale = Some(2.0 / (gamma * l));
        let traj = simulate(&inexact_gradient(gamma, 0.5).unwrap(), &q, &[v1(1.5)], 6).unwrap();
        assert!(check_cycle_prefix(&traj, 2, 1, 1e-12).unwrap());
    }

    #[test]
    fn tos_with_zero_operators_is_fixed() {
        let o = OracleFn::new()
            .with_gradient(|_, x| Some((DVector::zeros(x.len()), 0.0)))
            .with_resolvent(|_, _, w| Some(w.clone()));
        let w0 = DVector::from_vec(vec![1.0, -2.0]);
        let traj = simulate(&three_operator_splitting(0.7, 1.3, 0.7).unwrap(), &o, &[w0.clone()], 5).unwrap();
        for (t, p) in traj.points.iter().enumerate() {
            assert_eq!(p, &w0);
            assert_eq!(traj.oracle_values[t][0], w0);
            assert_eq!(traj.oracle_values[t][3], w0);
        }
    }

    #[test]
    fn tos_resolvent_identity() {
        let mut q = Quadratic::new(nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        q.op_a = Some(nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -2.0, 1.0]));
        q.op_b = Some(nalgebra::DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.25]));
        let (gamma, beta, alpha) = (0.4, 1.2, 0.6);
        let m = three_operator_splitting(gamma, beta, alpha).unwrap();
        let traj = simulate(&m, &q, &[DVector::from_vec(vec![1.0, 2.0])], 4).unwrap();
        for t in 0..traj.len() {
            let w = &traj.points[t];
            let o = &traj.oracle_values[t];
            let (x, bx, g, y, ay) = (&o[0], &o[1], &o[2], &o[3], &o[4]);
            assert!((w - (x + bx * alpha)).norm() < 1e-12);
            assert!((bx - q.op_b.as_ref().unwrap() * x).norm() < 1e-12);
            assert!((ay - q.op_a.as_ref().unwrap() * y).norm() < 1e-12);
            let v = x * 2.0 - w - g * (gamma / beta);
            assert!((v - (y + ay * alpha)).norm() < 1e-12);
            if t + 1 < traj.len() {
                assert!((&traj.points[t + 1] - (w - (x - y) * beta)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn check_cycle_prefix_basics() {
        let alt = TrajectoryState {
            points: (0..6).map(|t| v1(if t % 2 == 0 { 1.0 } else { -1.0 })).collect(),
            oracle_values: vec![Vec::new(); 6],
            evaluations: Vec::new(),
        };
        assert!(check_cycle_prefix(&alt, 2, 1, 0.0).unwrap());
        let geo = TrajectoryState {
            points: (0..10).map(|t| v1(0.5f64.powi(t))).collect(),
            oracle_values: vec![Vec::new(); 10],
            evaluations: Vec::new(),
        };
        for k in 2..8 {
            assert!(!check_cycle_prefix(&geo, k, 2, 1e-3).unwrap());
        }
        assert!(matches!(check_cycle_prefix(&geo, 9, 2, 1e-3), Err(MethodError::TrajectoryTooShort { .. })));
        assert_eq!(check_cycle_prefix(&geo, 1, 2, 1e-3), Err(MethodError::CycleTooShort(1)));
    }

    fn any_method() -> impl Strategy<Value = MethodSpec> {
        prop_oneof![
            (0.0f64..1.0, 0.0f64..1.0).prop_map(|(g, b)| heavy_ball(g, b)),
            (0.0f64..1.0, 0.0f64..1.0).prop_map(|(g, b)| nesterov(g, b)),
            (0.0f64..1.0, 0.0f64..0.9).prop_map(|(g, e)| inexact_gradient(g, e).unwrap()),
            (0.0f64..1.0, 0.1f64..2.0, 0.1f64..1.0)
                .prop_map(|(g, b, a)| three_operator_splitting(g, b, a).unwrap()),
        ]
    }

    fn test_oracle() -> Quadratic {
        let mut q = Quadratic::new(nalgebra::DMatrix::from_row_slice(2, 2, &[1.5, 0.3, 0.3, 0.5]))
            .centered_at(DVector::from_vec(vec![0.2, -0.1]));
        q.op_a = Some(nalgebra::DMatrix::from_row_slice(2, 2, &[0.2, 1.0, -1.0, 0.2]));
        q.op_b = Some(nalgebra::DMatrix::identity(2, 2));
        q.direction_scale = Some(1.1);
        q
    }

    proptest! {
        #[test]
        fn restarting_reproduces_the_tail(m in any_method(), s in 0usize..6, x in -2.0f64..2.0) {
            let q = test_oracle();
            let init: Vec<_> = (0..m.order).map(|i| DVector::from_vec(vec![x + i as f64, 1.0 - x])).collect();
            let full = simulate(&m, &q, &init, 12).unwrap();
            let tail = simulate(&m, &q, &full.points[s..s + m.order], 12 - s).unwrap();
            prop_assert_eq!(&tail.points[..], &full.points[s..]);
        }

        #[test]
        fn prefix_cycle_implies_every_window(beta in 0.0f64..1.0, l in 0.5f64..4.0, k in 1usize..4) {
            let gamma = 2.0 / l * (1.0 + beta) / (1.0 + 2.0 * beta);
            let traj = simulate(&nesterov(gamma, beta), &Quadratic::scalar(l), &[v1(1.0), v1(-1.0)], 30).unwrap();
            let kk = 2 * k;
            prop_assert!(check_cycle_prefix(&traj, kk, 2, 1e-9).unwrap());
            for s in 0..=traj.len() - kk - 2 {
                for t in s..s + 2 {
                    prop_assert!((&traj.points[t] - &traj.points[t + kk]).norm() <= 1e-9);
                }
            }
        }
    }
}
