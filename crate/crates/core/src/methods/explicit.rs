use nalgebra::{DMatrix, DVector};

use super::{unroll, MethodError, MethodSpec, OracleFamily, Realm};
use crate::classes::ExplicitRecord;

/// Concrete oracles a method can be run against.
pub trait ExplicitOracle {
    /// Gradient and value of `family` at `x`, or `None` where undefined.
    fn gradient(&self, family: OracleFamily, x: &DVector<f64>) -> Option<(DVector<f64>, f64)>;

    /// Inexact direction; exact gradient by default.
    fn direction(&self, _x: &DVector<f64>, g: &DVector<f64>, _eps: f64) -> Option<DVector<f64>> {
        Some(g.clone())
    }

    /// `J_{alpha O}(w)` for an operator family.
    fn resolvent(&self, _family: OracleFamily, _alpha: f64, _w: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }
}

type GradientFn<'a> = dyn Fn(OracleFamily, &DVector<f64>) -> Option<(DVector<f64>, f64)> + Send + Sync + 'a;
type DirectionFn<'a> = dyn Fn(&DVector<f64>, &DVector<f64>, f64) -> Option<DVector<f64>> + Send + Sync + 'a;
type ResolventFn<'a> = dyn Fn(OracleFamily, f64, &DVector<f64>) -> Option<DVector<f64>> + Send + Sync + 'a;

/// Oracles assembled from closures.
#[derive(Default)]
pub struct OracleFn<'a> {
    gradient: Option<Box<GradientFn<'a>>>,
    direction: Option<Box<DirectionFn<'a>>>,
    resolvent: Option<Box<ResolventFn<'a>>>,
}

impl<'a> OracleFn<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_gradient(
        mut self,
        f: impl Fn(OracleFamily, &DVector<f64>) -> Option<(DVector<f64>, f64)> + Send + Sync + 'a,
    ) -> Self {
        self.gradient = Some(Box::new(f));
        self
    }

    pub fn with_direction(
        mut self,
        f: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> Option<DVector<f64>> + Send + Sync + 'a,
    ) -> Self {
        self.direction = Some(Box::new(f));
        self
    }

    pub fn with_resolvent(
        mut self,
        f: impl Fn(OracleFamily, f64, &DVector<f64>) -> Option<DVector<f64>> + Send + Sync + 'a,
    ) -> Self {
        self.resolvent = Some(Box::new(f));
        self
    }
}

impl ExplicitOracle for OracleFn<'_> {
    fn gradient(&self, family: OracleFamily, x: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
        self.gradient.as_ref().and_then(|f| f(family, x))
    }

    fn direction(&self, x: &DVector<f64>, g: &DVector<f64>, eps: f64) -> Option<DVector<f64>> {
        match &self.direction {
            Some(f) => f(x, g, eps),
            None => Some(g.clone()),
        }
    }

    fn resolvent(&self, family: OracleFamily, alpha: f64, w: &DVector<f64>) -> Option<DVector<f64>> {
        self.resolvent.as_ref().and_then(|f| f(family, alpha, w))
    }
}

/// Linear oracles: `f(x) = (x - c)^T H (x - c) / 2`, optional linear operators
/// `A`, `B` and an optional scaled direction `d = s g`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub hessian: DMatrix<f64>,
    pub center: DVector<f64>,
    pub op_a: Option<DMatrix<f64>>,
    pub op_b: Option<DMatrix<f64>>,
    pub direction_scale: Option<f64>,
}

impl Quadratic {
    pub fn new(hessian: DMatrix<f64>) -> Self {
        let n = hessian.nrows();
        Self {
            hessian,
            center: DVector::zeros(n),
            op_a: None,
            op_b: None,
            direction_scale: None,
        }
    }

    /// `f(x) = (curvature / 2) x^2` in one dimension.
    pub fn scalar(curvature: f64) -> Self {
        Self::new(DMatrix::from_element(1, 1, curvature))
    }

    pub fn centered_at(mut self, c: DVector<f64>) -> Self {
        self.center = c;
        self
    }
}

impl ExplicitOracle for Quadratic {
    fn gradient(&self, family: OracleFamily, x: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
        if family != OracleFamily::Objective || x.len() != self.hessian.nrows() {
            return None;
        }
        let dx = x - &self.center;
        let g = &self.hessian * &dx;
        let v = 0.5 * dx.dot(&g);
        Some((g, v))
    }

    fn direction(&self, _x: &DVector<f64>, g: &DVector<f64>, _eps: f64) -> Option<DVector<f64>> {
        Some(g * self.direction_scale.unwrap_or(1.0))
    }

    fn resolvent(&self, family: OracleFamily, alpha: f64, w: &DVector<f64>) -> Option<DVector<f64>> {
        let op = match family {
            OracleFamily::OperatorA => self.op_a.as_ref(),
            OracleFamily::OperatorB => self.op_b.as_ref(),
            OracleFamily::Objective => None,
        };
        let n = w.len();
        let system = match op {
            Some(m) => DMatrix::identity(n, n) + m * alpha,
            None => DMatrix::identity(n, n),
        };
        system.lu().solve(w)
    }
}

/// One explicit oracle call.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitEvaluation {
    pub family: OracleFamily,
    pub record: ExplicitRecord,
}

/// Runs a method on explicit oracles, logging every evaluation.
pub struct ExplicitRealm<'o, O: ExplicitOracle + ?Sized> {
    oracle: &'o O,
    state: usize,
    pub evaluations: Vec<ExplicitEvaluation>,
}

impl<'o, O: ExplicitOracle + ?Sized> ExplicitRealm<'o, O> {
    pub fn new(oracle: &'o O) -> Self {
        Self {
            oracle,
            state: 0,
            evaluations: Vec::new(),
        }
    }

    fn undefined(&self, what: &str) -> MethodError {
        MethodError::OracleUndefined {
            oracle: what.to_string(),
            t: self.state,
        }
    }
}

impl<O: ExplicitOracle + ?Sized> Realm for ExplicitRealm<'_, O> {
    type Vector = DVector<f64>;
    type Error = MethodError;

    fn begin_state(&mut self, t: usize) {
        self.state = t;
    }

    fn combine(&self, terms: &[(f64, &DVector<f64>)]) -> DVector<f64> {
        let mut out = DVector::zeros(terms[0].1.len());
        for (a, v) in terms {
            out.axpy(*a, v, 1.0);
        }
        out
    }

    fn gradient(&mut self, family: OracleFamily, x: &DVector<f64>) -> Result<DVector<f64>, MethodError> {
        let (g, v) = self
            .oracle
            .gradient(family, x)
            .ok_or_else(|| self.undefined(&format!("gradient of {family}")))?;
        self.evaluations.push(ExplicitEvaluation {
            family,
            record: ExplicitRecord {
                point: x.clone(),
                oracle: g.clone(),
                value: Some(v),
            },
        });
        Ok(g)
    }

    fn inexact_direction(
        &mut self,
        x: &DVector<f64>,
        g: &DVector<f64>,
        eps: f64,
    ) -> Result<DVector<f64>, MethodError> {
        self.oracle
            .direction(x, g, eps)
            .ok_or_else(|| self.undefined("inexact direction"))
    }

    fn resolvent(
        &mut self,
        family: OracleFamily,
        alpha: f64,
        w: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>), MethodError> {
        let x = self
            .oracle
            .resolvent(family, alpha, w)
            .ok_or_else(|| self.undefined(&format!("resolvent of {family}")))?;
        let u = (w - &x) / alpha;
        self.evaluations.push(ExplicitEvaluation {
            family,
            record: ExplicitRecord {
                point: x.clone(),
                oracle: u.clone(),
                value: None,
            },
        });
        Ok((x, u))
    }
}

/// An explicit trajectory with its oracle outputs, aligned by state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub points: Vec<DVector<f64>>,
    pub oracle_values: Vec<Vec<DVector<f64>>>,
    pub evaluations: Vec<ExplicitEvaluation>,
}

impl TrajectoryState {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Scalar trajectory of a 1-D run.
    pub fn scalars(&self) -> Vec<f64> {
        self.points.iter().map(|p| p[0]).collect()
    }
}

/// Runs `method` for `steps` updates from `init` (exactly `order` points).
/// The oracle is evaluated at every visited point, including the last.
pub fn simulate<O: ExplicitOracle + ?Sized>(
    method: &MethodSpec,
    oracle: &O,
    init: &[DVector<f64>],
    steps: usize,
) -> Result<TrajectoryState, MethodError> {
    if init.len() != method.order {
        return Err(MethodError::WrongInitialization {
            expected: method.order,
            got: init.len(),
        });
    }
    let mut realm = ExplicitRealm::new(oracle);
    let unrolled = unroll(method, &mut realm, init.to_vec(), method.order + steps, true)?;
    Ok(TrajectoryState {
        points: unrolled.states,
        oracle_values: unrolled.outputs,
        evaluations: realm.evaluations,
    })
}

/// `max_{t < order} |x_t - x_{t+K}| <= tol`.
pub fn check_cycle_prefix(
    traj: &TrajectoryState,
    k: usize,
    order: usize,
    tol: f64,
) -> Result<bool, MethodError> {
    if k < 2 {
        return Err(MethodError::CycleTooShort(k));
    }
    if traj.points.len() < order + k {
        return Err(MethodError::TrajectoryTooShort {
            len: traj.points.len(),
            k,
            order,
        });
    }
    Ok((0..order).all(|t| (&traj.points[t] - &traj.points[t + k]).norm() <= tol))
}
