//! Interpolation conditions for the function and operator classes.
//!
//! Each class turns a finite set of evaluation records into inequalities
//! `expr >= 0` that hold iff some member of the class interpolates them.
//! The same inequalities are also available on explicit coordinates so a
//! certificate can be checked without going through the Gram lifting.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symbolic::{inner_product, FunctionValueIndex, ScalarExpr, SymbolicError, VectorExpr};

#[derive(Debug, Error, PartialEq)]
pub enum ClassError {
    #[error("invalid class parameters: {0}")]
    InvalidParameters(String),
    #[error("record {0} has no function value but the class requires one")]
    MissingFunctionValue(usize),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassSpec {
    SmoothConvex { l: f64 },
    SmoothStronglyConvex { mu: f64, l: f64 },
    MonotoneOperator,
    CocoerciveOperator { beta: f64 },
}

impl ClassSpec {
    pub fn validate(&self) -> Result<(), ClassError> {
        let bad = |msg: String| Err(ClassError::InvalidParameters(msg));
        match *self {
            ClassSpec::SmoothConvex { l } if !(l > 0.0 && l.is_finite()) => {
                bad(format!("smoothness L must be positive, got {l}"))
            }
            ClassSpec::SmoothStronglyConvex { l, .. } if !(l > 0.0 && l.is_finite()) => {
                bad(format!("smoothness L must be positive, got {l}"))
            }
            ClassSpec::SmoothStronglyConvex { mu, l } if !(mu >= 0.0 && mu < l) => {
                bad(format!("need 0 <= mu < L, got mu={mu}, L={l}"))
            }
            ClassSpec::CocoerciveOperator { beta } if !(beta > 0.0 && beta.is_finite()) => {
                bad(format!("cocoercivity must be positive, got {beta}"))
            }
            _ => Ok(()),
        }
    }

    /// Function classes carry values; bare operators do not.
    pub fn carries_values(&self) -> bool {
        matches!(
            self,
            ClassSpec::SmoothConvex { .. } | ClassSpec::SmoothStronglyConvex { .. }
        )
    }

    /// Whether positive rescaling of a member stays in the class, which makes
    /// the `||x1 - x0||^2 >= 1` normalization lossless.
    pub fn is_homogeneous(&self) -> bool {
        true
    }

    /// Ordered index pairs the constraints are emitted for, in emission order.
    pub fn pairs(&self, n: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if self.carries_values() {
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        out.push((i, j));
                    }
                }
            }
        } else {
            for i in 0..n {
                for j in (i + 1)..n {
                    out.push((i, j));
                }
            }
        }
        out
    }

    fn smooth_params(&self) -> (f64, f64) {
        match *self {
            ClassSpec::SmoothConvex { l } => (0.0, l),
            ClassSpec::SmoothStronglyConvex { mu, l } => (mu, l),
            _ => unreachable!("not a function class"),
        }
    }
}

/// One oracle call: the query point, the returned vector and, for function
/// classes, the function value symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub point: VectorExpr,
    pub oracle: VectorExpr,
    pub value: Option<FunctionValueIndex>,
}

/// Explicit counterpart of [`EvaluationRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitRecord {
    pub point: DVector<f64>,
    pub oracle: DVector<f64>,
    pub value: Option<f64>,
}

/// Emits the interpolation inequalities, each constrained `>= 0`, in the
/// order given by [`ClassSpec::pairs`].
pub fn interpolation_constraints(
    class: &ClassSpec,
    records: &[EvaluationRecord],
) -> Result<Vec<ScalarExpr>, ClassError> {
    class.validate()?;
    if class.carries_values() {
        if let Some(idx) = records.iter().position(|r| r.value.is_none()) {
            return Err(ClassError::MissingFunctionValue(idx));
        }
    }
    class
        .pairs(records.len())
        .into_iter()
        .map(|(i, j)| pair_constraint(class, &records[i], &records[j]))
        .collect()
}

fn pair_constraint(
    class: &ClassSpec,
    ri: &EvaluationRecord,
    rj: &EvaluationRecord,
) -> Result<ScalarExpr, ClassError> {
    let dx = ri.point.checked_axpy(-1.0, &rj.point)?;
    let du = ri.oracle.checked_axpy(-1.0, &rj.oracle)?;
    match *class {
        ClassSpec::SmoothConvex { .. } | ClassSpec::SmoothStronglyConvex { .. } => {
            let (mu, l) = class.smooth_params();
            let ctx = ri.point.context();
            let fi = ScalarExpr::value(ctx, ri.value.expect("checked"));
            let fj = ScalarExpr::value(ctx, rj.value.expect("checked"));
            // f_i - f_j - <g_j, x_i - x_j> - |g_i - g_j|^2 / 2L
            //     - mu / (2 (1 - mu/L)) |x_i - x_j - (g_i - g_j)/L|^2
            let mut expr = fi.checked_axpy(-1.0, &fj)?;
            expr = expr.checked_axpy(-1.0, &inner_product(&rj.oracle, &dx)?)?;
            expr = expr.checked_axpy(-1.0 / (2.0 * l), &du.norm_squared())?;
            if mu > 0.0 {
                let w = dx.checked_axpy(-1.0 / l, &du)?;
                expr = expr.checked_axpy(-mu / (2.0 * (1.0 - mu / l)), &w.norm_squared())?;
            }
            Ok(expr)
        }
        ClassSpec::MonotoneOperator => Ok(inner_product(&du, &dx)?),
        ClassSpec::CocoerciveOperator { beta } => {
            Ok(inner_product(&du, &dx)?.checked_axpy(-beta, &du.norm_squared())?)
        }
    }
}

/// Margins of the interpolation inequalities on explicit data, same order as
/// [`interpolation_constraints`]. Negative entries are violations.
pub fn explicit_margins(class: &ClassSpec, records: &[ExplicitRecord]) -> Result<Vec<f64>, ClassError> {
    class.validate()?;
    if class.carries_values() {
        if let Some(idx) = records.iter().position(|r| r.value.is_none()) {
            return Err(ClassError::MissingFunctionValue(idx));
        }
    }
    Ok(class
        .pairs(records.len())
        .into_iter()
        .map(|(i, j)| {
            let (ri, rj) = (&records[i], &records[j]);
            let dx = &ri.point - &rj.point;
            let du = &ri.oracle - &rj.oracle;
            match *class {
                ClassSpec::SmoothConvex { .. } | ClassSpec::SmoothStronglyConvex { .. } => {
                    let (mu, l) = class.smooth_params();
                    let mut m = ri.value.unwrap() - rj.value.unwrap() - rj.oracle.dot(&dx)
                        - du.norm_squared() / (2.0 * l);
                    if mu > 0.0 {
                        let w = &dx - &du / l;
                        m -= mu / (2.0 * (1.0 - mu / l)) * w.norm_squared();
                    }
                    m
                }
                ClassSpec::MonotoneOperator => du.dot(&dx),
                ClassSpec::CocoerciveOperator { beta } => du.dot(&dx) - beta * du.norm_squared(),
            }
        })
        .collect())
}

/// `eps^2 |g|^2 - |d - g|^2 >= 0`, i.e. `|d - g| <= eps |g|`.
pub fn relative_inexactness_constraint(
    g: &VectorExpr,
    d: &VectorExpr,
    eps: f64,
) -> Result<ScalarExpr, ClassError> {
    if !(eps >= 0.0) {
        return Err(ClassError::InvalidParameters(format!(
            "relative error must be nonnegative, got {eps}"
        )));
    }
    let err = d.checked_axpy(-1.0, g)?;
    Ok(g.norm_squared().scale(eps * eps).checked_axpy(-1.0, &err.norm_squared())?)
}

pub fn explicit_inexactness_margin(g: &DVector<f64>, d: &DVector<f64>, eps: f64) -> f64 {
    eps * eps * g.norm_squared() - (d - g).norm_squared()
}
