//! Cycle-search problems and their lowering to a linear conic program over a
//! Gram block and a free block of function values.
//!
//! States are unrolled symbolically. Iterates that are linear combinations of
//! earlier vectors never get basis vectors; only the free initial states and
//! the oracle outputs do. The first state is pinned to the origin: every
//! constraint and the score depend on differences only, so the pin is lossless
//! and removes a zero-cost recession direction from the Gram block.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::{
    interpolation_constraints, relative_inexactness_constraint, ClassError, ClassSpec, EvaluationRecord,
};
use crate::methods::{unroll, MethodError, MethodKind, MethodSpec, OracleAccess, OracleFamily, Realm, TrajectoryState};
use crate::symbolic::{Context, ScalarExpr, SymbolicError, VectorExpr};

#[derive(Debug, Error, PartialEq)]
pub enum PepError {
    #[error("cycle length must be at least 2, got {0}")]
    CycleTooShort(usize),
    #[error("no class bound to oracle family {0}")]
    MissingClass(OracleFamily),
    #[error("class {class:?} cannot serve the {access} oracle of family {family}")]
    ClassKindMismatch {
        family: OracleFamily,
        class: ClassSpec,
        access: &'static str,
    },
    #[error(transparent)]
    Class(#[from] ClassError),
    #[error(transparent)]
    Method(#[from] MethodError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error("trajectory does not match the problem: {0}")]
    WitnessMismatch(String),
}

/// Oracle-family to class binding.
pub type ClassMap = BTreeMap<OracleFamily, ClassSpec>;

/// Default classes: `f` is `mu`-strongly convex and `L`-smooth (plain smooth
/// convex when `mu = 0`); for splitting, `A` is monotone and `B` is
/// 1-cocoercive.
pub fn default_classes(method: &MethodSpec, mu: f64, l: f64) -> ClassMap {
    let f = if mu > 0.0 {
        ClassSpec::SmoothStronglyConvex { mu, l }
    } else {
        ClassSpec::SmoothConvex { l }
    };
    let mut map = ClassMap::new();
    map.insert(OracleFamily::Objective, f);
    if matches!(method.kind, MethodKind::ThreeOperatorSplitting { .. }) {
        map.insert(OracleFamily::OperatorA, ClassSpec::MonotoneOperator);
        map.insert(OracleFamily::OperatorB, ClassSpec::CocoerciveOperator { beta: 1.0 });
    }
    map
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledConstraint {
    pub label: String,
    pub expr: ScalarExpr,
}

/// Where a basis vector comes from in an explicit run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisOrigin {
    /// `x_i - x_0` for a free initial state `i >= 1`.
    InitialState { index: usize },
    /// Output `slot` of the oracle stage at state `t`.
    Oracle { t: usize, slot: usize },
}

/// Where a function-value symbol comes from: record `index` of `family`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueOrigin {
    pub family: OracleFamily,
    pub index: usize,
}

/// Problem (P) for one (method, classes, K) triple.
#[derive(Debug)]
pub struct CycleProblem {
    pub method: MethodSpec,
    pub classes: ClassMap,
    pub k: usize,
    pub context: Context,
    /// `x_0 .. x_{K + l - 1}`.
    pub iterates: Vec<VectorExpr>,
    /// Oracle outputs at `x_0 .. x_{K + l - 2}`.
    pub oracle_outputs: Vec<Vec<VectorExpr>>,
    pub records: BTreeMap<OracleFamily, Vec<EvaluationRecord>>,
    pub basis_origins: Vec<BasisOrigin>,
    pub value_origins: Vec<ValueOrigin>,
    pub objective: ScalarExpr,
    /// Constrained `>= 1`.
    pub normalization: ScalarExpr,
    pub inequalities: Vec<LabeledConstraint>,
    pub equalities: Vec<LabeledConstraint>,
    pub warnings: Vec<String>,
}

struct SymbolicRealm<'a> {
    ctx: &'a mut Context,
    classes: &'a ClassMap,
    records: BTreeMap<OracleFamily, Vec<EvaluationRecord>>,
    value_origins: Vec<ValueOrigin>,
    inexact: Vec<LabeledConstraint>,
    state: usize,
    pins: &'static [OracleFamily],
}

impl SymbolicRealm<'_> {
    /// Zero for the first output of a pinned family, a fresh vector otherwise.
    fn output(&mut self, family: OracleFamily) -> VectorExpr {
        let first = self.records.get(&family).is_none_or(|r| r.is_empty());
        if first && self.pins.contains(&family) {
            self.ctx.zero_vector()
        } else {
            self.ctx.fresh_vector()
        }
    }

    fn class(&self, family: OracleFamily, access: OracleAccess) -> Result<ClassSpec, PepError> {
        let class = *self.classes.get(&family).ok_or(PepError::MissingClass(family))?;
        let ok = match access {
            OracleAccess::Gradient => class.carries_values(),
            OracleAccess::Resolvent => !class.carries_values(),
        };
        if !ok {
            return Err(PepError::ClassKindMismatch {
                family,
                class,
                access: match access {
                    OracleAccess::Gradient => "gradient",
                    OracleAccess::Resolvent => "resolvent",
                },
            });
        }
        Ok(class)
    }
}

impl Realm for SymbolicRealm<'_> {
    type Vector = VectorExpr;
    type Error = PepError;

    fn begin_state(&mut self, t: usize) {
        self.state = t;
    }

    fn combine(&self, terms: &[(f64, &VectorExpr)]) -> VectorExpr {
        VectorExpr::combination(terms)
    }

    fn gradient(&mut self, family: OracleFamily, x: &VectorExpr) -> Result<VectorExpr, PepError> {
        self.class(family, OracleAccess::Gradient)?;
        let g = self.output(family);
        let (value, _) = self.ctx.fresh_value();
        let list = self.records.entry(family).or_default();
        self.value_origins.push(ValueOrigin {
            family,
            index: list.len(),
        });
        list.push(EvaluationRecord {
            point: x.clone(),
            oracle: g.clone(),
            value: Some(value),
        });
        Ok(g)
    }

    fn inexact_direction(&mut self, _x: &VectorExpr, g: &VectorExpr, eps: f64) -> Result<VectorExpr, PepError> {
        let d = self.ctx.fresh_vector();
        let expr = relative_inexactness_constraint(g, &d, eps)?;
        self.inexact.push(LabeledConstraint {
            label: format!("inexact[{}]", self.state),
            expr,
        });
        Ok(d)
    }

    fn resolvent(
        &mut self,
        family: OracleFamily,
        alpha: f64,
        w: &VectorExpr,
    ) -> Result<(VectorExpr, VectorExpr), PepError> {
        self.class(family, OracleAccess::Resolvent)?;
        // w = x + alpha u with u in O(x).
        let u = self.output(family);
        let x = VectorExpr::combination(&[(1.0, w), (-alpha, &u)]);
        self.records.entry(family).or_default().push(EvaluationRecord {
            point: x.clone(),
            oracle: u.clone(),
            value: None,
        });
        Ok((x, u))
    }
}

/// Unrolls `method` for `k` steps past its `l` initial states and collects
/// the interpolation constraints, the score and the normalization.
pub fn build_cycle_problem(method: &MethodSpec, classes: &ClassMap, k: usize) -> Result<CycleProblem, PepError> {
    if k < 2 {
        return Err(PepError::CycleTooShort(k));
    }
    for class in classes.values() {
        class.validate()?;
    }
    let order = method.order;
    let mut ctx = Context::new();
    let mut init = vec![ctx.zero_vector()];
    let mut basis_origins = Vec::new();
    for i in 1..order {
        init.push(ctx.fresh_vector());
        basis_origins.push(BasisOrigin::InitialState { index: i });
    }
    let mut realm = SymbolicRealm {
        ctx: &mut ctx,
        classes,
        records: BTreeMap::new(),
        value_origins: Vec::new(),
        inexact: Vec::new(),
        state: 0,
        pins: method.gauge_pins(),
    };
    let unrolled = unroll(method, &mut realm, init, k + order, false)?;
    let SymbolicRealm {
        records,
        value_origins,
        inexact,
        ..
    } = realm;

    // Oracle outputs that are fresh basis vectors, in allocation order.
    for (t, outs) in unrolled.outputs.iter().enumerate() {
        for (slot, v) in outs.iter().enumerate() {
            let coeffs = v.coeffs();
            if coeffs.len() == 1 {
                let (&idx, &c) = coeffs.iter().next().expect("one entry");
                if c == 1.0 && idx == basis_origins.len() {
                    basis_origins.push(BasisOrigin::Oracle { t, slot });
                }
            }
        }
    }
    debug_assert_eq!(basis_origins.len(), ctx.basis_dim());

    let mut inequalities = Vec::new();
    let mut warnings = Vec::new();
    for (family, recs) in &records {
        let class = classes[family];
        if !class.is_homogeneous() {
            warnings.push(format!("class {class:?} is not homogeneous; normalization may lose cycles"));
        }
        let exprs = interpolation_constraints(&class, recs)?;
        for ((i, j), expr) in class.pairs(recs.len()).into_iter().zip(exprs) {
            inequalities.push(LabeledConstraint {
                label: format!("interp[{family}]({i},{j})"),
                expr,
            });
        }
    }
    inequalities.extend(inexact);

    let xs = &unrolled.states;
    let mut objective = ctx.zero_scalar();
    for t in 0..order {
        let diff = xs[t].checked_axpy(-1.0, &xs[t + k])?;
        objective = objective.checked_axpy(1.0, &diff.norm_squared())?;
    }
    let normalization = xs[1].checked_axpy(-1.0, &xs[0])?.norm_squared();
    warnings.extend(method.notes.iter().cloned());

    Ok(CycleProblem {
        method: method.clone(),
        classes: classes.clone(),
        k,
        context: ctx,
        iterates: unrolled.states,
        oracle_outputs: unrolled.outputs,
        records,
        basis_origins,
        value_origins,
        objective,
        normalization,
        inequalities,
        equalities: Vec::new(),
        warnings,
    })
}

impl CycleProblem {
    pub fn basis_labels(&self) -> Vec<String> {
        let labels = self.method.oracle_labels();
        self.basis_origins
            .iter()
            .map(|o| match *o {
                BasisOrigin::InitialState { index } => format!("x{index}-x0"),
                BasisOrigin::Oracle { t, slot } => format!("{}{t}", labels[slot]),
            })
            .collect()
    }

    pub fn value_labels(&self) -> Vec<String> {
        self.value_origins
            .iter()
            .map(|o| format!("{}{}", o.family, o.index))
            .collect()
    }

    /// Gram matrix and values realized by an explicit run of the same method.
    /// The run is translated so that its first state sits at the origin and,
    /// for methods with gauge pins, its pinned outputs vanish.
    pub fn witness(&self, traj: &TrajectoryState) -> Result<(DMatrix<f64>, DVector<f64>), PepError> {
        let need = self.iterates.len();
        if traj.points.len() < need || traj.oracle_values.len() < need - 1 {
            return Err(PepError::WitnessMismatch(format!(
                "need {need} states, got {}",
                traj.points.len()
            )));
        }
        let dim = traj.points[0].len();
        let (_, tilt) = gauge_offsets(&self.method, &traj.oracle_values[0], dim);
        let basis = self.explicit_basis(traj);
        let mut per_family: BTreeMap<OracleFamily, Vec<Option<f64>>> = BTreeMap::new();
        for e in &traj.evaluations {
            // f'(z) = f(z - s) + <c, z> at the translated point z = x + s.
            let value = e.record.value.map(|v| match (&tilt, e.family) {
                (Some((shift, c)), OracleFamily::Objective) => {
                    v + c.dot(&(&e.record.point - &traj.points[0] + shift))
                }
                _ => v,
            });
            per_family.entry(e.family).or_default().push(value);
        }
        let mut values = DVector::zeros(self.context.value_dim());
        for (i, o) in self.value_origins.iter().enumerate() {
            values[i] = per_family
                .get(&o.family)
                .and_then(|v| v.get(o.index).copied().flatten())
                .ok_or_else(|| PepError::WitnessMismatch(format!("missing value {}{}", o.family, o.index)))?;
        }
        Ok((&basis * basis.transpose(), values))
    }

    /// Basis vectors of an explicit run as rows, in the gauge of [`Self::witness`].
    /// Needs at least one oracle stage in `traj`.
    pub fn explicit_basis(&self, traj: &TrajectoryState) -> DMatrix<f64> {
        let dim = traj.points[0].len();
        let (out_shift, _) = gauge_offsets(&self.method, &traj.oracle_values[0], dim);
        let mut basis = DMatrix::zeros(self.context.basis_dim(), dim);
        for (row, origin) in self.basis_origins.iter().enumerate() {
            let v = match *origin {
                BasisOrigin::InitialState { index } => &traj.points[index] - &traj.points[0],
                BasisOrigin::Oracle { t, slot } => &traj.oracle_values[t][slot] + &out_shift[slot],
            };
            basis.row_mut(row).copy_from(&v.transpose());
        }
        basis
    }
}

/// Per-slot offsets added to explicit oracle outputs so that the pinned ones
/// vanish, and the `(point shift, linear tilt)` applied to `f`.
#[allow(clippy::type_complexity)]
fn gauge_offsets(
    method: &MethodSpec,
    first: &[DVector<f64>],
    dim: usize,
) -> (Vec<DVector<f64>>, Option<(DVector<f64>, DVector<f64>)>) {
    match method.kind {
        MethodKind::ThreeOperatorSplitting { gamma, beta, alpha } => {
            // Slots: x, Bx, g, y, Ay. Shifts c_B, c_g, c_A satisfy
            // alpha c_B + (gamma / beta) c_g + alpha c_A = 0.
            let cb = -&first[1];
            let cg = -&first[2];
            let ca = -(&cb * alpha + &cg * (gamma / beta)) / alpha;
            let xs = &cb * -alpha;
            let shifts = vec![xs.clone(), cb, cg.clone(), xs.clone(), ca];
            (shifts, Some((xs, cg)))
        }
        _ => (vec![DVector::zeros(dim); method.oracle_labels().len()], None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Eq,
    Ge,
}

/// `<A, G> + a . F  (= or >=)  rhs`. `psd` lists the upper triangle
/// `(i <= j, A_ij)` of the symmetric matrix `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicConstraint {
    pub label: String,
    pub psd: Vec<(usize, usize, f64)>,
    pub free: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `min <C, G> + c . F + c0` over `G` PSD and `F` free, subject to the
/// constraint list. Inequality rows carry one nonnegative slack each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub psd_dim: usize,
    pub free_dim: usize,
    pub objective_psd: Vec<(usize, usize, f64)>,
    pub objective_free: Vec<(usize, f64)>,
    pub objective_constant: f64,
    pub constraints: Vec<ConicConstraint>,
}

/// Coordinates of the lowered program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMap {
    pub basis_labels: Vec<String>,
    pub value_labels: Vec<String>,
}

fn psd_triplets(s: &ScalarExpr) -> Vec<(usize, usize, f64)> {
    s.quad_terms()
        .iter()
        .filter(|(_, &c)| c != 0.0)
        .map(|(&(i, j), _)| (i, j, s.quad_entry(i, j)))
        .collect()
}

fn free_pairs(s: &ScalarExpr) -> Vec<(usize, f64)> {
    s.linear_terms()
        .iter()
        .filter(|(_, &c)| c != 0.0)
        .map(|(&i, &c)| (i, c))
        .collect()
}

fn lower_row(ctx: &Context, label: &str, s: &ScalarExpr, sense: Sense, rhs: f64) -> Result<ConicConstraint, PepError> {
    if s.context() != ctx.id() {
        return Err(SymbolicError::ContextMismatch(ctx.id(), s.context()).into());
    }
    Ok(ConicConstraint {
        label: label.to_string(),
        psd: psd_triplets(s),
        free: free_pairs(s),
        sense,
        rhs: rhs - s.constant_term(),
    })
}

/// Lowers `p` to a conic program; the normalization is the last row.
pub fn lower_to_conic(p: &CycleProblem) -> Result<(ConicProgram, IndexMap), PepError> {
    let ctx = &p.context;
    let mut constraints = Vec::with_capacity(p.inequalities.len() + p.equalities.len() + 1);
    for c in &p.inequalities {
        constraints.push(lower_row(ctx, &c.label, &c.expr, Sense::Ge, 0.0)?);
    }
    for c in &p.equalities {
        constraints.push(lower_row(ctx, &c.label, &c.expr, Sense::Eq, 0.0)?);
    }
    constraints.push(lower_row(ctx, "normalization", &p.normalization, Sense::Ge, 1.0)?);
    if p.objective.context() != ctx.id() {
        return Err(SymbolicError::ContextMismatch(ctx.id(), p.objective.context()).into());
    }
    let program = ConicProgram {
        psd_dim: ctx.basis_dim(),
        free_dim: ctx.value_dim(),
        objective_psd: psd_triplets(&p.objective),
        objective_free: free_pairs(&p.objective),
        objective_constant: p.objective.constant_term(),
        constraints,
    };
    let map = IndexMap {
        basis_labels: p.basis_labels(),
        value_labels: p.value_labels(),
    };
    Ok((program, map))
}

/// `<A, G>` for an upper-triangle triplet list.
pub fn triplet_inner(entries: &[(usize, usize, f64)], g: &DMatrix<f64>) -> f64 {
    entries
        .iter()
        .map(|&(i, j, a)| if i == j { a * g[(i, i)] } else { a * (g[(i, j)] + g[(j, i)]) })
        .sum()
}

/// Dense symmetric matrix of an upper-triangle triplet list.
pub fn triplet_matrix(n: usize, entries: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for &(i, j, a) in entries {
        m[(i, j)] += a;
        if i != j {
            m[(j, i)] += a;
        }
    }
    m
}

impl ConicProgram {
    pub fn nonneg_dim(&self) -> usize {
        self.constraints.iter().filter(|c| c.sense == Sense::Ge).count()
    }

    pub fn objective_value(&self, g: &DMatrix<f64>, f: &DVector<f64>) -> f64 {
        triplet_inner(&self.objective_psd, g)
            + self.objective_free.iter().map(|&(i, c)| c * f[i]).sum::<f64>()
            + self.objective_constant
    }

    /// `<A_i, G> + a_i . F` for every row.
    pub fn row_values(&self, g: &DMatrix<f64>, f: &DVector<f64>) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| triplet_inner(&c.psd, g) + c.free.iter().map(|&(i, a)| a * f[i]).sum::<f64>())
            .collect()
    }

    /// Signed violation per row: `|lhs - rhs|` for equalities, `max(rhs - lhs, 0)` otherwise.
    pub fn violations(&self, g: &DMatrix<f64>, f: &DVector<f64>) -> Vec<f64> {
        self.row_values(g, f)
            .into_iter()
            .zip(&self.constraints)
            .map(|(v, c)| match c.sense {
                Sense::Eq => (v - c.rhs).abs(),
                Sense::Ge => (c.rhs - v).max(0.0),
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("conic program serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Sparse SDPA text. The program is written as the SDPA dual
    /// `max <F0, Y>  s.t. <F_i, Y> = c_i, Y PSD` with
    /// `Y = blkdiag(G, diag(s, F+, F-))`, so the SDPA optimum is the negated
    /// objective without its constant.
    pub fn to_sdpa(&self) -> String {
        let n_ineq = self.nonneg_dim();
        let lp = n_ineq + 2 * self.free_dim;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "\"cycle-search conic program: psd {} free {} rows {} constant {:e}",
            self.psd_dim,
            self.free_dim,
            self.constraints.len(),
            self.objective_constant
        );
        let _ = writeln!(out, "{}", self.constraints.len());
        let blocks = if lp > 0 { 2 } else { 1 };
        let _ = writeln!(out, "{blocks}");
        if lp > 0 {
            let _ = writeln!(out, "{} -{}", self.psd_dim, lp);
        } else {
            let _ = writeln!(out, "{}", self.psd_dim);
        }
        let rhs: Vec<String> = self.constraints.iter().map(|c| format!("{:.17e}", c.rhs)).collect();
        let _ = writeln!(out, "{}", rhs.join(" "));
        let free_pos = |i: usize| n_ineq + i + 1;
        let free_neg = |i: usize| n_ineq + self.free_dim + i + 1;
        for &(i, j, a) in &self.objective_psd {
            let _ = writeln!(out, "0 1 {} {} {:.17e}", i + 1, j + 1, -a);
        }
        for &(i, c) in &self.objective_free {
            let _ = writeln!(out, "0 2 {0} {0} {1:.17e}", free_pos(i), -c);
            let _ = writeln!(out, "0 2 {0} {0} {1:.17e}", free_neg(i), c);
        }
        let mut slack = 0;
        for (row, c) in self.constraints.iter().enumerate() {
            let m = row + 1;
            for &(i, j, a) in &c.psd {
                let _ = writeln!(out, "{m} 1 {} {} {:.17e}", i + 1, j + 1, a);
            }
            if c.sense == Sense::Ge {
                slack += 1;
                let _ = writeln!(out, "{m} 2 {slack} {slack} {:.17e}", -1.0);
            }
            for &(i, a) in &c.free {
                let _ = writeln!(out, "{m} 2 {0} {0} {1:.17e}", free_pos(i), a);
                let _ = writeln!(out, "{m} 2 {0} {0} {1:.17e}", free_neg(i), -a);
            }
        }
        out
    }
}
