//! Symbolic vectors and degree-2 scalars over an abstract Gram basis.
//!
//! Every abstract vector of a problem (free iterates, gradients, operator
//! values, inexact directions) is a basis vector `e_i`; iterates produced
//! by a method are linear combinations of those. Inner products of such
//! combinations become linear functionals of the Gram matrix `G`, and
//! function values are coordinates of a separate vector `F`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

static NEXT_CONTEXT: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error, PartialEq)]
pub enum SymbolicError {
    #[error("expressions belong to different contexts ({0} vs {1})")]
    ContextMismatch(ContextId, ContextId),
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("product would have degree above 2")]
    DegreeTooHigh,
}

/// Identity of a construction context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextId(u64);

impl fmt::Display for ContextId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ctx#{}", self.0)
    }
}

/// Column of the Gram factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BasisIndex(pub usize);

/// Entry of the function-value vector `F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FunctionValueIndex(pub usize);

/// Allocator for basis vectors and function-value symbols of one problem.
#[derive(Debug)]
pub struct Context {
    id: ContextId,
    basis: usize,
    values: usize,
}

impl Default for Context {
    fn default() -> Self {
        Self::new()
    }
}

impl Context {
    pub fn new() -> Self {
        Self {
            id: ContextId(NEXT_CONTEXT.fetch_add(1, Ordering::Relaxed)),
            basis: 0,
            values: 0,
        }
    }

    pub fn id(&self) -> ContextId {
        self.id
    }

    pub fn basis_dim(&self) -> usize {
        self.basis
    }

    pub fn value_dim(&self) -> usize {
        self.values
    }

    pub fn new_basis_vector(&mut self) -> BasisIndex {
        let idx = BasisIndex(self.basis);
        self.basis += 1;
        idx
    }

    pub fn new_function_value(&mut self) -> FunctionValueIndex {
        let idx = FunctionValueIndex(self.values);
        self.values += 1;
        idx
    }

    /// Allocates a basis vector and returns it as an expression.
    pub fn fresh_vector(&mut self) -> VectorExpr {
        let idx = self.new_basis_vector();
        self.vector(idx)
    }

    /// Allocates a function value and returns it as an expression.
    pub fn fresh_value(&mut self) -> (FunctionValueIndex, ScalarExpr) {
        let idx = self.new_function_value();
        (idx, ScalarExpr::value(self.id, idx))
    }

    pub fn vector(&self, idx: BasisIndex) -> VectorExpr {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(idx.0, 1.0);
        VectorExpr {
            ctx: self.id,
            coeffs,
        }
    }

    pub fn zero_vector(&self) -> VectorExpr {
        VectorExpr {
            ctx: self.id,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn zero_scalar(&self) -> ScalarExpr {
        ScalarExpr::constant(self.id, 0.0)
    }

    /// Evaluates `s` against a Gram matrix and value vector whose sizes must
    /// match this context exactly.
    pub fn evaluate(
        &self,
        s: &ScalarExpr,
        gram: &DMatrix<f64>,
        values: &DVector<f64>,
    ) -> Result<f64, SymbolicError> {
        if s.ctx != self.id {
            return Err(SymbolicError::ContextMismatch(self.id, s.ctx));
        }
        if gram.nrows() != self.basis || gram.ncols() != self.basis {
            return Err(SymbolicError::DimensionMismatch {
                what: "Gram matrix",
                expected: self.basis,
                got: gram.nrows(),
            });
        }
        if values.len() != self.values {
            return Err(SymbolicError::DimensionMismatch {
                what: "function values",
                expected: self.values,
                got: values.len(),
            });
        }
        s.evaluate(gram, values)
    }
}

fn prune(map: &mut BTreeMap<usize, f64>) {
    map.retain(|_, v| *v != 0.0);
}

/// Sparse linear combination of basis vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorExpr {
    ctx: ContextId,
    coeffs: BTreeMap<usize, f64>,
}

impl VectorExpr {
    pub fn context(&self) -> ContextId {
        self.ctx
    }

    pub fn coeffs(&self) -> &BTreeMap<usize, f64> {
        &self.coeffs
    }

    pub fn coeff(&self, idx: BasisIndex) -> f64 {
        self.coeffs.get(&idx.0).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn checked_add(&self, other: &VectorExpr) -> Result<VectorExpr, SymbolicError> {
        self.checked_axpy(1.0, other)
    }

    /// `self + alpha * other`.
    pub fn checked_axpy(&self, alpha: f64, other: &VectorExpr) -> Result<VectorExpr, SymbolicError> {
        if self.ctx != other.ctx {
            return Err(SymbolicError::ContextMismatch(self.ctx, other.ctx));
        }
        let mut coeffs = self.coeffs.clone();
        for (&k, &v) in &other.coeffs {
            *coeffs.entry(k).or_insert(0.0) += alpha * v;
        }
        prune(&mut coeffs);
        Ok(VectorExpr { ctx: self.ctx, coeffs })
    }

    pub fn scale(&self, alpha: f64) -> VectorExpr {
        let mut coeffs: BTreeMap<usize, f64> =
            self.coeffs.iter().map(|(&k, &v)| (k, alpha * v)).collect();
        prune(&mut coeffs);
        VectorExpr { ctx: self.ctx, coeffs }
    }

    /// `sum_i alpha_i * v_i`; panics on an empty list or mixed contexts.
    pub fn combination(terms: &[(f64, &VectorExpr)]) -> VectorExpr {
        let (_, first) = terms.first().expect("empty linear combination");
        let mut acc = VectorExpr {
            ctx: first.ctx,
            coeffs: BTreeMap::new(),
        };
        for (alpha, v) in terms {
            acc = acc.checked_axpy(*alpha, v).expect("mixed contexts in combination");
        }
        acc
    }

    /// Realizes the expression in coordinates, where row `i` of `basis` holds
    /// the coordinates of basis vector `e_i`.
    pub fn realize(&self, basis: &DMatrix<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(basis.ncols());
        for (&k, &v) in &self.coeffs {
            out += basis.row(k).transpose() * v;
        }
        out
    }

    pub fn inner(&self, other: &VectorExpr) -> Result<ScalarExpr, SymbolicError> {
        inner_product(self, other)
    }

    pub fn norm_squared(&self) -> ScalarExpr {
        inner_product(self, self).expect("same context")
    }
}

impl Add<&VectorExpr> for &VectorExpr {
    type Output = VectorExpr;
    fn add(self, rhs: &VectorExpr) -> VectorExpr {
        self.checked_add(rhs).expect("expressions from different contexts")
    }
}

impl Sub<&VectorExpr> for &VectorExpr {
    type Output = VectorExpr;
    fn sub(self, rhs: &VectorExpr) -> VectorExpr {
        self.checked_axpy(-1.0, rhs)
            .expect("expressions from different contexts")
    }
}

impl Mul<&VectorExpr> for f64 {
    type Output = VectorExpr;
    fn mul(self, rhs: &VectorExpr) -> VectorExpr {
        rhs.scale(self)
    }
}

impl Neg for &VectorExpr {
    type Output = VectorExpr;
    fn neg(self) -> VectorExpr {
        self.scale(-1.0)
    }
}

/// Degree-2 expression `sum q_ij <e_i, e_j> + sum l_k f_k + c`.
///
/// `quad` is keyed by `(i, j)` with `i <= j` and stores the coefficient of
/// the monomial `<e_i, e_j>`; the symmetric matrix it represents therefore
/// has entries `q_ii` on the diagonal and `q_ij / 2` off it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarExpr {
    ctx: ContextId,
    quad: BTreeMap<(usize, usize), f64>,
    lin: BTreeMap<usize, f64>,
    constant: f64,
}

impl ScalarExpr {
    pub fn constant(ctx: ContextId, c: f64) -> Self {
        Self {
            ctx,
            quad: BTreeMap::new(),
            lin: BTreeMap::new(),
            constant: c,
        }
    }

    pub fn value(ctx: ContextId, idx: FunctionValueIndex) -> Self {
        let mut lin = BTreeMap::new();
        lin.insert(idx.0, 1.0);
        Self {
            ctx,
            quad: BTreeMap::new(),
            lin,
            constant: 0.0,
        }
    }

    pub fn context(&self) -> ContextId {
        self.ctx
    }

    /// Monomial coefficients, upper triangle only.
    pub fn quad_terms(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.quad
    }

    pub fn linear_terms(&self) -> &BTreeMap<usize, f64> {
        &self.lin
    }

    pub fn constant_term(&self) -> f64 {
        self.constant
    }

    /// Entry `(i, j)` of the symmetric coefficient matrix `Q` with
    /// `tr(Q G)` equal to the quadratic part.
    pub fn quad_entry(&self, i: usize, j: usize) -> f64 {
        let key = (i.min(j), i.max(j));
        let c = self.quad.get(&key).copied().unwrap_or(0.0);
        if i == j {
            c
        } else {
            0.5 * c
        }
    }

    pub fn is_constant(&self) -> bool {
        self.quad.is_empty() && self.lin.is_empty()
    }

    pub fn max_basis_index(&self) -> Option<usize> {
        self.quad.keys().map(|&(_, j)| j).max()
    }

    pub fn max_value_index(&self) -> Option<usize> {
        self.lin.keys().copied().max()
    }

    pub fn checked_axpy(&self, alpha: f64, other: &ScalarExpr) -> Result<ScalarExpr, SymbolicError> {
        if self.ctx != other.ctx {
            return Err(SymbolicError::ContextMismatch(self.ctx, other.ctx));
        }
        let mut out = self.clone();
        for (&k, &v) in &other.quad {
            *out.quad.entry(k).or_insert(0.0) += alpha * v;
        }
        for (&k, &v) in &other.lin {
            *out.lin.entry(k).or_insert(0.0) += alpha * v;
        }
        out.constant += alpha * other.constant;
        out.quad.retain(|_, v| *v != 0.0);
        prune(&mut out.lin);
        Ok(out)
    }

    pub fn scale(&self, alpha: f64) -> ScalarExpr {
        let mut out = self.clone();
        out.quad.values_mut().for_each(|v| *v *= alpha);
        out.lin.values_mut().for_each(|v| *v *= alpha);
        out.constant *= alpha;
        out.quad.retain(|_, v| *v != 0.0);
        prune(&mut out.lin);
        out
    }

    pub fn plus_constant(&self, c: f64) -> ScalarExpr {
        let mut out = self.clone();
        out.constant += c;
        out
    }

    /// Product of two scalars; only allowed when one factor is a constant.
    pub fn checked_mul(&self, other: &ScalarExpr) -> Result<ScalarExpr, SymbolicError> {
        if self.ctx != other.ctx {
            return Err(SymbolicError::ContextMismatch(self.ctx, other.ctx));
        }
        if self.is_constant() {
            Ok(other.scale(self.constant))
        } else if other.is_constant() {
            Ok(self.scale(other.constant))
        } else {
            Err(SymbolicError::DegreeTooHigh)
        }
    }

    /// `tr(Q G) + l . F + c`. Indices must lie inside `gram` and `values`.
    pub fn evaluate(&self, gram: &DMatrix<f64>, values: &DVector<f64>) -> Result<f64, SymbolicError> {
        if gram.nrows() != gram.ncols() {
            return Err(SymbolicError::DimensionMismatch {
                what: "non-square Gram matrix",
                expected: gram.nrows(),
                got: gram.ncols(),
            });
        }
        if let Some(j) = self.max_basis_index() {
            if j >= gram.nrows() {
                return Err(SymbolicError::DimensionMismatch {
                    what: "Gram matrix",
                    expected: j + 1,
                    got: gram.nrows(),
                });
            }
        }
        if let Some(k) = self.max_value_index() {
            if k >= values.len() {
                return Err(SymbolicError::DimensionMismatch {
                    what: "function values",
                    expected: k + 1,
                    got: values.len(),
                });
            }
        }
        let mut acc = self.constant;
        for (&(i, j), &c) in &self.quad {
            if i == j {
                acc += c * gram[(i, i)];
            } else {
                acc += 0.5 * c * (gram[(i, j)] + gram[(j, i)]);
            }
        }
        for (&k, &c) in &self.lin {
            acc += c * values[k];
        }
        Ok(acc)
    }
}

impl Add<&ScalarExpr> for &ScalarExpr {
    type Output = ScalarExpr;
    fn add(self, rhs: &ScalarExpr) -> ScalarExpr {
        self.checked_axpy(1.0, rhs)
            .expect("expressions from different contexts")
    }
}

impl Sub<&ScalarExpr> for &ScalarExpr {
    type Output = ScalarExpr;
    fn sub(self, rhs: &ScalarExpr) -> ScalarExpr {
        self.checked_axpy(-1.0, rhs)
            .expect("expressions from different contexts")
    }
}

impl Mul<&ScalarExpr> for f64 {
    type Output = ScalarExpr;
    fn mul(self, rhs: &ScalarExpr) -> ScalarExpr {
        rhs.scale(self)
    }
}

impl Neg for &ScalarExpr {
    type Output = ScalarExpr;
    fn neg(self) -> ScalarExpr {
        self.scale(-1.0)
    }
}

/// `<a, b>` lifted to the Gram matrix.
pub fn inner_product(a: &VectorExpr, b: &VectorExpr) -> Result<ScalarExpr, SymbolicError> {
    if a.ctx != b.ctx {
        return Err(SymbolicError::ContextMismatch(a.ctx, b.ctx));
    }
    let mut quad = BTreeMap::new();
    for (&i, &ai) in &a.coeffs {
        for (&j, &bj) in &b.coeffs {
            *quad.entry((i.min(j), i.max(j))).or_insert(0.0) += ai * bj;
        }
    }
    quad.retain(|_, v: &mut f64| *v != 0.0);
    Ok(ScalarExpr {
        ctx: a.ctx,
        quad,
        lin: BTreeMap::new(),
        constant: 0.0,
    })
}
