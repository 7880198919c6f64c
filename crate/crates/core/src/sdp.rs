//! Dense primal-dual interior-point solver for [`ConicProgram`].
//!
//! Internal form: `min <C, X> + c.z` subject to `A(X) + B z - E s = b`,
//! `X` PSD, `s >= 0`, `z` free, where `E` places one slack on every
//! inequality row. The dual is `max b.y` with `Z = C - A*(y)` PSD,
//! `zs = y` on inequality rows and `B^T y = c`.
//!
//! Each iteration uses Nesterov-Todd scaling and a Mehrotra
//! predictor-corrector step. Rows are equilibrated before solving, and the
//! free block is reduced to the range of `B^T B` so the constant shift of
//! function values cannot make the Newton system singular.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pep::{triplet_inner, triplet_matrix, ConicProgram, Sense};

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("structurally empty problem: {0}")]
    Empty(&'static str),
    #[error("index out of range in row {0}")]
    BadIndex(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iters: usize,
    pub step_fraction: f64,
    /// Print one line per iteration to stderr.
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iters: 200,
            step_fraction: 0.98,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    SlowProgress,
    IterationLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub mu: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub alpha_primal: f64,
    pub alpha_dual: f64,
    pub sigma: f64,
    /// 0 for the first run, 1 after the restart.
    pub run: usize,
}

/// Relative residuals in the original scaling.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub g: DMatrix<f64>,
    pub f: DVector<f64>,
    /// One entry per inequality row, in row order.
    pub slacks: DVector<f64>,
    /// One multiplier per constraint row.
    pub duals: DVector<f64>,
    /// Dual slack matrix `C - sum_i y_i A_i`.
    pub dual_psd: DMatrix<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub residuals: Residuals,
    pub restarted: bool,
    pub log: Vec<IterationLog>,
    pub seconds: f64,
}

// Upper-triangle index pairs in svec order.
fn svec_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            out.push((i, j));
        }
    }
    out
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn max_step_psd(scaled: &DMatrix<f64>, lambda: &DVector<f64>) -> f64 {
    // max alpha with diag(lambda) + alpha * scaled PSD.
    let n = lambda.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] = scaled[(i, j)] / (lambda[i] * lambda[j]).sqrt();
        }
    }
    let ev = SymmetricEigen::new(sym(&m)).eigenvalues;
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < 0.0 {
        -1.0 / min
    } else {
        f64::INFINITY
    }
}

fn max_step_lp(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

struct Row {
    // (i, j, a) with i <= j
    psd: Vec<(usize, usize, f64)>,
    support: Vec<usize>,
    dense: DMatrix<f64>,
}

/// Program after equilibration and free-block reduction.
struct Scaled {
    n: usize,
    m: usize,
    rows: Vec<Row>,
    ineq_rows: Vec<usize>,
    b: DVector<f64>,
    br: DMatrix<f64>,
    cr: DVector<f64>,
    cmat: DMatrix<f64>,
    /// Row scale factors `r_i`.
    r: DVector<f64>,
    /// Orthonormal range basis of the free block.
    vr: DMatrix<f64>,
    b_norm: f64,
    c_norm: f64,
}

impl Scaled {
    fn a_of(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.m, self.rows.iter().map(|r| triplet_inner(&r.psd, x)))
    }

    fn a_adj(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for (row, &yi) in self.rows.iter().zip(y.iter()) {
            if yi == 0.0 {
                continue;
            }
            for &(i, j, a) in &row.psd {
                out[(i, j)] += yi * a;
                if i != j {
                    out[(j, i)] += yi * a;
                }
            }
        }
        out
    }

    fn pad(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for (k, &row) in self.ineq_rows.iter().enumerate() {
            out[row] = v[k];
        }
        out
    }

    fn ineq(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.ineq_rows.len(), self.ineq_rows.iter().map(|&i| y[i]))
    }
}

fn prepare(p: &ConicProgram) -> Result<Scaled, SolverError> {
    let n = p.psd_dim;
    let m = p.constraints.len();
    let q = p.free_dim;
    if n == 0 {
        return Err(SolverError::Empty("no PSD block"));
    }
    if m == 0 {
        return Err(SolverError::Empty("no constraints"));
    }
    let mut rows = Vec::with_capacity(m);
    let mut ineq_rows = Vec::new();
    let mut b = DVector::zeros(m);
    let mut bmat = DMatrix::zeros(m, q);
    let mut r = DVector::zeros(m);
    for (k, c) in p.constraints.iter().enumerate() {
        let mut norm2 = 0.0;
        for &(i, j, a) in &c.psd {
            if i >= n || j >= n {
                return Err(SolverError::BadIndex(c.label.clone()));
            }
            norm2 += if i == j { a * a } else { 2.0 * a * a };
        }
        for &(i, a) in &c.free {
            if i >= q {
                return Err(SolverError::BadIndex(c.label.clone()));
            }
            norm2 += a * a;
        }
        let scale = if norm2 > 0.0 { 1.0 / norm2.sqrt() } else { 1.0 };
        r[k] = scale;
        let mut psd: Vec<(usize, usize, f64)> = c
            .psd
            .iter()
            .map(|&(i, j, a)| (i.min(j), i.max(j), a * scale))
            .collect();
        psd.sort_by_key(|&(i, j, _)| (i, j));
        let mut support: Vec<usize> = psd.iter().flat_map(|&(i, j, _)| [i, j]).collect();
        support.sort_unstable();
        support.dedup();
        let kk = support.len();
        let mut dense = DMatrix::zeros(kk, kk);
        for &(i, j, a) in &psd {
            let (pi, pj) = (
                support.binary_search(&i).expect("in support"),
                support.binary_search(&j).expect("in support"),
            );
            dense[(pi, pj)] += a;
            if pi != pj {
                dense[(pj, pi)] += a;
            }
        }
        for &(i, a) in &c.free {
            bmat[(k, i)] += a * scale;
        }
        b[k] = c.rhs * scale;
        if c.sense == Sense::Ge {
            ineq_rows.push(k);
        }
        rows.push(Row { psd, support, dense });
    }
    let mut cfree = DVector::zeros(q);
    for &(i, a) in &p.objective_free {
        if i >= q {
            return Err(SolverError::BadIndex("objective".into()));
        }
        cfree[i] += a;
    }
    let (vr, br, cr) = if q > 0 {
        let btb = bmat.transpose() * &bmat;
        let eig = SymmetricEigen::new(btb);
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..q).filter(|&i| eig.eigenvalues[i] > 1e-12 * lmax.max(1e-300)).collect();
        let mut vr = DMatrix::zeros(q, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            vr.set_column(c, &eig.eigenvectors.column(i));
        }
        let br = &bmat * &vr;
        let cr = vr.transpose() * &cfree;
        (vr, br, cr)
    } else {
        (DMatrix::zeros(0, 0), DMatrix::zeros(m, 0), DVector::zeros(0))
    };
    let cmat = triplet_matrix(n, &p.objective_psd);
    let b_norm = DVector::from_iterator(m, p.constraints.iter().map(|c| c.rhs)).norm();
    let c_norm = cmat.norm() + cfree.norm();
    Ok(Scaled {
        n,
        m,
        rows,
        ineq_rows,
        b,
        br,
        cr,
        cmat,
        r,
        vr,
        b_norm,
        c_norm,
    })
}

#[derive(Clone)]
struct Iterate {
    x: DMatrix<f64>,
    s: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
    zm: DMatrix<f64>,
    zs: DVector<f64>,
}

struct Direction {
    dx: DMatrix<f64>,
    dxt: DMatrix<f64>,
    dzt: DMatrix<f64>,
    ds: DVector<f64>,
    dz: DVector<f64>,
    dy: DVector<f64>,
    dzm: DMatrix<f64>,
    dzs: DVector<f64>,
}

struct Metrics {
    pobj: f64,
    dobj: f64,
    pres: f64,
    dres: f64,
    gap: f64,
    mu: f64,
    rp: DVector<f64>,
    rd: DMatrix<f64>,
    rds: DVector<f64>,
    rdz: DVector<f64>,
}

fn metrics(sp: &Scaled, it: &Iterate, objective_constant: f64) -> Metrics {
    let rp = &sp.b - sp.a_of(&it.x) - &sp.br * &it.z + sp.pad(&it.s);
    let rd = &sp.cmat - sp.a_adj(&it.y) - &it.zm;
    let rds = sp.ineq(&it.y) - &it.zs;
    let rdz = &sp.cr - sp.br.transpose() * &it.y;
    let pobj = sp.cmat.dot(&it.x) + sp.cr.dot(&it.z) + objective_constant;
    let dobj = sp.b.dot(&it.y) + objective_constant;
    let n_cone = (sp.n + sp.ineq_rows.len()) as f64;
    let mu = (it.x.dot(&it.zm) + it.s.dot(&it.zs)) / n_cone;
    // Original scaling: rp_i / r_i, r_i * rds_i.
    let rp_orig = rp.component_div(&sp.r).norm();
    let rds_orig = DVector::from_iterator(
        rds.len(),
        sp.ineq_rows.iter().enumerate().map(|(k, &i)| rds[k] * sp.r[i]),
    )
    .norm();
    let pres = rp_orig / (1.0 + sp.b_norm);
    let dres = (rd.norm_squared() + rds_orig * rds_orig + rdz.norm_squared()).sqrt() / (1.0 + sp.c_norm);
    let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
    Metrics {
        pobj,
        dobj,
        pres,
        dres,
        gap,
        mu,
        rp,
        rd,
        rds,
        rdz,
    }
}

fn initial_point(sp: &Scaled, perturb: bool) -> Iterate {
    let n = sp.n as f64;
    let p = sp.ineq_rows.len();
    let mut xi: f64 = 10.0f64.max(n.sqrt());
    let mut eta: f64 = 10.0f64.max(n.sqrt()).max(sp.cmat.norm());
    for (k, row) in sp.rows.iter().enumerate() {
        let an = row.dense.norm();
        xi = xi.max(n * (1.0 + sp.b[k].abs()) / (1.0 + an));
        eta = eta.max(an);
    }
    let mut x = DMatrix::identity(sp.n, sp.n) * xi;
    let mut zm = DMatrix::identity(sp.n, sp.n) * eta;
    if perturb {
        // Deterministic diagonal perturbation in [0.5, 1.5].
        for i in 0..sp.n {
            let w = 0.5 + ((i * 7919 + 13) % 101) as f64 / 100.0;
            x[(i, i)] *= w;
            zm[(i, i)] *= 2.0 - w;
        }
    }
    Iterate {
        x,
        s: DVector::from_element(p, xi),
        z: DVector::zeros(sp.br.ncols()),
        y: DVector::zeros(sp.m),
        zm,
        zs: DVector::from_element(p, eta),
    }
}

struct Scaling {
    g: DMatrix<f64>,
    lambda: DVector<f64>,
}

/// With `X = L L^T`, `Z = R R^T` and `R^T L = U S V^T`, the scaling is
/// `G = L V S^{-1/2}`, so `G^T Z G = G^{-1} X G^{-T} = S`.
fn nt_scaling(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Scaling> {
    let l = x.clone().cholesky()?.l();
    let r = z.clone().cholesky()?.l();
    let svd = (r.transpose() * &l).svd(false, true);
    let vt = svd.v_t?;
    let lambda = svd.singular_values;
    if lambda.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let mut g = &l * vt.transpose();
    for j in 0..x.nrows() {
        let f = lambda[j].powf(-0.5);
        g.column_mut(j).scale_mut(f);
    }
    Some(Scaling { g, lambda })
}

struct Newton<'a> {
    sp: &'a Scaled,
    sc: &'a Scaling,
    m_chol: Factor,
    s_chol: Option<Factor>,
    minv_b: DMatrix<f64>,
    d: DVector<f64>,
    abar: DMatrix<f64>,
    dfull: DVector<f64>,
}

/// Returns `Abar`, whose columns are `svec(G^T A_k G)`, and
/// `M = Abar^T Abar + diag(d)` on the inequality rows.
fn schur(sp: &Scaled, sc: &Scaling, d: &DVector<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let n = sp.n;
    let pairs = svec_pairs(n);
    let nv = pairs.len();
    let mut abar = DMatrix::zeros(nv, sp.m);
    let rt2 = std::f64::consts::SQRT_2;
    for (k, row) in sp.rows.iter().enumerate() {
        if row.support.is_empty() {
            continue;
        }
        let kk = row.support.len();
        let mut gs = DMatrix::zeros(kk, n);
        for (a, &i) in row.support.iter().enumerate() {
            gs.set_row(a, &sc.g.row(i));
        }
        let t = &row.dense * &gs;
        let at = gs.transpose() * t;
        let mut col = abar.column_mut(k);
        for (idx, &(i, j)) in pairs.iter().enumerate() {
            col[idx] = if i == j { at[(i, i)] } else { rt2 * 0.5 * (at[(i, j)] + at[(j, i)]) };
        }
    }
    let mut m = abar.transpose() * &abar;
    for (k, &row) in sp.ineq_rows.iter().enumerate() {
        m[(row, row)] += d[k];
    }
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((abar, m))
}

/// Cholesky of `D M D` with `D = diag(M)^{-1/2}`; regularization is relative
/// to the unit diagonal.
struct Factor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    dscale: DVector<f64>,
}

impl Factor {
    fn solve(&self, h: &DVector<f64>) -> DVector<f64> {
        let t = h.component_mul(&self.dscale);
        self.chol.solve(&t).component_mul(&self.dscale)
    }
}

fn factor(m: DMatrix<f64>) -> Option<Factor> {
    let n = m.nrows();
    let dscale = DVector::from_iterator(
        n,
        m.diagonal().iter().map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }),
    );
    let mut ms = m;
    for j in 0..n {
        for i in 0..n {
            ms[(i, j)] *= dscale[i] * dscale[j];
        }
    }
    if let Some(chol) = ms.clone().cholesky() {
        return Some(Factor { chol, dscale });
    }
    for reg in [1e-14, 1e-12, 1e-10] {
        let mut mm = ms.clone();
        for i in 0..n {
            mm[(i, i)] += reg;
        }
        if let Some(chol) = mm.cholesky() {
            return Some(Factor { chol, dscale });
        }
    }
    None
}

impl<'a> Newton<'a> {
    fn new(sp: &'a Scaled, sc: &'a Scaling, it: &Iterate) -> Option<Self> {
        let d = it.s.component_div(&it.zs);
        let (abar, m) = schur(sp, sc, &d)?;
        let m_chol = factor(m)?;
        let mut dfull = DVector::zeros(sp.m);
        for (k, &row) in sp.ineq_rows.iter().enumerate() {
            dfull[row] = d[k];
        }
        let mut newton = Self {
            sp,
            sc,
            m_chol,
            s_chol: None,
            minv_b: DMatrix::zeros(sp.m, 0),
            d,
            abar,
            dfull,
        };
        let q = sp.br.ncols();
        if q > 0 {
            let mut minv_b = DMatrix::zeros(sp.m, q);
            for j in 0..q {
                let col = newton.solve_m(&sp.br.column(j).clone_owned());
                minv_b.set_column(j, &col);
            }
            let s = sym(&(sp.br.transpose() * &minv_b));
            newton.s_chol = Some(factor(s)?);
            newton.minv_b = minv_b;
        }
        Some(newton)
    }

    fn apply_m(&self, v: &DVector<f64>) -> DVector<f64> {
        self.abar.tr_mul(&(&self.abar * v)) + self.dfull.component_mul(v)
    }

    /// `M^{-1} h` by conjugate gradients preconditioned with the Cholesky
    /// factor. Products go through `Abar`, so accuracy does not hinge on the
    /// explicitly formed `M`.
    fn solve_m(&self, h: &DVector<f64>) -> DVector<f64> {
        let mut y = self.m_chol.solve(h);
        let hn = h.norm();
        if hn == 0.0 {
            return y;
        }
        let mut r = h - self.apply_m(&y);
        let mut best = (r.norm(), y.clone());
        let mut z = self.m_chol.solve(&r);
        let mut p = z.clone();
        let mut rz = r.dot(&z);
        for _ in 0..50 {
            if best.0 <= 1e-15 * hn || !(rz > 0.0) {
                break;
            }
            let ap = self.apply_m(&p);
            let pap = p.dot(&ap);
            if !(pap > 0.0) {
                break;
            }
            let a = rz / pap;
            y.axpy(a, &p, 1.0);
            r.axpy(-a, &ap, 1.0);
            let rn = r.norm();
            if rn < best.0 {
                best = (rn, y.clone());
            }
            z = self.m_chol.solve(&r);
            let rz_new = r.dot(&z);
            p = &z + &p * (rz_new / rz);
            rz = rz_new;
        }
        best.1
    }

    /// `(dy, dz)` from `M dy + B dz = h`, `B^T dy = rdz`.
    fn solve_reduced(&self, h: &DVector<f64>, rdz: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let sp = self.sp;
        match &self.s_chol {
            Some(sc) => {
                let minv_h = self.solve_m(h);
                let rhs = sp.br.transpose() * &minv_h - rdz;
                let dz = sc.solve(&rhs);
                let dy = minv_h - &self.minv_b * &dz;
                (dy, dz)
            }
            None => (self.solve_m(h), DVector::zeros(0)),
        }
    }

    /// `dmat` is the complementarity target in the scaled space, so that
    /// `dX~ + dZ~ = dmat` with `dX~ = G^{-1} dX G^{-T}` and `dZ~ = G^T dZ G`.
    fn solve(&self, it: &Iterate, mt: &Metrics, dmat: &DMatrix<f64>, rcs: &DVector<f64>) -> Direction {
        let sp = self.sp;
        let g = &self.sc.g;
        let gt = g.transpose();
        let rdt = sym(&(&gt * &mt.rd * g));
        let rc_minus = sym(&(g * (dmat - &rdt) * &gt));
        let rcs_over = rcs.component_div(&it.zs);
        let lp = &rcs_over - self.d.component_mul(&mt.rds);
        let h = &mt.rp - sp.a_of(&rc_minus) + sp.pad(&lp);
        let (mut dy, mut dz) = self.solve_reduced(&h, &mt.rdz);
        let mut dzm = &mt.rd - sp.a_adj(&dy);
        let mut dzt = sym(&(&gt * &dzm * g));
        let mut dxt = dmat - &dzt;
        let mut dx = sym(&(g * &dxt * &gt));
        let mut dzs = &mt.rds + sp.ineq(&dy);
        let mut ds = &rcs_over - self.d.component_mul(&dzs);
        // Dual and complementarity rows hold by construction; refine the
        // primal rows and B^T dy = rdz against the same factorization.
        let resid = |dx: &DMatrix<f64>, dz: &DVector<f64>, ds: &DVector<f64>, dy: &DVector<f64>| {
            (
                &mt.rp - sp.a_of(dx) - &sp.br * dz + sp.pad(ds),
                &mt.rdz - sp.br.transpose() * dy,
            )
        };
        let (mut ep, mut ez) = resid(&dx, &dz, &ds, &dy);
        for _ in 0..3 {
            let size = ep.norm() + ez.norm();
            if size <= 1e-15 * (1.0 + mt.rp.norm() + h.norm()) {
                break;
            }
            let (cy, cz) = self.solve_reduced(&ep, &ez);
            let czm = -sp.a_adj(&cy);
            let czt = sym(&(&gt * &czm * g));
            let ndy = &dy + cy;
            let ndz = &dz + cz;
            let nzm = &dzm + czm;
            let nxt = &dxt - &czt;
            let nzt = &dzt + czt;
            let ndx = sym(&(g * &nxt * &gt));
            let nzs = &mt.rds + sp.ineq(&ndy);
            let nds = &rcs_over - self.d.component_mul(&nzs);
            let (np, nz) = resid(&ndx, &ndz, &nds, &ndy);
            if np.norm() + nz.norm() >= size {
                break;
            }
            (dy, dz, dzm, dxt, dzt, dx, dzs, ds, ep, ez) = (ndy, ndz, nzm, nxt, nzt, ndx, nzs, nds, np, nz);
        }
        Direction {
            dx,
            dxt,
            dzt,
            ds,
            dz,
            dy,
            dzm,
            dzs,
        }
    }
}

fn step_lengths(sc: &Scaling, it: &Iterate, dir: &Direction) -> (f64, f64) {
    let ap = max_step_psd(&dir.dxt, &sc.lambda).min(max_step_lp(&it.s, &dir.ds));
    let ad = max_step_psd(&dir.dzt, &sc.lambda).min(max_step_lp(&it.zs, &dir.dzs));
    (ap, ad)
}

fn step(it: &Iterate, dir: &Direction, ap: f64, ad: f64) -> Iterate {
    Iterate {
        x: sym(&(&it.x + &dir.dx * ap)),
        s: &it.s + &dir.ds * ap,
        z: &it.z + &dir.dz * ap,
        y: &it.y + &dir.dy * ad,
        zm: sym(&(&it.zm + &dir.dzm * ad)),
        zs: &it.zs + &dir.dzs * ad,
    }
}

fn pairing(it: &Iterate) -> f64 {
    it.x.dot(&it.zm) + it.s.dot(&it.zs)
}

/// Shrinks `(ap, ad)` until the iterate stays interior and the
/// complementarity drops by at least 1%. Diverging iterates on infeasible
/// problems never satisfy the second test; they get the first interior step.
fn backtrack(it: &Iterate, dir: &Direction, mut ap: f64, mut ad: f64) -> Option<Iterate> {
    let mut interior = None;
    for _ in 0..30 {
        let next = step(it, dir, ap, ad);
        let px = next.x.clone().cholesky().is_some() && next.s.iter().all(|&v| v > 0.0);
        let dz = next.zm.clone().cholesky().is_some() && next.zs.iter().all(|&v| v > 0.0);
        if px && dz {
            if pairing(&next) <= 0.99 * pairing(it) {
                return Some(next);
            }
            if interior.is_none() {
                interior = Some(next);
            }
            if ap != ad {
                ap = ap.min(ad);
                ad = ap;
            } else {
                ap *= 0.8;
                ad *= 0.8;
            }
            continue;
        }
        if !px {
            ap *= 0.8;
        }
        if !dz {
            ad *= 0.8;
        }
    }
    interior
}

enum Outcome {
    Done(SolveStatus),
    Stalled,
}

struct Run {
    best: Iterate,
    best_merit: f64,
    best_metrics: (f64, f64, f64, f64, f64),
    log: Vec<IterationLog>,
    iters: usize,
    segment: usize,
}

fn run(
    sp: &Scaled,
    start: Iterate,
    opts: &SolverOptions,
    objective_constant: f64,
    run: &mut Run,
) -> Outcome {
    let mut it = start;
    let mut small_steps = 0;
    let mut since_best = 0;
    let mut local_best = f64::INFINITY;
    loop {
        let mt = metrics(sp, &it, objective_constant);
        let merit = mt.pres.max(mt.dres).max(mt.gap);
        if merit < local_best {
            local_best = merit;
            since_best = 0;
        }
        if merit < run.best_merit || run.log.is_empty() {
            run.best_merit = merit;
            run.best = it.clone();
            run.best_metrics = (mt.pobj, mt.dobj, mt.pres, mt.dres, mt.gap);
        }
        if mt.pres <= opts.feas_tol && mt.dres <= opts.feas_tol && mt.gap <= opts.gap_tol {
            run.best = it.clone();
            run.best_merit = merit;
            run.best_metrics = (mt.pobj, mt.dobj, mt.pres, mt.dres, mt.gap);
            return Outcome::Done(SolveStatus::Optimal);
        }
        // Ray certificates: b.y growing with bounded dual residual, or
        // objective decreasing without bound with bounded primal residual.
        // A nearly feasible iterate rules out the matching certificate, since
        // diverging multipliers also arise on feasible sets without interior.
        let by = sp.b.dot(&it.y);
        if by > 0.0 {
            let dual_ray = (mt.rd.norm() + sp.cmat.norm() + mt.rds.norm() + sp.cr.norm() + mt.rdz.norm()) / by;
            if dual_ray < 1e-8 && by > 1e6 && mt.pres > opts.feas_tol {
                return Outcome::Done(SolveStatus::PrimalInfeasible);
            }
        }
        let cx = sp.cmat.dot(&it.x) + sp.cr.dot(&it.z);
        if cx < 0.0 {
            let primal_ray = (mt.rp.norm() + sp.b.norm()) / -cx;
            if primal_ray < 1e-8 && -cx > 1e6 && mt.dres > opts.feas_tol {
                return Outcome::Done(SolveStatus::DualInfeasible);
            }
        }
        if run.iters >= opts.max_iters {
            return Outcome::Done(SolveStatus::IterationLimit);
        }
        since_best += 1;
        if since_best > 12 {
            if opts.verbose {
                eprintln!("stall: no improvement in 12 iterations");
            }
            return Outcome::Stalled;
        }
        let Some(sc) = nt_scaling(&it.x, &it.zm) else {
            if opts.verbose {
                eprintln!("stall: scaling failed");
            }
            return Outcome::Stalled;
        };
        let Some(newton) = Newton::new(sp, &sc, &it) else {
            if opts.verbose {
                eprintln!("stall: schur factorization failed");
            }
            return Outcome::Stalled;
        };
        // Predictor.
        let d_aff = DMatrix::from_diagonal(&(-&sc.lambda));
        let rcs_aff = -it.s.component_mul(&it.zs);
        let aff = newton.solve(&it, &mt, &d_aff, &rcs_aff);
        let (ap_a, ad_a) = step_lengths(&sc, &it, &aff);
        let (ap_a, ad_a) = (ap_a.min(1.0), ad_a.min(1.0));
        let n_cone = (sp.n + sp.ineq_rows.len()) as f64;
        let x_aff = &it.x + &aff.dx * ap_a;
        let z_aff = &it.zm + &aff.dzm * ad_a;
        let s_aff = &it.s + &aff.ds * ap_a;
        let zs_aff = &it.zs + &aff.dzs * ad_a;
        let mu_aff = (x_aff.dot(&z_aff) + s_aff.dot(&zs_aff)) / n_cone;
        let sigma = if mt.mu > 0.0 {
            (mu_aff.max(0.0) / mt.mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };
        // Corrector in the scaled space.
        let n = sp.n;
        let target = sigma * mt.mu;
        let cross = sym(&(&aff.dxt * &aff.dzt));
        let mut dmat = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                let mut r = -cross[(i, j)];
                if i == j {
                    r += target - sc.lambda[i] * sc.lambda[i];
                }
                dmat[(i, j)] = 2.0 * r / (sc.lambda[i] + sc.lambda[j]);
            }
        }
        let rcs = DVector::from_element(it.s.len(), target)
            - it.s.component_mul(&it.zs)
            - aff.ds.component_mul(&aff.dzs);
        let dir = newton.solve(&it, &mt, &dmat, &rcs);
        let (ap, ad) = step_lengths(&sc, &it, &dir);
        let ap = (opts.step_fraction * ap).min(1.0);
        let ad = (opts.step_fraction * ad).min(1.0);
        if !(ap.is_finite() && ad.is_finite()) || dir.dy.iter().any(|v| !v.is_finite()) {
            return Outcome::Stalled;
        }
        run.iters += 1;
        let entry = IterationLog {
            iter: run.iters,
            mu: mt.mu,
            primal_objective: mt.pobj,
            dual_objective: mt.dobj,
            primal_residual: mt.pres,
            dual_residual: mt.dres,
            gap: mt.gap,
            alpha_primal: ap,
            alpha_dual: ad,
            sigma,
            run: run.segment,
        };
        if opts.verbose {
            eprintln!(
                "{:4} mu {:.3e} pobj {:+.9e} dobj {:+.9e} pres {:.2e} dres {:.2e} gap {:.2e} ap {:.3} ad {:.3} sigma {:.2e}",
                entry.iter, entry.mu, entry.primal_objective, entry.dual_objective, entry.primal_residual,
                entry.dual_residual, entry.gap, ap, ad, sigma
            );
        }
        run.log.push(entry);
        if ap < 1e-8 && ad < 1e-8 {
            small_steps += 1;
            if small_steps >= 3 {
                return Outcome::Stalled;
            }
        } else {
            small_steps = 0;
        }
        let Some(next) = backtrack(&it, &dir, ap, ad) else {
            if opts.verbose {
                eprintln!("stall: no step keeps the iterate interior");
            }
            return Outcome::Stalled;
        };
        it = next;
    }
}

/// Solves `p`. Deterministic for identical inputs.
pub fn solve(p: &ConicProgram, opts: &SolverOptions) -> Result<ConicSolution, SolverError> {
    let started = Instant::now();
    let sp = prepare(p)?;
    let q = p.free_dim;
    // An objective direction in the null space of B makes the problem
    // unbounded whenever it is feasible.
    let mut cfree = DVector::zeros(q);
    for &(i, a) in &p.objective_free {
        cfree[i] += a;
    }
    let null_part = if q > 0 { (&cfree - &sp.vr * &sp.cr).norm() } else { 0.0 };
    let start = initial_point(&sp, false);
    let mut r = Run {
        best: start.clone(),
        best_merit: f64::INFINITY,
        best_metrics: (0.0, 0.0, f64::INFINITY, f64::INFINITY, f64::INFINITY),
        log: Vec::new(),
        iters: 0,
        segment: 0,
    };
    let mut restarted = false;
    let status = if null_part > 1e-9 * (1.0 + cfree.norm()) {
        SolveStatus::DualInfeasible
    } else {
        match run(&sp, start, opts, p.objective_constant, &mut r) {
            Outcome::Done(s) => s,
            Outcome::Stalled => {
                restarted = true;
                let keep_best = r.best.clone();
                let keep = (r.best_merit, r.best_metrics);
                r.segment = 1;
                match run(&sp, initial_point(&sp, true), opts, p.objective_constant, &mut r) {
                    Outcome::Done(s) => s,
                    Outcome::Stalled => {
                        if keep.0 < r.best_merit {
                            r.best = keep_best;
                            r.best_merit = keep.0;
                            r.best_metrics = keep.1;
                        }
                        SolveStatus::SlowProgress
                    }
                }
            }
        }
    };
    let it = &r.best;
    let (pobj, dobj, pres, dres, gap) = r.best_metrics;
    let f = if q > 0 { &sp.vr * &it.z } else { DVector::zeros(0) };
    let mut slacks = DVector::zeros(sp.ineq_rows.len());
    for (k, &row) in sp.ineq_rows.iter().enumerate() {
        slacks[k] = it.s[k] / sp.r[row];
    }
    let duals = it.y.component_mul(&sp.r);
    Ok(ConicSolution {
        g: it.x.clone(),
        f,
        slacks,
        duals,
        dual_psd: it.zm.clone(),
        primal_objective: pobj,
        dual_objective: dobj,
        status,
        iterations: r.iters,
        residuals: Residuals {
            primal: pres,
            dual: dres,
            gap,
        },
        restarted,
        log: r.log,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Residuals recomputed from `(G, F, y)` and the original program only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Violation per row: `|lhs - rhs|` for equalities, `max(rhs - lhs, 0)` otherwise.
    pub row_violations: Vec<f64>,
    pub max_violation: f64,
    pub worst_row: Option<String>,
    pub min_eig_g: f64,
    pub norm_g: f64,
    pub asymmetry_g: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `|p - d| / (1 + |p| + |d|)`.
    pub relative_gap: f64,
    /// Minimum eigenvalue of `C - sum_i y_i A_i`.
    pub min_eig_dual: f64,
    /// Most negative multiplier on an inequality row, or 0.
    pub min_ineq_dual: f64,
    /// `|c - B^T y|`.
    pub free_dual_residual: f64,
}

impl ResidualReport {
    /// Rows violated by more than `tol`.
    pub fn violated(&self, p: &ConicProgram, tol: f64) -> Vec<String> {
        self.row_violations
            .iter()
            .zip(&p.constraints)
            .filter(|(v, _)| **v > tol)
            .map(|(_, c)| c.label.clone())
            .collect()
    }
}

pub fn certify(sol: &ConicSolution, p: &ConicProgram) -> ResidualReport {
    let g = &sol.g;
    let viol = p.violations(g, &sol.f);
    let (mut max_violation, mut worst_row) = (0.0, None);
    for (v, c) in viol.iter().zip(&p.constraints) {
        if *v > max_violation {
            max_violation = *v;
            worst_row = Some(c.label.clone());
        }
    }
    let eig = SymmetricEigen::new(sym(g)).eigenvalues;
    let min_eig_g = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let primal_objective = p.objective_value(g, &sol.f);
    let y = &sol.duals;
    let dual_objective = p.constraints.iter().zip(y.iter()).map(|(c, yi)| c.rhs * yi).sum::<f64>()
        + p.objective_constant;
    let mut zm = triplet_matrix(p.psd_dim, &p.objective_psd);
    let mut bty: DVector<f64> = DVector::zeros(p.free_dim);
    let mut min_ineq_dual: f64 = 0.0;
    for (c, &yi) in p.constraints.iter().zip(y.iter()) {
        zm -= triplet_matrix(p.psd_dim, &c.psd) * yi;
        for &(i, a) in &c.free {
            bty[i] += a * yi;
        }
        if c.sense == Sense::Ge {
            min_ineq_dual = min_ineq_dual.min(yi);
        }
    }
    let mut cfree = DVector::zeros(p.free_dim);
    for &(i, a) in &p.objective_free {
        cfree[i] += a;
    }
    let min_eig_dual = SymmetricEigen::new(zm).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    ResidualReport {
        row_violations: viol,
        max_violation,
        worst_row,
        min_eig_g,
        norm_g: g.norm(),
        asymmetry_g: (g - g.transpose()).abs().max(),
        primal_objective,
        dual_objective,
        relative_gap: (primal_objective - dual_objective).abs()
            / (1.0 + primal_objective.abs() + dual_objective.abs()),
        min_eig_dual,
        min_ineq_dual,
        free_dual_residual: (cfree - bty).norm(),
    }
}
