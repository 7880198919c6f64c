//! Shared generators for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pep_cycles::pep::{ConicConstraint, ConicProgram, Sense};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Planted {
    pub program: ConicProgram,
    pub optimum: f64,
    pub x: DMatrix<f64>,
    pub f: DVector<f64>,
}

fn upper(m: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let n = m.nrows();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i..n {
            if m[(i, j)] != 0.0 {
                out.push((i, j, m[(i, j)]));
            }
        }
    }
    out
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

/// A program with a known optimum, built from a complementary pair
/// `X* S* = 0` and dual multipliers consistent with the slacks.
pub fn planted(rng: &mut ChaCha8Rng, n: usize, m: usize, q: usize, p: usize) -> Planted {
    let qr = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)).qr();
    let basis = qr.q();
    let r = rng.gen_range(1..n.max(2));
    let mut dx = DVector::zeros(n);
    let mut ds = DVector::zeros(n);
    for i in 0..n {
        if i < r {
            dx[i] = rng.gen_range(0.5..2.0);
        } else {
            ds[i] = rng.gen_range(0.5..2.0);
        }
    }
    let x = &basis * DMatrix::from_diagonal(&dx) * basis.transpose();
    let s = &basis * DMatrix::from_diagonal(&ds) * basis.transpose();
    let f = DVector::from_fn(q, |_, _| rng.gen_range(-1.0..1.0));
    let mut c = s.clone();
    let mut cf = DVector::zeros(q);
    let mut rows = Vec::with_capacity(m);
    let mut dual_objective = 0.0;
    for i in 0..m {
        let a = random_symmetric(rng, n);
        let bfree = DVector::from_fn(q, |_, _| rng.gen_range(-1.0..1.0));
        let ineq = i < p;
        let (y, slack) = if !ineq {
            (rng.gen_range(-1.0..1.0), 0.0)
        } else if i % 2 == 0 {
            (rng.gen_range(0.1..1.0), 0.0)
        } else {
            (0.0, rng.gen_range(0.1..1.0))
        };
        let rhs = a.dot(&x) + bfree.dot(&f) - slack;
        c += &a * y;
        cf += &bfree * y;
        dual_objective += y * rhs;
        rows.push(ConicConstraint {
            label: format!("row{i}"),
            psd: upper(&a),
            free: bfree.iter().enumerate().map(|(k, &v)| (k, v)).collect(),
            sense: if ineq { Sense::Ge } else { Sense::Eq },
            rhs,
        });
    }
    let program = ConicProgram {
        psd_dim: n,
        free_dim: q,
        objective_psd: upper(&c),
        objective_free: cf.iter().enumerate().map(|(k, &v)| (k, v)).collect(),
        objective_constant: 0.0,
        constraints: rows,
    };
    let optimum = c.dot(&x) + cf.dot(&f);
    debug_assert!((optimum - dual_objective).abs() <= 1e-9 * (1.0 + optimum.abs()));
    Planted {
        program,
        optimum,
        x,
        f,
    }
}

/// Sizes of the `k`-th planted instance: psd dimension up to 40 and at most
/// 500 rows, never more rows than the symmetric dimension.
pub fn planted_sizes(k: usize) -> (usize, usize, usize, usize) {
    let n = 4 + (k * 7) % 37;
    let nv = n * (n + 1) / 2;
    let m = (nv * 2 / 3).clamp(2, 500);
    let q = k % 4;
    let p = m / (2 + k % 3);
    (n, m, q.min(m - 1), p)
}
