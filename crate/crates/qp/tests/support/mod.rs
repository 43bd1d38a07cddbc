//! Test-only helpers: random problem generators and a brute-force
//! active-set enumeration oracle for small dense QPs.

#![allow(dead_code)]

use flexsched_qp::{CscMatrix, QpProblem, Triplets};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Dense QP without variable bounds: min ½xᵀPx + qᵀx, Ax = b, Gx ≤ h.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl DenseQp {
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    pub fn to_problem(&self) -> QpProblem {
        let n = self.q.len();
        let dense = |m: &DMatrix<f64>| {
            let data: Vec<f64> = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
            CscMatrix::from_dense(m.nrows(), m.ncols(), &data)
        };
        QpProblem {
            p: dense(&self.p),
            q: self.q.iter().copied().collect(),
            a: dense(&self.a),
            b: self.b.iter().copied().collect(),
            g: dense(&self.g),
            h: self.h.iter().copied().collect(),
            lb: vec![f64::NEG_INFINITY; n],
            ub: vec![f64::INFINITY; n],
        }
    }
}

/// Tries every subset of inequality rows as the active set, solves the
/// equality-constrained KKT system and keeps the best primal-feasible point.
pub fn active_set_oracle(qp: &DenseQp) -> Option<(DVector<f64>, f64)> {
    let n = qp.q.len();
    let me = qp.a.nrows();
    let mi = qp.g.nrows();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << mi) {
        let active: Vec<usize> = (0..mi).filter(|i| mask & (1 << i) != 0).collect();
        let k = me + active.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
        for j in 0..n {
            rhs[j] = -qp.q[j];
        }
        for r in 0..k {
            let (row, val) = if r < me {
                (qp.a.row(r).clone_owned(), qp.b[r])
            } else {
                let i = active[r - me];
                (qp.g.row(i).clone_owned(), qp.h[i])
            };
            for j in 0..n {
                kkt[(n + r, j)] = row[j];
                kkt[(j, n + r)] = row[j];
            }
            rhs[n + r] = val;
        }
        let svd = kkt.clone().svd(true, true);
        let Ok(sol) = svd.solve(&rhs, 1e-11) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-8 {
            continue;
        }
        let x = sol.rows(0, n).clone_owned();
        if me > 0 && (&qp.a * &x - &qp.b).amax() > 1e-8 {
            continue;
        }
        if mi > 0 && (&qp.g * &x - &qp.h).max() > 1e-8 {
            continue;
        }
        let obj = qp.objective(&x);
        if best.as_ref().map_or(true, |(_, o)| obj < *o) {
            best = Some((x, obj));
        }
    }
    best
}

/// Random feasible dense instance with n ≤ 10 and at most 6 constraints.
/// With `definite` the Hessian is positive definite, otherwise it is a
/// rank-deficient PSD matrix with `q` in its range so the problem stays bounded.
pub fn random_dense(rng: &mut impl Rng, definite: bool) -> DenseQp {
    let n = rng.random_range(1..=10);
    let me = rng.random_range(0..=2usize.min(n - 1));
    let mi = rng.random_range(1..=6 - me);
    let rank = if definite { n } else { rng.random_range(1..=n) };
    let bmat = DMatrix::from_fn(rank, n, |_, _| rng.random_range(-1.0..1.0));
    let mut p = bmat.transpose() * &bmat;
    let q = if definite {
        for j in 0..n {
            p[(j, j)] += 0.1;
        }
        DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0))
    } else {
        let w = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        &p * w
    };
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let a = DMatrix::from_fn(me, n, |_, _| rng.random_range(-1.0..1.0));
    let b = &a * &x0;
    let g = DMatrix::from_fn(mi, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &g * &x0 + DVector::from_fn(mi, |_, _| rng.random_range(0.0..0.5));
    DenseQp { p, q, a, b, g, h }
}

/// Random feasible, bounded sparse LCQP with `n ≤ 200`.
pub fn random_sparse(rng: &mut impl Rng) -> QpProblem {
    let n = rng.random_range(5..=200);
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

    // bounds on a random subset of variables
    let mut lb = vec![f64::NEG_INFINITY; n];
    let mut ub = vec![f64::INFINITY; n];
    for j in 0..n {
        match rng.random_range(0..4) {
            0 => lb[j] = x0[j] - rng.random_range(0.0..0.5),
            1 => ub[j] = x0[j] + rng.random_range(0.0..0.5),
            2 => {
                lb[j] = x0[j] - rng.random_range(0.0..0.5);
                ub[j] = x0[j] + rng.random_range(0.0..0.5);
            }
            _ => {}
        }
    }

    // P = BᵀB + diag, strictly positive on coordinates lacking a two-sided box
    let rows = rng.random_range(1..=n);
    let mut bt = Triplets::new(rows, n);
    for r in 0..rows {
        for _ in 0..3 {
            bt.push(r, rng.random_range(0..n), rng.random_range(-1.0..1.0));
        }
    }
    let b = bt.to_csc();
    let dense_b = b.to_dense();
    let mut pt = Triplets::new(n, n);
    for row in &dense_b {
        let nz: Vec<(usize, f64)> = row.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        for &(i, vi) in &nz {
            for &(j, vj) in &nz {
                pt.push(i, j, vi * vj);
            }
        }
    }
    for j in 0..n {
        let boxed = lb[j].is_finite() && ub[j].is_finite();
        let extra = if boxed && rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.01..1.0) };
        pt.push(j, j, extra);
    }
    let p = pt.to_csc();
    let q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

    let sparse_rows = |rng: &mut dyn rand::RngCore, m: usize| {
        let mut t = Triplets::new(m, n);
        for r in 0..m {
            let k = 1 + (rng.next_u32() as usize % 4);
            for _ in 0..k {
                let j = rng.next_u32() as usize % n;
                let v = (rng.next_u32() as f64 / u32::MAX as f64) * 2.0 - 1.0;
                t.push(r, j, v);
            }
        }
        t.to_csc()
    };
    let me = rng.random_range(0..=n / 4);
    let mi = rng.random_range(0..=n / 2);
    let a = sparse_rows(rng, me);
    let g = sparse_rows(rng, mi);
    let bvec = a.mul_vec(&x0);
    let h: Vec<f64> = g.mul_vec(&x0).iter().map(|v| v + rng.random_range(0.0..0.3)).collect();
    QpProblem {
        p,
        q,
        a,
        b: bvec,
        g,
        h,
        lb,
        ub,
    }
}
