//! Flat-start linearization of the polar AC power-flow equations and a
//! Newton–Raphson reference solver.
//!
//! Per time step the grid block of the decision vector is `[v; θ; p; q]`
//! (each of length `N`) and the flexibility block is `[p_flex; q_flex]`
//! (each of length `S`). With `J` the power-flow Jacobian at
//! `v = 1, θ = 0`, the blocks are
//!
//! ```text
//! B̃ = [ J_pv  J_pθ  -I   0 ]      B̃ x_grid            = ĉ
//!     [ J_qv  J_qθ   0  -I ]
//! C̃ = [ 0 0 E_ns 0 ; 0 0 0 E_ns ] C̃ x_grid + D̃ x_flex = c
//! ```
//!
//! where `E_ns` selects non-slack buses, `D̃` maps each storage onto its
//! bus (charging power withdraws from the bus) and `c` holds the fixed
//! injections. At the flat start without shunts `ĉ = 0`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Branch, Network};

pub const AC_MAX_ITER: usize = 50;
pub const AC_TOL: f64 = 1e-8;

/// Bus admittance matrix split into conductance and susceptance.
#[derive(Debug, Clone)]
pub struct Admittance {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Admittance {
    pub fn of(net: &Network) -> Self {
        let n = net.n_buses();
        let mut g = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, n);
        for br in &net.branches {
            let (i, j) = (br.from_bus, br.to_bus);
            for (r, c, s) in [(i, i, 1.0), (j, j, 1.0), (i, j, -1.0), (j, i, -1.0)] {
                g[(r, c)] += s * br.y.re;
                b[(r, c)] += s * br.y.im;
            }
        }
        Self { g, b }
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    /// Active and reactive injections at `(v, θ)`.
    pub fn injections(&self, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let (gij, bij) = (self.g[(i, j)], self.b[(i, j)]);
                if gij == 0.0 && bij == 0.0 {
                    continue;
                }
                let (s, c) = (theta[i] - theta[j]).sin_cos();
                let vv = v[i] * v[j];
                p[i] += vv * (gij * c + bij * s);
                q[i] += vv * (gij * s - bij * c);
            }
        }
        (p, q)
    }

    /// Full `2N × 2N` Jacobian of `[p; q]` with respect to `[v; θ]`.
    pub fn jacobian(&self, v: &[f64], theta: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        let (p, q) = self.injections(v, theta);
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let (gij, bij) = (self.g[(i, j)], self.b[(i, j)]);
                if i == j {
                    let vi = v[i];
                    jac[(i, i)] = p[i] / vi + gij * vi;
                    jac[(i, n + i)] = -q[i] - bij * vi * vi;
                    jac[(n + i, i)] = q[i] / vi - bij * vi;
                    jac[(n + i, n + i)] = p[i] - gij * vi * vi;
                } else {
                    if gij == 0.0 && bij == 0.0 {
                        continue;
                    }
                    let (s, c) = (theta[i] - theta[j]).sin_cos();
                    let a = gij * c + bij * s;
                    let bb = gij * s - bij * c;
                    jac[(i, j)] = v[i] * a;
                    jac[(i, n + j)] = v[i] * v[j] * bb;
                    jac[(n + i, j)] = v[i] * bb;
                    jac[(n + i, n + j)] = -v[i] * v[j] * a;
                }
            }
        }
        jac
    }
}

/// Constant per-step blocks of the linearized equality system.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub n_bus: usize,
    pub n_sto: usize,
    pub slack_bus: usize,
    /// `2N × 4N`
    pub b_blk: DMatrix<f64>,
    /// `2(N−1) × 4N`
    pub c_blk: DMatrix<f64>,
    /// `2(N−1) × 2S`
    pub d_blk: DMatrix<f64>,
    /// Linearization point over `[x_grid; x_flex]` of one step.
    pub x_hat: DVector<f64>,
    /// Right-hand side of the `B̃` rows.
    pub c_hat: DVector<f64>,
    pub admittance: Admittance,
    /// Jacobian at the flat start.
    pub jacobian: DMatrix<f64>,
}

pub fn linearize(net: &Network) -> Result<LinearModel> {
    if !net.is_connected() {
        return Err(Error::Validation("branch graph is not connected".into()));
    }
    let n = net.n_buses();
    let s = net.n_storages();
    let adm = Admittance::of(net);
    let v_hat = vec![1.0; n];
    let th_hat = vec![0.0; n];
    let jac = adm.jacobian(&v_hat, &th_hat);
    let (p_hat, q_hat) = adm.injections(&v_hat, &th_hat);

    let mut b_blk = DMatrix::zeros(2 * n, 4 * n);
    b_blk.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&jac);
    for r in 0..2 * n {
        b_blk[(r, 2 * n + r)] = -1.0;
    }
    // J x̂ − f(x̂)
    let x_vt = DVector::from_iterator(2 * n, v_hat.iter().chain(&th_hat).copied());
    let f_hat = DVector::from_iterator(2 * n, p_hat.iter().chain(&q_hat).copied());
    let c_hat = &jac * &x_vt - f_hat;

    let ns = net.non_slack_buses();
    let m = ns.len();
    let mut c_blk = DMatrix::zeros(2 * m, 4 * n);
    let mut d_blk = DMatrix::zeros(2 * m, 2 * s);
    for (r, &bus) in ns.iter().enumerate() {
        c_blk[(r, 2 * n + bus)] = 1.0;
        c_blk[(m + r, 3 * n + bus)] = 1.0;
    }
    for (k, st) in net.storages.iter().enumerate() {
        let r = ns.iter().position(|&b| b == st.bus).ok_or_else(|| {
            Error::Validation(format!("storage {k} sits on the slack bus"))
        })?;
        d_blk[(r, k)] = 1.0;
        d_blk[(m + r, s + k)] = 1.0;
    }

    let mut x_hat = DVector::zeros(4 * n + 2 * s);
    x_hat.rows_mut(0, n).fill(1.0);

    let model = LinearModel {
        n_bus: n,
        n_sto: s,
        slack_bus: net.slack_bus,
        b_blk,
        c_blk,
        d_blk,
        x_hat,
        c_hat,
        admittance: adm,
        jacobian: jac,
    };
    if model.reduced_jacobian().lu().try_inverse().is_none() {
        return Err(Error::Singular("power-flow Jacobian is singular at the flat start".into()));
    }
    Ok(model)
}

impl LinearModel {
    fn reduced_rows(&self) -> Vec<usize> {
        let n = self.n_bus;
        (0..2 * n).filter(|&r| r % n != self.slack_bus).collect()
    }

    /// Jacobian restricted to non-slack rows and columns.
    pub fn reduced_jacobian(&self) -> DMatrix<f64> {
        let idx = self.reduced_rows();
        self.jacobian.select_rows(&idx).select_columns(&idx)
    }

    /// Voltages predicted by the linear model for the given injections,
    /// with the slack held at `1∠0`.
    pub fn predict(&self, p_inj: &[f64], q_inj: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n_bus;
        if p_inj.len() != n || q_inj.len() != n {
            return Err(Error::Dimension(format!("injections must have {n} entries")));
        }
        let idx = self.reduced_rows();
        let mut x_full = DVector::zeros(2 * n);
        x_full[self.slack_bus] = 1.0;
        // J x_full − [p; q] = ĉ, solved for the free entries
        let fixed = &self.jacobian * &x_full;
        let rhs = DVector::from_iterator(
            idx.len(),
            idx.iter().map(|&r| {
                let inj = if r < n { p_inj[r] } else { q_inj[r - n] };
                inj + self.c_hat[r] - fixed[r]
            }),
        );
        let sol = self
            .reduced_jacobian()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("reduced Jacobian".into()))?;
        for (k, &r) in idx.iter().enumerate() {
            x_full[r] = sol[k];
        }
        Ok((x_full.rows(0, n).iter().copied().collect(), x_full.rows(n, n).iter().copied().collect()))
    }
}

/// Converged AC operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct AcSolution {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// p.u. current magnitude per branch
    pub branch_i: Vec<f64>,
    /// Net injection computed at the slack bus.
    pub slack_p: f64,
    pub slack_q: f64,
    pub iterations: usize,
    /// Final mismatch ‖·‖∞ over non-slack equations.
    pub mismatch: f64,
    /// Mismatch before each Newton update and after the last one.
    pub mismatch_history: Vec<f64>,
}

pub fn solve_ac(net: &Network, p_inj: &[f64], q_inj: &[f64]) -> Result<AcSolution> {
    let n = net.n_buses();
    solve_ac_from(net, &Admittance::of(net), p_inj, q_inj, &vec![1.0; n], &vec![0.0; n])
}

/// Newton–Raphson from a given starting point; the slack entries of the
/// start are overwritten with `1∠0`.
pub fn solve_ac_from(
    net: &Network,
    adm: &Admittance,
    p_inj: &[f64],
    q_inj: &[f64],
    v0: &[f64],
    theta0: &[f64],
) -> Result<AcSolution> {
    let n = net.n_buses();
    if p_inj.len() != n || q_inj.len() != n || v0.len() != n || theta0.len() != n {
        return Err(Error::Dimension(format!("injections and start must have {n} entries")));
    }
    if p_inj.iter().chain(q_inj).any(|x| !x.is_finite()) {
        return Err(Error::Validation("non-finite injection".into()));
    }
    let sl = net.slack_bus;
    let mut v = v0.to_vec();
    let mut th = theta0.to_vec();
    v[sl] = 1.0;
    th[sl] = 0.0;
    let idx: Vec<usize> = (0..2 * n).filter(|&r| r % n != sl).collect();
    let mut history = Vec::new();

    let mismatch = |v: &[f64], th: &[f64]| {
        let (p, q) = adm.injections(v, th);
        let f: Vec<f64> = idx
            .iter()
            .map(|&r| if r < n { p[r] - p_inj[r] } else { q[r - n] - q_inj[r - n] })
            .collect();
        let norm = if f.iter().all(|x| x.is_finite()) {
            f.iter().fold(0.0f64, |m, x| m.max(x.abs()))
        } else {
            f64::NAN
        };
        (f, norm, p, q)
    };

    let mut iterations = 0;
    loop {
        let (f, norm, p, q) = mismatch(&v, &th);
        history.push(norm);
        if !norm.is_finite() {
            return Err(Error::NonConvergence {
                iterations,
                mismatch: norm,
            });
        }
        if norm <= AC_TOL {
            let mut sol = AcSolution {
                v,
                theta: th,
                branch_i: Vec::new(),
                slack_p: p[sl],
                slack_q: q[sl],
                iterations,
                mismatch: norm,
                mismatch_history: history,
            };
            sol.branch_i = net.branches.iter().map(|b| branch_current(&sol, b)).collect();
            return Ok(sol);
        }
        if iterations == AC_MAX_ITER {
            return Err(Error::NonConvergence {
                iterations,
                mismatch: norm,
            });
        }
        let jac = adm.jacobian(&v, &th).select_rows(&idx).select_columns(&idx);
        let dx = jac
            .lu()
            .solve(&DVector::from_vec(f))
            .ok_or(Error::NonConvergence {
                iterations,
                mismatch: norm,
            })?;
        for (k, &r) in idx.iter().enumerate() {
            if r < n {
                v[r] -= dx[k];
            } else {
                th[r - n] -= dx[k];
            }
        }
        iterations += 1;
    }
}

/// `|y|·|V_i∠θ_i − V_j∠θ_j|` in p.u.
pub fn branch_current(sol: &AcSolution, branch: &Branch) -> f64 {
    let (i, j) = (branch.from_bus, branch.to_bus);
    let vi = Complex64::from_polar(sol.v[i], sol.theta[i]);
    let vj = Complex64::from_polar(sol.v[j], sol.theta[j]);
    branch.y.norm() * (vi - vj).norm()
}
