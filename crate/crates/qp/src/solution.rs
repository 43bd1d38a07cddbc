use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::QpError;
use crate::problem::QpProblem;
use crate::sparse::inf_norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    /// Primal infeasible; `QpSolution::certificate` holds the certificate residual.
    Infeasible,
    /// Dual infeasible (objective unbounded below on the feasible set).
    Unbounded,
    /// Iteration budget exhausted; the returned iterate is the best one seen.
    MaxIter,
}

impl fmt::Display for QpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::Unbounded => "unbounded",
            QpStatus::MaxIter => "max_iter",
        };
        f.write_str(s)
    }
}

/// Primal-dual result. Multiplier signs follow the Lagrangian
/// `L = J + y_eqᵀ(Ax − b) + y_ineqᵀ(Gx − h) + y_boundᵀ(x − bound)`:
/// `y_ineq ≥ 0`, `y_bound > 0` marks an active upper bound and `< 0` an
/// active lower bound.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub y_eq: Vec<f64>,
    pub y_ineq: Vec<f64>,
    pub y_bound: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub solve_time: f64,
    pub objective: f64,
    pub polished: bool,
    pub certificate: Option<f64>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Infinity-norm KKT residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// ‖Ax − b‖∞
    pub primal_eq: f64,
    /// ‖max(Gx − h, 0)‖∞ including bound violations
    pub primal_ineq: f64,
    /// ‖Px + q + Aᵀy_eq + Gᵀy_ineq + y_bound‖∞
    pub stationarity: f64,
    /// Σ |yᵢ · slackᵢ| over inequality rows and bounds
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal_eq
            .max(self.primal_ineq)
            .max(self.stationarity)
            .max(self.complementarity)
    }

    pub fn all_below(&self, tol: f64) -> bool {
        self.max() <= tol
    }

    pub fn as_tuple(&self) -> (f64, f64, f64, f64) {
        (self.primal_eq, self.primal_ineq, self.stationarity, self.complementarity)
    }
}

pub fn kkt_residuals(prob: &QpProblem, sol: &QpSolution) -> Result<KktResiduals, QpError> {
    residuals_of(prob, &sol.x, &sol.y_eq, &sol.y_ineq, &sol.y_bound)
}

pub fn residuals_of(
    prob: &QpProblem,
    x: &[f64],
    y_eq: &[f64],
    y_ineq: &[f64],
    y_bound: &[f64],
) -> Result<KktResiduals, QpError> {
    let n = prob.n();
    if x.len() != n || y_bound.len() != n || y_eq.len() != prob.a.nrows || y_ineq.len() != prob.g.nrows {
        return Err(QpError::Dimension(format!(
            "solution sizes x={} y_eq={} y_ineq={} y_bound={} vs n={} m_eq={} m_ineq={}",
            x.len(),
            y_eq.len(),
            y_ineq.len(),
            y_bound.len(),
            n,
            prob.a.nrows,
            prob.g.nrows
        )));
    }
    let mut ax = prob.a.mul_vec(x);
    for (r, b) in ax.iter_mut().zip(&prob.b) {
        *r -= b;
    }
    let primal_eq = inf_norm(&ax);

    let gx = prob.g.mul_vec(x);
    let mut primal_ineq = 0.0f64;
    let mut complementarity = 0.0;
    for ((gxi, hi), yi) in gx.iter().zip(&prob.h).zip(y_ineq) {
        let slack = gxi - hi;
        primal_ineq = primal_ineq.max(slack.max(0.0));
        if *yi != 0.0 {
            complementarity += (yi * slack).abs();
        }
    }
    for j in 0..n {
        primal_ineq = primal_ineq.max((x[j] - prob.ub[j]).max(0.0));
        primal_ineq = primal_ineq.max((prob.lb[j] - x[j]).max(0.0));
        let yb = y_bound[j];
        if yb > 0.0 {
            complementarity += (yb * (x[j] - prob.ub[j])).abs();
        } else if yb < 0.0 {
            complementarity += (yb * (x[j] - prob.lb[j])).abs();
        }
    }

    let mut stat = prob.p.mul_vec(x);
    for (s, qi) in stat.iter_mut().zip(&prob.q) {
        *s += qi;
    }
    prob.a.gemv_t(1.0, y_eq, &mut stat);
    prob.g.gemv_t(1.0, y_ineq, &mut stat);
    for (s, yb) in stat.iter_mut().zip(y_bound) {
        *s += yb;
    }
    Ok(KktResiduals {
        primal_eq,
        primal_ineq,
        stationarity: inf_norm(&stat),
        complementarity,
    })
}

/// One row of the optional iteration log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub objective: f64,
}

pub fn write_iteration_log(path: &Path, log: &[IterationRecord]) -> Result<(), QpError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iter,primal_res,dual_res,objective")?;
    for r in log {
        writeln!(f, "{},{},{},{}", r.iter, r.primal_res, r.dual_res, r.objective)?;
    }
    Ok(())
}
