//! Operator-splitting (ADMM) solver with Ruiz equilibration, adaptive step
//! size, infeasibility certificates and active-set polishing.
//!
//! The problem is recast as `min ½xᵀPx + qᵀx  s.t.  l ≤ Cx ≤ u` with
//! `C = [A; G; I_bounded]`. The quasi-definite KKT matrix
//! `[P + σI, Cᵀ; C, −diag(1/ρ)]` is analyzed once per sparsity pattern and
//! refactored numerically only when its values change, so a sequence of
//! problems that differ only in `q`, `b`, `h` and the bounds reuses the
//! factorization.

use std::time::Instant;

use crate::error::QpError;
use crate::ldl::{LdlFactor, LdlSymbolic};
use crate::problem::QpProblem;
use crate::solution::{residuals_of, IterationRecord, KktResiduals, QpSolution, QpStatus};
use crate::sparse::{dot, inf_norm, CscMatrix, Triplets};

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    /// Absolute tolerance on every KKT residual for an `Optimal` status.
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation parameter in (0, 2).
    pub alpha: f64,
    /// Step-size multiplier on equality rows.
    pub eq_rho_factor: f64,
    pub adaptive_rho: bool,
    /// Checks between step-size updates.
    pub adaptive_rho_interval: usize,
    /// Minimal ratio change that triggers a refactorization.
    pub adaptive_rho_tolerance: f64,
    pub scaling_iters: usize,
    pub polish: bool,
    /// Largest KKT residual at which polishing is first attempted.
    pub polish_start: f64,
    /// Iterations after which a failed polish is retried regardless of progress.
    pub polish_interval: usize,
    pub polish_delta: f64,
    pub polish_refine_iters: usize,
    /// Extra polishing rounds that add violated rows to the active set.
    pub polish_rounds: usize,
    /// Threshold on the normalized infeasibility certificates.
    pub eps_infeasible: f64,
    pub check_every: usize,
    pub record_log: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eq_rho_factor: 1e3,
            adaptive_rho: true,
            adaptive_rho_interval: 5,
            adaptive_rho_tolerance: 5.0,
            scaling_iters: 10,
            polish: true,
            polish_start: 1e-2,
            polish_interval: 100,
            polish_delta: 1e-7,
            polish_refine_iters: 15,
            polish_rounds: 3,
            eps_infeasible: 1e-8,
            check_every: 10,
            record_log: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Equality,
    Inequality,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowOrigin {
    Eq(usize),
    Ineq(usize),
    Bound(usize),
}

/// Everything that depends only on `P`, `A`, `G` and the finiteness pattern
/// of the bounds.
struct Workspace {
    p: CscMatrix,
    a: CscMatrix,
    g: CscMatrix,
    origins: Vec<RowOrigin>,
    kinds: Vec<RowKind>,
    c: CscMatrix,
    d: Vec<f64>,
    e: Vec<f64>,
    cost: f64,
    ps: CscMatrix,
    cs: CscMatrix,
    cst: CscMatrix,
    kkt: CscMatrix,
    p_diag_pos: Vec<usize>,
    rho_pos: Vec<usize>,
    ct_pos: Vec<usize>,
    sym: LdlSymbolic,
    base_rho: f64,
    base_factor: LdlFactor,
    work_rho: f64,
    work_factor: LdlFactor,
}

/// Stateful solver instance. It caches the factorization of the last
/// problem structure; it is `Send` but intended for use from one thread.
pub struct Solver {
    pub settings: Settings,
    ws: Option<Workspace>,
    log: Vec<IterationRecord>,
}

impl Default for Solver {
    fn default() -> Self {
        Self::new(Settings::default())
    }
}

/// Starting point for a solve; any part may be omitted.
#[derive(Debug, Clone, Default)]
pub struct WarmStart<'a> {
    pub x: Option<&'a [f64]>,
    pub y_eq: Option<&'a [f64]>,
    pub y_ineq: Option<&'a [f64]>,
    pub y_bound: Option<&'a [f64]>,
}

/// Solves with a fresh solver instance.
pub fn solve(prob: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    let settings = Settings {
        tol,
        max_iter,
        ..Settings::default()
    };
    Solver::new(settings).solve(prob)
}

impl Solver {
    pub fn new(settings: Settings) -> Self {
        Self {
            settings,
            ws: None,
            log: Vec::new(),
        }
    }

    /// Iteration log of the last solve (empty unless `record_log` is set).
    pub fn iteration_log(&self) -> &[IterationRecord] {
        &self.log
    }

    pub fn solve(&mut self, prob: &QpProblem) -> Result<QpSolution, QpError> {
        self.solve_warm(prob, &WarmStart::default())
    }

    pub fn solve_warm(&mut self, prob: &QpProblem, warm: &WarmStart<'_>) -> Result<QpSolution, QpError> {
        let start = Instant::now();
        prob.validate()?;
        if !(self.settings.tol > 0.0) {
            return Err(QpError::InvalidData(format!("tolerance must be positive, got {}", self.settings.tol)));
        }
        self.log.clear();
        let n = prob.n();

        if let Some(j) = (0..n).find(|&j| prob.lb[j] > prob.ub[j]) {
            let gap = prob.lb[j] - prob.ub[j];
            return Ok(self.trivial_infeasible(prob, gap, start));
        }

        let (origins, l, u) = constraint_rows(prob);
        let kinds: Vec<RowKind> = l.iter().zip(&u).map(|(&lo, &hi)| row_kind(lo, hi)).collect();
        self.prepare(prob, origins, kinds)?;
        let settings = self.settings.clone();
        let ws = self.ws.as_mut().expect("workspace prepared");
        let m = ws.c.nrows;

        // scaled data
        let q_s: Vec<f64> = (0..n).map(|j| ws.cost * ws.d[j] * prob.q[j]).collect();
        let l_s: Vec<f64> = (0..m).map(|i| ws.e[i] * l[i]).collect();
        let u_s: Vec<f64> = (0..m).map(|i| ws.e[i] * u[i]).collect();

        // iterates in scaled space
        let mut x: Vec<f64> = match warm.x {
            Some(x0) if x0.len() == n => (0..n).map(|j| x0[j] / ws.d[j]).collect(),
            _ => vec![0.0; n],
        };
        let mut z = ws.cs.mul_vec(&x);
        project(&mut z, &l_s, &u_s);
        let mut y = vec![0.0; m];
        for (i, o) in ws.origins.iter().enumerate() {
            let yv = match *o {
                RowOrigin::Eq(r) => warm.y_eq.filter(|v| v.len() == prob.a.nrows).map(|v| v[r]),
                RowOrigin::Ineq(r) => warm.y_ineq.filter(|v| v.len() == prob.g.nrows).map(|v| v[r]),
                RowOrigin::Bound(j) => warm.y_bound.filter(|v| v.len() == n).map(|v| v[j]),
            };
            if let Some(v) = yv {
                y[i] = ws.cost * v / ws.e[i];
            }
        }

        // a warm start keeps the step size the previous solve adapted to
        if warm.x.is_none() && ws.work_rho != ws.base_rho {
            ws.work_factor.clone_from(&ws.base_factor);
            ws.work_rho = ws.base_rho;
        }
        let mut rho_scalar = ws.work_rho;
        let mut rho = row_rhos(&ws.kinds, rho_scalar, settings.eq_rho_factor);

        let mut rhs = vec![0.0; n + m];
        let mut x_prev = x.clone();
        let mut y_prev = y.clone();
        let mut best: Option<(f64, Iterate)> = None;
        let mut last_polish: Option<(f64, usize)> = None;
        let mut checks = 0usize;
        let mut status = QpStatus::MaxIter;
        let mut certificate = None;
        let mut polished_result: Option<Iterate> = None;
        let mut iterations = settings.max_iter;

        for k in 1..=settings.max_iter {
            let check = k % settings.check_every == 0 || k == settings.max_iter;
            if check {
                x_prev.copy_from_slice(&x);
                y_prev.copy_from_slice(&y);
            }

            // ADMM step
            for j in 0..n {
                rhs[j] = settings.sigma * x[j] - q_s[j];
            }
            for i in 0..m {
                rhs[n + i] = z[i] - y[i] / rho[i];
            }
            ws.work_factor.solve(&ws.sym, &mut rhs);
            for j in 0..n {
                x[j] = settings.alpha * rhs[j] + (1.0 - settings.alpha) * x[j];
            }
            for i in 0..m {
                let z_tilde = z[i] + (rhs[n + i] - y[i]) / rho[i];
                let z_relaxed = settings.alpha * z_tilde + (1.0 - settings.alpha) * z[i];
                let z_new = (z_relaxed + y[i] / rho[i]).clamp(l_s[i], u_s[i]);
                y[i] += rho[i] * (z_relaxed - z_new);
                z[i] = z_new;
            }

            if !check {
                continue;
            }
            checks += 1;
            let it = ws.unscale(prob, &x, &y);
            let res = residuals_of(prob, &it.x, &it.y_eq, &it.y_ineq, &it.y_bound)?;
            if settings.record_log {
                let (prim, dual) = scaled_residuals(ws, &x, &z, &y, &q_s);
                self.log.push(IterationRecord {
                    iter: k,
                    primal_res: prim.0,
                    dual_res: dual.0,
                    objective: prob.objective(&it.x),
                });
            }
            let score = res.max();
            if score.is_finite() && best.as_ref().map_or(true, |(s, _)| score < *s) {
                best = Some((score, it.clone()));
            }
            if res.all_below(settings.tol) {
                status = QpStatus::Optimal;
                iterations = k;
                break;
            }

            if settings.polish
                && score <= settings.polish_start
                && last_polish.map_or(true, |(p, pk)| score <= 0.1 * p || k >= pk + settings.polish_interval)
            {
                last_polish = Some((score, k));
                let ok = ws.polish(prob, &settings, &x, &z, &y, &q_s, &l_s, &u_s);
                if let Some(p) = ok {
                    polished_result = Some(p);
                    status = QpStatus::Optimal;
                    iterations = k;
                    break;
                }
            }

            // infeasibility certificates from successive differences
            let dy: Vec<f64> = (0..m).map(|i| ws.e[i] * (y[i] - y_prev[i])).collect();
            if let Some(c) = primal_infeasibility(&ws.c, &dy, &l, &u, settings.eps_infeasible) {
                status = QpStatus::Infeasible;
                certificate = Some(c);
                iterations = k;
                break;
            }
            let dx: Vec<f64> = (0..n).map(|j| ws.d[j] * (x[j] - x_prev[j])).collect();
            if let Some(c) = dual_infeasibility(prob, &ws.c, &dx, &l, &u, settings.eps_infeasible) {
                status = QpStatus::Unbounded;
                certificate = Some(c);
                iterations = k;
                break;
            }

            if settings.adaptive_rho && checks % settings.adaptive_rho_interval == 0 {
                let (prim, dual) = scaled_residuals(ws, &x, &z, &y, &q_s);
                // normalizers capped at 1: the stopping test is absolute, so
                // large-magnitude rows must not mask a stalled primal residual
                let ratio = ((prim.0 / prim.1.clamp(1e-30, 1.0)) / (dual.0 / dual.1.clamp(1e-30, 1.0)).max(1e-30)).sqrt();
                let new_rho = (rho_scalar * ratio).clamp(RHO_MIN, RHO_MAX);
                if new_rho.is_finite()
                    && (new_rho > rho_scalar * settings.adaptive_rho_tolerance
                        || new_rho < rho_scalar / settings.adaptive_rho_tolerance)
                {
                    rho_scalar = new_rho;
                    rho = row_rhos(&ws.kinds, rho_scalar, settings.eq_rho_factor);
                    ws.refactor_working(&rho, settings.sigma)?;
                    ws.work_rho = rho_scalar;
                }
            }
        }

        if status == QpStatus::MaxIter && settings.polish {
            if let Some(p) = ws.polish(prob, &settings, &x, &z, &y, &q_s, &l_s, &u_s) {
                polished_result = Some(p);
                status = QpStatus::Optimal;
            }
        }

        let polished = polished_result.is_some();
        let result = match (status, polished_result) {
            (QpStatus::Optimal, Some(p)) => p,
            (QpStatus::Optimal, None) => ws.unscale(prob, &x, &y),
            (QpStatus::MaxIter, _) => best.map(|(_, it)| it).unwrap_or_else(|| ws.unscale(prob, &x, &y)),
            _ => ws.unscale(prob, &x, &y),
        };
        let objective = prob.objective(&result.x);
        Ok(QpSolution {
            x: result.x,
            y_eq: result.y_eq,
            y_ineq: result.y_ineq,
            y_bound: result.y_bound,
            status,
            iterations,
            solve_time: start.elapsed().as_secs_f64(),
            objective,
            polished,
            certificate,
        })
    }

    fn trivial_infeasible(&self, prob: &QpProblem, gap: f64, start: Instant) -> QpSolution {
        let n = prob.n();
        QpSolution {
            x: vec![0.0; n],
            y_eq: vec![0.0; prob.a.nrows],
            y_ineq: vec![0.0; prob.g.nrows],
            y_bound: vec![0.0; n],
            status: QpStatus::Infeasible,
            iterations: 0,
            solve_time: start.elapsed().as_secs_f64(),
            objective: f64::NAN,
            polished: false,
            certificate: Some(gap),
        }
    }

    fn prepare(&mut self, prob: &QpProblem, origins: Vec<RowOrigin>, kinds: Vec<RowKind>) -> Result<(), QpError> {
        if let Some(ws) = &self.ws {
            if ws.p == prob.p
                && ws.a == prob.a
                && ws.g == prob.g
                && ws.origins == origins
                && ws.kinds == kinds
                && ws.base_rho == self.settings.rho
            {
                return Ok(());
            }
        }
        let reuse = self.ws.take().filter(|ws| {
            ws.p.same_pattern(&prob.p)
                && ws.a.same_pattern(&prob.a)
                && ws.g.same_pattern(&prob.g)
                && ws.origins == origins
        });
        self.ws = Some(Workspace::build(prob, origins, kinds, &self.settings, reuse.map(|w| w.sym))?);
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Iterate {
    x: Vec<f64>,
    y_eq: Vec<f64>,
    y_ineq: Vec<f64>,
    y_bound: Vec<f64>,
}

fn row_kind(l: f64, u: f64) -> RowKind {
    if l == u {
        RowKind::Equality
    } else if l.is_infinite() && u.is_infinite() {
        RowKind::Free
    } else {
        RowKind::Inequality
    }
}

fn row_rhos(kinds: &[RowKind], rho: f64, eq_factor: f64) -> Vec<f64> {
    kinds
        .iter()
        .map(|k| match k {
            RowKind::Equality => (rho * eq_factor).min(RHO_MAX),
            RowKind::Inequality => rho,
            RowKind::Free => RHO_MIN,
        })
        .collect()
}

fn constraint_rows(prob: &QpProblem) -> (Vec<RowOrigin>, Vec<f64>, Vec<f64>) {
    let mut origins = Vec::new();
    let mut l = Vec::new();
    let mut u = Vec::new();
    for (i, &b) in prob.b.iter().enumerate() {
        origins.push(RowOrigin::Eq(i));
        l.push(b);
        u.push(b);
    }
    for (i, &h) in prob.h.iter().enumerate() {
        origins.push(RowOrigin::Ineq(i));
        l.push(f64::NEG_INFINITY);
        u.push(h);
    }
    for j in 0..prob.n() {
        if prob.lb[j].is_finite() || prob.ub[j].is_finite() {
            origins.push(RowOrigin::Bound(j));
            l.push(prob.lb[j]);
            u.push(prob.ub[j]);
        }
    }
    (origins, l, u)
}

fn project(z: &mut [f64], l: &[f64], u: &[f64]) {
    for i in 0..z.len() {
        z[i] = z[i].clamp(l[i], u[i]);
    }
}

/// Returns ((‖C̄x̄ − z̄‖, max(‖C̄x̄‖, ‖z̄‖)), (‖P̄x̄ + q̄ + C̄ᵀȳ‖, normalizer)).
fn scaled_residuals(ws: &Workspace, x: &[f64], z: &[f64], y: &[f64], q: &[f64]) -> ((f64, f64), (f64, f64)) {
    let cx = ws.cs.mul_vec(x);
    let prim: Vec<f64> = cx.iter().zip(z).map(|(a, b)| a - b).collect();
    let px = ws.ps.mul_vec(x);
    let cty = ws.cst.mul_vec(y);
    let dual: Vec<f64> = (0..x.len()).map(|j| px[j] + q[j] + cty[j]).collect();
    (
        (inf_norm(&prim), inf_norm(&cx).max(inf_norm(z))),
        (inf_norm(&dual), inf_norm(&px).max(inf_norm(&cty)).max(inf_norm(q))),
    )
}

fn primal_infeasibility(c: &CscMatrix, dy: &[f64], l: &[f64], u: &[f64], eps: f64) -> Option<f64> {
    let norm = inf_norm(dy);
    if norm < 1e-30 || !norm.is_finite() {
        return None;
    }
    let cty = c.mul_t_vec(dy);
    let stat = inf_norm(&cty) / norm;
    if stat > eps {
        return None;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        if dy[i] > 0.0 {
            if u[i].is_infinite() {
                return None;
            }
            support += u[i] * dy[i];
        } else if dy[i] < 0.0 {
            if l[i].is_infinite() {
                return None;
            }
            support += l[i] * dy[i];
        }
    }
    (support / norm < -eps).then_some(stat)
}

fn dual_infeasibility(prob: &QpProblem, c: &CscMatrix, dx: &[f64], l: &[f64], u: &[f64], eps: f64) -> Option<f64> {
    let norm = inf_norm(dx);
    if norm < 1e-30 || !norm.is_finite() {
        return None;
    }
    let pdx = prob.p.mul_vec(dx);
    let curvature = inf_norm(&pdx) / norm;
    if curvature > eps || dot(&prob.q, dx) / norm >= -eps {
        return None;
    }
    let cdx = c.mul_vec(dx);
    for i in 0..cdx.len() {
        let v = cdx[i] / norm;
        let ok_up = u[i].is_infinite() || v <= eps;
        let ok_lo = l[i].is_infinite() || v >= -eps;
        if !(ok_up && ok_lo) {
            return None;
        }
    }
    Some(curvature)
}

impl Workspace {
    fn build(
        prob: &QpProblem,
        origins: Vec<RowOrigin>,
        kinds: Vec<RowKind>,
        settings: &Settings,
        sym: Option<LdlSymbolic>,
    ) -> Result<Self, QpError> {
        let n = prob.n();
        let m = origins.len();
        let mut bound_rows = Triplets::new(m - prob.a.nrows - prob.g.nrows, n);
        let mut r = 0;
        for o in &origins {
            if let RowOrigin::Bound(j) = *o {
                bound_rows.push(r, j, 1.0);
                r += 1;
            }
        }
        let c = CscMatrix::vstack(&[&prob.a, &prob.g, &bound_rows.to_csc()]);

        // Ruiz equilibration of [P Cᵀ; C 0]
        let mut d = vec![1.0; n];
        let mut e = vec![1.0; m];
        let mut cost = 1.0;
        let mut ps = prob.p.clone();
        let mut cs = c.clone();
        for _ in 0..settings.scaling_iters {
            let pn = ps.col_inf_norms();
            let cn = cs.col_inf_norms();
            let rn = cs.row_inf_norms();
            let dd: Vec<f64> = (0..n).map(|j| inv_sqrt_norm(pn[j].max(cn[j]))).collect();
            let de: Vec<f64> = (0..m).map(|i| inv_sqrt_norm(rn[i])).collect();
            ps.scale_rows_cols(&dd, &dd);
            cs.scale_rows_cols(&de, &dd);
            for j in 0..n {
                d[j] = (d[j] * dd[j]).clamp(SCALE_MIN, SCALE_MAX);
            }
            for i in 0..m {
                e[i] = (e[i] * de[i]).clamp(SCALE_MIN, SCALE_MAX);
            }
            // rebuild from the clamped totals so the scaled matrices stay consistent
            ps = prob.p.clone();
            ps.scale_rows_cols(&d, &d);
            cs = c.clone();
            cs.scale_rows_cols(&e, &d);
        }
        if n > 0 {
            let mean_col = ps.col_inf_norms().iter().sum::<f64>() / n as f64;
            if mean_col > 1e-6 {
                cost = (1.0 / mean_col).clamp(SCALE_MIN, SCALE_MAX);
            }
        }
        ps.scale(cost);
        let cst = cs.transpose();

        // KKT upper triangle: P̄ upper + σI, then columns of C̄ᵀ with -1/ρ diagonal
        let mut t = Triplets::with_capacity(n + m, n + m, ps.nnz() + n + cs.nnz() + m);
        let mut entry_kind = Vec::new();
        for j in 0..n {
            for k in ps.colptr[j]..ps.colptr[j + 1] {
                let i = ps.rowidx[k];
                if i < j {
                    t.push(i, j, ps.values[k]);
                    entry_kind.push(KktEntry::PUpper(k));
                }
            }
            t.push(j, j, ps.get(j, j) + settings.sigma);
            entry_kind.push(KktEntry::PDiag(j));
        }
        for i in 0..m {
            for k in cst.colptr[i]..cst.colptr[i + 1] {
                t.push(cst.rowidx[k], n + i, cst.values[k]);
                entry_kind.push(KktEntry::Ct(k));
            }
            t.push(n + i, n + i, 0.0);
            entry_kind.push(KktEntry::Rho(i));
        }
        // columns are emitted in order with increasing rows, so triplet order = CSC order
        let mut kkt = t.to_csc();
        debug_assert_eq!(kkt.nnz(), entry_kind.len());
        let mut p_diag_pos = vec![0; n];
        let mut rho_pos = vec![0; m];
        let mut ct_pos = vec![0; cst.nnz()];
        for (pos, kind) in entry_kind.iter().enumerate() {
            match *kind {
                KktEntry::PDiag(j) => p_diag_pos[j] = pos,
                KktEntry::PUpper(_) => {}
                KktEntry::Rho(i) => rho_pos[i] = pos,
                KktEntry::Ct(k) => ct_pos[k] = pos,
            }
        }
        let rho = row_rhos(&kinds, settings.rho, settings.eq_rho_factor);
        for i in 0..m {
            kkt.values[rho_pos[i]] = -1.0 / rho[i];
        }
        let sym = match sym {
            Some(s) if s.matches(&kkt) => s,
            _ => LdlSymbolic::analyze(&kkt)?,
        };
        let base_factor = LdlFactor::factor(&sym, &kkt.values)?;
        Ok(Self {
            p: prob.p.clone(),
            a: prob.a.clone(),
            g: prob.g.clone(),
            origins,
            kinds,
            c,
            d,
            e,
            cost,
            ps,
            cs,
            cst,
            kkt,
            p_diag_pos,
            rho_pos,
            ct_pos,
            sym,
            base_rho: settings.rho,
            work_factor: base_factor.clone(),
            base_factor,
            work_rho: settings.rho,
        })
    }

    fn refactor_working(&mut self, rho: &[f64], _sigma: f64) -> Result<(), QpError> {
        let mut vals = self.kkt.values.clone();
        for (i, &pos) in self.rho_pos.iter().enumerate() {
            vals[pos] = -1.0 / rho[i];
        }
        self.work_factor.refactor(&self.sym, &vals)
    }

    fn unscale(&self, prob: &QpProblem, x: &[f64], y: &[f64]) -> Iterate {
        let n = x.len();
        let mut it = Iterate {
            x: (0..n).map(|j| self.d[j] * x[j]).collect(),
            y_eq: vec![0.0; prob.a.nrows],
            y_ineq: vec![0.0; prob.g.nrows],
            y_bound: vec![0.0; n],
        };
        for (i, o) in self.origins.iter().enumerate() {
            let v = self.e[i] * y[i] / self.cost;
            match *o {
                RowOrigin::Eq(r) => it.y_eq[r] = v,
                RowOrigin::Ineq(r) => it.y_ineq[r] = v,
                RowOrigin::Bound(j) => it.y_bound[j] = v,
            }
        }
        it
    }

    /// Guesses the active set from the ADMM iterate, solves the reduced
    /// equality-constrained KKT system and keeps the result only if it
    /// passes the KKT check with correctly signed multipliers.
    ///
    /// The reduced system is solved by iterative refinement starting at the
    /// ADMM iterate, so the regularization acts as a proximal term and
    /// directions the active constraints leave free stay where ADMM put
    /// them. Rows the polished point violates join the active set and the
    /// solve is repeated.
    #[allow(clippy::too_many_arguments)]
    fn polish(
        &self,
        prob: &QpProblem,
        settings: &Settings,
        x: &[f64],
        z: &[f64],
        y: &[f64],
        q: &[f64],
        l: &[f64],
        u: &[f64],
    ) -> Option<Iterate> {
        let n = x.len();
        let m = z.len();
        // 0 inactive, -1 lower, +1 upper, 2 equality
        let mut active: Vec<i8> = (0..m)
            .map(|i| {
                if l[i] == u[i] {
                    2
                } else if z[i] <= l[i] || z[i] - l[i] < -y[i] {
                    -1
                } else if z[i] >= u[i] || u[i] - z[i] < y[i] {
                    1
                } else {
                    0
                }
            })
            .collect();
        let delta = settings.polish_delta;
        let mut sol = vec![0.0; n + m];
        for round in 0..=settings.polish_rounds {
            let target: Vec<f64> = (0..m)
                .map(|i| match active[i] {
                    -1 => l[i],
                    1 | 2 => u[i],
                    _ => 0.0,
                })
                .collect();
            let mut vals = self.kkt.values.clone();
            for j in 0..n {
                vals[self.p_diag_pos[j]] = self.ps.get(j, j) + delta;
            }
            for i in 0..m {
                let on = active[i] != 0;
                for k in self.cst.colptr[i]..self.cst.colptr[i + 1] {
                    vals[self.ct_pos[k]] = if on { self.cst.values[k] } else { 0.0 };
                }
                vals[self.rho_pos[i]] = if on { -delta } else { -1.0 };
            }
            let factor = LdlFactor::factor(&self.sym, &vals).ok()?;

            let mut rhs = vec![0.0; n + m];
            for j in 0..n {
                rhs[j] = -q[j];
            }
            rhs[n..].copy_from_slice(&target);
            sol[..n].copy_from_slice(x);
            for i in 0..m {
                sol[n + i] = if active[i] != 0 { y[i] } else { 0.0 };
            }
            for _ in 0..settings.polish_refine_iters {
                // residual against the unregularized reduced system
                let (xs, ys) = sol.split_at(n);
                let mut r = rhs.clone();
                let px = self.ps.mul_vec(xs);
                let cty = self.cst.mul_vec(ys);
                for j in 0..n {
                    r[j] -= px[j] + cty[j];
                }
                let cx = self.cs.mul_vec(xs);
                for i in 0..m {
                    r[n + i] -= if active[i] != 0 { cx[i] } else { -ys[i] };
                }
                if inf_norm(&r) < 1e-14 {
                    break;
                }
                factor.solve(&self.sym, &mut r);
                for (s, d) in sol.iter_mut().zip(&r) {
                    *s += d;
                }
            }
            if round == settings.polish_rounds {
                break;
            }
            let cx = self.cs.mul_vec(&sol[..n]);
            let mut added = false;
            for i in 0..m {
                if active[i] != 0 {
                    continue;
                }
                let margin = 0.1 * settings.tol * self.e[i];
                if cx[i] > u[i] + margin {
                    active[i] = 1;
                    added = true;
                } else if cx[i] < l[i] - margin {
                    active[i] = -1;
                    added = true;
                }
            }
            if !added {
                break;
            }
        }
        let (xs, ys) = sol.split_at(n);
        let y_pol: Vec<f64> = (0..m)
            .map(|i| match active[i] {
                0 => 0.0,
                1 => ys[i].max(0.0),
                -1 => ys[i].min(0.0),
                _ => ys[i],
            })
            .collect();
        // reject when the guessed active set needed wrong-signed multipliers
        let sign_violation = (0..m)
            .map(|i| (ys[i] - y_pol[i]).abs() * self.e[i] / self.cost)
            .fold(0.0f64, f64::max);
        if !(sign_violation <= settings.tol) {
            return None;
        }
        let it = self.unscale(prob, xs, &y_pol);
        let res: KktResiduals = residuals_of(prob, &it.x, &it.y_eq, &it.y_ineq, &it.y_bound).ok()?;
        res.all_below(settings.tol).then_some(it)
    }
}

#[derive(Debug, Clone, Copy)]
enum KktEntry {
    PUpper(#[allow(dead_code)] usize),
    PDiag(usize),
    Ct(usize),
    Rho(usize),
}

fn inv_sqrt_norm(v: f64) -> f64 {
    if v < SCALE_MIN {
        1.0
    } else {
        1.0 / v.clamp(SCALE_MIN, SCALE_MAX).sqrt()
    }
}
