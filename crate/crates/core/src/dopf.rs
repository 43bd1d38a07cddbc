//! Horizon LCQP assembly.
//!
//! Decision vector layout, for steps `t = 0..T`:
//!
//! ```text
//! x = [ x_grid(0) … x_grid(T−1) | x_flex(0) … x_flex(T−1) | E(−1) E(0) … E(T−1) ]
//! x_grid(t) = [v; θ; p; q]          (4N)
//! x_flex(t) = [p_flex; q_flex]      (2S)
//! E(t)      = stored energy         (S)
//! ```
//!
//! Powers are in p.u. and energies in p.u.·h inside the problem; the
//! public boundary (schedules, `e_init`) uses kW and kWh.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use flexsched_qp::{CscMatrix, QpProblem, Triplets};

use crate::error::{Error, Result};
use crate::grid::{Network, Storage};
use crate::linearizer::LinearModel;
use crate::series::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    V { t: usize, bus: usize },
    Theta { t: usize, bus: usize },
    P { t: usize, bus: usize },
    Q { t: usize, bus: usize },
    PFlex { t: usize, sto: usize },
    QFlex { t: usize, sto: usize },
    /// `t = −1` is the initial energy.
    ESto { t: isize, sto: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexMap {
    pub n_bus: usize,
    pub n_sto: usize,
    pub horizon: usize,
}

impl IndexMap {
    pub fn new(n_bus: usize, n_sto: usize, horizon: usize) -> Self {
        Self { n_bus, n_sto, horizon }
    }

    pub fn len(&self) -> usize {
        let (n, s, t) = (self.n_bus, self.n_sto, self.horizon);
        4 * n * t + 2 * s * t + s * (t + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn flex_offset(&self) -> usize {
        4 * self.n_bus * self.horizon
    }

    fn sto_offset(&self) -> usize {
        self.flex_offset() + 2 * self.n_sto * self.horizon
    }

    pub fn v(&self, t: usize, bus: usize) -> usize {
        t * 4 * self.n_bus + bus
    }

    pub fn theta(&self, t: usize, bus: usize) -> usize {
        t * 4 * self.n_bus + self.n_bus + bus
    }

    pub fn p(&self, t: usize, bus: usize) -> usize {
        t * 4 * self.n_bus + 2 * self.n_bus + bus
    }

    pub fn q(&self, t: usize, bus: usize) -> usize {
        t * 4 * self.n_bus + 3 * self.n_bus + bus
    }

    /// First entry of `x_grid(t)`.
    pub fn grid(&self, t: usize) -> usize {
        t * 4 * self.n_bus
    }

    /// First entry of `x_flex(t)`.
    pub fn flex(&self, t: usize) -> usize {
        self.flex_offset() + t * 2 * self.n_sto
    }

    pub fn p_flex(&self, t: usize, sto: usize) -> usize {
        self.flex(t) + sto
    }

    pub fn q_flex(&self, t: usize, sto: usize) -> usize {
        self.flex(t) + self.n_sto + sto
    }

    pub fn e_sto(&self, t: isize, sto: usize) -> usize {
        debug_assert!(t >= -1);
        self.sto_offset() + ((t + 1) as usize) * self.n_sto + sto
    }

    pub fn symbol(&self, idx: usize) -> Option<Symbol> {
        let (n, s) = (self.n_bus, self.n_sto);
        if idx < self.flex_offset() {
            let (t, r) = (idx / (4 * n), idx % (4 * n));
            let bus = r % n;
            return Some(match r / n {
                0 => Symbol::V { t, bus },
                1 => Symbol::Theta { t, bus },
                2 => Symbol::P { t, bus },
                _ => Symbol::Q { t, bus },
            });
        }
        if idx < self.sto_offset() {
            let r = idx - self.flex_offset();
            let (t, k) = (r / (2 * s), r % (2 * s));
            return Some(if k < s {
                Symbol::PFlex { t, sto: k }
            } else {
                Symbol::QFlex { t, sto: k - s }
            });
        }
        if idx < self.len() {
            let r = idx - self.sto_offset();
            return Some(Symbol::ESto {
                t: (r / s) as isize - 1,
                sto: r % s,
            });
        }
        None
    }
}

/// How branch-current limits enter the inequality stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchLimit {
    /// Only the two rows `±(v_i − v_j) ≤ bound`.
    VoltageDifference,
    /// Additionally bound the transformer's complex voltage drop
    /// `(Δv, Δθ)` by an octagon circumscribing the bound circle.
    TransformerOctagon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DopfConfig {
    pub dt_hours: f64,
    /// Steps per horizon, `T = H / Δt`.
    pub horizon: usize,
    /// Multiplier on every branch bound (1.0 = nominal).
    pub limit_scale: f64,
    pub branch_limit: BranchLimit,
    /// Overrides the per-bus voltage bounds when set.
    pub v_bounds: Option<(f64, f64)>,
}

impl Default for DopfConfig {
    fn default() -> Self {
        Self {
            dt_hours: 0.25,
            horizon: 96,
            limit_scale: 0.97,
            branch_limit: BranchLimit::TransformerOctagon,
            v_bounds: None,
        }
    }
}

impl DopfConfig {
    pub fn with_horizon_hours(mut self, hours: f64) -> Self {
        self.horizon = (hours / self.dt_hours).round() as usize;
        self
    }
}

/// Which constraint family a row of `G` belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IneqKind {
    /// `v_i − v_j ≤ bound`
    BranchUpper { t: usize, branch: usize },
    /// `−(v_i − v_j) ≤ bound`
    BranchLower { t: usize, branch: usize },
    BranchFacet { t: usize, branch: usize, facet: usize },
    VoltageUpper { t: usize, bus: usize },
    PFlexUpper { t: usize, sto: usize },
    EnergyUpper { t: usize, sto: usize },
    VoltageLower { t: usize, bus: usize },
    PFlexLower { t: usize, sto: usize },
    EnergyLower { t: usize, sto: usize },
}

pub struct DopfProblem {
    pub qp: QpProblem,
    pub index: IndexMap,
    pub dt_hours: f64,
    /// kWh per p.u.·h (equivalently kW per p.u.).
    pub kw_per_pu: f64,
    pub ineq_kinds: Vec<IneqKind>,
    /// Rows of `A` per block: power flow, balance, storage.
    pub eq_blocks: [usize; 3],
    /// Constant dropped from the objective: `½ Σ_t c_slack(t)²`.
    pub objective_offset: f64,
}

impl fmt::Debug for DopfProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "DopfProblem(n={}, m_eq={}, m_ineq={})",
            self.qp.n(),
            self.qp.a.nrows,
            self.qp.g.nrows
        )
    }
}

impl DopfProblem {
    pub fn m(&self) -> &CscMatrix {
        &self.qp.p
    }

    pub fn d(&self) -> &[f64] {
        &self.qp.q
    }

    /// Storage powers in kW as `[storage][t]`.
    pub fn p_flex_kw(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let ix = &self.index;
        (0..ix.n_sto)
            .map(|s| (0..ix.horizon).map(|t| x[ix.p_flex(t, s)] * self.kw_per_pu).collect())
            .collect()
    }

    /// Energies `E(0..T)` in kWh as `[storage][t]`.
    pub fn e_kwh(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let ix = &self.index;
        (0..ix.n_sto)
            .map(|s| {
                (0..ix.horizon)
                    .map(|t| x[ix.e_sto(t as isize, s)] * self.kw_per_pu)
                    .collect()
            })
            .collect()
    }

    /// Writes `(M, d, A, b, G, h, lb, ub)` as text with triplets for the
    /// matrices and one value per line for the vectors.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        let qp = &self.qp;
        writeln!(f, "# dopf problem: n {} m_eq {} m_ineq {}", qp.n(), qp.a.nrows, qp.g.nrows)?;
        for (name, m) in [("M", &qp.p), ("A", &qp.a), ("G", &qp.g)] {
            writeln!(f, "matrix {name} {} {} {}", m.nrows, m.ncols, m.nnz())?;
            for (i, j, v) in m.iter() {
                writeln!(f, "{i} {j} {v}")?;
            }
        }
        for (name, v) in [("d", &qp.q), ("b", &qp.b), ("h", &qp.h), ("lb", &qp.lb), ("ub", &qp.ub)] {
            writeln!(f, "vector {name} {}", v.len())?;
            for x in v.iter() {
                writeln!(f, "{x}")?;
            }
        }
        f.flush()?;
        Ok(())
    }
}

/// `e·(1 − μ_sd·dt) + p·dt`
pub fn storage_step(e: f64, p: f64, sto: &Storage, dt: f64) -> f64 {
    e * (1.0 - sto.mu_sd * dt) + p * dt
}

/// `½ xᵀ M x + dᵀ x`
pub fn objective_value(prob: &DopfProblem, x: &[f64]) -> Result<f64> {
    if x.len() != prob.qp.n() {
        return Err(Error::Dimension(format!(
            "x has {} entries, problem has {}",
            x.len(),
            prob.qp.n()
        )));
    }
    Ok(prob.qp.objective(x))
}

/// Checks `0 ≤ e ≤ soc_frac_max·e_max` for every storage.
pub fn check_energy(net: &Network, e_kwh: &[f64]) -> Result<()> {
    if e_kwh.len() != net.n_storages() {
        return Err(Error::Dimension(format!(
            "{} energies for {} storages",
            e_kwh.len(),
            net.n_storages()
        )));
    }
    for (k, (e, s)) in e_kwh.iter().zip(&net.storages).enumerate() {
        if !(*e >= 0.0 && *e <= s.e_cap()) {
            return Err(Error::Validation(format!(
                "storage {k}: energy {e} kWh outside [0, {}]",
                s.e_cap()
            )));
        }
    }
    Ok(())
}

const OCTAGON_FACETS: usize = 8;

pub fn build(
    net: &Network,
    lin: &LinearModel,
    window: &Window<'_>,
    e_init: &[f64],
    cfg: &DopfConfig,
) -> Result<DopfProblem> {
    let (n, s, tt) = (net.n_buses(), net.n_storages(), cfg.horizon);
    if window.len() != tt {
        return Err(Error::Dimension(format!("forecast window has {} steps, horizon is {tt}", window.len())));
    }
    if window.p_inj.ncols() != n {
        return Err(Error::Dimension(format!("forecast has {} buses, network {n}", window.p_inj.ncols())));
    }
    if lin.n_bus != n || lin.n_sto != s {
        return Err(Error::Dimension("linear model does not match network".into()));
    }
    if (window.dt_hours - cfg.dt_hours).abs() > 1e-12 {
        return Err(Error::Validation(format!(
            "series step {} h differs from configured {} h",
            window.dt_hours, cfg.dt_hours
        )));
    }
    net.check_time_step(cfg.dt_hours)?;
    check_energy(net, e_init)?;

    let ix = IndexMap::new(n, s, tt);
    let nx = ix.len();
    let dt = cfg.dt_hours;
    let kw_per_pu = net.s_base / 1e3;
    let ns = net.non_slack_buses();
    let m = ns.len();
    let sl = net.slack_bus;

    // objective: ½ Σ_t (p_slack(t) − c_slack(t))², the constant dropped
    let mut mt = Triplets::with_capacity(nx, nx, tt);
    let mut d = vec![0.0; nx];
    let mut offset = 0.0;
    for t in 0..tt {
        let j = ix.p(t, sl);
        mt.push(j, j, 1.0);
        let p_hat = lin.x_hat[2 * n + sl];
        let c_slack = window.p_inj[[t, sl]];
        d[j] = -(p_hat + c_slack);
        offset += 0.5 * (p_hat + c_slack).powi(2);
    }

    // equality blocks
    let rows_pf = 2 * n * tt;
    let rows_bal = 2 * m * tt;
    let rows_sto = s * tt;
    let b_nnz = lin.b_blk.iter().filter(|v| **v != 0.0).count();
    let mut at = Triplets::with_capacity(rows_pf + rows_bal + rows_sto, nx, tt * (b_nnz + 2 * m + 2 * s) + 3 * rows_sto);
    let mut b = vec![0.0; rows_pf + rows_bal + rows_sto];
    for t in 0..tt {
        let g0 = ix.grid(t);
        for r in 0..2 * n {
            let row = t * 2 * n + r;
            for c in 0..4 * n {
                let v = lin.b_blk[(r, c)];
                if v != 0.0 {
                    at.push(row, g0 + c, v);
                }
            }
            b[row] = lin.c_hat[r];
        }
        let f0 = ix.flex(t);
        for r in 0..2 * m {
            let row = rows_pf + t * 2 * m + r;
            for c in 0..4 * n {
                let v = lin.c_blk[(r, c)];
                if v != 0.0 {
                    at.push(row, g0 + c, v);
                }
            }
            for c in 0..2 * s {
                let v = lin.d_blk[(r, c)];
                if v != 0.0 {
                    at.push(row, f0 + c, v);
                }
            }
            b[row] = if r < m {
                window.p_inj[[t, ns[r]]]
            } else {
                window.q_inj[[t, ns[r - m]]]
            };
        }
        for (k, sto) in net.storages.iter().enumerate() {
            // E(t) − (1 − μΔt)·E(t−1) − Δt·p(t) = 0
            let row = rows_pf + rows_bal + t * s + k;
            at.push(row, ix.e_sto(t as isize, k), 1.0);
            at.push(row, ix.e_sto(t as isize - 1, k), -(1.0 - sto.mu_sd * dt));
            at.push(row, ix.p_flex(t, k), -dt);
        }
    }

    // inequality stack
    let octagon = cfg.branch_limit == BranchLimit::TransformerOctagon;
    let facet_branches: Vec<usize> = match (octagon, net.transformer) {
        (true, Some(k)) => vec![k],
        _ => vec![],
    };
    let nbr = net.branches.len();
    let bounds: Vec<f64> = (0..nbr).map(|k| net.branch_bound(k) * cfg.limit_scale).collect();
    let mut h = Vec::new();
    let mut kinds = Vec::new();
    let mut grows: Vec<(Vec<(usize, f64)>, f64, IneqKind)> = Vec::new();
    for sign in [1.0, -1.0] {
        for t in 0..tt {
            for (k, br) in net.branches.iter().enumerate() {
                let (vi, vj) = (ix.v(t, br.from_bus), ix.v(t, br.to_bus));
                // offsets from the linearization point vanish at the flat start
                let shift = lin.x_hat[br.to_bus] - lin.x_hat[br.from_bus];
                let kind = if sign > 0.0 {
                    IneqKind::BranchUpper { t, branch: k }
                } else {
                    IneqKind::BranchLower { t, branch: k }
                };
                grows.push((vec![(vi, sign), (vj, -sign)], bounds[k] + sign * shift, kind));
            }
        }
    }
    for t in 0..tt {
        for &k in &facet_branches {
            let br = &net.branches[k];
            let (vi, vj) = (ix.v(t, br.from_bus), ix.v(t, br.to_bus));
            let (ti, tj) = (ix.theta(t, br.from_bus), ix.theta(t, br.to_bus));
            // facets 0 and 4 coincide with the two voltage-difference rows
            for facet in (1..OCTAGON_FACETS).filter(|&f| f != OCTAGON_FACETS / 2) {
                let phi = facet as f64 * std::f64::consts::TAU / OCTAGON_FACETS as f64;
                let (sn, cs) = phi.sin_cos();
                let mut entries = vec![(vi, cs), (vj, -cs)];
                if sn.abs() > 1e-15 {
                    entries.push((ti, sn));
                    entries.push((tj, -sn));
                }
                if cs.abs() < 1e-15 {
                    entries.retain(|e| e.0 != vi && e.0 != vj);
                }
                grows.push((entries, bounds[k], IneqKind::BranchFacet { t, branch: k, facet }));
            }
        }
    }
    for upper in [true, false] {
        let sg = if upper { 1.0 } else { -1.0 };
        for t in 0..tt {
            for &bus in &ns {
                let (lo, hi) = match cfg.v_bounds {
                    Some(vb) => vb,
                    None => (net.buses[bus].v_lb, net.buses[bus].v_ub),
                };
                let (rhs, kind) = if upper {
                    (hi, IneqKind::VoltageUpper { t, bus })
                } else {
                    (-lo, IneqKind::VoltageLower { t, bus })
                };
                grows.push((vec![(ix.v(t, bus), sg)], rhs, kind));
            }
        }
        for t in 0..tt {
            for (k, sto) in net.storages.iter().enumerate() {
                let pmax = sto.p_max / kw_per_pu;
                let kind = if upper {
                    IneqKind::PFlexUpper { t, sto: k }
                } else {
                    IneqKind::PFlexLower { t, sto: k }
                };
                grows.push((vec![(ix.p_flex(t, k), sg)], pmax, kind));
            }
        }
        for t in 0..tt {
            for (k, sto) in net.storages.iter().enumerate() {
                let (rhs, kind) = if upper {
                    (sto.e_cap() / kw_per_pu, IneqKind::EnergyUpper { t, sto: k })
                } else {
                    (0.0, IneqKind::EnergyLower { t, sto: k })
                };
                grows.push((vec![(ix.e_sto(t as isize, k), sg)], rhs, kind));
            }
        }
    }
    let mg = grows.len();
    let gt = {
        let nnz = grows.iter().map(|r| r.0.len()).sum();
        let mut tr = Triplets::with_capacity(mg, nx, nnz);
        for (row, (entries, rhs, kind)) in grows.into_iter().enumerate() {
            for (c, v) in entries {
                tr.push(row, c, v);
            }
            h.push(rhs);
            kinds.push(kind);
        }
        tr
    };

    // pinned entries
    let mut lb = vec![f64::NEG_INFINITY; nx];
    let mut ub = vec![f64::INFINITY; nx];
    for t in 0..tt {
        lb[ix.v(t, sl)] = 1.0;
        ub[ix.v(t, sl)] = 1.0;
        lb[ix.theta(t, sl)] = 0.0;
        ub[ix.theta(t, sl)] = 0.0;
        for k in 0..s {
            lb[ix.q_flex(t, k)] = 0.0;
            ub[ix.q_flex(t, k)] = 0.0;
        }
    }
    for (k, e) in e_init.iter().enumerate() {
        let j = ix.e_sto(-1, k);
        lb[j] = e / kw_per_pu;
        ub[j] = e / kw_per_pu;
    }

    let qp = QpProblem {
        p: mt.to_csc(),
        q: d,
        a: at.to_csc(),
        b,
        g: gt.to_csc(),
        h,
        lb,
        ub,
    };
    qp.validate()?;
    Ok(DopfProblem {
        qp,
        index: ix,
        dt_hours: dt,
        kw_per_pu,
        ineq_kinds: kinds,
        eq_blocks: [rows_pf, rows_bal, rows_sto],
        objective_offset: offset,
    })
}
