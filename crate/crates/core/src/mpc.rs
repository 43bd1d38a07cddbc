//! Rolling-horizon control loop with an exact storage plant and AC
//! evaluation of every applied step.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use flexsched_qp::{kkt_residuals, QpStatus, Settings, Solver, WarmStart};

use crate::dopf::{self, build, objective_value, storage_step, DopfConfig, DopfProblem};
use crate::error::{Error, Result};
use crate::grid::{Network, Storage};
use crate::linearizer::{solve_ac_from, AcSolution, LinearModel};
use crate::series::{ScenarioSeries, Window};

/// Planned storage powers over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// kW, `[storage][t]`, positive = charging
    pub p_flex: Vec<Vec<f64>>,
    /// kWh after step `t`, `[storage][t]`
    pub e_traj: Vec<Vec<f64>>,
    /// Planned objective in p.u.² (MPC: value of the horizon QP).
    pub objective: f64,
    /// Wall-clock seconds for the whole decision.
    pub solve_time: f64,
    /// MPC: problem assembly. NPC: zero.
    pub build_time: f64,
    /// MPC: QP solve alone. NPC: network forward pass alone.
    pub core_time: f64,
    /// NPC output before projection.
    pub raw_p_flex: Option<Vec<Vec<f64>>>,
    /// False when the QP stopped at its iteration limit.
    pub converged: bool,
}

impl Schedule {
    /// All-zero schedule with the self-discharge trajectory.
    pub fn idle(net: &Network, e_now: &[f64], horizon: usize, dt: f64) -> Self {
        let e_traj = net
            .storages
            .iter()
            .zip(e_now)
            .map(|(s, &e0)| {
                let mut e = e0;
                (0..horizon)
                    .map(|_| {
                        e = storage_step(e, 0.0, s, dt);
                        e
                    })
                    .collect()
            })
            .collect();
        Self {
            p_flex: vec![vec![0.0; horizon]; net.n_storages()],
            e_traj,
            objective: 0.0,
            solve_time: 0.0,
            build_time: 0.0,
            core_time: 0.0,
            raw_p_flex: None,
            converged: true,
        }
    }

    pub fn first_step(&self) -> Vec<f64> {
        self.p_flex.iter().map(|p| p[0]).collect()
    }
}

pub trait Controller {
    fn name(&self) -> &str;
    fn plan(&mut self, net: &Network, lin: &LinearModel, window: &Window<'_>, e_now: &[f64]) -> Result<Schedule>;
}

/// No storage action.
#[derive(Debug, Default, Clone)]
pub struct Baseline {
    pub horizon: usize,
}

impl Controller for Baseline {
    fn name(&self) -> &str {
        "baseline"
    }

    fn plan(&mut self, net: &Network, _lin: &LinearModel, window: &Window<'_>, e_now: &[f64]) -> Result<Schedule> {
        Ok(Schedule::idle(net, e_now, window.len().max(1), window.dt_hours))
    }
}

#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub dopf: DopfConfig,
    pub qp: Settings,
    pub warm_start: bool,
    /// Residual level up to which an iteration-limited solve is still applied.
    pub accept_residual: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            dopf: DopfConfig::default(),
            qp: Settings::default(),
            warm_start: true,
            accept_residual: 1e-4,
        }
    }
}

/// Horizon-QP controller. Keeps the solver (and its factorization cache)
/// and the previous solution for warm starts.
pub struct Mpc {
    pub cfg: MpcConfig,
    solver: Solver,
    prev: Option<PrevSolution>,
    pub last_iterations: usize,
}

struct PrevSolution {
    x: Vec<f64>,
    y_eq: Vec<f64>,
    y_ineq: Vec<f64>,
    y_bound: Vec<f64>,
}

impl Mpc {
    pub fn new(cfg: MpcConfig) -> Self {
        let solver = Solver::new(cfg.qp.clone());
        Self {
            cfg,
            solver,
            prev: None,
            last_iterations: 0,
        }
    }

    /// Solves one horizon problem; `prob` is returned for inspection.
    pub fn solve_window(
        &mut self,
        net: &Network,
        lin: &LinearModel,
        window: &Window<'_>,
        e_now: &[f64],
    ) -> Result<(Schedule, DopfProblem, Vec<f64>)> {
        let t0 = Instant::now();
        let prob = build(net, lin, window, e_now, &self.cfg.dopf)?;
        let build_time = t0.elapsed().as_secs_f64();

        let shifted = match (&self.prev, self.cfg.warm_start) {
            (Some(prev), true) if prev.x.len() == prob.qp.n() => Some(shift_solution(&prob, prev, e_now)),
            _ => None,
        };
        let warm = match &shifted {
            Some(p) => WarmStart {
                x: Some(&p.x),
                y_eq: Some(&p.y_eq),
                y_ineq: Some(&p.y_ineq),
                y_bound: Some(&p.y_bound),
            },
            None => WarmStart::default(),
        };
        let t1 = Instant::now();
        let sol = self.solver.solve_warm(&prob.qp, &warm)?;
        let core_time = t1.elapsed().as_secs_f64();
        self.last_iterations = sol.iterations;
        let converged = match sol.status {
            QpStatus::Optimal => true,
            QpStatus::MaxIter => {
                let r = kkt_residuals(&prob.qp, &sol)?;
                if r.max() > self.cfg.accept_residual {
                    return Err(Error::Solver {
                        step: window.start,
                        msg: format!("iteration limit reached with KKT residual {:.3e}", r.max()),
                    });
                }
                false
            }
            other => {
                return Err(Error::Solver {
                    step: window.start,
                    msg: format!("horizon QP status {other}"),
                })
            }
        };
        let objective = objective_value(&prob, &sol.x)?;
        let schedule = Schedule {
            p_flex: clamp_powers(&prob.p_flex_kw(&sol.x), &net.storages),
            e_traj: prob.e_kwh(&sol.x),
            objective,
            solve_time: t0.elapsed().as_secs_f64(),
            build_time,
            core_time,
            raw_p_flex: None,
            converged,
        };
        let x = sol.x.clone();
        self.prev = Some(PrevSolution {
            x: sol.x,
            y_eq: sol.y_eq,
            y_ineq: sol.y_ineq,
            y_bound: sol.y_bound,
        });
        Ok((schedule, prob, x))
    }

    pub fn reset(&mut self) {
        self.prev = None;
    }
}

impl Controller for Mpc {
    fn name(&self) -> &str {
        "mpc"
    }

    fn plan(&mut self, net: &Network, lin: &LinearModel, window: &Window<'_>, e_now: &[f64]) -> Result<Schedule> {
        self.solve_window(net, lin, window, e_now).map(|r| r.0)
    }
}

/// One-shot MPC decision with a fresh solver.
pub fn mpc_step(net: &Network, lin: &LinearModel, window: &Window<'_>, e_now: &[f64]) -> Result<Schedule> {
    let cfg = MpcConfig {
        dopf: DopfConfig {
            horizon: window.len(),
            dt_hours: window.dt_hours,
            ..DopfConfig::default()
        },
        warm_start: false,
        ..MpcConfig::default()
    };
    Mpc::new(cfg).plan(net, lin, window, e_now)
}

/// Solver tolerance can leave powers a hair outside their box.
fn clamp_powers(p: &[Vec<f64>], storages: &[Storage]) -> Vec<Vec<f64>> {
    p.iter()
        .zip(storages)
        .map(|(row, s)| row.iter().map(|v| v.clamp(-s.p_max, s.p_max)).collect())
        .collect()
}

/// Moves every time-indexed block one step earlier and repeats the last
/// step; multipliers are shifted the same way.
fn shift_solution(prob: &DopfProblem, prev: &PrevSolution, e_now: &[f64]) -> PrevSolution {
    let ix = &prob.index;
    let tt = ix.horizon;
    let (n, s) = (ix.n_bus, ix.n_sto);
    let src = |t: usize| (t + 1).min(tt - 1);
    let mut x = prev.x.clone();
    for t in 0..tt {
        let (a, b) = (ix.grid(t), ix.grid(src(t)));
        x[a..a + 4 * n].copy_from_slice(&prev.x[b..b + 4 * n]);
        let (a, b) = (ix.flex(t), ix.flex(src(t)));
        x[a..a + 2 * s].copy_from_slice(&prev.x[b..b + 2 * s]);
        for k in 0..s {
            x[ix.e_sto(t as isize, k)] = prev.x[ix.e_sto(src(t) as isize, k)];
        }
    }
    for (k, e) in e_now.iter().enumerate() {
        x[ix.e_sto(-1, k)] = e / prob.kw_per_pu;
    }

    // equality rows are grouped per block, each block ordered by step
    let mut y_eq = prev.y_eq.clone();
    let mut off = 0;
    for &rows in &prob.eq_blocks {
        shift_rows(&mut y_eq[off..off + rows], &prev.y_eq[off..off + rows], rows / tt);
        off += rows;
    }
    let mut y_ineq = prev.y_ineq.clone();
    let mut r = 0;
    while r < prob.ineq_kinds.len() {
        // runs of rows of the same family, ordered by step
        let fam = family(&prob.ineq_kinds[r]);
        let mut e = r;
        while e < prob.ineq_kinds.len() && family(&prob.ineq_kinds[e]) == fam {
            e += 1;
        }
        let len = e - r;
        if len % tt == 0 {
            shift_rows(&mut y_ineq[r..e], &prev.y_ineq[r..e], len / tt);
        }
        r = e;
    }
    let mut y_bound = vec![0.0; prev.y_bound.len()];
    for t in 0..tt {
        let (a, b) = (ix.grid(t), ix.grid(src(t)));
        y_bound[a..a + 4 * n].copy_from_slice(&prev.y_bound[b..b + 4 * n]);
        let (a, b) = (ix.flex(t), ix.flex(src(t)));
        y_bound[a..a + 2 * s].copy_from_slice(&prev.y_bound[b..b + 2 * s]);
    }
    PrevSolution { x, y_eq, y_ineq, y_bound }
}

fn shift_rows(dst: &mut [f64], src: &[f64], per_step: usize) {
    if per_step == 0 {
        return;
    }
    let tt = src.len() / per_step;
    for t in 0..tt {
        let from = (t + 1).min(tt - 1);
        dst[t * per_step..(t + 1) * per_step].copy_from_slice(&src[from * per_step..(from + 1) * per_step]);
    }
}

fn family(k: &dopf::IneqKind) -> u8 {
    use dopf::IneqKind::*;
    match k {
        BranchUpper { .. } => 0,
        BranchLower { .. } => 1,
        BranchFacet { .. } => 2,
        VoltageUpper { .. } => 3,
        PFlexUpper { .. } => 4,
        EnergyUpper { .. } => 5,
        VoltageLower { .. } => 6,
        PFlexLower { .. } => 7,
        EnergyLower { .. } => 8,
    }
}

/// Clips a power set point to the storage's power box and to what keeps
/// the energy within `[0, soc_frac_max·e_max]` after one step.
pub fn feasible_power(p: f64, e: f64, sto: &Storage, dt: f64) -> f64 {
    let decayed = e * (1.0 - sto.mu_sd * dt);
    let lo = ((0.0 - decayed) / dt).max(-sto.p_max);
    let hi = ((sto.e_cap() - decayed) / dt).min(sto.p_max);
    p.clamp(lo, hi)
}

/// Applied step with its AC evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// kW applied per storage
    pub p_applied: Vec<f64>,
    /// kWh before the step
    pub e_before: Vec<f64>,
    /// kWh after the step
    pub e_after: Vec<f64>,
    /// percent
    pub trafo_loading: f64,
    /// percent, per non-transformer branch
    pub line_loading: Vec<f64>,
    /// p.u. per bus
    pub v: Vec<f64>,
    /// AC-evaluated `½ (P_slack − c_slack)²` in p.u.²
    pub objective: f64,
    pub plan_objective: f64,
    /// seconds for the whole decision
    pub solve_time: f64,
    pub build_time: f64,
    pub core_time: f64,
    pub converged: bool,
    /// Full-horizon plan when requested.
    pub plan: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationLog {
    pub controller: String,
    pub records: Vec<StepRecord>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep the full-horizon plan of every step (imitation data).
    pub record_plans: bool,
}

/// Evaluates one plant step with the AC solver.
pub fn evaluate_step(
    net: &Network,
    lin: &LinearModel,
    series: &ScenarioSeries,
    step: usize,
    p_applied_kw: &[f64],
    start: Option<&AcSolution>,
) -> Result<AcSolution> {
    let mut p = series.p_inj.row(step).to_vec();
    let q = series.q_inj.row(step).to_vec();
    for (s, pk) in net.storages.iter().zip(p_applied_kw) {
        p[s.bus] -= net.kw_to_pu(*pk);
    }
    let nb = net.n_buses();
    let (v0, th0) = match start {
        Some(s) => (s.v.clone(), s.theta.clone()),
        None => (vec![1.0; nb], vec![0.0; nb]),
    };
    solve_ac_from(net, &lin.admittance, &p, &q, &v0, &th0)
}

pub fn run_rolling_horizon(
    net: &Network,
    lin: &LinearModel,
    series: &ScenarioSeries,
    start: usize,
    n_steps: usize,
    horizon: usize,
    controller: &mut dyn Controller,
    opts: RunOptions,
) -> Result<SimulationLog> {
    if start + n_steps + horizon > series.n_steps() {
        return Err(Error::Validation(format!(
            "start {start} + steps {n_steps} + horizon {horizon} exceeds series length {}",
            series.n_steps()
        )));
    }
    net.check_time_step(series.dt_hours)?;
    let dt = series.dt_hours;
    let mut e: Vec<f64> = net.storages.iter().map(|s| s.e_init).collect();
    let mut records = Vec::with_capacity(n_steps);
    let mut last_ac: Option<AcSolution> = None;
    for k in start..start + n_steps {
        let window = series.window(k, horizon)?;
        let sched = controller.plan(net, lin, &window, &e).map_err(|err| match err {
            Error::Solver { msg, .. } => Error::Solver { step: k, msg },
            Error::Qp(q) => Error::Solver {
                step: k,
                msg: q.to_string(),
            },
            other => other,
        })?;
        let e_before = e.clone();
        let p_applied: Vec<f64> = net
            .storages
            .iter()
            .zip(&e_before)
            .zip(sched.first_step())
            .map(|((s, &ek), p)| feasible_power(p, ek, s, dt))
            .collect();
        for ((ek, s), &p) in e.iter_mut().zip(&net.storages).zip(&p_applied) {
            *ek = storage_step(*ek, p, s, dt).clamp(0.0, s.e_cap());
        }
        let ac = evaluate_step(net, lin, series, k, &p_applied, last_ac.as_ref()).map_err(|err| Error::Solver {
            step: k,
            msg: format!("AC evaluation failed: {err}"),
        })?;
        let c_slack = series.p_inj[[k, net.slack_bus]];
        let mut line_loading = Vec::with_capacity(net.branches.len());
        let mut trafo_loading = 0.0;
        for (b, &i) in ac.branch_i.iter().enumerate() {
            let l = net.loading_percent(b, i);
            if Some(b) == net.transformer {
                trafo_loading = l;
            } else {
                line_loading.push(l);
            }
        }
        records.push(StepRecord {
            step: k,
            p_applied,
            e_before,
            e_after: e.clone(),
            trafo_loading,
            line_loading,
            v: ac.v.clone(),
            objective: 0.5 * (ac.slack_p - c_slack).powi(2),
            plan_objective: sched.objective,
            solve_time: sched.solve_time,
            build_time: sched.build_time,
            core_time: sched.core_time,
            converged: sched.converged,
            plan: opts.record_plans.then(|| sched.p_flex.clone()),
        });
        last_ac = Some(ac);
    }
    Ok(SimulationLog {
        controller: controller.name().to_string(),
        records,
    })
}

impl SimulationLog {
    pub fn steps(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.step).collect()
    }

    /// CSV with one row per step; vector fields expand to indexed columns.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        let Some(first) = self.records.first() else {
            writeln!(f, "controller,step")?;
            return Ok(());
        };
        let (s, l, b) = (first.p_applied.len(), first.line_loading.len(), first.v.len());
        let mut head = vec!["controller".to_string(), "step".to_string()];
        head.extend((0..s).map(|k| format!("p_sto_{k}")));
        head.extend((0..s).map(|k| format!("e_before_{k}")));
        head.extend((0..s).map(|k| format!("e_after_{k}")));
        head.push("trafo_loading".into());
        head.extend((0..l).map(|k| format!("line_loading_{k}")));
        head.extend((0..b).map(|k| format!("v_{k}")));
        head.extend(
            ["objective", "plan_objective", "solve_time", "build_time", "core_time", "converged"]
                .map(String::from),
        );
        writeln!(f, "{}", head.join(","))?;
        for r in &self.records {
            let mut row = vec![self.controller.clone(), r.step.to_string()];
            row.extend(r.p_applied.iter().map(f64::to_string));
            row.extend(r.e_before.iter().map(f64::to_string));
            row.extend(r.e_after.iter().map(f64::to_string));
            row.push(r.trafo_loading.to_string());
            row.extend(r.line_loading.iter().map(f64::to_string));
            row.extend(r.v.iter().map(f64::to_string));
            for x in [r.objective, r.plan_objective, r.solve_time, r.build_time, r.core_time] {
                row.push(x.to_string());
            }
            row.push((r.converged as u8).to_string());
            writeln!(f, "{}", row.join(","))?;
        }
        f.flush()?;
        Ok(())
    }

    /// Full-horizon plans, one row per step: `step,p_<storage>_<t>,…`.
    pub fn write_plans_csv(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        let Some(plan) = self.records.first().and_then(|r| r.plan.as_ref()) else {
            return Err(Error::Validation("log carries no plans; run with record_plans".into()));
        };
        let (s, t) = (plan.len(), plan.first().map_or(0, Vec::len));
        let mut head = vec!["step".to_string()];
        for k in 0..s {
            head.extend((0..t).map(|j| format!("p_{k}_{j}")));
        }
        writeln!(f, "{}", head.join(","))?;
        for r in &self.records {
            let plan = r
                .plan
                .as_ref()
                .ok_or_else(|| Error::Validation(format!("step {} carries no plan", r.step)))?;
            let mut row = vec![r.step.to_string()];
            row.extend(plan.iter().flatten().map(f64::to_string));
            writeln!(f, "{}", row.join(","))?;
        }
        f.flush()?;
        Ok(())
    }

    /// Reads plans written by [`Self::write_plans_csv`] into matching records.
    pub fn attach_plans_csv(&mut self, path: &Path) -> Result<()> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path.display(), e))?;
        let head = rdr.headers().map_err(|e| Error::parse(path.display(), e))?.clone();
        let mut n_sto = 0;
        let mut horizon = 0;
        for h in head.iter().skip(1) {
            let mut parts = h.trim_start_matches("p_").split('_').map(str::parse::<usize>);
            match (parts.next(), parts.next()) {
                (Some(Ok(k)), Some(Ok(j))) => {
                    n_sto = n_sto.max(k + 1);
                    horizon = horizon.max(j + 1);
                }
                _ => return Err(Error::parse(path.display(), format!("unexpected column {h}"))),
            }
        }
        let mut by_step = std::collections::HashMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(path.display(), e))?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path.display(), format!("row {}: {e}", i + 2)))?;
            if vals.len() != 1 + n_sto * horizon {
                return Err(Error::parse(path.display(), format!("row {} has {} cells", i + 2, vals.len())));
            }
            let plan: Vec<Vec<f64>> = vals[1..].chunks(horizon).map(<[f64]>::to_vec).collect();
            by_step.insert(vals[0] as usize, plan);
        }
        for r in &mut self.records {
            r.plan = Some(
                by_step
                    .remove(&r.step)
                    .ok_or_else(|| Error::Validation(format!("no plan for step {}", r.step)))?,
            );
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<SimulationLog> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path.display(), e))?;
        let head = rdr.headers().map_err(|e| Error::parse(path.display(), e))?.clone();
        let count = |prefix: &str| head.iter().filter(|h| h.starts_with(prefix)).count();
        let (s, l, b) = (count("p_sto_"), count("line_loading_"), count("v_"));
        let mut controller = String::new();
        let mut records = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(path.display(), e))?;
            let num = |c: usize| -> Result<f64> {
                rec.get(c)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::parse(path.display(), format!("row {}, column {}", i + 2, c + 1)))
            };
            let vec_at = |c0: usize, len: usize| -> Result<Vec<f64>> { (c0..c0 + len).map(num).collect() };
            controller = rec.get(0).unwrap_or_default().to_string();
            let mut c = 2;
            let p_applied = vec_at(c, s)?;
            c += s;
            let e_before = vec_at(c, s)?;
            c += s;
            let e_after = vec_at(c, s)?;
            c += s;
            let trafo_loading = num(c)?;
            c += 1;
            let line_loading = vec_at(c, l)?;
            c += l;
            let v = vec_at(c, b)?;
            c += b;
            records.push(StepRecord {
                step: num(1)? as usize,
                p_applied,
                e_before,
                e_after,
                trafo_loading,
                line_loading,
                v,
                objective: num(c)?,
                plan_objective: num(c + 1)?,
                solve_time: num(c + 2)?,
                build_time: num(c + 3)?,
                core_time: num(c + 4)?,
                converged: num(c + 5)? != 0.0,
                plan: None,
            });
        }
        Ok(SimulationLog { controller, records })
    }
}
