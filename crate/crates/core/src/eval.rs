//! Controller comparison: objective, latency and constraint statistics
//! over identical step sets, plus figure export (SVG + CSV pairs).

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calendar;
use crate::error::{Error, Result};
use crate::grid::Network;
use crate::mpc::{SimulationLog, StepRecord};

/// Five-number summary with linearly interpolated quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summary(values: &[f64]) -> Summary {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Summary {
        min: quantile(&v, 0.0),
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: quantile(&v, 1.0),
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Wall-clock statistics; the first step (cold start) is reported apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub cold_start: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    /// max / median
    pub spread: f64,
    /// Median of the core part (QP solve or forward pass).
    pub core_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerStats {
    pub name: String,
    pub steps: usize,
    pub objective_mean: f64,
    pub objective_median: f64,
    /// Steps with transformer loading above 100 %.
    pub trafo_overloads: usize,
    /// Steps with any line above 100 %.
    pub line_overloads: usize,
    /// Steps with any bus voltage outside its bounds.
    pub voltage_violations: usize,
    /// Steps with any storage outside `[0, soc_frac_max·e_max]`.
    pub soc_violations: usize,
    pub trafo_loading: Summary,
    /// Per-step maximum over lines.
    pub line_loading: Summary,
    /// Per-step minimum over buses.
    pub v_min: Summary,
    /// Per-step maximum over buses.
    pub v_max: Summary,
    pub timing: TimingStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub first_step: usize,
    pub steps: usize,
    pub baseline: ControllerStats,
    pub mpc: ControllerStats,
    pub npc: ControllerStats,
    /// NPC / MPC
    pub objective_mean_ratio: f64,
    pub objective_median_ratio: f64,
    pub time_mean_ratio: f64,
    pub time_median_ratio: f64,
}

/// Absolute tolerance on limit checks (percent or p.u.).
pub const VIOLATION_TOL: f64 = 1e-9;

/// Per-step quantities every statistic is computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub objective: f64,
    pub time: f64,
    pub core_time: f64,
    pub trafo: f64,
    pub line_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Lowest storage energy as a fraction of its usable capacity.
    pub soc_lo: f64,
    pub soc_hi: f64,
    pub v_violation: bool,
}

pub fn step_row(net: &Network, r: &StepRecord) -> StepRow {
    let v_violation = net
        .buses
        .iter()
        .zip(&r.v)
        .any(|(b, &v)| v < b.v_lb - VIOLATION_TOL || v > b.v_ub + VIOLATION_TOL);
    let frac: Vec<f64> = net
        .storages
        .iter()
        .zip(&r.e_after)
        .map(|(s, &e)| e / s.e_cap())
        .collect();
    StepRow {
        step: r.step,
        objective: r.objective,
        time: r.solve_time,
        core_time: r.core_time,
        trafo: r.trafo_loading,
        line_max: r.line_loading.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        v_min: r.v.iter().cloned().fold(f64::INFINITY, f64::min),
        v_max: r.v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        soc_lo: frac.iter().cloned().fold(f64::INFINITY, f64::min),
        soc_hi: frac.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        v_violation,
    }
}

pub fn controller_stats(name: &str, rows: &[StepRow]) -> ControllerStats {
    let col = |f: fn(&StepRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let obj = col(|r| r.objective);
    let times = col(|r| r.time);
    let warm = if times.len() > 1 { &times[1..] } else { &times[..] };
    let core = col(|r| r.core_time);
    let core_warm = if core.len() > 1 { &core[1..] } else { &core[..] };
    let t_sum = summary(warm);
    ControllerStats {
        name: name.to_string(),
        steps: rows.len(),
        objective_mean: mean(&obj),
        objective_median: summary(&obj).median,
        trafo_overloads: rows.iter().filter(|r| r.trafo > 100.0 + VIOLATION_TOL).count(),
        line_overloads: rows.iter().filter(|r| r.line_max > 100.0 + VIOLATION_TOL).count(),
        voltage_violations: rows.iter().filter(|r| r.v_violation).count(),
        soc_violations: rows
            .iter()
            .filter(|r| r.soc_lo < -VIOLATION_TOL || r.soc_hi > 1.0 + VIOLATION_TOL)
            .count(),
        trafo_loading: summary(&col(|r| r.trafo)),
        line_loading: summary(&col(|r| r.line_max)),
        v_min: summary(&col(|r| r.v_min)),
        v_max: summary(&col(|r| r.v_max)),
        timing: TimingStats {
            cold_start: times.first().copied().unwrap_or(f64::NAN),
            mean: mean(warm),
            median: t_sum.median,
            max: t_sum.max,
            spread: t_sum.max / t_sum.median,
            core_median: summary(core_warm).median,
        },
    }
}

fn rows_of(net: &Network, log: &SimulationLog, keep: Option<&[usize]>) -> Vec<StepRow> {
    log.records
        .iter()
        .filter(|r| keep.is_none_or(|k| k.binary_search(&r.step).is_ok()))
        .map(|r| step_row(net, r))
        .collect()
}

/// Table-style comparison. `keep` restricts all statistics to a sorted
/// subset of steps (e.g. test days).
pub fn compare(
    net: &Network,
    baseline: &SimulationLog,
    mpc: &SimulationLog,
    npc: &SimulationLog,
    keep: Option<&[usize]>,
) -> Result<ComparisonReport> {
    let steps = mpc.steps();
    if steps.is_empty() {
        return Err(Error::Validation("empty MPC log".into()));
    }
    for other in [baseline, npc] {
        if other.steps() != steps {
            return Err(Error::Validation(format!(
                "{} log covers different steps than the MPC log",
                other.controller
            )));
        }
    }
    if let Some(k) = keep {
        if k.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("step subset must be strictly increasing".into()));
        }
    }
    let b = controller_stats(&baseline.controller, &rows_of(net, baseline, keep));
    let m = controller_stats(&mpc.controller, &rows_of(net, mpc, keep));
    let n = controller_stats(&npc.controller, &rows_of(net, npc, keep));
    if m.steps == 0 {
        return Err(Error::Validation("step subset selects no logged steps".into()));
    }
    Ok(ComparisonReport {
        first_step: keep.and_then(|k| k.first().copied()).unwrap_or(steps[0]),
        steps: m.steps,
        objective_mean_ratio: n.objective_mean / m.objective_mean,
        objective_median_ratio: n.objective_median / m.objective_median,
        time_mean_ratio: n.timing.mean / m.timing.mean,
        time_median_ratio: n.timing.median / m.timing.median,
        baseline: b,
        mpc: m,
        npc: n,
    })
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Everything except wall-clock timing, which no rerun reproduces.
    pub fn outcome_json(&self) -> String {
        let mut r = self.clone();
        let zero = TimingStats {
            cold_start: 0.0,
            mean: 0.0,
            median: 0.0,
            max: 0.0,
            spread: 0.0,
            core_median: 0.0,
        };
        for c in [&mut r.baseline, &mut r.mpc, &mut r.npc] {
            c.timing = zero;
        }
        r.time_mean_ratio = 0.0;
        r.time_median_ratio = 0.0;
        serde_json::to_string_pretty(&r).expect("report serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<ComparisonReport> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display(), e))
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<26}{:>14}{:>14}{:>14}{:>12}", "", "baseline", "MPC", "NPC", "NPC/MPC");
        let row = |s: &mut String, name: &str, f: fn(&ControllerStats) -> f64, ratio: Option<f64>| {
            let _ = write!(s, "{:<26}{:>14.6}{:>14.6}{:>14.6}", name, f(&self.baseline), f(&self.mpc), f(&self.npc));
            match ratio {
                Some(r) => {
                    let _ = writeln!(s, "{r:>12.4}");
                }
                None => {
                    let _ = writeln!(s);
                }
            }
        };
        row(&mut s, "objective mean", |c| c.objective_mean, Some(self.objective_mean_ratio));
        row(&mut s, "objective median", |c| c.objective_median, Some(self.objective_median_ratio));
        row(&mut s, "time mean [ms]", |c| c.timing.mean * 1e3, Some(self.time_mean_ratio));
        row(&mut s, "time median [ms]", |c| c.timing.median * 1e3, Some(self.time_median_ratio));
        row(&mut s, "time max/median", |c| c.timing.spread, None);
        row(&mut s, "trafo loading max [%]", |c| c.trafo_loading.max, None);
        row(&mut s, "line loading max [%]", |c| c.line_loading.max, None);
        row(&mut s, "voltage min [p.u.]", |c| c.v_min.min, None);
        row(&mut s, "voltage max [p.u.]", |c| c.v_max.max, None);
        row(&mut s, "trafo overload steps", |c| c.trafo_overloads as f64, None);
        row(&mut s, "line overload steps", |c| c.line_overloads as f64, None);
        row(&mut s, "voltage violation steps", |c| c.voltage_violations as f64, None);
        row(&mut s, "SoC violation steps", |c| c.soc_violations as f64, None);
        s
    }
}

// ---------------------------------------------------------------- figures

const W: f64 = 900.0;
const H: f64 = 420.0;
const PAD_L: f64 = 70.0;
const PAD_R: f64 = 160.0;
const PAD_T: f64 = 40.0;
const PAD_B: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

struct Series<'a> {
    name: String,
    values: &'a [f64],
}

fn svg_header(title: &str, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn axes(out: &mut String, y0: f64, h: f64, x_range: (f64, f64), y_range: (f64, f64), x_label: &str, y_label: &str) {
    let plot_w = W - PAD_L - PAD_R;
    let _ = writeln!(
        out,
        "<rect x=\"{PAD_L}\" y=\"{y0}\" width=\"{plot_w}\" height=\"{h}\" fill=\"none\" stroke=\"black\"/>"
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = y_range.0 + f * (y_range.1 - y_range.0);
        let yp = y0 + h - f * h;
        let _ = writeln!(
            out,
            "<line x1=\"{PAD_L}\" x2=\"{}\" y1=\"{yp:.1}\" y2=\"{yp:.1}\" stroke=\"#ddd\"/><text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            PAD_L + plot_w,
            PAD_L - 6.0,
            yp + 4.0,
            fmt_tick(yv)
        );
        let xv = x_range.0 + f * (x_range.1 - x_range.0);
        let xp = PAD_L + f * plot_w;
        let _ = writeln!(
            out,
            "<text x=\"{xp:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            y0 + h + 16.0,
            fmt_tick(xv)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        PAD_L + plot_w / 2.0,
        y0 + h + 34.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        y0 + h / 2.0,
        y0 + h / 2.0,
        escape(y_label)
    );
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// Line panel at vertical offset `y0` with height `h`.
fn line_panel(out: &mut String, y0: f64, h: f64, x: &[f64], series: &[Series<'_>], x_label: &str, y_label: &str, hline: Option<f64>) {
    let plot_w = W - PAD_L - PAD_R;
    let x_range = nice_range(x.first().copied().unwrap_or(0.0), x.last().copied().unwrap_or(1.0));
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for &v in s.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if let Some(l) = hline {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    let y_range = nice_range(lo, hi);
    axes(out, y0, h, x_range, y_range, x_label, y_label);
    let px = |v: f64| PAD_L + (v - x_range.0) / (x_range.1 - x_range.0) * plot_w;
    let py = |v: f64| y0 + h - (v - y_range.0) / (y_range.1 - y_range.0) * h;
    if let Some(l) = hline {
        let _ = writeln!(
            out,
            "<line x1=\"{PAD_L}\" x2=\"{:.1}\" y1=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\" stroke-dasharray=\"5,4\"/>",
            PAD_L + plot_w,
            py(l),
            py(l)
        );
    }
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut pts = String::new();
        for (xi, &v) in x.iter().zip(s.values) {
            let _ = write!(pts, "{:.1},{:.1} ", px(*xi), py(v));
        }
        let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{pts}\"/>");
        let ly = y0 + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" x2=\"{:.1}\" y1=\"{ly:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            W - PAD_R + 10.0,
            W - PAD_R + 30.0,
            W - PAD_R + 35.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
}

/// Box plots (whiskers at min/max) of several groups on one axis.
fn box_panel(out: &mut String, y0: f64, h: f64, groups: &[(String, Summary)], y_label: &str, hline: Option<f64>) {
    let plot_w = W - PAD_L - PAD_R;
    let mut lo = groups.iter().map(|g| g.1.min).fold(f64::INFINITY, f64::min);
    let mut hi = groups.iter().map(|g| g.1.max).fold(f64::NEG_INFINITY, f64::max);
    if let Some(l) = hline {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    let y_range = nice_range(lo, hi);
    let _ = writeln!(
        out,
        "<rect x=\"{PAD_L}\" y=\"{y0}\" width=\"{plot_w}\" height=\"{h}\" fill=\"none\" stroke=\"black\"/>"
    );
    let py = |v: f64| y0 + h - (v - y_range.0) / (y_range.1 - y_range.0) * h;
    for i in 0..=4 {
        let yv = y_range.0 + i as f64 / 4.0 * (y_range.1 - y_range.0);
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            PAD_L - 6.0,
            py(yv) + 4.0,
            fmt_tick(yv)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        y0 + h / 2.0,
        y0 + h / 2.0,
        escape(y_label)
    );
    if let Some(l) = hline {
        let _ = writeln!(
            out,
            "<line x1=\"{PAD_L}\" x2=\"{:.1}\" y1=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\" stroke-dasharray=\"5,4\"/>",
            PAD_L + plot_w,
            py(l),
            py(l)
        );
    }
    let slot = plot_w / groups.len().max(1) as f64;
    for (k, (name, s)) in groups.iter().enumerate() {
        let cx = PAD_L + slot * (k as f64 + 0.5);
        let bw = slot * 0.35;
        let color = COLORS[k % COLORS.len()];
        let _ = writeln!(
            out,
            "<line x1=\"{cx:.1}\" x2=\"{cx:.1}\" y1=\"{:.1}\" y2=\"{:.1}\" stroke=\"{color}\"/>\
             <rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{color}\" fill-opacity=\"0.25\" stroke=\"{color}\"/>\
             <line x1=\"{:.1}\" x2=\"{:.1}\" y1=\"{:.1}\" y2=\"{:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\
             <text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            py(s.min),
            py(s.max),
            cx - bw / 2.0,
            py(s.q3),
            bw,
            (py(s.q1) - py(s.q3)).max(0.5),
            cx - bw / 2.0,
            cx + bw / 2.0,
            py(s.median),
            py(s.median),
            y0 + h + 16.0,
            escape(name)
        );
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    w.write_record(header).map_err(|e| Error::Io(e.into()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

fn finish_svg(path: &Path, mut svg: String) -> Result<()> {
    svg.push_str("</svg>\n");
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(svg.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Steps of the day to show: the 11th of June when logged, otherwise the
/// first fully logged day.
pub fn showcase_day(log: &SimulationLog, dt_hours: f64) -> Option<Vec<usize>> {
    let spd = calendar::steps_per_day(dt_hours);
    let steps = log.steps();
    let full = |d: usize| (d * spd..(d + 1) * spd).all(|s| steps.binary_search(&s).is_ok());
    let june11 = calendar::doy(6, 11);
    let years = steps.last().map_or(0, |s| s / (spd * calendar::DAYS_PER_YEAR));
    let mut candidates: Vec<usize> = (0..=years).map(|y| y * calendar::DAYS_PER_YEAR + june11).collect();
    candidates.extend(steps.iter().map(|s| s / spd));
    candidates.into_iter().find(|&d| full(d)).map(|d| (d * spd..(d + 1) * spd).collect())
}

/// Writes the four figure pairs and returns their paths.
pub fn export_plots(
    net: &Network,
    baseline: &SimulationLog,
    mpc: &SimulationLog,
    npc: &SimulationLog,
    dt_hours: f64,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    if baseline.steps() != mpc.steps() || npc.steps() != mpc.steps() {
        return Err(Error::Validation("logs cover different steps".into()));
    }
    let logs = [baseline, mpc, npc];
    let rows: Vec<Vec<StepRow>> = logs.iter().map(|l| rows_of(net, l, None)).collect();
    let names: Vec<&str> = logs.iter().map(|l| l.controller.as_str()).collect();
    let mut files = Vec::new();
    let n_sto = net.n_storages();

    // single day: storage power, transformer loading, SoC
    let day = showcase_day(mpc, dt_hours).unwrap_or_else(|| mpc.steps().into_iter().take(96).collect());
    fn pick<'a>(log: &'a SimulationLog, day: &[usize]) -> Vec<&'a StepRecord> {
        log.records.iter().filter(|r| day.binary_search(&r.step).is_ok()).collect()
    }
    let (db, dm, dn) = (pick(baseline, &day), pick(mpc, &day), pick(npc, &day));
    let hours: Vec<f64> = day.iter().map(|s| (s % calendar::steps_per_day(dt_hours)) as f64 * dt_hours).collect();
    let mut header = vec!["step".to_string(), "hour".to_string()];
    for n in &names {
        header.push(format!("trafo_{n}"));
    }
    for c in ["mpc", "npc"] {
        for s in 0..n_sto {
            header.push(format!("p_{c}_{s}"));
        }
        for s in 0..n_sto {
            header.push(format!("soc_{c}_{s}"));
        }
    }
    let soc = |r: &StepRecord, s: usize| 100.0 * r.e_after[s] / net.storages[s].e_max;
    let csv_rows: Vec<Vec<String>> = (0..day.len())
        .map(|i| {
            let mut row = vec![day[i].to_string(), hours[i].to_string()];
            for d in [&db, &dm, &dn] {
                row.push(d[i].trafo_loading.to_string());
            }
            for d in [&dm, &dn] {
                for s in 0..n_sto {
                    row.push(d[i].p_applied[s].to_string());
                }
                for s in 0..n_sto {
                    row.push(soc(d[i], s).to_string());
                }
            }
            row
        })
        .collect();
    let p = dir.join("fig3_single_day.csv");
    write_csv(&p, &header, &csv_rows)?;
    files.push(p);
    let trafo: Vec<Vec<f64>> = [&db, &dm, &dn].iter().map(|d| d.iter().map(|r| r.trafo_loading).collect()).collect();
    let p_m: Vec<Vec<f64>> = (0..n_sto).map(|s| dm.iter().map(|r| r.p_applied[s]).collect()).collect();
    let p_n: Vec<Vec<f64>> = (0..n_sto).map(|s| dn.iter().map(|r| r.p_applied[s]).collect()).collect();
    let soc_m: Vec<Vec<f64>> = (0..n_sto).map(|s| dm.iter().map(|r| soc(r, s)).collect()).collect();
    let soc_n: Vec<Vec<f64>> = (0..n_sto).map(|s| dn.iter().map(|r| soc(r, s)).collect()).collect();
    let doy = day.first().map_or(0, |s| calendar::day_of_year(*s, dt_hours));
    let (mo, dd) = calendar::month_day(doy);
    let panel_h = 170.0;
    let total_h = PAD_T + 3.0 * (panel_h + PAD_B) + 10.0;
    let mut svg = svg_header(&format!("Single day {dd:02}.{mo:02}: storage power, transformer loading, SoC"), total_h);
    let mut power: Vec<Series<'_>> = Vec::new();
    for (s, v) in p_m.iter().enumerate() {
        power.push(Series { name: format!("MPC {s}"), values: v });
    }
    for (s, v) in p_n.iter().enumerate() {
        power.push(Series { name: format!("NPC {s}"), values: v });
    }
    line_panel(&mut svg, PAD_T, panel_h, &hours, &power, "hour", "storage power [kW]", None);
    let tser: Vec<Series<'_>> = names.iter().zip(&trafo).map(|(n, v)| Series { name: n.to_string(), values: v }).collect();
    line_panel(&mut svg, PAD_T + panel_h + PAD_B, panel_h, &hours, &tser, "hour", "transformer loading [%]", Some(100.0));
    let mut socs: Vec<Series<'_>> = Vec::new();
    for (s, v) in soc_m.iter().enumerate() {
        socs.push(Series { name: format!("MPC {s}"), values: v });
    }
    for (s, v) in soc_n.iter().enumerate() {
        socs.push(Series { name: format!("NPC {s}"), values: v });
    }
    line_panel(&mut svg, PAD_T + 2.0 * (panel_h + PAD_B), panel_h, &hours, &socs, "hour", "SoC [%]", None);
    let p = dir.join("fig3_single_day.svg");
    finish_svg(&p, svg)?;
    files.push(p);

    // transformer loading over the whole run
    let steps: Vec<f64> = mpc.steps().iter().map(|&s| s as f64).collect();
    let mut header = vec!["step".to_string()];
    header.extend(names.iter().map(|n| format!("trafo_{n}")));
    let csv_rows: Vec<Vec<String>> = (0..steps.len())
        .map(|i| {
            let mut r = vec![rows[0][i].step.to_string()];
            r.extend(rows.iter().map(|c| c[i].trafo.to_string()));
            r
        })
        .collect();
    let p = dir.join("fig4_trafo_loading.csv");
    write_csv(&p, &header, &csv_rows)?;
    files.push(p);
    let tl: Vec<Vec<f64>> = rows.iter().map(|c| c.iter().map(|r| r.trafo).collect()).collect();
    let mut svg = svg_header("Transformer loading", H);
    let ser: Vec<Series<'_>> = names.iter().zip(&tl).map(|(n, v)| Series { name: n.to_string(), values: v }).collect();
    line_panel(&mut svg, PAD_T, H - PAD_T - PAD_B, &steps, &ser, "step", "loading [%]", Some(100.0));
    let p = dir.join("fig4_trafo_loading.svg");
    finish_svg(&p, svg)?;
    files.push(p);

    // constraint distributions
    let quantities: [(&str, fn(&StepRow) -> f64); 6] = [
        ("trafo", |r| r.trafo),
        ("line_max", |r| r.line_max),
        ("v_min", |r| r.v_min),
        ("v_max", |r| r.v_max),
        ("soc_lo", |r| r.soc_lo),
        ("soc_hi", |r| r.soc_hi),
    ];
    let mut header = vec!["step".to_string()];
    for n in &names {
        for (q, _) in &quantities {
            header.push(format!("{q}_{n}"));
        }
        header.push(format!("v_violation_{n}"));
    }
    let csv_rows: Vec<Vec<String>> = (0..steps.len())
        .map(|i| {
            let mut r = vec![rows[0][i].step.to_string()];
            for c in &rows {
                for (_, f) in &quantities {
                    r.push(f(&c[i]).to_string());
                }
                r.push(u8::from(c[i].v_violation).to_string());
            }
            r
        })
        .collect();
    let p = dir.join("fig5_constraints.csv");
    write_csv(&p, &header, &csv_rows)?;
    files.push(p);
    let panel_h = 150.0;
    let mut svg = svg_header("Constraint distributions", PAD_T + 3.0 * (panel_h + PAD_B));
    let groups = |f: fn(&StepRow) -> f64| -> Vec<(String, Summary)> {
        names
            .iter()
            .zip(&rows)
            .map(|(n, c)| (n.to_string(), summary(&c.iter().map(f).collect::<Vec<_>>())))
            .collect()
    };
    box_panel(&mut svg, PAD_T, panel_h, &groups(|r| r.trafo), "transformer [%]", Some(100.0));
    box_panel(&mut svg, PAD_T + panel_h + PAD_B, panel_h, &groups(|r| r.line_max), "max line [%]", None);
    let mut vg = groups(|r| r.v_min);
    for g in &mut vg {
        g.0 = format!("{} min", g.0);
    }
    let mut vmax = groups(|r| r.v_max);
    for g in &mut vmax {
        g.0 = format!("{} max", g.0);
    }
    vg.extend(vmax);
    box_panel(&mut svg, PAD_T + 2.0 * (panel_h + PAD_B), panel_h, &vg, "voltage [p.u.]", None);
    let p = dir.join("fig5_constraints.svg");
    finish_svg(&p, svg)?;
    files.push(p);

    // decision time and objective
    let mut header = vec!["step".to_string()];
    for n in &names {
        header.push(format!("objective_{n}"));
        header.push(format!("time_{n}"));
        header.push(format!("core_time_{n}"));
    }
    let csv_rows: Vec<Vec<String>> = (0..steps.len())
        .map(|i| {
            let mut r = vec![rows[0][i].step.to_string()];
            for c in &rows {
                r.push(c[i].objective.to_string());
                r.push(c[i].time.to_string());
                r.push(c[i].core_time.to_string());
            }
            r
        })
        .collect();
    let p = dir.join("fig6_time_objective.csv");
    write_csv(&p, &header, &csv_rows)?;
    files.push(p);
    let panel_h = 170.0;
    let mut svg = svg_header("Decision time and objective", PAD_T + 2.0 * (panel_h + PAD_B));
    let tg: Vec<(String, Summary)> = names[1..]
        .iter()
        .zip(&rows[1..])
        .map(|(n, c)| {
            let t: Vec<f64> = c.iter().skip(1).map(|r| r.time * 1e3).collect();
            (n.to_string(), summary(&t))
        })
        .collect();
    box_panel(&mut svg, PAD_T, panel_h, &tg, "time per step [ms]", None);
    box_panel(&mut svg, PAD_T + panel_h + PAD_B, panel_h, &groups(|r| r.objective), "objective [p.u.²]", None);
    let p = dir.join("fig6_time_objective.svg");
    finish_svg(&p, svg)?;
    files.push(p);
    Ok(files)
}
