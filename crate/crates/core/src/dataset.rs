//! Imitation data recorded from MPC runs: input/target matrices, the
//! chronological train/test split and feature/target scaling.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::calendar;
use crate::error::{Error, Result};
use crate::grid::Network;
use crate::mpc::SimulationLog;
use crate::series::{ScenarioSeries, Window};

pub const LAYOUT_VERSION: &str = "flexsched-imitation-v1";
const MAGIC: &str = "FLEXSCHED-DATASET";

/// Input/target layout shared by datasets and models.
///
/// X row: `[load kW (t-major, feature bus minor), pv kW (same order), e_now kWh]`
/// with load = generation − net injection (consumption positive).
/// Y row: planned storage power in kW, storage-major: `y[s·T + t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub version: String,
    pub horizon: usize,
    pub feature_buses: Vec<usize>,
    pub n_storages: usize,
}

impl Layout {
    /// Every non-slack bus is a feature bus.
    pub fn for_network(net: &Network, horizon: usize) -> Self {
        Self {
            version: LAYOUT_VERSION.to_string(),
            horizon,
            feature_buses: net.non_slack_buses(),
            n_storages: net.n_storages(),
        }
    }

    pub fn n_in(&self) -> usize {
        2 * self.horizon * self.feature_buses.len() + self.n_storages
    }

    pub fn n_out(&self) -> usize {
        self.n_storages * self.horizon
    }

    pub fn check_compatible(&self, other: &Layout) -> Result<()> {
        if self != other {
            return Err(Error::Validation(format!(
                "layout mismatch: {} (T={}, buses={:?}, storages={}) vs {} (T={}, buses={:?}, storages={})",
                self.version,
                self.horizon,
                self.feature_buses,
                self.n_storages,
                other.version,
                other.horizon,
                other.feature_buses,
                other.n_storages
            )));
        }
        Ok(())
    }

    /// Feature row for a forecast window and the current storage energy.
    pub fn features(&self, window: &Window<'_>, e_now: &[f64], net: &Network) -> Result<Vec<f64>> {
        if window.len() != self.horizon {
            return Err(Error::Dimension(format!(
                "window has {} steps, layout expects {}",
                window.len(),
                self.horizon
            )));
        }
        if e_now.len() != self.n_storages {
            return Err(Error::Dimension(format!(
                "{} storage energies, layout expects {}",
                e_now.len(),
                self.n_storages
            )));
        }
        let nf = self.feature_buses.len();
        let mut x = vec![0.0; self.n_in()];
        let pv_off = self.horizon * nf;
        for t in 0..self.horizon {
            for (j, &b) in self.feature_buses.iter().enumerate() {
                let gen = window.p_gen[[t, b]];
                x[t * nf + j] = net.pu_to_kw(gen - window.p_inj[[t, b]]);
                x[pv_off + t * nf + j] = net.pu_to_kw(gen);
            }
        }
        x[2 * pv_off..].copy_from_slice(e_now);
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// How the split mask was produced; decides where validation data comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    None,
    /// Calendar weeks per month (days 22–28 test).
    MonthWeeks,
    /// Every fourth recorded day is a test day.
    DayHoldout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImitationDataset {
    pub layout: Layout,
    pub dt_hours: f64,
    /// Absolute step index (time stamp) of every sample.
    pub steps: Vec<usize>,
    pub x: Array2<f64>,
    /// kW
    pub y: Array2<f64>,
    pub split: Vec<Split>,
    pub split_kind: SplitKind,
    pub x_scaler: Option<Scaler>,
    /// Divisor per output (p_max of the storage).
    pub y_scale: Vec<f64>,
}

/// Builds samples from MPC runs made with `record_plans`.
pub fn record(
    net: &Network,
    series: &ScenarioSeries,
    logs: &[SimulationLog],
    horizon: usize,
) -> Result<ImitationDataset> {
    let layout = Layout::for_network(net, horizon);
    let mut steps = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for log in logs {
        for r in &log.records {
            let plan = r.plan.as_ref().ok_or_else(|| {
                Error::Validation(format!("step {} of the {} log carries no plan", r.step, log.controller))
            })?;
            if plan.len() != layout.n_storages || plan.iter().any(|p| p.len() != horizon) {
                return Err(Error::Dimension(format!(
                    "plan at step {} is {}x{}, expected {}x{}",
                    r.step,
                    plan.len(),
                    plan.first().map_or(0, Vec::len),
                    layout.n_storages,
                    horizon
                )));
            }
            let window = series.window(r.step, horizon)?;
            xs.extend(layout.features(&window, &r.e_before, net)?);
            for p in plan {
                ys.extend_from_slice(p);
            }
            steps.push(r.step);
        }
    }
    if steps.is_empty() {
        return Err(Error::Validation("no samples to record".into()));
    }
    let n = steps.len();
    let x = Array2::from_shape_vec((n, layout.n_in()), xs).map_err(|e| Error::Dimension(e.to_string()))?;
    let y = Array2::from_shape_vec((n, layout.n_out()), ys).map_err(|e| Error::Dimension(e.to_string()))?;
    let y_scale = net
        .storages
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.p_max, horizon))
        .collect();
    Ok(ImitationDataset {
        layout,
        dt_hours: series.dt_hours,
        steps,
        x,
        y,
        split: vec![Split::Train; n],
        split_kind: SplitKind::None,
        x_scaler: None,
        y_scale,
    })
}

/// Calendar days 22–28 of every month are test, all other days train.
pub fn month_week_split(doy: usize) -> Split {
    let (_, day) = calendar::month_day(doy);
    if (22..=28).contains(&day) {
        Split::Test
    } else {
        Split::Train
    }
}

impl ImitationDataset {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn day(&self, i: usize) -> usize {
        self.steps[i] / calendar::steps_per_day(self.dt_hours)
    }

    /// Three weeks of every month train, the fourth (days 22–28) test.
    pub fn split_by_weeks(&mut self) -> Result<()> {
        let days: BTreeSet<usize> = (0..self.len()).map(|i| self.day(i)).collect();
        let span = match (days.first(), days.last()) {
            (Some(a), Some(b)) => b - a + 1,
            _ => 0,
        };
        if span < 28 {
            return Err(Error::Validation(format!(
                "week split needs samples spanning at least one month, got {span} days"
            )));
        }
        self.split = (0..self.len())
            .map(|i| month_week_split(self.day(i) % calendar::DAYS_PER_YEAR))
            .collect();
        self.split_kind = SplitKind::MonthWeeks;
        Ok(())
    }

    /// Numbers the distinct recorded days in order and makes every fourth
    /// one (index 3, 7, …) a test day. Used for short runs made of separate
    /// weeks where the calendar split would leave no test data.
    pub fn split_by_day_holdout(&mut self) -> Result<()> {
        let days: Vec<usize> = (0..self.len())
            .map(|i| self.day(i))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if days.len() < 4 {
            return Err(Error::Validation(format!(
                "day holdout needs at least 4 recorded days, got {}",
                days.len()
            )));
        }
        self.split = (0..self.len())
            .map(|i| {
                let k = days.binary_search(&self.day(i)).expect("day present");
                if k % 4 == 3 {
                    Split::Test
                } else {
                    Split::Train
                }
            })
            .collect();
        self.split_kind = SplitKind::DayHoldout;
        Ok(())
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == which).collect()
    }

    pub fn train_fraction(&self) -> f64 {
        self.indices(Split::Train).len() as f64 / self.len() as f64
    }

    /// Splits the training rows into (fit, validation) without touching
    /// test rows: days 15–21 of each month for the calendar split, every
    /// fourth training day otherwise.
    pub fn validation_split(&self) -> (Vec<usize>, Vec<usize>) {
        let train = self.indices(Split::Train);
        let mut fit = Vec::new();
        let mut val = Vec::new();
        match self.split_kind {
            SplitKind::MonthWeeks => {
                for i in train {
                    let (_, day) = calendar::month_day(self.day(i) % calendar::DAYS_PER_YEAR);
                    if (15..=21).contains(&day) {
                        val.push(i);
                    } else {
                        fit.push(i);
                    }
                }
            }
            SplitKind::DayHoldout | SplitKind::None => {
                let days: Vec<usize> = train
                    .iter()
                    .map(|&i| self.day(i))
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                for i in train {
                    let k = days.binary_search(&self.day(i)).expect("day present");
                    if k % 4 == 3 {
                        val.push(i);
                    } else {
                        fit.push(i);
                    }
                }
            }
        }
        (fit, val)
    }

    /// Per-feature mean/std over training rows only; zero std becomes 1.
    pub fn fit_scalers(&mut self) -> Result<()> {
        let train = self.indices(Split::Train);
        if train.is_empty() {
            return Err(Error::Validation("no training rows to fit scalers on".into()));
        }
        let rows = self.x.select(Axis(0), &train);
        let n = rows.nrows() as f64;
        let mean = rows.sum_axis(Axis(0)) / n;
        let std: Vec<f64> = rows
            .axis_iter(Axis(1))
            .zip(mean.iter())
            .map(|(col, &m)| {
                let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
                let s = var.sqrt();
                if s > 1e-12 * (1.0 + m.abs()) {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        self.x_scaler = Some(Scaler {
            mean: mean.to_vec(),
            std,
        });
        Ok(())
    }

    fn scaler(&self) -> Result<&Scaler> {
        self.x_scaler
            .as_ref()
            .ok_or_else(|| Error::Validation("scalers not fitted".into()))
    }

    /// Scaled `(X, Y)` rows for the given indices.
    pub fn scaled(&self, rows: &[usize]) -> Result<(Array2<f64>, Array2<f64>)> {
        let sc = self.scaler()?;
        let mut x = self.x.select(Axis(0), rows);
        for mut r in x.rows_mut() {
            scale_into(r.as_slice_mut().expect("row-major"), sc);
        }
        let mut y = self.y.select(Axis(0), rows);
        for mut r in y.rows_mut() {
            for (v, s) in r.iter_mut().zip(&self.y_scale) {
                *v /= s;
            }
        }
        Ok((x, y))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header = Header {
            layout: self.layout.clone(),
            dt_hours: self.dt_hours,
            n_samples: self.len(),
            n_in: self.x.ncols(),
            n_out: self.y.ncols(),
            steps: self.steps.clone(),
            split: self.split.clone(),
            split_kind: self.split_kind,
            x_scaler: self.x_scaler.clone(),
            y_scale: self.y_scale.clone(),
        };
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{MAGIC} {LAYOUT_VERSION}")?;
        writeln!(w, "{}", serde_json::to_string(&header).map_err(|e| Error::Validation(e.to_string()))?)?;
        write_f64s(&mut w, self.x.iter())?;
        write_f64s(&mut w, self.y.iter())?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<ImitationDataset> {
        let mut r = BufReader::new(File::open(path)?);
        let header: Header = read_header(&mut r, path, MAGIC)?;
        if header.steps.len() != header.n_samples || header.split.len() != header.n_samples {
            return Err(Error::parse(path.display(), "sample metadata length mismatch"));
        }
        let x = read_matrix(&mut r, header.n_samples, header.n_in, path)?;
        let y = read_matrix(&mut r, header.n_samples, header.n_out, path)?;
        Ok(ImitationDataset {
            layout: header.layout,
            dt_hours: header.dt_hours,
            steps: header.steps,
            x,
            y,
            split: header.split,
            split_kind: header.split_kind,
            x_scaler: header.x_scaler,
            y_scale: header.y_scale,
        })
    }

    /// Inspection export: `step,split,x0..,y0..` (raw units).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "step,split")?;
        for j in 0..self.x.ncols() {
            write!(w, ",x{j}")?;
        }
        for j in 0..self.y.ncols() {
            write!(w, ",y{j}")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            let s = match self.split[i] {
                Split::Train => "train",
                Split::Test => "test",
            };
            write!(w, "{},{s}", self.steps[i])?;
            for v in self.x.row(i).iter().chain(self.y.row(i).iter()) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// In-place standardization of one feature row.
pub fn scale_into(x: &mut [f64], sc: &Scaler) {
    for ((v, m), s) in x.iter_mut().zip(&sc.mean).zip(&sc.std) {
        *v = (*v - m) / s;
    }
}

pub fn unscale_x(x: ArrayView1<'_, f64>, sc: &Scaler) -> Array1<f64> {
    x.iter()
        .zip(&sc.mean)
        .zip(&sc.std)
        .map(|((v, m), s)| v * s + m)
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Header {
    layout: Layout,
    dt_hours: f64,
    n_samples: usize,
    n_in: usize,
    n_out: usize,
    steps: Vec<usize>,
    split: Vec<Split>,
    split_kind: SplitKind,
    x_scaler: Option<Scaler>,
    y_scale: Vec<f64>,
}

pub(crate) fn write_f64s<'a>(w: &mut impl Write, vals: impl Iterator<Item = &'a f64>) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_header<T: serde::de::DeserializeOwned>(
    r: &mut impl BufRead,
    path: &Path,
    magic: &str,
) -> Result<T> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let mut parts = first.split_whitespace();
    if parts.next() != Some(magic) {
        return Err(Error::parse(path.display(), format!("missing {magic} header")));
    }
    match parts.next() {
        Some(LAYOUT_VERSION) => {}
        other => {
            return Err(Error::parse(
                path.display(),
                format!("unsupported layout version {other:?}, expected {LAYOUT_VERSION}"),
            ))
        }
    }
    let mut meta = String::new();
    r.read_line(&mut meta)?;
    serde_json::from_str(&meta).map_err(|e| Error::parse(path.display(), format!("header: {e}")))
}

pub(crate) fn read_matrix(r: &mut impl Read, rows: usize, cols: usize, path: &Path) -> Result<Array2<f64>> {
    let mut buf = vec![0u8; rows * cols * 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::parse(path.display(), format!("truncated matrix data: {e}")))?;
    let vals: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array2::from_shape_vec((rows, cols), vals).map_err(|e| Error::Dimension(e.to_string()))
}
