//! Per-bus injection time series.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::grid::Network;

pub const DEFAULT_DT_HOURS: f64 = 0.25;
/// Power factor used when no reactive series is supplied.
pub const DEFAULT_POWER_FACTOR: f64 = 0.95;

/// Injections in p.u. with shape `(n_steps, n_buses)`; generation positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSeries {
    pub dt_hours: f64,
    pub p_inj: Array2<f64>,
    pub q_inj: Array2<f64>,
    /// Generation share of `p_inj` (PV), zero when unknown.
    pub p_gen: Array2<f64>,
}

/// A contiguous slice of a series used as an exact forecast.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub start: usize,
    pub dt_hours: f64,
    pub p_inj: ArrayView2<'a, f64>,
    pub q_inj: ArrayView2<'a, f64>,
    pub p_gen: ArrayView2<'a, f64>,
}

impl Window<'_> {
    pub fn len(&self) -> usize {
        self.p_inj.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ScenarioSeries {
    pub fn new(dt_hours: f64, p_inj: Array2<f64>, q_inj: Array2<f64>, p_gen: Array2<f64>) -> Result<Self> {
        if !(dt_hours > 0.0) {
            return Err(Error::Validation(format!("dt_hours must be > 0, got {dt_hours}")));
        }
        if p_inj.dim() != q_inj.dim() || p_inj.dim() != p_gen.dim() {
            return Err(Error::Dimension(format!(
                "series shapes differ: p {:?}, q {:?}, gen {:?}",
                p_inj.dim(),
                q_inj.dim(),
                p_gen.dim()
            )));
        }
        if p_inj.iter().chain(q_inj.iter()).chain(p_gen.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("series contains non-finite values".into()));
        }
        Ok(Self {
            dt_hours,
            p_inj,
            q_inj,
            p_gen,
        })
    }

    /// Reactive injection at the default power factor.
    pub fn default_q(p_inj: &Array2<f64>) -> Array2<f64> {
        let tan_phi = DEFAULT_POWER_FACTOR.acos().tan();
        p_inj.mapv(|p| p * tan_phi)
    }

    pub fn n_steps(&self) -> usize {
        self.p_inj.nrows()
    }

    pub fn n_buses(&self) -> usize {
        self.p_inj.ncols()
    }

    pub fn window(&self, start: usize, len: usize) -> Result<Window<'_>> {
        if start + len > self.n_steps() {
            return Err(Error::Validation(format!(
                "window [{start}, {}) exceeds series length {}",
                start + len,
                self.n_steps()
            )));
        }
        let r = s![start..start + len, ..];
        Ok(Window {
            start,
            dt_hours: self.dt_hours,
            p_inj: self.p_inj.slice(r),
            q_inj: self.q_inj.slice(r),
            p_gen: self.p_gen.slice(r),
        })
    }

    /// Rows `[start, start+len)` as an owned series.
    pub fn slice(&self, start: usize, len: usize) -> Result<ScenarioSeries> {
        let w = self.window(start, len)?;
        Ok(ScenarioSeries {
            dt_hours: self.dt_hours,
            p_inj: w.p_inj.to_owned(),
            q_inj: w.q_inj.to_owned(),
            p_gen: w.p_gen.to_owned(),
        })
    }
}

/// Loads active injections in kW; reactive power follows the default power factor.
pub fn load_series(path: &Path, net: &Network) -> Result<ScenarioSeries> {
    load_series_files(path, None, None, net, DEFAULT_DT_HOURS)
}

/// Loads the active-power CSV plus optional kvar and PV-generation CSVs
/// with identical layout.
pub fn load_series_files(
    p_path: &Path,
    q_path: Option<&Path>,
    gen_path: Option<&Path>,
    net: &Network,
    dt_hours: f64,
) -> Result<ScenarioSeries> {
    let p = read_kw_csv(p_path, net)?;
    let q = match q_path {
        Some(qp) => read_kw_csv(qp, net)?,
        None => ScenarioSeries::default_q(&p),
    };
    let g = match gen_path {
        Some(gp) => read_kw_csv(gp, net)?,
        None => Array2::zeros(p.dim()),
    };
    if q.dim() != p.dim() || g.dim() != p.dim() {
        return Err(Error::Dimension(format!(
            "parallel series files differ in length: p {:?}, q {:?}, gen {:?}",
            p.dim(),
            q.dim(),
            g.dim()
        )));
    }
    ScenarioSeries::new(dt_hours, p, q, g)
}

/// Reads a kW (or kvar) CSV with bus-id header into p.u.
pub fn read_kw_csv(path: &Path, net: &Network) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::parse(path.display(), e))?;
    let n = net.n_buses();
    let header = rdr.headers().map_err(|e| Error::parse(path.display(), e))?.clone();
    if header.len() != n {
        return Err(Error::Dimension(format!(
            "{}: {} columns for {} buses",
            path.display(),
            header.len(),
            n
        )));
    }
    let mut col_bus = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for h in header.iter() {
        let id: usize = h
            .trim()
            .parse()
            .map_err(|_| Error::parse(path.display(), format!("header `{h}` is not a bus id")))?;
        if id >= n || seen[id] {
            return Err(Error::Dimension(format!("{}: header bus id {id} unknown or repeated", path.display())));
        }
        seen[id] = true;
        col_bus.push(id);
    }
    let scale = 1e3 / net.s_base;
    let mut data = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path.display(), e))?;
        if rec.len() != n {
            return Err(Error::Dimension(format!("{}: row {} has {} cells", path.display(), r + 2, rec.len())));
        }
        let mut row = vec![0.0; n];
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::parse(path.display(), format!("row {}, column {}: `{cell}` is not numeric", r + 2, c + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(path.display(), format!("row {}, column {}: non-finite", r + 2, c + 1)));
            }
            row[col_bus[c]] = v * scale;
        }
        data.extend(row);
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, n), data).expect("row lengths checked"))
}

/// Writes a p.u. array as kW CSV with bus-id header.
pub fn write_kw_csv(path: &Path, values: &Array2<f64>, net: &Network) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..values.ncols()).map(|i| i.to_string()).collect();
    writeln!(f, "{}", header.join(","))?;
    let scale = net.s_base / 1e3;
    let mut line = String::new();
    for row in values.rows() {
        line.clear();
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            line.push_str(&(v * scale).to_string());
        }
        writeln!(f, "{line}")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_network;

    fn net3() -> Network {
        parse_network(
            r#"{"buses": [
                {"id": 0, "bus_type": "slack", "v_lb": 0.95, "v_ub": 1.05},
                {"id": 1, "bus_type": "pq", "v_lb": 0.95, "v_ub": 1.05},
                {"id": 2, "bus_type": "pq", "v_lb": 0.95, "v_ub": 1.05}],
              "branches": [{"from_bus": 0, "to_bus": 1, "y": [1.0, -5.0], "i_eff_max": 100.0},
                           {"from_bus": 1, "to_bus": 2, "y": [1.0, -5.0], "i_eff_max": 100.0}],
              "storages": [],
              "bases": {"v_base": 400.0, "s_base": 100000.0}}"#,
        )
        .unwrap()
    }

    #[test]
    fn zeros_csv_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        let mut text = String::from("0,1,2\n");
        for _ in 0..96 {
            text.push_str("0,0,0\n");
        }
        std::fs::write(&p, text).unwrap();
        let s = load_series(&p, &net3()).unwrap();
        assert_eq!(s.n_steps(), 96);
        assert!(s.p_inj.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn columns_are_permuted_and_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        std::fs::write(&p, "2,0,1\n-10,0,5\n").unwrap();
        let s = load_series(&p, &net3()).unwrap();
        assert_eq!(s.p_inj[[0, 2]], -0.1);
        assert_eq!(s.p_inj[[0, 1]], 0.05);
        let tan = 0.95f64.acos().tan();
        assert!((s.q_inj[[0, 2]] + 0.1 * tan).abs() < 1e-15);
    }

    #[test]
    fn missing_column_and_bad_cell_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        std::fs::write(&p, "0,1\n0,0\n").unwrap();
        assert!(matches!(load_series(&p, &net3()), Err(Error::Dimension(_))));
        std::fs::write(&p, "0,1,2\n0,abc,0\n").unwrap();
        let err = load_series(&p, &net3()).unwrap_err();
        assert!(err.to_string().contains("abc"), "{err}");
    }
}
