//! Synthetic 15-bus rural LV feeder with one year of household load, PV and
//! EV charging at 0.25 h resolution.
//!
//! Bus 0 is the MV connection (slack), bus 1 the LV busbar behind the
//! transformer, buses 2..=14 are households on three radial feeders.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal, Normal};

use crate::calendar::{self, DAYS_PER_YEAR};
use crate::error::{Error, Result};
use crate::grid::{save_network, Bases, Branch, Bus, BusType, Network, Storage};
use crate::linearizer::{solve_ac_from, Admittance};
use crate::series::{load_series_files, write_kw_csv, ScenarioSeries};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub seed: u64,
    pub n_households: usize,
    pub n_storages: usize,
    /// VA
    pub s_rated: f64,
    pub s_base: f64,
    pub v_base: f64,
    /// Mean PV peak per household in kWp.
    pub pv_peak_kw: f64,
    /// Share of households owning an EV.
    pub ev_share: f64,
    /// Daily probability that an EV charges.
    pub ev_daily_prob: f64,
    /// kW
    pub ev_power_kw: f64,
    /// Per-storage capacity in kWh.
    pub storage_e_max: f64,
    /// Per-storage power in kW.
    pub storage_p_max: f64,
    pub storage_mu_sd: f64,
    pub dt_hours: f64,
    pub days: usize,
    /// Fail when the baseline never overloads the transformer.
    pub require_overload: bool,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            n_households: 13,
            n_storages: 5,
            s_rated: 160e3,
            s_base: 100e3,
            v_base: 400.0,
            pv_peak_kw: 14.0,
            ev_share: 0.6,
            ev_daily_prob: 0.45,
            ev_power_kw: 11.0,
            storage_e_max: 45.0,
            storage_p_max: 15.0,
            storage_mu_sd: 5e-5,
            dt_hours: 0.25,
            days: DAYS_PER_YEAR,
            require_overload: true,
        }
    }
}

/// Feeder layout: households per feeder and segment lengths in metres.
const FEEDERS: [&[f64]; 3] = [&[60.0, 45.0, 40.0, 50.0, 35.0], &[55.0, 40.0, 45.0, 40.0], &[70.0, 35.0, 40.0, 45.0]];
/// NAYY 4x150 SE per km
const CABLE_R: f64 = 0.208;
const CABLE_X: f64 = 0.080;
const CABLE_I_MAX: f64 = 270.0;
const TRAFO_UK: f64 = 0.04;
const TRAFO_UR: f64 = 0.01;

pub fn build_network(spec: &BenchSpec) -> Result<Network> {
    let n_feeder_buses: usize = FEEDERS.iter().map(|f| f.len()).sum();
    if spec.n_households != n_feeder_buses {
        return Err(Error::Generation(format!(
            "feeder layout holds {n_feeder_buses} households, spec asks for {}",
            spec.n_households
        )));
    }
    let n = spec.n_households + 2;
    let buses: Vec<Bus> = (0..n)
        .map(|id| Bus {
            id,
            bus_type: if id == 0 { BusType::Slack } else { BusType::Pq },
            v_lb: 0.95,
            v_ub: 1.05,
        })
        .collect();
    let z_base = spec.v_base * spec.v_base / spec.s_base;
    let mut branches = Vec::with_capacity(n - 1);
    let ratio = spec.s_base / spec.s_rated;
    let x_t = (TRAFO_UK * TRAFO_UK - TRAFO_UR * TRAFO_UR).sqrt();
    branches.push(Branch {
        from_bus: 0,
        to_bus: 1,
        y: Complex64::new(1.0, 0.0) / Complex64::new(TRAFO_UR * ratio, x_t * ratio),
        i_eff_max: spec.s_rated / (3f64.sqrt() * spec.v_base),
        s_rated: Some(spec.s_rated),
    });
    let mut ends = Vec::new();
    let mut next = 2;
    for feeder in FEEDERS {
        let mut prev = 1;
        for &len in feeder {
            let km = len / 1e3;
            let z = Complex64::new(CABLE_R * km, CABLE_X * km) / z_base;
            branches.push(Branch {
                from_bus: prev,
                to_bus: next,
                y: Complex64::new(1.0, 0.0) / z,
                i_eff_max: CABLE_I_MAX,
                s_rated: None,
            });
            prev = next;
            next += 1;
        }
        ends.push(prev);
    }
    // storages at feeder ends first, then at mid-feeder households
    let mut sto_buses = ends.clone();
    sto_buses.extend([4, 9, 12, 3, 8, 11]);
    sto_buses.truncate(spec.n_storages);
    if sto_buses.len() < spec.n_storages {
        return Err(Error::Generation(format!("at most {} storages supported", sto_buses.len())));
    }
    sto_buses.sort_unstable();
    let cap = 0.8 * spec.storage_e_max;
    let storages = sto_buses
        .iter()
        .map(|&bus| Storage {
            bus,
            e_max: spec.storage_e_max,
            p_max: spec.storage_p_max,
            mu_sd: spec.storage_mu_sd,
            soc_frac_max: 0.8,
            e_init: 0.25 * cap,
        })
        .collect();
    Network::new(
        buses,
        branches,
        storages,
        Bases {
            v_base: spec.v_base,
            s_base: spec.s_base,
        },
    )
}

/// Relative seasonal position: 1 at midsummer, −1 at midwinter.
fn summerness(doy: usize) -> f64 {
    (TAU * (doy as f64 - 172.0) / 365.0).cos()
}

/// Household demand shape in kW for an average household.
fn household_kw(hour: f64, doy: usize) -> f64 {
    let weekend = calendar::weekday(doy) >= 5;
    let g = |mu: f64, sd: f64| (-((hour - mu) / sd).powi(2)).exp();
    let morning = if weekend { 0.45 * g(9.5, 1.5) } else { 0.5 * g(7.0, 0.9) };
    let shape = 0.22 + morning + 0.3 * g(12.5, 1.2) + 0.75 * g(19.5, 1.8);
    shape * (1.0 - 0.18 * summerness(doy))
}

/// Clear-sky PV output per kWp.
fn pv_clear(hour: f64, doy: usize) -> f64 {
    let s = summerness(doy);
    let day_len = 12.0 + 4.0 * s;
    let rise = 12.5 - day_len / 2.0;
    let x = (hour - rise) / day_len;
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    let seasonal = 0.62 + 0.38 * s;
    seasonal * (PI * x).sin().powf(1.4)
}

pub fn generate(spec: &BenchSpec) -> Result<(Network, ScenarioSeries)> {
    let net = build_network(spec)?;
    if !net.is_radial() {
        return Err(Error::Generation("generated feeder is not radial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let spd = calendar::steps_per_day(spec.dt_hours);
    let n_steps = spec.days * spd;
    let n = net.n_buses();
    let houses: Vec<usize> = (2..n).collect();

    let scale: Vec<f64> = houses.iter().map(|_| rng.random_range(0.7..1.4)).collect();
    let kwp: Vec<f64> = houses
        .iter()
        .map(|_| spec.pv_peak_kw * rng.random_range(0.8..1.2))
        .collect();
    let n_ev = (spec.ev_share * houses.len() as f64).round() as usize;
    let mut ev_owner = vec![false; houses.len()];
    let mut order: Vec<usize> = (0..houses.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for &k in order.iter().take(n_ev) {
        ev_owner[k] = true;
    }

    let noise = LogNormal::new(-0.5 * 0.2f64.powi(2), 0.2).expect("valid lognormal");
    let arrival = Normal::new(18.5, 1.5).expect("valid normal");
    let mut load = Array2::<f64>::zeros((n_steps, n));
    let mut pv = Array2::<f64>::zeros((n_steps, n));

    for day in 0..spec.days {
        let doy = day % DAYS_PER_YEAR;
        let s = summerness(doy);
        // sunnier days are more frequent in summer
        let mean_clear = 0.62 + 0.18 * s;
        let kappa = 4.0;
        let clear = Beta::new(mean_clear * kappa, (1.0 - mean_clear) * kappa)
            .expect("valid beta")
            .sample(&mut rng);
        let cloudiness = 1.0 - clear;
        for k in 0..spd {
            let step = day * spd + k;
            let hour = (k as f64 + 0.5) * spec.dt_hours;
            let cloud: f64 = 1.0 - cloudiness * rng.random::<f64>();
            let base_pv = pv_clear(hour, doy) * (0.25 + 0.75 * clear) * cloud;
            for (h, &bus) in houses.iter().enumerate() {
                load[[step, bus]] += scale[h] * household_kw(hour, doy) * noise.sample(&mut rng);
                let local: f64 = rng.random_range(0.95..1.05);
                pv[[step, bus]] = kwp[h] * base_pv * local;
            }
        }
        for (h, &bus) in houses.iter().enumerate() {
            if !ev_owner[h] || rng.random::<f64>() >= spec.ev_daily_prob {
                continue;
            }
            let t0: f64 = arrival.sample(&mut rng);
            let t0 = t0.clamp(15.0, 23.5);
            let energy: f64 = rng.random_range(6.0..20.0);
            let n_charge = (energy / (spec.ev_power_kw * spec.dt_hours)).ceil() as usize;
            let first = day * spd + (t0 / spec.dt_hours) as usize;
            for step in first..(first + n_charge).min(n_steps) {
                load[[step, bus]] += spec.ev_power_kw;
            }
        }
    }

    let to_pu = 1e3 / net.s_base;
    let p_gen = pv.mapv(|v| v * to_pu);
    let p_inj = (&pv - &load).mapv(|v| v * to_pu);
    let q_inj = ScenarioSeries::default_q(&p_inj);
    let series = ScenarioSeries::new(spec.dt_hours, p_inj, q_inj, p_gen)?;

    if spec.require_overload {
        let stats = baseline_stats(&net, &series)?;
        if stats.trafo_overload_steps == 0 {
            return Err(Error::Generation(format!(
                "baseline never overloads the transformer (max loading {:.1} %); raise pv_peak_kw",
                stats.max_trafo_loading
            )));
        }
    }
    Ok((net, series))
}

/// Summary of an uncontrolled AC scan of a series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineStats {
    pub trafo_overload_steps: usize,
    pub max_trafo_loading: f64,
    pub max_line_loading: f64,
    pub v_min: f64,
    pub v_max: f64,
}

/// Runs an AC power flow on every step without storage action.
pub fn baseline_stats(net: &Network, series: &ScenarioSeries) -> Result<BaselineStats> {
    let adm = Admittance::of(net);
    let nb = net.n_buses();
    let mut v0 = vec![1.0; nb];
    let mut th0 = vec![0.0; nb];
    let mut st = BaselineStats {
        trafo_overload_steps: 0,
        max_trafo_loading: 0.0,
        max_line_loading: 0.0,
        v_min: f64::INFINITY,
        v_max: f64::NEG_INFINITY,
    };
    for t in 0..series.n_steps() {
        let p = series.p_inj.row(t).to_vec();
        let q = series.q_inj.row(t).to_vec();
        let sol = solve_ac_from(net, &adm, &p, &q, &v0, &th0)?;
        for (k, &i) in sol.branch_i.iter().enumerate() {
            let l = net.loading_percent(k, i);
            if Some(k) == net.transformer {
                st.max_trafo_loading = st.max_trafo_loading.max(l);
                if l > 100.0 {
                    st.trafo_overload_steps += 1;
                }
            } else {
                st.max_line_loading = st.max_line_loading.max(l);
            }
        }
        for &v in &sol.v {
            st.v_min = st.v_min.min(v);
            st.v_max = st.v_max.max(v);
        }
        v0 = sol.v;
        th0 = sol.theta;
    }
    Ok(st)
}

/// File names used by `write_bench` / `load_bench`.
pub struct BenchFiles {
    pub grid: PathBuf,
    pub p: PathBuf,
    pub q: PathBuf,
    pub pv: PathBuf,
}

impl BenchFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            grid: dir.join("grid.json"),
            p: dir.join("p_kw.csv"),
            q: dir.join("q_kvar.csv"),
            pv: dir.join("pv_kw.csv"),
        }
    }
}

pub fn write_bench(dir: &Path, net: &Network, series: &ScenarioSeries) -> Result<BenchFiles> {
    fs::create_dir_all(dir)?;
    let files = BenchFiles::in_dir(dir);
    save_network(net, &files.grid)?;
    write_kw_csv(&files.p, &series.p_inj, net)?;
    write_kw_csv(&files.q, &series.q_inj, net)?;
    write_kw_csv(&files.pv, &series.p_gen, net)?;
    Ok(files)
}

pub fn load_bench(dir: &Path, dt_hours: f64) -> Result<(Network, ScenarioSeries)> {
    let files = BenchFiles::in_dir(dir);
    let net = crate::grid::load_network(&files.grid)?;
    let q = files.q.exists().then_some(files.q.as_path());
    let pv = files.pv.exists().then_some(files.pv.as_path());
    let series = load_series_files(&files.p, q, pv, &net, dt_hours)?;
    Ok((net, series))
}
