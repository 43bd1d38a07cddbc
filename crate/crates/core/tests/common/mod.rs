#![allow(dead_code)]

use ndarray::Array2;
use num_complex::Complex64;

use flexsched_core::grid::{Bases, Branch, Bus, BusType, Network, Storage};
use flexsched_core::series::ScenarioSeries;

pub fn bus(id: usize, slack: bool) -> Bus {
    Bus {
        id,
        bus_type: if slack { BusType::Slack } else { BusType::Pq },
        v_lb: 0.95,
        v_ub: 1.05,
    }
}

pub fn line(from: usize, to: usize) -> Branch {
    Branch {
        from_bus: from,
        to_bus: to,
        y: Complex64::new(1.0, 0.0) / Complex64::new(0.01, 0.05),
        i_eff_max: 270.0,
        s_rated: None,
    }
}

pub fn storage(bus: usize, e_max: f64, p_max: f64, mu_sd: f64, e_init: f64) -> Storage {
    Storage {
        bus,
        e_max,
        p_max,
        mu_sd,
        soc_frac_max: 0.8,
        e_init,
    }
}

pub const BASES: Bases = Bases {
    v_base: 400.0,
    s_base: 100e3,
};

/// Slack, one PQ bus, one line.
pub fn two_bus(storages: Vec<Storage>) -> Network {
    Network::new(vec![bus(0, true), bus(1, false)], vec![line(0, 1)], storages, BASES).unwrap()
}

/// Slack → 1 → 2 → 3 chain.
pub fn chain(storages: Vec<Storage>) -> Network {
    let buses = (0..4).map(|i| bus(i, i == 0)).collect();
    let branches = (0..3).map(|i| line(i, i + 1)).collect();
    Network::new(buses, branches, storages, BASES).unwrap()
}

/// Series with p.u. active injections `p[t][bus]` and no reactive power.
pub fn series(dt: f64, p: &[Vec<f64>]) -> ScenarioSeries {
    let t = p.len();
    let n = p[0].len();
    let p_inj = Array2::from_shape_fn((t, n), |(i, j)| p[i][j]);
    ScenarioSeries::new(dt, p_inj, Array2::zeros((t, n)), Array2::zeros((t, n))).unwrap()
}
