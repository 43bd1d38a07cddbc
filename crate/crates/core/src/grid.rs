//! Network description, validation and per-unit conversion.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusType {
    Slack,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub bus_type: BusType,
    pub v_lb: f64,
    pub v_ub: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    /// Series admittance in p.u., stored as `[g, b]`.
    #[serde(with = "complex_pair")]
    pub y: Complex64,
    /// Amperes.
    pub i_eff_max: f64,
    /// VA; present only on the transformer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_rated: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Storage {
    pub bus: usize,
    /// kWh
    pub e_max: f64,
    /// kW
    pub p_max: f64,
    /// per hour
    pub mu_sd: f64,
    #[serde(default = "default_soc_frac")]
    pub soc_frac_max: f64,
    /// kWh
    pub e_init: f64,
}

fn default_soc_frac() -> f64 {
    0.8
}

impl Storage {
    /// Usable energy ceiling in kWh.
    pub fn e_cap(&self) -> f64 {
        self.soc_frac_max * self.e_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bases {
    /// V
    pub v_base: f64,
    /// VA
    pub s_base: f64,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    storages: Vec<Storage>,
    bases: Bases,
}

/// Validated network. Bus `i` has id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    /// Index into `branches` of the slack-side transformer, if any.
    pub transformer: Option<usize>,
    pub storages: Vec<Storage>,
    pub slack_bus: usize,
    pub v_base: f64,
    pub s_base: f64,
}

impl Network {
    pub fn new(
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        storages: Vec<Storage>,
        bases: Bases,
    ) -> Result<Self> {
        let slacks: Vec<usize> = buses
            .iter()
            .filter(|b| b.bus_type == BusType::Slack)
            .map(|b| b.id)
            .collect();
        if slacks.len() != 1 {
            return Err(Error::Validation(format!(
                "exactly one slack bus required, found {}",
                slacks.len()
            )));
        }
        let transformers: Vec<usize> = branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.s_rated.is_some())
            .map(|(k, _)| k)
            .collect();
        if transformers.len() > 1 {
            return Err(Error::Validation(format!(
                "at most one branch may carry s_rated, found {}",
                transformers.len()
            )));
        }
        let net = Network {
            buses,
            branches,
            transformer: transformers.first().copied(),
            storages,
            slack_bus: slacks[0],
            v_base: bases.v_base,
            s_base: bases.s_base,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let v = |msg: String| Err(Error::Validation(msg));
        if !(self.v_base > 0.0) || !(self.s_base > 0.0) {
            return v(format!("bases must be positive (v_base={}, s_base={})", self.v_base, self.s_base));
        }
        if self.buses.is_empty() {
            return v("network has no buses".into());
        }
        for (k, b) in self.buses.iter().enumerate() {
            if b.id != k {
                return v(format!("bus ids must be 0..n in order; position {k} has id {}", b.id));
            }
            if !(b.v_lb < b.v_ub) || !b.v_lb.is_finite() || !b.v_ub.is_finite() {
                return v(format!("bus {k}: v_lb < v_ub violated ({} vs {})", b.v_lb, b.v_ub));
            }
        }
        let n = self.buses.len();
        for (k, br) in self.branches.iter().enumerate() {
            if br.from_bus >= n || br.to_bus >= n {
                return v(format!("branch {k}: bus index out of range"));
            }
            if br.from_bus == br.to_bus {
                return v(format!("branch {k}: from_bus == to_bus ({})", br.from_bus));
            }
            if !(br.y.re.is_finite() && br.y.im.is_finite()) || br.y.norm() == 0.0 {
                return v(format!("branch {k}: admittance must be finite and nonzero"));
            }
            if !(br.i_eff_max > 0.0) {
                return v(format!("branch {k}: i_eff_max must be > 0"));
            }
            if let Some(s) = br.s_rated {
                if !(s > 0.0) {
                    return v(format!("branch {k}: s_rated must be > 0"));
                }
                if br.from_bus != self.slack_bus && br.to_bus != self.slack_bus {
                    return v(format!("branch {k}: transformer must touch the slack bus"));
                }
            }
        }
        if !self.is_connected() {
            return v("branch graph is not connected".into());
        }
        for (k, s) in self.storages.iter().enumerate() {
            if s.bus >= n {
                return v(format!("storage {k}: bus {} out of range", s.bus));
            }
            if s.bus == self.slack_bus {
                return v(format!("storage {k}: may not sit on the slack bus"));
            }
            if !(s.p_max > 0.0) {
                return v(format!("storage {k}: p_max must be > 0"));
            }
            if !(s.e_max > 0.0) || !(s.soc_frac_max > 0.0 && s.soc_frac_max <= 1.0) {
                return v(format!("storage {k}: e_max > 0 and 0 < soc_frac_max <= 1 required"));
            }
            if !(s.mu_sd >= 0.0) || !s.mu_sd.is_finite() {
                return v(format!("storage {k}: mu_sd must be >= 0"));
            }
            if !(s.e_init >= 0.0 && s.e_init <= s.e_cap()) {
                return v(format!(
                    "storage {k}: 0 <= e_init <= soc_frac_max*e_max violated (e_init={}, cap={})",
                    s.e_init,
                    s.e_cap()
                ));
            }
        }
        Ok(())
    }

    /// Checks `0 <= mu_sd * dt < 1` for every storage.
    pub fn check_time_step(&self, dt_hours: f64) -> Result<()> {
        if !(dt_hours > 0.0) {
            return Err(Error::Validation(format!("dt_hours must be > 0, got {dt_hours}")));
        }
        for (k, s) in self.storages.iter().enumerate() {
            if s.mu_sd * dt_hours >= 1.0 {
                return Err(Error::Validation(format!("storage {k}: mu_sd*dt must be < 1")));
            }
        }
        Ok(())
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_storages(&self) -> usize {
        self.storages.len()
    }

    pub fn bases(&self) -> Bases {
        Bases {
            v_base: self.v_base,
            s_base: self.s_base,
        }
    }

    /// Buses other than the slack, in id order.
    pub fn non_slack_buses(&self) -> Vec<usize> {
        (0..self.n_buses()).filter(|&i| i != self.slack_bus).collect()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n_buses();
        let mut adj = vec![Vec::new(); n];
        for b in &self.branches {
            adj[b.from_bus].push(b.to_bus);
            adj[b.to_bus].push(b.from_bus);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    pub fn is_radial(&self) -> bool {
        self.is_connected() && self.branches.len() + 1 == self.n_buses()
    }

    pub fn transformer(&self) -> Option<&Branch> {
        self.transformer.map(|k| &self.branches[k])
    }

    /// Voltage-difference bound of branch `k` in p.u. For the transformer the
    /// rating-derived bound is applied as well and the tighter one wins.
    pub fn branch_bound(&self, k: usize) -> f64 {
        let br = &self.branches[k];
        let y_abs = br.y.norm();
        let mut bound = branch_voltage_bound(br.i_eff_max, self.v_base, y_abs, self.s_base)
            .expect("validated bases");
        if let Some(s) = br.s_rated {
            bound = bound.min(s / self.s_base / y_abs);
        }
        bound
    }

    /// Current limit of branch `k` in p.u. (the bound times `|y|`).
    pub fn branch_current_limit(&self, k: usize) -> f64 {
        self.branch_bound(k) * self.branches[k].y.norm()
    }

    /// Loading in percent for a p.u. branch current. The transformer is
    /// rated by apparent power at nominal voltage, cables by ampacity.
    pub fn loading_percent(&self, k: usize, i_pu: f64) -> f64 {
        let br = &self.branches[k];
        match br.s_rated {
            Some(s) => 100.0 * i_pu * self.s_base / s,
            None => 100.0 * i_pu / current_to_pu(br.i_eff_max, self.v_base, self.s_base),
        }
    }

    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw * 1e3 / self.s_base
    }

    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * self.s_base / 1e3
    }
}

/// `value / base`.
pub fn to_per_unit(value: f64, base: f64) -> Result<f64> {
    if !(base > 0.0) {
        return Err(Error::Validation(format!("per-unit base must be > 0, got {base}")));
    }
    Ok(value / base)
}

/// Three-phase line current in A to p.u. on `(v_base, s_base)`.
pub fn current_to_pu(i_amp: f64, v_base: f64, s_base: f64) -> f64 {
    i_amp * 3f64.sqrt() * v_base / s_base
}

/// Bound on `|V_i - V_j|` in p.u. that keeps the branch current below
/// `i_eff_max`: `I·√3·V_b / (|y|·S_b)`.
pub fn branch_voltage_bound(i_eff_max: f64, v_base: f64, y_abs: f64, s_base: f64) -> Result<f64> {
    if !(y_abs > 0.0) {
        return Err(Error::Validation(format!("|y| must be > 0, got {y_abs}")));
    }
    let i_pu = to_per_unit(i_eff_max * 3f64.sqrt() * v_base, s_base)?;
    Ok(i_pu / y_abs)
}

pub fn load_network(path: &Path) -> Result<Network> {
    let text = fs::read_to_string(path)?;
    parse_network(&text).map_err(|e| match e {
        Error::Parse { msg, .. } => Error::parse(path.display(), msg),
        other => other,
    })
}

pub fn parse_network(text: &str) -> Result<Network> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: NetworkFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        Error::parse(
            "<network>",
            format!("line {} column {}, field `{}`: {}", inner.line(), inner.column(), e.path(), inner),
        )
    })?;
    Network::new(file.buses, file.branches, file.storages, file.bases)
}

pub fn network_to_json(net: &Network) -> String {
    let file = NetworkFile {
        buses: net.buses.clone(),
        branches: net.branches.clone(),
        storages: net.storages.clone(),
        bases: net.bases(),
    };
    serde_json::to_string_pretty(&file).expect("network serializes")
}

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, network_to_json(net))?;
    Ok(())
}

mod complex_pair {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(y: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        [y.re, y.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(Complex64::new(re, im))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TWO_BUS: &str = r#"{
        "buses": [
            {"id": 0, "bus_type": "slack", "v_lb": 0.95, "v_ub": 1.05},
            {"id": 1, "bus_type": "pq", "v_lb": 0.95, "v_ub": 1.05}
        ],
        "branches": [{"from_bus": 0, "to_bus": 1, "y": [3.8461538461538463, -19.230769230769234], "i_eff_max": 200.0}],
        "storages": [],
        "bases": {"v_base": 400.0, "s_base": 400000.0}
    }"#;

    #[test]
    fn two_bus_file_loads() {
        let net = parse_network(TWO_BUS).unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.branches.len(), 1);
        assert_eq!(net.slack_bus, 0);
        assert!(net.is_radial());
    }

    #[test]
    fn two_slacks_rejected() {
        let text = TWO_BUS.replace("\"pq\"", "\"slack\"");
        let err = parse_network(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("slack")), "{err}");
    }

    #[test]
    fn parse_error_names_field() {
        let text = TWO_BUS.replace("\"i_eff_max\": 200.0", "\"i_eff_max\": \"x\"");
        let err = parse_network(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("i_eff_max") && msg.contains("line"), "{msg}");
    }

    #[test]
    fn disconnected_rejected() {
        let text = TWO_BUS.replace(
            r#"{"id": 1, "bus_type": "pq", "v_lb": 0.95, "v_ub": 1.05}"#,
            r#"{"id": 1, "bus_type": "pq", "v_lb": 0.95, "v_ub": 1.05},
               {"id": 2, "bus_type": "pq", "v_lb": 0.95, "v_ub": 1.05}"#,
        );
        assert!(parse_network(&text).is_err());
    }

    #[test]
    fn per_unit_examples() {
        assert_eq!(to_per_unit(400e3, 400e3).unwrap(), 1.0);
        assert!(to_per_unit(1.0, 0.0).is_err());
        let b = branch_voltage_bound(100.0, 400.0, 10.0, 400e3).unwrap();
        let hand = 100.0 * 3f64.sqrt() * 400.0 / (10.0 * 400_000.0);
        assert!((b - hand).abs() < 1e-15);
        assert!((b - 0.01732).abs() < 1e-5);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut net = parse_network(TWO_BUS).unwrap();
        net.branches[0].y = Complex64::new(0.1 + 0.2, -1.0 / 3.0);
        net.storages.push(Storage {
            bus: 1,
            e_max: 13.5,
            p_max: 4.6,
            mu_sd: 1e-4 / 3.0,
            soc_frac_max: 0.8,
            e_init: 0.7,
        });
        let back = parse_network(&network_to_json(&net)).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.branches[0].y.im.to_bits(), net.branches[0].y.im.to_bits());
    }
}
