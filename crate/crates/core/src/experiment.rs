//! Desk-scale study: four simulated weeks (one per season) run with the
//! baseline, MPC and the trained NPC, compared on held-out days.

use std::time::Instant;

use crate::bench::{generate, BenchSpec};
use crate::calendar;
use crate::dataset::{record, ImitationDataset, Split};
use crate::error::{Error, Result};
use crate::eval::{compare, ComparisonReport};
use crate::grid::Network;
use crate::linearizer::{linearize, LinearModel};
use crate::mpc::{run_rolling_horizon, Baseline, Controller, Mpc, MpcConfig, RunOptions, SimulationLog};
use crate::npc::{train, MlpModel, Npc, TrainConfig, TrainHistory};
use crate::series::ScenarioSeries;

/// First day of year of each desk week: mid January, mid April, the
/// week around the 11th of June, mid October.
pub const DESK_WEEK_STARTS: [usize; 4] = [14, 105, 158, 288];

#[derive(Debug, Clone)]
pub struct DeskConfig {
    pub seed: u64,
    pub week_starts: Vec<usize>,
    pub days_per_week: usize,
    pub horizon: usize,
    pub mpc: MpcConfig,
    pub train: TrainConfig,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            week_starts: DESK_WEEK_STARTS.to_vec(),
            days_per_week: 7,
            horizon: 96,
            mpc: MpcConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl DeskConfig {
    /// `(first step, number of steps)` per simulated week.
    pub fn segments(&self, dt_hours: f64) -> Vec<(usize, usize)> {
        let spd = calendar::steps_per_day(dt_hours);
        self.week_starts
            .iter()
            .map(|&d| (d * spd, self.days_per_week * spd))
            .collect()
    }
}

/// Runs a controller over several disjoint spans and concatenates the
/// logs. Storage energy restarts from `e_init` in every span.
pub fn run_segments(
    net: &Network,
    lin: &LinearModel,
    series: &ScenarioSeries,
    segments: &[(usize, usize)],
    horizon: usize,
    controller: &mut dyn Controller,
    opts: RunOptions,
) -> Result<SimulationLog> {
    let mut all = SimulationLog {
        controller: controller.name().to_string(),
        records: Vec::new(),
    };
    for &(start, n) in segments {
        let log = run_rolling_horizon(net, lin, series, start, n, horizon, controller, opts)?;
        all.records.extend(log.records);
    }
    Ok(all)
}

pub struct DeskOutcome {
    pub net: Network,
    pub series: ScenarioSeries,
    pub baseline: SimulationLog,
    pub mpc: SimulationLog,
    pub npc: SimulationLog,
    pub dataset: ImitationDataset,
    pub model: MlpModel,
    pub history: TrainHistory,
    /// Statistics over the held-out test days.
    pub report: ComparisonReport,
    /// Statistics over every simulated step.
    pub report_all: ComparisonReport,
    /// Wall-clock seconds of the baseline and MPC simulations.
    pub simulate_seconds: f64,
    pub train_seconds: f64,
}

/// Generates the benchmark and runs every stage in order.
pub fn run_desk(cfg: &DeskConfig) -> Result<DeskOutcome> {
    let spec = BenchSpec {
        seed: cfg.seed,
        ..BenchSpec::default()
    };
    let (net, series) = generate(&spec)?;
    run_desk_on(cfg, net, series)
}

pub fn run_desk_on(cfg: &DeskConfig, net: Network, series: ScenarioSeries) -> Result<DeskOutcome> {
    let lin = linearize(&net)?;
    let segs = cfg.segments(series.dt_hours);
    let clock = Instant::now();
    let baseline = run_segments(&net, &lin, &series, &segs, cfg.horizon, &mut Baseline::default(), RunOptions::default())?;
    let mut mpc_ctl = Mpc::new(cfg.mpc.clone());
    let mpc = run_segments(
        &net,
        &lin,
        &series,
        &segs,
        cfg.horizon,
        &mut mpc_ctl,
        RunOptions { record_plans: true },
    )?;
    let simulate_seconds = clock.elapsed().as_secs_f64();
    let mut dataset = record(&net, &series, std::slice::from_ref(&mpc), cfg.horizon)?;
    dataset.split_by_day_holdout()?;
    dataset.fit_scalers()?;
    let train_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let clock = Instant::now();
    let (model, history) = train(&dataset, &train_cfg)?;
    let train_seconds = clock.elapsed().as_secs_f64();
    let mut npc_ctl = Npc::new(model.clone(), &net)?;
    let npc = run_segments(&net, &lin, &series, &segs, cfg.horizon, &mut npc_ctl, RunOptions::default())?;
    let test_steps: Vec<usize> = dataset.indices(Split::Test).iter().map(|&i| dataset.steps[i]).collect();
    if test_steps.is_empty() {
        return Err(Error::Validation("no test days in the desk run".into()));
    }
    let report = compare(&net, &baseline, &mpc, &npc, Some(&test_steps))?;
    let report_all = compare(&net, &baseline, &mpc, &npc, None)?;
    Ok(DeskOutcome {
        net,
        series,
        baseline,
        mpc,
        npc,
        dataset,
        model,
        history,
        report,
        report_all,
        simulate_seconds,
        train_seconds,
    })
}
