use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use flexsched_core::bench::{baseline_stats, generate, write_bench, BenchSpec};
use flexsched_core::dataset::{record, ImitationDataset, Split};
use flexsched_core::dopf::DopfConfig;
use flexsched_core::eval::{compare, export_plots};
use flexsched_core::experiment::{run_desk_on, run_segments, DeskConfig, DESK_WEEK_STARTS};
use flexsched_core::grid::{load_network, Network};
use flexsched_core::hyperopt::{run_bo, write_history_csv, SearchSpace};
use flexsched_core::linearizer::linearize;
use flexsched_core::mpc::{Baseline, Controller, Mpc, MpcConfig, RunOptions, SimulationLog};
use flexsched_core::npc::{train, MlpModel, Npc, TrainConfig, TrainHistory};
use flexsched_core::series::{load_series_files, ScenarioSeries};
use flexsched_core::{Error, Result};

#[derive(Parser)]
#[command(name = "flexsched", version, about = "Battery scheduling with MPC and a neural imitation controller")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthetic benchmark grid and time series.
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
    },
    /// Rolling-horizon simulation with the MPC or the uncontrolled baseline.
    Mpc {
        #[command(subcommand)]
        cmd: MpcCmd,
    },
    /// Imitation dataset from an MPC log and its plans.
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
    },
    /// Train or run the neural controller.
    Npc {
        #[command(subcommand)]
        cmd: NpcCmd,
    },
    /// Bayesian hyperparameter search.
    Hyperopt {
        #[command(subcommand)]
        cmd: HyperoptCmd,
    },
    /// Comparison statistics of baseline, MPC and NPC logs.
    Compare(CompareArgs),
    /// Figures (SVG + CSV) from the three logs.
    Plots(PlotArgs),
    /// Every stage at desk scale (four weeks, one per season).
    Desk(DeskArgs),
}

#[derive(Subcommand)]
enum BenchCmd {
    Generate(GenerateArgs),
}

#[derive(Subcommand)]
enum MpcCmd {
    Run(RunArgs),
}

#[derive(Subcommand)]
enum DatasetCmd {
    Build(DatasetArgs),
}

#[derive(Subcommand)]
enum NpcCmd {
    Train(TrainArgs),
    Eval(EvalArgs),
}

#[derive(Subcommand)]
enum HyperoptCmd {
    Run(HyperoptArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 365)]
    days: usize,
    /// Mean PV peak per household in kW.
    #[arg(long)]
    pv_peak_kw: Option<f64>,
    #[arg(long, default_value_t = 0.25)]
    dt_hours: f64,
    /// Accept a series whose baseline never overloads the transformer.
    #[arg(long)]
    allow_no_overload: bool,
}

#[derive(Args, Clone)]
struct GridArgs {
    #[arg(long)]
    grid: PathBuf,
    /// Active power CSV in kW; q_kvar.csv and pv_kw.csv next to it are used when present.
    #[arg(long)]
    series: PathBuf,
    #[arg(long)]
    q_series: Option<PathBuf>,
    #[arg(long)]
    gen_series: Option<PathBuf>,
    #[arg(long, default_value_t = 24.0)]
    horizon_hours: f64,
    #[arg(long, default_value_t = 0.25)]
    dt_hours: f64,
    /// Overrides the lower voltage bound of every non-slack bus.
    #[arg(long)]
    vmin: Option<f64>,
    #[arg(long)]
    vmax: Option<f64>,
}

#[derive(Args, Clone)]
struct SpanArgs {
    /// Run the four desk weeks instead of --start/--steps.
    #[arg(long, conflicts_with_all = ["start", "steps"])]
    desk: bool,
    #[arg(long)]
    start: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerKind {
    Mpc,
    Baseline,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    span: SpanArgs,
    #[arg(long, value_enum, default_value = "mpc")]
    controller: ControllerKind,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitMode {
    /// Days 22–28 of each month are test.
    Weeks,
    /// Every fourth recorded day is test.
    Days,
}

#[derive(Args)]
struct DatasetArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    plans: PathBuf,
    #[arg(long, value_enum, default_value = "weeks")]
    split: SplitMode,
    /// Also write a CSV copy for inspection.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Comma-separated hidden widths, e.g. 256,256.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// JSON config written by `hyperopt run`; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    span: SpanArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HyperoptArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    budget: Option<usize>,
    /// Full-scale search ranges and 180 iterations.
    #[arg(long)]
    full_scale: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    mpc: PathBuf,
    #[arg(long)]
    npc: PathBuf,
    /// Restrict the statistics to the test rows of this dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    mpc: PathBuf,
    #[arg(long)]
    npc: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    dt_hours: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DeskArgs {
    /// Existing benchmark grid; generated from --seed when omitted.
    #[arg(long, requires = "series")]
    grid: Option<PathBuf>,
    #[arg(long)]
    series: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. }
        | Error::Validation(_)
        | Error::Dimension(_)
        | Error::Layout(_)
        | Error::Generation(_) => 2,
        Error::Singular(_)
        | Error::NonConvergence { .. }
        | Error::Solver { .. }
        | Error::Divergence { .. }
        | Error::Qp(_) => 3,
        Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Bench { cmd: BenchCmd::Generate(a) } => bench_generate(a),
        Cmd::Mpc { cmd: MpcCmd::Run(a) } => mpc_run(a),
        Cmd::Dataset { cmd: DatasetCmd::Build(a) } => dataset_build(a),
        Cmd::Npc { cmd: NpcCmd::Train(a) } => npc_train(a),
        Cmd::Npc { cmd: NpcCmd::Eval(a) } => npc_eval(a),
        Cmd::Hyperopt { cmd: HyperoptCmd::Run(a) } => hyperopt_run(a),
        Cmd::Compare(a) => compare_cmd(a),
        Cmd::Plots(a) => plots_cmd(a),
        Cmd::Desk(a) => desk_cmd(a),
    }
}

fn load_inputs(g: &GridArgs) -> Result<(Network, ScenarioSeries)> {
    let mut net = load_network(&g.grid)?;
    if g.vmin.is_some() || g.vmax.is_some() {
        let slack = net.slack_bus;
        for b in net.buses.iter_mut().filter(|b| b.id != slack) {
            if let Some(v) = g.vmin {
                b.v_lb = v;
            }
            if let Some(v) = g.vmax {
                b.v_ub = v;
            }
        }
        let bases = net.bases();
        net = Network::new(net.buses, net.branches, net.storages, bases)?;
    }
    let sibling = |name: &str| -> Option<PathBuf> {
        let p = g.series.parent()?.join(name);
        p.exists().then_some(p)
    };
    let q = g.q_series.clone().or_else(|| sibling("q_kvar.csv"));
    let gen = g.gen_series.clone().or_else(|| sibling("pv_kw.csv"));
    let series = load_series_files(&g.series, q.as_deref(), gen.as_deref(), &net, g.dt_hours)?;
    Ok((net, series))
}

fn horizon_steps(g: &GridArgs) -> Result<usize> {
    let t = g.horizon_hours / g.dt_hours;
    if !(t >= 1.0) || (t - t.round()).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "horizon {} h is not a positive multiple of dt {} h",
            g.horizon_hours, g.dt_hours
        )));
    }
    Ok(t.round() as usize)
}

fn segments(span: &SpanArgs, dt: f64, series_len: usize, horizon: usize) -> Result<Vec<(usize, usize)>> {
    if span.desk {
        return Ok(DeskConfig::default().segments(dt));
    }
    let start = span.start.unwrap_or(0);
    let steps = match span.steps {
        Some(n) => n,
        None => series_len
            .checked_sub(start + horizon)
            .ok_or_else(|| Error::Validation("series shorter than start + horizon".into()))?,
    };
    Ok(vec![(start, steps)])
}

fn mpc_config(g: &GridArgs, tol: f64) -> MpcConfig {
    let mut cfg = MpcConfig::default();
    cfg.dopf = DopfConfig {
        dt_hours: g.dt_hours,
        ..DopfConfig::default()
    }
    .with_horizon_hours(g.horizon_hours);
    cfg.qp.tol = tol;
    cfg
}

fn bench_generate(a: GenerateArgs) -> Result<()> {
    let mut spec = BenchSpec {
        seed: a.seed,
        days: a.days,
        dt_hours: a.dt_hours,
        require_overload: !a.allow_no_overload,
        ..BenchSpec::default()
    };
    if let Some(p) = a.pv_peak_kw {
        spec.pv_peak_kw = p;
    }
    let (net, series) = generate(&spec)?;
    let files = write_bench(&a.out, &net, &series)?;
    let st = baseline_stats(&net, &series)?;
    println!(
        "wrote {} buses, {} branches, {} storages, {} steps to {}",
        net.n_buses(),
        net.branches.len(),
        net.n_storages(),
        series.n_steps(),
        files.grid.parent().unwrap_or(Path::new(".")).display()
    );
    println!(
        "baseline: {} transformer overload steps (max {:.1} %), max line loading {:.1} %, voltage [{:.4}, {:.4}] p.u.",
        st.trafo_overload_steps, st.max_trafo_loading, st.max_line_loading, st.v_min, st.v_max
    );
    Ok(())
}

fn mpc_run(a: RunArgs) -> Result<()> {
    let (net, series) = load_inputs(&a.grid)?;
    let horizon = horizon_steps(&a.grid)?;
    let lin = linearize(&net)?;
    let segs = segments(&a.span, series.dt_hours, series.n_steps(), horizon)?;
    fs::create_dir_all(&a.out)?;
    let (mut ctl, opts): (Box<dyn Controller>, RunOptions) = match a.controller {
        ControllerKind::Mpc => (
            Box::new(Mpc::new(mpc_config(&a.grid, a.tol))),
            RunOptions { record_plans: true },
        ),
        ControllerKind::Baseline => (Box::new(Baseline::default()), RunOptions::default()),
    };
    let log = run_segments(&net, &lin, &series, &segs, horizon, ctl.as_mut(), opts)?;
    let name = ctl.name().to_string();
    log.write_csv(&a.out.join(format!("{name}_log.csv")))?;
    if opts.record_plans {
        log.write_plans_csv(&a.out.join(format!("{name}_plans.csv")))?;
    }
    let overloads = log.records.iter().filter(|r| r.trafo_loading > 100.0).count();
    println!("{name}: {} steps, {overloads} transformer overload steps", log.records.len());
    Ok(())
}

fn dataset_build(a: DatasetArgs) -> Result<()> {
    let (net, series) = load_inputs(&a.grid)?;
    let horizon = horizon_steps(&a.grid)?;
    let mut log = SimulationLog::read_csv(&a.log)?;
    log.attach_plans_csv(&a.plans)?;
    let mut ds = record(&net, &series, &[log], horizon)?;
    match a.split {
        SplitMode::Weeks => ds.split_by_weeks()?,
        SplitMode::Days => ds.split_by_day_holdout()?,
    }
    ds.fit_scalers()?;
    if let Some(dir) = a.out.parent() {
        fs::create_dir_all(dir)?;
    }
    ds.write(&a.out)?;
    if let Some(c) = &a.csv {
        ds.write_csv(c)?;
    }
    println!(
        "{} samples, n_in {}, n_out {}, train fraction {:.4}",
        ds.len(),
        ds.layout.n_in(),
        ds.layout.n_out(),
        ds.train_fraction()
    );
    Ok(())
}

fn train_config(flags: &TrainFlags, seed: u64) -> Result<TrainConfig> {
    let mut cfg = match &flags.config {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.display().to_string(),
                msg: e.to_string(),
            })?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = seed;
    if let Some(v) = flags.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = &flags.hidden {
        cfg.hidden = v.clone();
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_history(h: &TrainHistory, path: &Path) -> Result<()> {
    let mut s = String::from("epoch,train_mse,test_mse\n");
    for (i, tr) in h.train_mse.iter().enumerate() {
        let te = h.test_mse.get(i).map(f64::to_string).unwrap_or_default();
        s.push_str(&format!("{i},{tr},{te}\n"));
    }
    fs::write(path, s)?;
    Ok(())
}

fn npc_train(a: TrainArgs) -> Result<()> {
    let ds = ImitationDataset::read(&a.dataset)?;
    let cfg = train_config(&a.flags, a.seed)?;
    let (model, hist) = train(&ds, &cfg)?;
    fs::create_dir_all(&a.out)?;
    model.save(&a.out.join("model.bin"))?;
    write_history(&hist, &a.out.join("train_history.csv"))?;
    println!(
        "trained {:?}: final train MSE {:.3e}, test MSE {}",
        model.net.widths,
        hist.train_mse.last().copied().unwrap_or(f64::NAN),
        hist.test_mse.last().map_or("n/a".to_string(), |v| format!("{v:.3e}"))
    );
    Ok(())
}

fn npc_eval(a: EvalArgs) -> Result<()> {
    let (net, series) = load_inputs(&a.grid)?;
    let model = MlpModel::load(&a.model)?;
    let horizon = model.layout.horizon;
    let lin = linearize(&net)?;
    let segs = segments(&a.span, series.dt_hours, series.n_steps(), horizon)?;
    let mut ctl = Npc::new(model, &net)?;
    let log = run_segments(&net, &lin, &series, &segs, horizon, &mut ctl, RunOptions::default())?;
    fs::create_dir_all(&a.out)?;
    log.write_csv(&a.out.join("npc_log.csv"))?;
    let overloads = log.records.iter().filter(|r| r.trafo_loading > 100.0).count();
    println!("npc: {} steps, {overloads} transformer overload steps", log.records.len());
    Ok(())
}

fn hyperopt_run(a: HyperoptArgs) -> Result<()> {
    let ds = ImitationDataset::read(&a.dataset)?;
    let (space, default_budget) = if a.full_scale {
        (SearchSpace::full_scale(), 180)
    } else {
        (SearchSpace::desk(), 30)
    };
    let budget = a.budget.unwrap_or(default_budget);
    let run = run_bo(&ds, &space, budget, a.seed)?;
    fs::create_dir_all(&a.out)?;
    write_history_csv(&run.history, space.layers.1, &a.out.join("bo_history.csv"))?;
    let json = serde_json::to_string_pretty(&run.best).expect("config serializes");
    fs::write(a.out.join("best_config.json"), json)?;
    println!("best validation MSE {:.4e} with {:?}", run.best_mse, run.best);
    Ok(())
}

fn test_steps(path: &Path) -> Result<Vec<usize>> {
    let ds = ImitationDataset::read(path)?;
    Ok(ds.indices(Split::Test).iter().map(|&i| ds.steps[i]).collect())
}

fn compare_cmd(a: CompareArgs) -> Result<()> {
    let net = load_network(&a.grid)?;
    let b = SimulationLog::read_csv(&a.baseline)?;
    let m = SimulationLog::read_csv(&a.mpc)?;
    let n = SimulationLog::read_csv(&a.npc)?;
    let keep = a.dataset.as_deref().map(test_steps).transpose()?;
    let report = compare(&net, &b, &m, &n, keep.as_deref())?;
    fs::create_dir_all(&a.out)?;
    report.write(&a.out.join("report.json"))?;
    let table = report.table();
    fs::write(a.out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn plots_cmd(a: PlotArgs) -> Result<()> {
    let net = load_network(&a.grid)?;
    let b = SimulationLog::read_csv(&a.baseline)?;
    let m = SimulationLog::read_csv(&a.mpc)?;
    let n = SimulationLog::read_csv(&a.npc)?;
    let files = export_plots(&net, &b, &m, &n, a.dt_hours, &a.out)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn desk_cmd(a: DeskArgs) -> Result<()> {
    let (net, series) = match (&a.grid, &a.series) {
        (Some(g), Some(s)) => load_inputs(&GridArgs {
            grid: g.clone(),
            series: s.clone(),
            q_series: None,
            gen_series: None,
            horizon_hours: 24.0,
            dt_hours: 0.25,
            vmin: None,
            vmax: None,
        })?,
        _ => generate(&BenchSpec {
            seed: a.seed,
            ..BenchSpec::default()
        })?,
    };
    let cfg = DeskConfig {
        seed: a.seed,
        week_starts: DESK_WEEK_STARTS.to_vec(),
        train: train_config(&a.flags, a.seed)?,
        ..DeskConfig::default()
    };
    let out = run_desk_on(&cfg, net, series)?;
    fs::create_dir_all(&a.out)?;
    write_bench(&a.out.join("bench"), &out.net, &out.series)?;
    out.baseline.write_csv(&a.out.join("baseline_log.csv"))?;
    out.mpc.write_csv(&a.out.join("mpc_log.csv"))?;
    out.mpc.write_plans_csv(&a.out.join("mpc_plans.csv"))?;
    out.npc.write_csv(&a.out.join("npc_log.csv"))?;
    out.dataset.write(&a.out.join("dataset.bin"))?;
    out.model.save(&a.out.join("model.bin"))?;
    write_history(&out.history, &a.out.join("train_history.csv"))?;
    out.report.write(&a.out.join("report.json"))?;
    out.report_all.write(&a.out.join("report_all_steps.json"))?;
    export_plots(&out.net, &out.baseline, &out.mpc, &out.npc, out.series.dt_hours, &a.out.join("plots"))?;
    let table = out.report.table();
    fs::write(a.out.join("report.txt"), &table)?;
    println!("held-out test days ({} steps):", out.report.steps);
    print!("{table}");
    Ok(())
}
