//! Feed-forward network that imitates the MPC schedule, trained with Adam
//! on mean squared error, plus the projection that makes its output
//! executable by the storages.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_header, read_matrix, scale_into, write_f64s, ImitationDataset, Layout, Scaler, Split};
use crate::dopf::storage_step;
use crate::error::{Error, Result};
use crate::grid::Network;
use crate::linearizer::LinearModel;
use crate::mpc::{feasible_power, Controller, Schedule};
use crate::series::Window;

const MAGIC: &str = "FLEXSCHED-MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            epochs: 40,
            hidden: vec![1024, 1024],
            batch_size: 64,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation("epochs and batch size must be positive".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Validation("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Dense network: rectifiers on hidden layers, identity on the output.
/// `weights[i]` has shape `(widths[i+1], widths[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Parameter gradients in the same shapes as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Mlp {
    pub fn zeros(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "need input and output width");
        Self {
            widths: widths.to_vec(),
            weights: widths.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect(),
            biases: widths[1..].iter().map(|&w| Array1::zeros(w)).collect(),
        }
    }

    /// Uniform fan-in initialization: weights and biases in `±1/√fan_in`.
    pub fn init(widths: &[usize], rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(widths);
        for (w, b) in m.weights.iter_mut().zip(m.biases.iter_mut()) {
            let a = 1.0 / (w.ncols() as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-a..a));
            b.mapv_inplace(|_| rng.random_range(-a..a));
        }
        m
    }

    pub fn n_in(&self) -> usize {
        self.widths[0]
    }

    pub fn n_out(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_in() {
            return Err(Error::Dimension(format!("input has {} entries, network expects {}", x.len(), self.n_in())));
        }
        let mut a = Array1::from(x.to_vec());
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = w.dot(&a) + b;
            if i < last {
                a.mapv_inplace(relu);
            }
        }
        Ok(a.to_vec())
    }

    /// Row-wise forward pass over a batch `(n, n_in)`.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    /// Output plus the pre-activations of every layer.
    fn forward_cached(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let last = self.weights.len() - 1;
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut a = x.to_owned();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = a.dot(&w.t()) + b;
            a = if i < last { z.mapv(relu) } else { z.clone() };
            pre.push(z);
        }
        (a, pre)
    }

    /// Mean squared error over all entries of the batch.
    pub fn loss(&self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
        mse(&self.forward_batch(x), y)
    }

    /// Loss and backpropagated gradients. At a rectifier kink the
    /// derivative is taken as 0.
    pub fn gradients(&self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> (f64, Gradients) {
        let (out, pre) = self.forward_cached(x);
        let loss = mse(&out, y);
        let scale = 2.0 / (out.len() as f64);
        let mut delta = (&out - &y) * scale;
        let n_layers = self.weights.len();
        let mut gw = vec![Array2::zeros((0, 0)); n_layers];
        let mut gb = vec![Array1::zeros(0); n_layers];
        for i in (0..n_layers).rev() {
            let input = if i == 0 { x.to_owned() } else { pre[i - 1].mapv(relu) };
            gw[i] = delta.t().dot(&input);
            gb[i] = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&self.weights[i]);
                back.zip_mut_with(&pre[i - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        (loss, Gradients { weights: gw, biases: gb })
    }

    /// Rectifier on/off pattern of the hidden layers for a batch.
    fn activation_pattern(&self, x: ArrayView2<'_, f64>) -> Vec<bool> {
        let (_, pre) = self.forward_cached(x);
        pre[..pre.len() - 1]
            .iter()
            .flat_map(|z| z.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
            .collect()
    }

    fn param_mut(&mut self, mut k: usize) -> &mut f64 {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if k < w.len() {
                return w.as_slice_mut().expect("standard layout").get_mut(k).expect("index");
            }
            k -= w.len();
            if k < b.len() {
                return &mut b[k];
            }
            k -= b.len();
        }
        panic!("parameter index out of range")
    }

    fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

impl Gradients {
    fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.extend(w.iter());
            v.extend(b.iter());
        }
        v
    }
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

fn mse(out: &Array2<f64>, y: ArrayView2<'_, f64>) -> f64 {
    if out.is_empty() {
        return 0.0;
    }
    out.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / out.len() as f64
}

/// Compares backprop against central finite differences of the loss.
///
/// Parameters whose perturbation flips any rectifier in the batch sit at
/// a kink and are skipped. The relative error of each parameter is
/// `|g − g_fd| / max(|g|, |g_fd|, 1e-4)`, so gradients far below the
/// finite-difference noise floor are compared absolutely.
pub fn grad_check(model: &Mlp, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
    let h = 1e-6;
    let (_, g) = model.gradients(x, y);
    let analytic = g.flat();
    let pattern = model.activation_pattern(x);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = *probe.param_mut(k);
        *probe.param_mut(k) = orig + h;
        let up = probe.loss(x, y);
        let flip_up = probe.activation_pattern(x) != pattern;
        *probe.param_mut(k) = orig - h;
        let down = probe.loss(x, y);
        let flip_down = probe.activation_pattern(x) != pattern;
        *probe.param_mut(k) = orig;
        if flip_up || flip_down {
            continue;
        }
        let fd = (up - down) / (2.0 * h);
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    worst
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub train_mse: Vec<f64>,
    /// Empty when no evaluation rows were given.
    pub test_mse: Vec<f64>,
}

impl TrainHistory {
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.train_mse
            .iter()
            .map(|&l| {
                best = best.min(l);
                best
            })
            .collect()
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, model: &mut Mlp, g: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let mut k = 0;
        let mut update = |p: &mut f64, g: f64| {
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            k += 1;
        };
        for ((w, b), (gw, gb)) in model
            .weights
            .iter_mut()
            .zip(model.biases.iter_mut())
            .zip(g.weights.iter().zip(&g.biases))
        {
            for (p, &gi) in w.iter_mut().zip(gw.iter()) {
                update(p, gi);
            }
            for (p, &gi) in b.iter_mut().zip(gb.iter()) {
                update(p, gi);
            }
        }
    }
}

/// Training loss above this multiple of the initial loss counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

/// Mini-batch Adam on already scaled arrays. Evaluation rows may be empty.
pub fn train_arrays(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    x_eval: ArrayView2<'_, f64>,
    y_eval: ArrayView2<'_, f64>,
    cfg: &TrainConfig,
) -> Result<(Mlp, TrainHistory)> {
    cfg.validate()?;
    if x.nrows() == 0 || x.nrows() != y.nrows() {
        return Err(Error::Dimension(format!("{} input rows vs {} target rows", x.nrows(), y.nrows())));
    }
    let mut widths = vec![x.ncols()];
    widths.extend(&cfg.hidden);
    widths.push(y.ncols());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Mlp::init(&widths, &mut rng);
    let mut adam = Adam::new(model.n_params(), cfg.learning_rate);
    let initial = model.loss(x, y).max(1e-12);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut hist = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            let (loss, g) = model.gradients(xb.view(), yb.view());
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            adam.step(&mut model, &g);
            sum += loss * chunk.len() as f64;
        }
        let epoch_loss = sum / x.nrows() as f64;
        if !epoch_loss.is_finite() || epoch_loss > DIVERGENCE_FACTOR * initial || !model.all_finite() {
            return Err(Error::Divergence { epoch, loss: epoch_loss });
        }
        hist.train_mse.push(epoch_loss);
        if x_eval.nrows() > 0 {
            hist.test_mse.push(model.loss(x_eval, y_eval));
        }
    }
    Ok((model, hist))
}

/// Trained controller with everything needed to map raw inputs to kW.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub net: Mlp,
    pub layout: Layout,
    pub x_scaler: Scaler,
    pub y_scale: Vec<f64>,
    pub config: TrainConfig,
}

/// Trains on the training split of a dataset with fitted scalers and
/// reports test MSE per epoch.
pub fn train(ds: &ImitationDataset, cfg: &TrainConfig) -> Result<(MlpModel, TrainHistory)> {
    let train_rows = ds.indices(Split::Train);
    let test_rows = ds.indices(Split::Test);
    train_rows_of(ds, &train_rows, &test_rows, cfg)
}

/// Trains on arbitrary row subsets (the hyperparameter search uses a
/// validation slice of the training split).
pub fn train_rows_of(
    ds: &ImitationDataset,
    fit_rows: &[usize],
    eval_rows: &[usize],
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainHistory)> {
    let x_scaler = ds
        .x_scaler
        .clone()
        .ok_or_else(|| Error::Validation("dataset scalers not fitted".into()))?;
    let (x, y) = ds.scaled(fit_rows)?;
    let (xe, ye) = ds.scaled(eval_rows)?;
    let (net, hist) = train_arrays(x.view(), y.view(), xe.view(), ye.view(), cfg)?;
    Ok((
        MlpModel {
            net,
            layout: ds.layout.clone(),
            x_scaler,
            y_scale: ds.y_scale.clone(),
            config: cfg.clone(),
        },
        hist,
    ))
}

/// Clips to the power box, then walks the horizon truncating any power
/// that would leave `[0, soc_frac_max·e_max]`. Returns `(p, e_traj)`.
pub fn project(p_raw: &[Vec<f64>], e_now: &[f64], net: &Network, dt: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut p_out = Vec::with_capacity(p_raw.len());
    let mut e_out = Vec::with_capacity(p_raw.len());
    for ((row, &e0), sto) in p_raw.iter().zip(e_now).zip(&net.storages) {
        let mut e = e0;
        let mut ps = Vec::with_capacity(row.len());
        let mut es = Vec::with_capacity(row.len());
        for &p in row {
            let p = feasible_power(p.clamp(-sto.p_max, sto.p_max), e, sto, dt);
            e = storage_step(e, p, sto, dt).clamp(0.0, sto.e_cap());
            ps.push(p);
            es.push(e);
        }
        p_out.push(ps);
        e_out.push(es);
    }
    (p_out, e_out)
}

impl MlpModel {
    /// Raw (unprojected) kW output `[storage][t]` and the forward-only time.
    pub fn predict_kw(&self, features: &[f64]) -> Result<(Vec<Vec<f64>>, f64)> {
        let mut x = features.to_vec();
        scale_into(&mut x, &self.x_scaler);
        let t = Instant::now();
        let y = self.net.forward(&x)?;
        let core = t.elapsed().as_secs_f64();
        let h = self.layout.horizon;
        let p = (0..self.layout.n_storages)
            .map(|s| (0..h).map(|t| y[s * h + t] * self.y_scale[s * h + t]).collect())
            .collect();
        Ok((p, core))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ModelHeader {
            layout: self.layout.clone(),
            widths: self.net.widths.clone(),
            x_scaler: self.x_scaler.clone(),
            y_scale: self.y_scale.clone(),
            config: self.config.clone(),
        };
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{MAGIC} {}", crate::dataset::LAYOUT_VERSION)?;
        writeln!(w, "{}", serde_json::to_string(&header).map_err(|e| Error::Validation(e.to_string()))?)?;
        for (wm, b) in self.net.weights.iter().zip(&self.net.biases) {
            write_f64s(&mut w, wm.iter())?;
            write_f64s(&mut w, b.iter())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MlpModel> {
        let mut r = BufReader::new(File::open(path)?);
        let header: ModelHeader = read_header(&mut r, path, MAGIC)?;
        if header.widths.len() < 2 {
            return Err(Error::parse(path.display(), "model needs at least two widths"));
        }
        let mut net = Mlp::zeros(&header.widths);
        for (wm, b) in net.weights.iter_mut().zip(net.biases.iter_mut()) {
            *wm = read_matrix(&mut r, wm.nrows(), wm.ncols(), path)?;
            *b = read_matrix(&mut r, 1, b.len(), path)?.row(0).to_owned();
        }
        Ok(MlpModel {
            net,
            layout: header.layout,
            x_scaler: header.x_scaler,
            y_scale: header.y_scale,
            config: header.config,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    layout: Layout,
    widths: Vec<usize>,
    x_scaler: Scaler,
    y_scale: Vec<f64>,
    config: TrainConfig,
}

/// The imitation controller.
pub struct Npc {
    pub model: MlpModel,
}

impl Npc {
    pub fn new(model: MlpModel, net: &Network) -> Result<Self> {
        let expected = Layout::for_network(net, model.layout.horizon);
        expected.check_compatible(&model.layout)?;
        Ok(Self { model })
    }
}

/// Scale, forward, unscale and project. `solve_time` covers all four,
/// `core_time` the forward pass alone.
pub fn npc_step(model: &MlpModel, window: &Window<'_>, e_now: &[f64], net: &Network) -> Result<Schedule> {
    let start = Instant::now();
    let x = model.layout.features(window, e_now, net)?;
    let (raw, core) = model.predict_kw(&x)?;
    let (p_flex, e_traj) = project(&raw, e_now, net, window.dt_hours);
    let total = start.elapsed().as_secs_f64();
    Ok(Schedule {
        p_flex,
        e_traj,
        objective: 0.0,
        solve_time: total,
        build_time: 0.0,
        core_time: core,
        raw_p_flex: Some(raw),
        converged: true,
    })
}

impl Controller for Npc {
    fn name(&self) -> &str {
        "npc"
    }

    fn plan(&mut self, net: &Network, _lin: &LinearModel, window: &Window<'_>, e_now: &[f64]) -> Result<Schedule> {
        npc_step(&self.model, window, e_now, net)
    }
}
