//! Bayesian optimization over training hyperparameters: Gaussian-process
//! surrogate with a Matérn-5/2 ARD kernel, expected improvement, and a
//! Latin hypercube initial design. Points live in the unit cube; the
//! search space maps them to [`TrainConfig`]s.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use libm::erfc;

use crate::dataset::ImitationDataset;
use crate::error::{Error, Result};
use crate::npc::{train_rows_of, TrainConfig};

pub const N_INIT: usize = 20;
/// Relative observation noise of the surrogate.
const NOISE: f64 = 1e-6;
const RESTARTS: usize = 5;
const LOG_LS: (f64, f64) = (-4.6, 2.3);
const LOG_SF: (f64, f64) = (-4.6, 4.6);

/// Minimizes `f` from `x0` with the Nelder–Mead simplex method.
pub fn nelder_mead(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], step: f64, max_iter: usize, tol: f64) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step;
        simplex.push(p);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    for _ in 0..max_iter {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        if (vals[n] - vals[0]).abs() <= tol * (1.0 + vals[0].abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                vals[n] = fe;
            } else {
                simplex[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            simplex[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < vals[n].min(fr) {
                simplex[n] = xc;
                vals[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = best.iter().zip(&simplex[i]).map(|(b, p)| b + 0.5 * (p - b)).collect();
                    vals[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).expect("non-empty simplex");
    (simplex[best].clone(), vals[best])
}

/// Latin hypercube design in the unit cube.
pub fn latin_hypercube(n: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    for j in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in pts.iter_mut().zip(strata) {
            p[j] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

fn matern52(r: f64) -> f64 {
    let s5r = 5f64.sqrt() * r;
    (1.0 + s5r + 5.0 * r * r / 3.0) * (-s5r).exp()
}

/// Gaussian-process regression on standardized targets.
#[derive(Debug, Clone)]
pub struct Gp {
    xs: Vec<Vec<f64>>,
    y_mean: f64,
    y_std: f64,
    /// `[log ℓ_1 … log ℓ_d, log σ_f²]`
    pub theta: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl Gp {
    fn kernel(theta: &[f64], a: &[f64], b: &[f64]) -> f64 {
        let d = a.len();
        let r2: f64 = (0..d).map(|i| ((a[i] - b[i]) / theta[i].exp()).powi(2)).sum();
        theta[d].exp() * matern52(r2.sqrt())
    }

    fn gram(theta: &[f64], xs: &[Vec<f64>]) -> DMatrix<f64> {
        let n = xs.len();
        let sf = theta[xs[0].len()].exp();
        DMatrix::from_fn(n, n, |i, j| {
            Self::kernel(theta, &xs[i], &xs[j]) + if i == j { NOISE * sf } else { 0.0 }
        })
    }

    /// Negative log marginal likelihood of standardized targets.
    fn nll(theta: &[f64], xs: &[Vec<f64>], y: &DVector<f64>) -> f64 {
        let d = xs[0].len();
        let in_box = theta[..d].iter().all(|t| (LOG_LS.0..=LOG_LS.1).contains(t))
            && (LOG_SF.0..=LOG_SF.1).contains(&theta[d]);
        if !in_box {
            return 1e10;
        }
        match Cholesky::new(Self::gram(theta, xs)) {
            Some(ch) => {
                let alpha = ch.solve(y);
                let logdet: f64 = ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
                0.5 * y.dot(&alpha) + logdet + 0.5 * xs.len() as f64 * (2.0 * std::f64::consts::PI).ln()
            }
            None => 1e10,
        }
    }

    /// Fits kernel hyperparameters by marginal likelihood from `start`
    /// plus random restarts.
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], start: Option<&[f64]>, rng: &mut impl Rng) -> Result<Gp> {
        if xs.is_empty() {
            return Err(Error::Validation("cannot fit a surrogate without data".into()));
        }
        let d = xs[0].len();
        let n = ys.len() as f64;
        let y_mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n;
        let y_std = if var > 0.0 { var.sqrt() } else { 1.0 };
        let y = DVector::from_iterator(ys.len(), ys.iter().map(|v| (v - y_mean) / y_std));

        let mut starts: Vec<Vec<f64>> = Vec::with_capacity(RESTARTS);
        starts.push(match start {
            Some(t) => t.to_vec(),
            None => {
                let mut t = vec![(0.3f64).ln(); d];
                t.push(0.0);
                t
            }
        });
        while starts.len() < RESTARTS {
            let mut t: Vec<f64> = (0..d).map(|_| rng.random_range(-2.5..0.5)).collect();
            t.push(rng.random_range(-1.0..1.0));
            starts.push(t);
        }
        let mut best: Option<(Vec<f64>, f64)> = None;
        for s in &starts {
            let (t, v) = nelder_mead(&mut |t| Self::nll(t, xs, &y), s, 0.5, 200 * (d + 1), 1e-8);
            if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
                best = Some((t, v));
            }
        }
        let theta = best.expect("at least one restart").0;
        let chol = Cholesky::new(Self::gram(&theta, xs))
            .ok_or_else(|| Error::Singular("surrogate covariance is not positive definite".into()))?;
        let alpha = chol.solve(&y);
        Ok(Gp {
            xs: xs.to_vec(),
            y_mean,
            y_std,
            theta,
            chol,
            alpha,
        })
    }

    /// Posterior mean and standard deviation in target units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|xi| Self::kernel(&self.theta, xi, x)));
        let mu = k.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&k).expect("nonsingular factor");
        let prior = self.theta[x.len()].exp();
        let var = (prior - v.dot(&v)).max(1e-18);
        (self.y_mean + self.y_std * mu, self.y_std * var.sqrt())
    }
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement below `best` for minimization.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    if sigma <= 0.0 {
        return (best - mu).max(0.0);
    }
    let z = (best - mu) / sigma;
    (best - mu) * norm_cdf(z) + sigma * norm_pdf(z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suggestion {
    pub point: Vec<f64>,
    /// Budget exhausted: `point` is the best evaluated one.
    pub is_final: bool,
}

/// Append-only optimization state over the unit cube.
#[derive(Debug)]
pub struct BoState {
    pub dim: usize,
    pub budget: usize,
    pub n_init: usize,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
    design: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    gp: Option<Gp>,
}

impl BoState {
    pub fn new(dim: usize, budget: usize, n_init: usize, seed: u64) -> Result<Self> {
        if budget < n_init {
            return Err(Error::Validation(format!(
                "budget {budget} is smaller than the {n_init} initial design points"
            )));
        }
        if dim == 0 {
            return Err(Error::Validation("search space has no dimensions".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let design = latin_hypercube(n_init, dim, &mut rng);
        Ok(Self {
            dim,
            budget,
            n_init,
            xs: Vec::new(),
            ys: Vec::new(),
            design,
            rng,
            gp: None,
        })
    }

    pub fn best(&self) -> Option<(&[f64], f64)> {
        let i = (0..self.ys.len()).min_by(|&a, &b| self.ys[a].total_cmp(&self.ys[b]))?;
        Some((&self.xs[i], self.ys[i]))
    }

    pub fn best_so_far(&self) -> Vec<f64> {
        let mut b = f64::INFINITY;
        self.ys
            .iter()
            .map(|&y| {
                b = b.min(y);
                b
            })
            .collect()
    }

    pub fn suggest(&mut self) -> Suggestion {
        let k = self.xs.len();
        if k >= self.budget {
            let point = self.best().map(|(x, _)| x.to_vec()).unwrap_or_else(|| vec![0.5; self.dim]);
            return Suggestion { point, is_final: true };
        }
        if k < self.n_init {
            return Suggestion {
                point: self.design[k].clone(),
                is_final: false,
            };
        }
        let gp = match &self.gp {
            Some(g) => g,
            None => {
                return Suggestion {
                    point: (0..self.dim).map(|_| self.rng.random()).collect(),
                    is_final: false,
                }
            }
        };
        let best_y = self.best().expect("observations exist").1;
        let ei = |x: &[f64]| {
            let (mu, sd) = gp.predict(x);
            expected_improvement(mu, sd, best_y)
        };
        let mut cands: Vec<Vec<f64>> = (0..2000)
            .map(|_| (0..self.dim).map(|_| self.rng.random()).collect())
            .collect();
        let jitter = Normal::new(0.0, 0.05).expect("valid normal");
        let mut order: Vec<usize> = (0..self.ys.len()).collect();
        order.sort_by(|&a, &b| self.ys[a].total_cmp(&self.ys[b]));
        for &i in order.iter().take(5) {
            for _ in 0..50 {
                cands.push(
                    self.xs[i]
                        .iter()
                        .map(|v| (v + jitter.sample(&mut self.rng)).clamp(0.0, 1.0))
                        .collect(),
                );
            }
        }
        let mut scored: Vec<(f64, Vec<f64>)> = cands.into_iter().map(|c| (ei(&c), c)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut best = scored[0].clone();
        for (_, c) in scored.iter().take(5) {
            let mut neg = |x: &[f64]| {
                if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return 0.0;
                }
                -ei(x)
            };
            let (x, v) = nelder_mead(&mut neg, c, 0.02, 100 * self.dim, 1e-12);
            if -v > best.0 {
                best = (-v, x);
            }
        }
        Suggestion {
            point: best.1,
            is_final: false,
        }
    }

    /// Records an evaluation and refits the surrogate.
    pub fn observe(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension(format!("point has {} coordinates, expected {}", x.len(), self.dim)));
        }
        self.xs.push(x);
        self.ys.push(y);
        if self.xs.len() >= 2 {
            let start = self.gp.as_ref().map(|g| g.theta.clone());
            self.gp = Some(Gp::fit(&self.xs, &self.ys, start.as_deref(), &mut self.rng)?);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BoResult {
    pub best_x: Vec<f64>,
    pub best_y: f64,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
    pub best_so_far: Vec<f64>,
}

/// Runs the full loop on a function of the unit cube.
pub fn minimize(f: &mut dyn FnMut(&[f64]) -> f64, dim: usize, budget: usize, seed: u64) -> Result<BoResult> {
    let mut st = BoState::new(dim, budget, N_INIT.min(budget), seed)?;
    loop {
        let s = st.suggest();
        if s.is_final {
            break;
        }
        let y = f(&s.point);
        st.observe(s.point, y)?;
    }
    let (bx, by) = st.best().expect("budget > 0");
    Ok(BoResult {
        best_x: bx.to_vec(),
        best_y: by,
        best_so_far: st.best_so_far(),
        xs: st.xs,
        ys: st.ys,
    })
}

/// Best of `budget` uniform samples.
pub fn random_search(f: &mut dyn FnMut(&[f64]) -> f64, dim: usize, budget: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..budget)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
            f(&x)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Hyperparameter ranges. One width per possible hidden layer; widths of
/// unused layers are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub epochs: (usize, usize),
    pub layers: (usize, usize),
    pub neurons: (usize, usize),
}

impl SearchSpace {
    /// Full-scale ranges: 240 to 5584 neurons per layer.
    pub fn full_scale() -> Self {
        Self {
            learning_rate: (1e-6, 1e-3),
            epochs: (15, 500),
            layers: (1, 4),
            neurons: (240, 5584),
        }
    }

    pub fn desk() -> Self {
        Self {
            neurons: (32, 512),
            ..Self::full_scale()
        }
    }

    pub fn dim(&self) -> usize {
        3 + self.layers.1
    }

    /// Maps a unit-cube point to a config; learning rate is log-uniform,
    /// integers are rounded.
    pub fn decode(&self, u: &[f64], batch_size: usize, seed: u64) -> TrainConfig {
        let lerp = |t: f64, lo: f64, hi: f64| lo + t.clamp(0.0, 1.0) * (hi - lo);
        let int = |t: f64, (lo, hi): (usize, usize)| lerp(t, lo as f64, hi as f64).round() as usize;
        let (a, b) = self.learning_rate;
        let lr = lerp(u[0], a.ln(), b.ln()).exp().clamp(a, b);
        let epochs = int(u[1], self.epochs);
        let layers = int(u[2], self.layers);
        let hidden = (0..layers).map(|i| int(u[3 + i], self.neurons)).collect();
        TrainConfig {
            learning_rate: lr,
            epochs,
            hidden,
            batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoRecord {
    pub iteration: usize,
    pub config: TrainConfig,
    pub val_mse: f64,
    pub diverged: bool,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct BoRun {
    pub best: TrainConfig,
    pub best_mse: f64,
    pub history: Vec<BoRecord>,
}

/// Searches hyperparameters by validation MSE on a slice of the training
/// split. The surrogate models `log10(MSE)`; a diverged run scores one
/// decade above the worst score so far.
pub fn run_bo(ds: &ImitationDataset, space: &SearchSpace, budget: usize, seed: u64) -> Result<BoRun> {
    let (fit, val) = ds.validation_split();
    if fit.is_empty() || val.is_empty() {
        return Err(Error::Validation("training split too small for a validation slice".into()));
    }
    let mut st = BoState::new(space.dim(), budget, N_INIT.min(budget), seed)?;
    let mut history = Vec::with_capacity(budget);
    loop {
        let s = st.suggest();
        if s.is_final {
            break;
        }
        let cfg = space.decode(&s.point, 64, seed);
        let t = Instant::now();
        let (val_mse, diverged) = match train_rows_of(ds, &fit, &val, &cfg) {
            Ok((_, hist)) => (*hist.test_mse.last().expect("validation rows"), false),
            Err(Error::Divergence { .. }) => (f64::INFINITY, true),
            Err(e) => return Err(e),
        };
        let score = if diverged || !val_mse.is_finite() {
            st.ys.iter().cloned().fold(0.0f64, f64::max) + 1.0
        } else {
            val_mse.max(1e-300).log10()
        };
        history.push(BoRecord {
            iteration: history.len(),
            config: cfg,
            val_mse,
            diverged,
            wall_time: t.elapsed().as_secs_f64(),
        });
        st.observe(s.point, score)?;
    }
    let best = history
        .iter()
        .filter(|r| !r.diverged)
        .min_by(|a, b| a.val_mse.total_cmp(&b.val_mse))
        .ok_or_else(|| Error::Validation("every configuration diverged".into()))?;
    Ok(BoRun {
        best: best.config.clone(),
        best_mse: best.val_mse,
        history,
    })
}

pub fn write_history_csv(history: &[BoRecord], max_layers: usize, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "iteration,learning_rate,epochs,layers")?;
    for i in 0..max_layers {
        write!(w, ",neurons_{}", i + 1)?;
    }
    writeln!(w, ",val_mse,diverged,wall_time")?;
    for r in history {
        write!(
            w,
            "{},{},{},{}",
            r.iteration,
            r.config.learning_rate,
            r.config.epochs,
            r.config.hidden.len()
        )?;
        for i in 0..max_layers {
            match r.config.hidden.get(i) {
                Some(n) => write!(w, ",{n}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w, ",{},{},{}", r.val_mse, r.diverged, r.wall_time)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let (x, v) = nelder_mead(&mut |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2), &[0.0, 0.0], 0.5, 2000, 1e-14);
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] + 2.0).abs() < 1e-5, "{x:?}");
        assert!(v < 1e-9);
    }

    #[test]
    fn latin_hypercube_hits_every_stratum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = latin_hypercube(10, 3, &mut rng);
        for j in 0..3 {
            let mut s: Vec<usize> = pts.iter().map(|p| (p[j] * 10.0) as usize).collect();
            s.sort();
            assert_eq!(s, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn gp_interpolates_observations() {
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (6.0 * x[0]).sin()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gp = Gp::fit(&xs, &ys, None, &mut rng).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let (mu, sd) = gp.predict(x);
            assert!((mu - y).abs() < 1e-3, "{mu} vs {y}");
            assert!(sd < 1e-2);
        }
    }

    #[test]
    fn expected_improvement_examples() {
        assert_eq!(expected_improvement(1.0, 0.0, 2.0), 1.0);
        assert_eq!(expected_improvement(3.0, 0.0, 2.0), 0.0);
        // z = 0: σ·φ(0)
        let ei = expected_improvement(2.0, 1.0, 2.0);
        assert!((ei - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn budget_below_initial_design_is_rejected() {
        assert!(BoState::new(2, 10, N_INIT, 0).unwrap_err().is_validation());
    }

    #[test]
    fn decode_respects_bounds() {
        let sp = SearchSpace::full_scale();
        let lo = sp.decode(&[0.0; 7], 64, 1);
        let hi = sp.decode(&[1.0; 7], 64, 1);
        assert!((lo.learning_rate / 1e-6 - 1.0).abs() < 1e-12);
        assert!((hi.learning_rate / 1e-3 - 1.0).abs() < 1e-12);
        assert_eq!((lo.epochs, hi.epochs), (15, 500));
        assert_eq!(lo.hidden, vec![240]);
        assert_eq!(hi.hidden, vec![5584; 4]);
    }
}
