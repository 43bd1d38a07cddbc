mod common;

use common::{series, storage, two_bus};
use flexsched_core::dataset::{Layout, Scaler};
use flexsched_core::dopf::storage_step;
use flexsched_core::npc::{grad_check, npc_step, project, train_arrays, Mlp, MlpModel, Npc, TrainConfig, TrainHistory};
use flexsched_core::Error;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(rng: &mut ChaCha8Rng, n: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, cols), |_| rng.random_range(-1.0..1.0))
}

#[test]
fn backprop_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..10 {
        let depth = rng.random_range(1..4);
        let mut widths = vec![rng.random_range(2..6)];
        for _ in 0..depth {
            widths.push(rng.random_range(2..7));
        }
        widths.push(rng.random_range(1..4));
        let net = Mlp::init(&widths, &mut rng);
        let x = random_batch(&mut rng, 8, widths[0]);
        let y = random_batch(&mut rng, 8, *widths.last().unwrap());
        let err = grad_check(&net, x.view(), y.view());
        assert!(err <= 1e-5, "case {case} {widths:?}: {err:e}");
    }
}

#[test]
fn zero_loss_batch_has_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = Mlp::init(&[4, 6, 3], &mut rng);
    let x = random_batch(&mut rng, 10, 4);
    let y = net.forward_batch(x.view());
    let (loss, g) = net.gradients(x.view(), y.view());
    assert_eq!(loss, 0.0);
    let norm: f64 = g.weights.iter().flat_map(|w| w.iter()).chain(g.biases.iter().flat_map(|b| b.iter())).map(|v| v * v).sum();
    assert!(norm.sqrt() < 1e-12);
}

#[test]
fn constant_target_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_batch(&mut rng, 128, 5);
    let c = [0.3, -0.7];
    let y = Array2::from_shape_fn((128, 2), |(_, j)| c[j]);
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 200,
        hidden: vec![8],
        batch_size: 32,
        seed: 3,
    };
    let empty = Array2::zeros((0, 5));
    let (net, hist) = train_arrays(x.view(), y.view(), empty.view(), Array2::zeros((0, 2)).view(), &cfg).unwrap();
    assert!(*hist.train_mse.last().unwrap() < 1e-5);
    assert!(hist.test_mse.is_empty());
    let out = net.forward(&[0.1, 0.2, -0.3, 0.0, 0.5]).unwrap();
    assert!((out[0] - c[0]).abs() < 1e-2 && (out[1] - c[1]).abs() < 1e-2);
}

#[test]
fn linear_map_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_batch(&mut rng, 3, 6);
    let x = random_batch(&mut rng, 512, 6);
    let y = x.dot(&a.t());
    let xt = random_batch(&mut rng, 128, 6);
    let yt = xt.dot(&a.t());
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        epochs: 300,
        hidden: vec![32],
        batch_size: 64,
        seed: 42,
    };
    let (_, hist) = train_arrays(x.view(), y.view(), xt.view(), yt.view(), &cfg).unwrap();
    let test = *hist.test_mse.last().unwrap();
    assert!(test < 1e-3, "test MSE {test}");
    let best = hist.best_so_far();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn absurd_learning_rate_diverges() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_batch(&mut rng, 256, 6);
    let y = random_batch(&mut rng, 256, 3);
    let cfg = TrainConfig {
        learning_rate: 10.0,
        epochs: 50,
        hidden: vec![64, 64],
        batch_size: 64,
        seed: 42,
    };
    let err = train_arrays(x.view(), y.view(), x.view(), y.view(), &cfg).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
}

#[test]
fn training_is_reproducible_per_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_batch(&mut rng, 100, 4);
    let y = random_batch(&mut rng, 100, 2);
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        epochs: 5,
        hidden: vec![8],
        batch_size: 16,
        seed: 11,
    };
    let a = train_arrays(x.view(), y.view(), x.view(), y.view(), &cfg).unwrap();
    let b = train_arrays(x.view(), y.view(), x.view(), y.view(), &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn best_so_far_is_running_minimum() {
    let h = TrainHistory {
        train_mse: vec![3.0, 1.0, 2.0, 0.5, 0.7],
        test_mse: vec![],
    };
    assert_eq!(h.best_so_far(), vec![3.0, 1.0, 1.0, 0.5, 0.5]);
}

fn small_model(net: &flexsched_core::grid::Network, horizon: usize) -> MlpModel {
    let layout = Layout::for_network(net, horizon);
    let (n_in, n_out) = (layout.n_in(), layout.n_out());
    MlpModel {
        net: Mlp::zeros(&[n_in, 4, n_out]),
        x_scaler: Scaler {
            mean: vec![0.0; n_in],
            std: vec![1.0; n_in],
        },
        y_scale: net.storages.iter().flat_map(|s| std::iter::repeat_n(s.p_max, horizon)).collect(),
        layout,
        config: TrainConfig::default(),
    }
}

#[test]
fn one_storage_layout_counts() {
    let net = two_bus(vec![storage(1, 10.0, 4.0, 0.0, 1.0)]);
    let l = Layout::for_network(&net, 4);
    assert_eq!(l.n_in(), 4 + 4 + 1);
    assert_eq!(l.n_out(), 4);
}

#[test]
fn zero_model_schedules_nothing() {
    let net = two_bus(vec![storage(1, 10.0, 4.0, 0.0, 1.0)]);
    let s = series(0.25, &vec![vec![0.0, -0.03]; 4]);
    let m = small_model(&net, 4);
    let sched = npc_step(&m, &s.window(0, 4).unwrap(), &[1.0], &net).unwrap();
    assert_eq!(sched.p_flex, vec![vec![0.0; 4]]);
    assert_eq!(sched.e_traj, vec![vec![1.0; 4]]);
    assert!(sched.solve_time >= sched.core_time);
}

#[test]
fn output_bias_becomes_clipped_kw() {
    let net = two_bus(vec![storage(1, 10.0, 4.0, 0.0, 1.0)]);
    let s = series(0.25, &vec![vec![0.0, -0.03]; 4]);
    let mut m = small_model(&net, 4);
    // scaled output 1.2 = 1.2·p_max
    m.net.biases[1] = Array1::from(vec![1.2, 0.5, 0.0, 0.0]);
    let sched = npc_step(&m, &s.window(0, 4).unwrap(), &[1.0], &net).unwrap();
    assert_eq!(sched.raw_p_flex.as_ref().unwrap()[0][0], 4.8);
    assert_eq!(sched.p_flex[0][0], 4.0);
    assert_eq!(sched.p_flex[0][1], 2.0);
}

#[test]
fn projection_stops_discharge_at_empty() {
    let sto = storage(1, 10.0, 4.0, 0.0, 1.0);
    let net = two_bus(vec![sto.clone()]);
    // 1 kWh − 4 kW·0.5 h would reach −1 kWh
    let (p, e) = project(&[vec![-4.0, -4.0]], &[1.0], &net, 0.5);
    assert_eq!(p[0], vec![-2.0, 0.0]);
    assert_eq!(e[0], vec![0.0, 0.0]);
    assert_eq!(storage_step(1.0, p[0][0], &sto, 0.5), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_keeps_plant_bounds(
        raw in prop::collection::vec(-30.0f64..30.0, 12),
        e0 in 0.0f64..8.0,
        mu in 0.0f64..0.05,
    ) {
        let sto = storage(1, 10.0, 4.0, mu, e0);
        let net = two_bus(vec![sto.clone()]);
        let (p, e) = project(&[raw.clone()], &[e0], &net, 0.25);
        let mut ek = e0;
        for t in 0..raw.len() {
            prop_assert!(p[0][t].abs() <= sto.p_max);
            ek = storage_step(ek, p[0][t], &sto, 0.25);
            prop_assert!(ek >= -1e-12 && ek <= sto.e_cap() + 1e-12);
            prop_assert!((ek.clamp(0.0, sto.e_cap()) - e[0][t]).abs() < 1e-12);
            ek = e[0][t];
            let prev = if t == 0 { e0 } else { e[0][t - 1] };
            let landing = prev * (1.0 - mu * 0.25) + raw[t] * 0.25;
            if raw[t].abs() <= sto.p_max && landing > 1e-9 && landing < sto.e_cap() - 1e-9 {
                prop_assert_eq!(p[0][t], raw[t]);
            }
        }
    }
}

#[test]
fn layout_mismatch_rejected() {
    let net = two_bus(vec![storage(1, 10.0, 4.0, 0.0, 1.0)]);
    let mut m = small_model(&net, 4);
    m.layout.version = "other-v0".into();
    assert!(matches!(Npc::new(m, &net), Err(Error::Validation(_))));
}

#[test]
fn model_file_round_trip_is_exact() {
    let net = two_bus(vec![storage(1, 10.0, 4.0, 0.0, 1.0)]);
    let mut m = small_model(&net, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    m.net = Mlp::init(&m.net.widths.clone(), &mut rng);
    m.x_scaler.mean = (0..9).map(|i| 0.1 * i as f64 + 1.0 / 3.0).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    m.save(&path).unwrap();
    let back = MlpModel::load(&path).unwrap();
    assert_eq!(back, m);
    let x: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
    assert_eq!(back.predict_kw(&x).unwrap().0, m.predict_kw(&x).unwrap().0);
}

#[test]
fn corrupt_model_file_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.bin");
    std::fs::write(&path, "not a model\n{}\n").unwrap();
    assert!(matches!(MlpModel::load(&path), Err(Error::Parse { .. })));
}
