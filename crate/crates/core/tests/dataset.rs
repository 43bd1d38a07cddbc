mod common;

use common::{chain, series, storage};
use flexsched_core::calendar::{self, DAYS_IN_MONTH};
use flexsched_core::dataset::{record, ImitationDataset, Layout, Split, SplitKind, LAYOUT_VERSION};
use flexsched_core::dopf::DopfConfig;
use flexsched_core::linearizer::linearize;
use flexsched_core::mpc::{run_rolling_horizon, Mpc, MpcConfig, RunOptions, SimulationLog};
use flexsched_core::Error;
use ndarray::Array2;

/// One sample per hour-of-day 0 over `days` days, 1 feature, 1 output.
fn daily(days: std::ops::Range<usize>, dt: f64) -> ImitationDataset {
    let spd = calendar::steps_per_day(dt);
    let steps: Vec<usize> = days.map(|d| d * spd).collect();
    let n = steps.len();
    ImitationDataset {
        layout: Layout {
            version: LAYOUT_VERSION.into(),
            horizon: 1,
            feature_buses: vec![],
            n_storages: 1,
        },
        dt_hours: dt,
        x: Array2::from_shape_fn((n, 1), |(i, _)| i as f64),
        y: Array2::zeros((n, 1)),
        split: vec![Split::Train; n],
        split_kind: SplitKind::None,
        x_scaler: None,
        y_scale: vec![1.0],
        steps,
    }
}

#[test]
fn year_split_has_three_train_weeks_and_one_test_week_per_month() {
    let mut ds = daily(0..365, 0.25);
    ds.split_by_weeks().unwrap();
    let mut first = 0;
    for (m, &len) in DAYS_IN_MONTH.iter().enumerate() {
        let s: Vec<Split> = ds.split[first..first + len].to_vec();
        assert!(s[..21].iter().all(|x| *x == Split::Train), "month {m}");
        assert!(s[21..28].iter().all(|x| *x == Split::Test), "month {m}");
        assert!(s[28..].iter().all(|x| *x == Split::Train), "month {m}");
        first += len;
    }
    let f = ds.train_fraction();
    assert!((0.72..=0.78).contains(&f), "{f}");
    assert_eq!(ds.indices(Split::Test).len(), 84);
}

#[test]
fn validation_slice_stays_inside_training_rows() {
    let mut ds = daily(0..365, 0.25);
    ds.split_by_weeks().unwrap();
    let (fit, val) = ds.validation_split();
    assert_eq!(fit.len() + val.len(), ds.indices(Split::Train).len());
    assert!(val.iter().all(|&i| ds.split[i] == Split::Train));
    assert_eq!(val.len(), 12 * 7);
    for &i in &val {
        let (_, d) = calendar::month_day(ds.steps[i] / 96);
        assert!((15..=21).contains(&d));
    }
}

#[test]
fn day_holdout_tests_every_fourth_day() {
    let mut ds = daily(0..28, 0.25);
    ds.split_by_day_holdout().unwrap();
    assert_eq!(ds.train_fraction(), 0.75);
    for (i, s) in ds.split.iter().enumerate() {
        assert_eq!(*s == Split::Test, i % 4 == 3);
    }
    let (fit, val) = ds.validation_split();
    assert_eq!(val.len(), 5);
    assert_eq!(fit.len(), 16);
    let mut short = daily(0..3, 0.25);
    assert!(matches!(short.split_by_day_holdout(), Err(Error::Validation(_))));
}

#[test]
fn constant_feature_and_full_power_scale() {
    let mut ds = daily(0..8, 0.25);
    ds.x.column_mut(0).fill(4.0);
    ds.y.fill(7.5);
    ds.y_scale = vec![7.5];
    ds.fit_scalers().unwrap();
    let (x, y) = ds.scaled(&[0, 1, 2]).unwrap();
    assert!(x.iter().all(|v| *v == 0.0));
    assert!(y.iter().all(|v| *v == 1.0));
}

fn recorded() -> (ImitationDataset, SimulationLog) {
    let net = chain(vec![storage(3, 40.0, 10.0, 0.0, 16.0), storage(1, 20.0, 5.0, 0.0, 4.0)]);
    let lin = linearize(&net).unwrap();
    let p: Vec<Vec<f64>> = (0..48)
        .map(|k| {
            let pv = if (10..16).contains(&(k % 24)) { 0.15 } else { 0.0 };
            vec![0.0, -0.02, -0.05, pv]
        })
        .collect();
    let mut s = series(1.0, &p);
    s.p_gen.column_mut(3).assign(&s.p_inj.column(3).mapv(|v| v.max(0.0)));
    let cfg = MpcConfig {
        dopf: DopfConfig {
            dt_hours: 1.0,
            horizon: 6,
            ..DopfConfig::default()
        },
        ..MpcConfig::default()
    };
    let log = run_rolling_horizon(&net, &lin, &s, 0, 30, 6, &mut Mpc::new(cfg), RunOptions { record_plans: true }).unwrap();
    let ds = record(&net, &s, std::slice::from_ref(&log), 6).unwrap();
    (ds, log)
}

#[test]
fn recorded_rows_follow_layout() {
    let (ds, log) = recorded();
    assert_eq!(ds.layout.feature_buses, vec![1, 2, 3]);
    assert_eq!(ds.layout.n_in(), 2 * 6 * 3 + 2);
    assert_eq!(ds.layout.n_out(), 12);
    assert_eq!(ds.x.dim(), (30, 38));
    let r = &log.records[11];
    let row = ds.x.row(11);
    // step 11 is hour 11: bus 3 produces 15 kW, bus 2 draws 5 kW
    assert!((row[2] - 0.0).abs() < 1e-12);
    assert!((row[1] - 5.0).abs() < 1e-12);
    assert!((row[18 + 2] - 15.0).abs() < 1e-12);
    assert_eq!(row[36], r.e_before[0]);
    assert_eq!(row[37], r.e_before[1]);
    let plan = r.plan.as_ref().unwrap();
    assert_eq!(ds.y[[11, 0]], plan[0][0]);
    assert_eq!(ds.y[[11, 6 + 5]], plan[1][5]);
    assert_eq!(ds.y_scale[0], 10.0);
    assert_eq!(ds.y_scale[6], 5.0);
}

#[test]
fn log_without_plans_rejected() {
    let (_, mut log) = recorded();
    let net = chain(vec![storage(3, 40.0, 10.0, 0.0, 16.0), storage(1, 20.0, 5.0, 0.0, 4.0)]);
    let s = series(1.0, &vec![vec![0.0; 4]; 48]);
    log.records[3].plan = None;
    assert!(matches!(record(&net, &s, &[log.clone()], 6), Err(Error::Validation(_))));
    log.records.clear();
    assert!(matches!(record(&net, &s, &[log], 6), Err(Error::Validation(_))));
}

#[test]
fn binary_file_round_trip_is_exact() {
    let (mut ds, _) = recorded();
    assert!(ds.split_by_day_holdout().is_err(), "two recorded days only");
    ds.split = (0..ds.len()).map(|i| if i % 4 == 3 { Split::Test } else { Split::Train }).collect();
    ds.fit_scalers().unwrap();
    ds.x[[0, 0]] = 1.0 / 3.0;
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ds.bin");
    ds.write(&p).unwrap();
    let back = ImitationDataset::read(&p).unwrap();
    assert_eq!(back, ds);
    ds.write_csv(&dir.path().join("ds.csv")).unwrap();
}

#[test]
fn truncated_file_rejected() {
    let (ds, _) = recorded();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ds.bin");
    ds.write(&p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 16]).unwrap();
    assert!(ImitationDataset::read(&p).is_err());
}
