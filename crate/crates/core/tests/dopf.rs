mod common;

use common::{chain, series, storage, two_bus};
use flexsched_core::bench::{build_network, BenchSpec};
use flexsched_core::dopf::{build, objective_value, storage_step, DopfConfig, IndexMap, IneqKind, Symbol};
use flexsched_core::linearizer::linearize;
use flexsched_core::Error;
use flexsched_qp::{solve, QpStatus};
use proptest::prelude::*;

fn cfg(t: usize, dt: f64) -> DopfConfig {
    DopfConfig {
        dt_hours: dt,
        horizon: t,
        ..DopfConfig::default()
    }
}

#[test]
fn benchmark_dimensions() {
    let net = build_network(&BenchSpec::default()).unwrap();
    let lin = linearize(&net).unwrap();
    let s = series(0.25, &vec![vec![0.0; 15]; 96]);
    let e: Vec<f64> = net.storages.iter().map(|s| s.e_init).collect();
    let prob = build(&net, &lin, &s.window(0, 96).unwrap(), &e, &DopfConfig::default()).unwrap();
    assert_eq!(prob.qp.n(), 4 * 15 * 96 + 2 * 5 * 96 + 5 * 97);
    assert_eq!(prob.qp.n(), 7205);
    // power flow 2N, balance 2(N−1), storage S per step
    assert_eq!(prob.qp.a.nrows, 96 * (30 + 28 + 5));
    assert_eq!(prob.qp.a.nrows, 6048);
    assert_eq!(prob.qp.g.nrows, prob.ineq_kinds.len());
}

#[test]
fn index_map_is_a_bijection() {
    let ix = IndexMap::new(3, 2, 4);
    let mut seen = vec![false; ix.len()];
    for i in 0..ix.len() {
        let sym = ix.symbol(i).expect("every entry is named");
        let back = match sym {
            Symbol::V { t, bus } => ix.v(t, bus),
            Symbol::Theta { t, bus } => ix.theta(t, bus),
            Symbol::P { t, bus } => ix.p(t, bus),
            Symbol::Q { t, bus } => ix.q(t, bus),
            Symbol::PFlex { t, sto } => ix.p_flex(t, sto),
            Symbol::QFlex { t, sto } => ix.q_flex(t, sto),
            Symbol::ESto { t, sto } => ix.e_sto(t, sto),
        };
        assert_eq!(back, i);
        assert!(!seen[i]);
        seen[i] = true;
    }
    assert!(ix.symbol(ix.len()).is_none());
}

#[test]
fn single_step_storage_row() {
    let net = two_bus(vec![storage(1, 10.0, 5.0, 0.0, 2.0)]);
    let lin = linearize(&net).unwrap();
    let s = series(0.25, &[vec![0.0, 0.0]]);
    let prob = build(&net, &lin, &s.window(0, 1).unwrap(), &[2.0], &cfg(1, 0.25)).unwrap();
    let ix = prob.index;
    let row = prob.eq_blocks[0] + prob.eq_blocks[1];
    assert_eq!(prob.eq_blocks[2], 1);
    let entries: Vec<(usize, f64)> = prob.qp.a.iter().filter(|e| e.0 == row).map(|e| (e.1, e.2)).collect();
    assert_eq!(entries.len(), 3);
    let get = |c: usize| entries.iter().find(|e| e.0 == c).map(|e| e.1).unwrap();
    assert_eq!(get(ix.e_sto(0, 0)), 1.0);
    assert_eq!(get(ix.e_sto(-1, 0)), -1.0);
    assert_eq!(get(ix.p_flex(0, 0)), -0.25);
    assert_eq!(prob.qp.b[row], 0.0);
    // E(−1) pinned to e_init in p.u.·h
    let j = ix.e_sto(-1, 0);
    assert_eq!(prob.qp.lb[j], prob.qp.ub[j]);
    assert!((prob.qp.lb[j] * prob.kw_per_pu - 2.0).abs() < 1e-12);
}

#[test]
fn e_init_above_cap_rejected() {
    let net = two_bus(vec![storage(1, 10.0, 5.0, 0.0, 2.0)]);
    let lin = linearize(&net).unwrap();
    let s = series(0.25, &[vec![0.0, 0.0]]);
    let err = build(&net, &lin, &s.window(0, 1).unwrap(), &[8.5], &cfg(1, 0.25)).unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
}

#[test]
fn wrong_window_length_rejected() {
    let net = two_bus(vec![]);
    let lin = linearize(&net).unwrap();
    let s = series(0.25, &vec![vec![0.0, 0.0]; 3]);
    let err = build(&net, &lin, &s.window(0, 3).unwrap(), &[], &cfg(4, 0.25)).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
}

#[test]
fn storage_step_examples() {
    let s0 = storage(1, 100.0, 10.0, 0.0, 0.0);
    assert_eq!(storage_step(10.0, 2.0, &s0, 0.25), 10.5);
    assert_eq!(storage_step(5.0, 0.0, &s0, 0.25), 5.0);
    let s1 = storage(1, 100.0, 10.0, 0.04, 0.0);
    assert!((storage_step(10.0, 2.0, &s1, 0.25) - 10.4).abs() < 1e-12);
}

#[test]
fn objective_value_examples() {
    let net = two_bus(vec![]);
    let lin = linearize(&net).unwrap();
    let s = series(0.25, &[vec![0.0, 0.0]]);
    let prob = build(&net, &lin, &s.window(0, 1).unwrap(), &[], &cfg(1, 0.25)).unwrap();
    let mut x = vec![0.0; prob.qp.n()];
    assert_eq!(objective_value(&prob, &x).unwrap(), 0.0);
    x[prob.index.p(0, net.slack_bus)] = 2.0;
    assert_eq!(objective_value(&prob, &x).unwrap(), 2.0);
    assert!(matches!(objective_value(&prob, &x[1..]), Err(Error::Dimension(_))));
}

#[test]
fn m_has_one_entry_per_step() {
    let net = chain(vec![storage(2, 20.0, 5.0, 0.0, 4.0)]);
    let lin = linearize(&net).unwrap();
    for t in [1, 4, 9] {
        let s = series(0.25, &vec![vec![0.0, -0.05, 0.02, -0.01]; t]);
        let prob = build(&net, &lin, &s.window(0, t).unwrap(), &[4.0], &cfg(t, 0.25)).unwrap();
        let m = prob.m();
        assert_eq!(m.nnz(), t);
        for (i, j, v) in m.iter() {
            assert_eq!(i, j);
            assert_eq!(v, 1.0);
            assert!(matches!(prob.index.symbol(i), Some(Symbol::P { bus: 0, .. })));
        }
    }
}

#[test]
fn constraint_nonzeros_grow_linearly_in_horizon() {
    let net = chain(vec![storage(2, 20.0, 5.0, 0.0, 4.0), storage(3, 20.0, 5.0, 0.0, 4.0)]);
    let lin = linearize(&net).unwrap();
    let nnz = |t: usize| {
        let s = series(0.25, &vec![vec![0.0, -0.05, 0.02, -0.01]; t]);
        let p = build(&net, &lin, &s.window(0, t).unwrap(), &[4.0, 4.0], &cfg(t, 0.25)).unwrap();
        (p.qp.a.nnz(), p.qp.g.nnz())
    };
    let (a4, g4) = nnz(4);
    let (a8, g8) = nnz(8);
    let (a16, g16) = nnz(16);
    assert_eq!(a16 - a8, 2 * (a8 - a4));
    assert_eq!(g16 - g8, 2 * (g8 - g4));
    assert_eq!(a8, 2 * a4);
}

#[test]
fn solved_trajectory_obeys_storage_recurrence() {
    let stos = vec![storage(2, 20.0, 5.0, 0.002, 6.0), storage(3, 30.0, 8.0, 0.0, 1.0)];
    let net = chain(stos.clone());
    let lin = linearize(&net).unwrap();
    let t = 12;
    let p: Vec<Vec<f64>> = (0..t)
        .map(|k| {
            let pv = if (3..8).contains(&k) { 0.08 } else { -0.03 };
            vec![0.0, -0.02, pv, pv * 0.5]
        })
        .collect();
    let s = series(0.25, &p);
    let prob = build(&net, &lin, &s.window(0, t).unwrap(), &[6.0, 1.0], &cfg(t, 0.25)).unwrap();
    let sol = solve(&prob.qp, 1e-9, 20_000).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    let pk = prob.p_flex_kw(&sol.x);
    let ek = prob.e_kwh(&sol.x);
    for (k, sto) in stos.iter().enumerate() {
        let mut e = sto.e_init;
        for step in 0..t {
            e = storage_step(e, pk[k][step], sto, 0.25);
            assert!((e - ek[k][step]).abs() <= 1e-9, "storage {k} step {step}");
            assert!(ek[k][step] >= -1e-9 && ek[k][step] <= sto.e_cap() + 1e-9);
            assert!(pk[k][step].abs() <= sto.p_max + 1e-9);
        }
    }
    // both voltage-difference rows hold, hence |Δv| ≤ bound
    for step in 0..t {
        for (b, br) in net.branches.iter().enumerate() {
            let dv = sol.x[prob.index.v(step, br.from_bus)] - sol.x[prob.index.v(step, br.to_bus)];
            assert!(dv.abs() <= net.branch_bound(b) * prob_limit_scale() + 1e-9);
        }
    }
}

fn prob_limit_scale() -> f64 {
    DopfConfig::default().limit_scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn storage_rows_hold_for_recurrence_trajectories(
        p in prop::collection::vec(-5.0f64..5.0, 6),
        e0 in 0.0f64..16.0,
        mu in 0.0f64..0.01,
    ) {
        let sto = storage(1, 20.0, 5.0, mu, e0);
        let net = two_bus(vec![sto.clone()]);
        let lin = linearize(&net).unwrap();
        let s = series(0.5, &vec![vec![0.0, 0.0]; 6]);
        let prob = build(&net, &lin, &s.window(0, 6).unwrap(), &[e0], &cfg(6, 0.5)).unwrap();
        let ix = prob.index;
        let mut x = vec![0.0; ix.len()];
        let mut e = e0;
        x[ix.e_sto(-1, 0)] = e / prob.kw_per_pu;
        for (t, &pk) in p.iter().enumerate() {
            e = storage_step(e, pk, &sto, 0.5);
            x[ix.p_flex(t, 0)] = pk / prob.kw_per_pu;
            x[ix.e_sto(t as isize, 0)] = e / prob.kw_per_pu;
        }
        let ax = prob.qp.a.mul_vec(&x);
        let first = prob.eq_blocks[0] + prob.eq_blocks[1];
        for r in first..first + prob.eq_blocks[2] {
            prop_assert!((ax[r] - prob.qp.b[r]).abs() <= 1e-12);
        }
    }

    #[test]
    fn branch_rows_bound_the_voltage_difference(
        v in prop::collection::vec(0.9f64..1.1, 4),
    ) {
        let net = chain(vec![]);
        let lin = linearize(&net).unwrap();
        let s = series(0.25, &[vec![0.0; 4]]);
        let prob = build(&net, &lin, &s.window(0, 1).unwrap(), &[], &cfg(1, 0.25)).unwrap();
        let mut x = vec![0.0; prob.qp.n()];
        for (b, vb) in v.iter().enumerate() {
            x[prob.index.v(0, b)] = *vb;
        }
        let gx = prob.qp.g.mul_vec(&x);
        for (k, br) in net.branches.iter().enumerate() {
            let ok = |want: fn(&IneqKind, usize) -> bool| {
                prob.ineq_kinds
                    .iter()
                    .enumerate()
                    .filter(|(_, kd)| want(kd, k))
                    .all(|(r, _)| gx[r] <= prob.qp.h[r])
            };
            let up = ok(|kd, k| matches!(kd, IneqKind::BranchUpper { branch, .. } if *branch == k));
            let lo = ok(|kd, k| matches!(kd, IneqKind::BranchLower { branch, .. } if *branch == k));
            let dv = (v[br.from_bus] - v[br.to_bus]).abs();
            let bound = net.branch_bound(k) * prob_limit_scale();
            prop_assert_eq!(up && lo, dv <= bound + 1e-15);
        }
    }
}
