mod support;

use flexsched_qp::{kkt_residuals, solve, CscMatrix, QpStatus, Settings, Solver};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{active_set_oracle, random_dense, random_sparse};

#[test]
fn sparse_instances_reach_kkt_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..60 {
        let prob = random_sparse(&mut rng);
        let sol = solve(&prob, 1e-6, 20_000).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "case {case} n={}", prob.n());
        let r = kkt_residuals(&prob, &sol).unwrap();
        assert!(r.all_below(1e-6), "case {case}: {r:?}");
    }
}

#[test]
fn dense_definite_instances_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let qp = random_dense(&mut rng, true);
        let (x_star, j_star) = active_set_oracle(&qp).expect("oracle finds a point");
        let sol = solve(&qp.to_problem(), 1e-9, 20_000).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "case {case}");
        let x = DVector::from_vec(sol.x.clone());
        assert!((&x - &x_star).amax() <= 1e-6, "case {case}: x {x} vs {x_star}");
        assert!((sol.objective - j_star).abs() <= 1e-6, "case {case}");
        // never better than the true optimum by more than the tolerance
        assert!(sol.objective >= j_star - 1e-9 * (1.0 + j_star.abs()));
    }
}

#[test]
fn dense_semidefinite_instances_match_oracle_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..50 {
        let qp = random_dense(&mut rng, false);
        let (_, j_star) = active_set_oracle(&qp).expect("oracle finds a point");
        let sol = solve(&qp.to_problem(), 1e-9, 20_000).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "case {case}");
        assert!((sol.objective - j_star).abs() <= 1e-6, "case {case}: {} vs {j_star}", sol.objective);
    }
}

#[test]
fn repeated_solves_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let prob = random_sparse(&mut rng);
    let a = solve(&prob, 1e-6, 20_000).unwrap();
    let b = solve(&prob, 1e-6, 20_000).unwrap();
    assert_eq!(a.iterations, b.iterations);
    assert_eq!(a.x, b.x);
    // a warm instance gives the same answer as a fresh one
    let mut solver = Solver::default();
    let _ = solver.solve(&random_sparse(&mut rng)).unwrap();
    let c = solver.solve(&prob).unwrap();
    let d = solver.solve(&prob).unwrap();
    assert_eq!(c.x, d.x);
    assert_eq!(c.iterations, a.iterations);
}

#[test]
fn perturbed_optimum_shows_in_stationarity() {
    // min ½x² s.t. x ≥ 1 : x* = 1, y_bound = -1
    let mut prob = flexsched_qp::QpProblem::empty(1);
    prob.p = CscMatrix::identity(1);
    prob.lb = vec![1.0];
    let mut sol = solve(&prob, 1e-9, 1000).unwrap();
    let r = kkt_residuals(&prob, &sol).unwrap();
    assert!(r.all_below(1e-9));
    sol.x[0] += 0.1;
    let r = kkt_residuals(&prob, &sol).unwrap();
    assert!((r.stationarity - 0.1).abs() < 1e-9, "{r:?}");
}

#[test]
fn residuals_reject_wrong_sizes() {
    let prob = flexsched_qp::QpProblem::empty(2);
    let mut sol = solve(&prob, 1e-6, 10).unwrap();
    sol.x.push(0.0);
    assert!(kkt_residuals(&prob, &sol).is_err());
}

#[test]
fn iteration_log_is_recorded_when_enabled() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let prob = random_sparse(&mut rng);
    let mut solver = Solver::new(Settings { record_log: true, polish: false, ..Settings::default() });
    let sol = solver.solve(&prob).unwrap();
    assert!(!solver.iteration_log().is_empty());
    assert!(solver.iteration_log().len() * 10 >= sol.iterations);
    let dir = std::env::temp_dir().join(format!("qp-log-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("log.csv");
    flexsched_qp::write_iteration_log(&path, solver.iteration_log()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("iter,primal_res,dual_res,objective"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn argmin_invariant_under_objective_scaling(seed in 0u64..10_000, scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qp = random_dense(&mut rng, true);
        let prob = qp.to_problem();
        let mut scaled = prob.clone();
        scaled.p.scale(scale);
        scaled.q.iter_mut().for_each(|v| *v *= scale);
        let a = solve(&prob, 1e-8, 20_000).unwrap();
        let b = solve(&scaled, 1e-8, 20_000).unwrap();
        prop_assert_eq!(a.status, QpStatus::Optimal);
        prop_assert_eq!(b.status, QpStatus::Optimal);
        for (u, v) in a.x.iter().zip(&b.x) {
            prop_assert!((u - v).abs() <= 1e-6);
        }
    }
}
