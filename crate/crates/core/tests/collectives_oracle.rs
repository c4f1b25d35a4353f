mod common;

use common::*;
use disco_core::commsim::{hessian_similarity, ops};
use disco_core::localsolve::{apply_preconditioner_inverse, init_point, solve_local, solve_local_regularized, LocalProblem};
use disco_core::Execution;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn point(d: usize) -> Vec<f64> {
    (0..d).map(|j| ((j as f64) * 0.7).sin()).collect()
}

#[test]
fn collectives_equal_the_pooled_objective() {
    for m in [1, 3, 5] {
        for mut c in [ridge_cluster(m, 30, 6, 0.01, m as u64), logistic_cluster(m, 30, 6, 0.01, m as u64)] {
            let oracle = DenseOracle::of(&c);
            let w = point(6);
            let v: Vec<f64> = (0..6).map(|j| 1.0 - j as f64 * 0.3).collect();
            let (f, g, h) = oracle.eval(&w);
            let fv = c.distributed_value(&w).unwrap();
            assert!((fv - f).abs() <= 1e-12 * (1.0 + f.abs()));
            assert!(rel_err(&c.distributed_grad(&w).unwrap(), g.as_slice()) <= 1e-12);
            let hv = (&h * DVector::from_column_slice(&v)).as_slice().to_vec();
            assert!(rel_err(&c.distributed_hessvec(&w, &v).unwrap(), &hv) <= 1e-12);
            let dense = c.dense_hessian(&w).unwrap();
            assert!((dense - &h).abs().max() <= 1e-12);
        }
    }
}

#[test]
fn every_collective_costs_exactly_one_round() {
    let mut c = logistic_cluster(4, 20, 5, 0.1, 7);
    let w = point(5);
    let v = vec![1.0; 5];
    let curv = c.curvature(&w).unwrap();
    assert_eq!(c.rounds(), 0);
    c.distributed_grad(&w).unwrap();
    c.distributed_value(&w).unwrap();
    c.distributed_value_grad(&w).unwrap();
    c.hessvec_at(&curv, &v).unwrap();
    c.hessvec_pair_at(&curv, &v, &w).unwrap();
    c.allreduce_average(&vec![vec![1.0; 5]; 4]).unwrap();
    assert_eq!(c.rounds(), 6);
    let ledger = c.ledger();
    assert_eq!(ledger.rounds(), 6);
    for op in [ops::GRAD, ops::VALUE, ops::VALUE_GRAD, ops::HESSVEC, ops::HESSVEC_PAIR, ops::ALLREDUCE] {
        assert_eq!(ledger.count(op), 1, "{op}");
    }
    c.objective(&w).unwrap();
    c.gradient(&w).unwrap();
    c.dense_hessian(&w).unwrap();
    hessian_similarity(&c, &w, 5).unwrap();
    assert_eq!(c.rounds(), 6);
    assert!(c.diagnostic_evaluations() >= 4);
}

#[test]
fn similarity_matches_dense_spectral_norm() {
    for seed in 0..4 {
        let c = logistic_cluster(3, 25, 8, 0.01, seed);
        let w = point(8);
        let oracle = DenseOracle::of(&c);
        let dense = spectral_norm_sym(&(oracle.local_hessian(0, &w) - oracle.hessian(&w)));
        let est = hessian_similarity(&c, &w, 3000).unwrap();
        assert!(est <= dense * (1.0 + 1e-10));
        assert!(est >= 0.99 * dense, "{est} vs {dense}");
    }
    let single = ridge_cluster(1, 25, 4, 0.1, 0);
    assert_eq!(hessian_similarity(&single, &point(4), 10).unwrap(), 0.0);
}

#[test]
fn sequential_and_parallel_are_bitwise_equal() {
    let base = logistic_cluster(8, 40, 12, 0.01, 3);
    let mut seq = base.fresh().with_execution(Execution::Sequential);
    let mut par = base.fresh().with_execution(Execution::Parallel);
    let w = point(12);
    assert_eq!(seq.distributed_grad(&w).unwrap(), par.distributed_grad(&w).unwrap());
    assert_eq!(seq.distributed_value(&w).unwrap().to_bits(), par.distributed_value(&w).unwrap().to_bits());
    assert_eq!(seq.distributed_hessvec(&w, &w).unwrap(), par.distributed_hessvec(&w, &w).unwrap());
    assert_eq!(init_point(&mut seq, 0.1).unwrap(), init_point(&mut par, 0.1).unwrap());
}

#[test]
fn local_solve_satisfies_optimality() {
    let c = logistic_cluster(2, 40, 5, 0.01, 9);
    let oracle = DenseOracle::of(&c);
    let lin = vec![0.1, -0.2, 0.05, 0.0, 0.3];
    let center = vec![0.5, 0.5, -0.5, 0.0, 1.0];
    let rho = 0.3;
    let rep = solve_local(&LocalProblem::new(&c.shards()[1], c.loss(), rho).with_linear(&lin).with_center(&center), 1e-11).unwrap();
    let (x, y) = &oracle.parts[1];
    let n = x.nrows() as f64;
    let w = DVector::from_column_slice(&rep.w);
    let z = x * &w;
    let coef = DVector::from_iterator(x.nrows(), (0..x.nrows()).map(|r| -y[r] / (1.0 + (y[r] * z[r]).exp())));
    let grad = x.transpose() * coef / n + &w * 0.01 + DVector::from_column_slice(&lin) + (&w - DVector::from_column_slice(&center)) * rho;
    assert!(grad.norm() <= 1e-10);
    assert!(rep.objective_history.windows(2).all(|p| p[1] <= p[0]));
}

#[test]
fn ridge_local_solution_matches_normal_equations() {
    let c = ridge_cluster(2, 30, 6, 0.05, 4);
    let (x, y) = dense_rows(&c.shards()[0]);
    let n = x.nrows() as f64;
    let rho = 0.2;
    let a = x.transpose() * &x * (2.0 / n) + DMatrix::identity(6, 6) * (0.05 + rho);
    let b = x.transpose() * y * (2.0 / n);
    let exact = a.cholesky().unwrap().solve(&b);
    let got = solve_local_regularized(&c.shards()[0], c.loss(), rho, 1e-12).unwrap();
    assert!(max_abs_diff(&got, exact.as_slice()) <= 1e-10);
}

#[test]
fn init_point_is_average_of_local_solutions_and_costs_one_round() {
    let mut c = logistic_cluster(3, 30, 5, 0.02, 2);
    let w0 = init_point(&mut c, 0.1).unwrap();
    assert_eq!(c.rounds(), 1);
    assert_eq!(c.ledger().count(ops::INIT), 1);
    let mut avg = vec![0.0; 5];
    for s in c.shards() {
        let wi = solve_local_regularized(s, c.loss(), 0.1, 1e-12).unwrap();
        for (a, b) in avg.iter_mut().zip(&wi) {
            *a += b / 3.0;
        }
    }
    assert!(max_abs_diff(&w0, &avg) <= 1e-8);
}

#[test]
fn huge_rho_drives_init_to_zero() {
    let mut c = logistic_cluster(2, 30, 5, 0.02, 2);
    let w0 = init_point(&mut c, 1e9).unwrap();
    assert!(w0.iter().all(|x| x.abs() <= 1e-8));
}

#[test]
fn preconditioner_inverse_matches_dense_solve_without_rounds() {
    let c = logistic_cluster(3, 30, 6, 0.01, 5);
    let w = point(6);
    let oracle = DenseOracle::of(&c);
    let r: Vec<f64> = (0..6).map(|j| (j as f64 - 2.5) * 0.1).collect();
    for mu in [0.0, 1e-3, 0.5] {
        let p = oracle.local_hessian(0, &w) + DMatrix::identity(6, 6) * mu;
        let exact = p.cholesky().unwrap().solve(&DVector::from_column_slice(&r));
        let got = apply_preconditioner_inverse(c.master(), c.loss(), &w, mu, &r, 1e-12).unwrap();
        assert!(rel_err(&got, exact.as_slice()) <= 1e-9);
    }
    assert_eq!(c.rounds(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn allreduce_is_the_mean(m in 1usize..6, vals in proptest::collection::vec(-1e3f64..1e3, 18)) {
        let mut c = ridge_cluster(m, 4, 3, 0.1, 1);
        let rows: Vec<Vec<f64>> = (0..m).map(|i| vals[i * 3..i * 3 + 3].to_vec()).collect();
        let out = c.allreduce_average(&rows).unwrap();
        for j in 0..3 {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / m as f64;
            prop_assert!((out[j] - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
        }
        prop_assert_eq!(c.rounds(), 1);
    }

    #[test]
    fn rounds_count_collectives(calls in proptest::collection::vec(0u8..4, 0..20)) {
        let mut c = ridge_cluster(3, 5, 3, 0.1, 1);
        let w = [0.1, 0.2, 0.3];
        for &k in &calls {
            match k {
                0 => { c.distributed_grad(&w).unwrap(); }
                1 => { c.distributed_value(&w).unwrap(); }
                2 => { c.distributed_hessvec(&w, &w).unwrap(); }
                _ => { c.objective(&w).unwrap(); }
            }
        }
        let counted = calls.iter().filter(|&&k| k < 3).count();
        prop_assert_eq!(c.rounds(), counted);
        prop_assert_eq!(c.ledger().rounds(), counted);
    }

    #[test]
    fn hessvec_is_linear_and_symmetric(a in -3.0f64..3.0, seed in 0u64..50) {
        let mut c = logistic_cluster(2, 10, 4, 0.05, seed);
        let w = point(4);
        let u = vec![1.0, 0.0, -1.0, 0.5];
        let v = vec![0.2, 0.3, 0.1, -0.4];
        let (hu, hv) = c.distributed_hessvec_pair(&w, &u, &v).unwrap();
        let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + y).collect();
        let hc = c.distributed_hessvec(&w, &combo).unwrap();
        for j in 0..4 {
            prop_assert!((hc[j] - (a * hu[j] + hv[j])).abs() <= 1e-12);
        }
        let uhv: f64 = u.iter().zip(&hv).map(|(x, y)| x * y).sum();
        let vhu: f64 = v.iter().zip(&hu).map(|(x, y)| x * y).sum();
        prop_assert!((uhv - vhu).abs() <= 1e-12);
    }
}
