mod common;

use irmmv_core::baselines::{focuss_objective, mfocuss_run, msp_recover, somp_recover, BaselineConfig};
use irmmv_core::bench::{aggregate, mean_std, relative_error, ExperimentRecord, SolverKind};
use irmmv_core::dynamics::{
    beta_constant, contraction_margin, rho_interval, theorem_init_bound_log, unbalancedness, SmoothnessParams,
};
use irmmv_core::matrix::{matmul, matmul_tn, ridge_solve};
use irmmv_core::problem::{
    mu_coherence, read_matrix_csv, write_matrix_csv, Dims, ProblemInstance, RowMagnitudes, Snr,
};
use irmmv_core::solver::{gradients, recover, FactorPair, RecoveryConfig};
use irmmv_core::DenseMatrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |d| DenseMatrix::new(rows, cols, d).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..6, 1usize..6, 1usize..6)
}

fn close(a: &DenseMatrix, b: &DenseMatrix, rel: f64) -> bool {
    let scale = a.frobenius_norm().max(b.frobenius_norm()).max(1e-300);
    a.sub(b).unwrap().frobenius_norm() <= rel * scale
}

fn rotation(n: usize, angles: &[f64]) -> DenseMatrix {
    // product of Givens rotations in consecutive planes
    let mut q = DenseMatrix::identity(n).unwrap();
    for (k, &t) in angles.iter().enumerate().take(n.saturating_sub(1)) {
        let g = DenseMatrix::from_fn(n, n, |r, c| match (r, c) {
            _ if r == k && c == k => t.cos(),
            _ if r == k + 1 && c == k + 1 => t.cos(),
            _ if r == k && c == k + 1 => -t.sin(),
            _ if r == k + 1 && c == k => t.sin(),
            _ if r == c => 1.0,
            _ => 0.0,
        })
        .unwrap();
        q = matmul(&q, &g).unwrap();
    }
    q
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn matmul_is_associative((m, k, n) in dims(), p in 1usize..6, seed in 0u64..1000) {
        let mut rng = common::rng(seed);
        use rand::Rng;
        let mut draw = |r, c| DenseMatrix::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0)).unwrap();
        let (a, b, c) = (draw(m, k), draw(k, n), draw(n, p));
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        prop_assert!(close(&left, &right, 1e-12));
        prop_assert!(close(&matmul(&a, &b).unwrap(), &common::naive_matmul(&a, &b), 1e-13));
    }

    #[test]
    fn rotations_preserve_frobenius_norm(n in 2usize..7, angles in prop::collection::vec(-3.0f64..3.0, 6), m in matrix(6, 3, -5.0, 5.0)) {
        let q = rotation(n, &angles);
        let m = DenseMatrix::from_fn(n, 3, |r, c| m.get(r, c)).unwrap();
        let qm = matmul(&q, &m).unwrap();
        prop_assert!((qm.frobenius_norm() - m.frobenius_norm()).abs() <= 1e-10);
    }

    #[test]
    fn ridge_residual_is_orthogonal(a in matrix(6, 4, -1.0, 1.0), y in matrix(6, 2, -1.0, 1.0), lambda in 0.05f64..2.0) {
        let x = ridge_solve(&a, &y, lambda).unwrap();
        let r = y.sub(&matmul(&a, &x).unwrap()).unwrap();
        let opt = matmul_tn(&a, &r).unwrap().sub(&x.scale(lambda).unwrap()).unwrap();
        prop_assert!(opt.max_abs() <= 1e-8);
    }

    #[test]
    fn hadamard_commutes_and_distributes(
        a in prop::collection::vec(-64i32..64, 12),
        b in prop::collection::vec(-64i32..64, 12),
        c in prop::collection::vec(-64i32..64, 12),
    ) {
        let mk = |v: &[i32]| DenseMatrix::new(3, 4, v.iter().map(|&x| f64::from(x)).collect()).unwrap();
        let (a, b, c) = (mk(&a), mk(&b), mk(&c));
        prop_assert_eq!(a.hadamard(&b).unwrap(), b.hadamard(&a).unwrap());
        let lhs = a.hadamard(&b.add(&c).unwrap()).unwrap();
        let rhs = a.hadamard(&b).unwrap().add(&a.hadamard(&c).unwrap()).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn instances_are_deterministic_and_valid(m in 2usize..12, n in 2usize..10, l in 1usize..5, seed in 0u64..500, noisy in any::<bool>()) {
        let k = 1 + (seed as usize) % n;
        let dims = Dims { m, n, l, k };
        let snr = if noisy { Snr::Db(20.0) } else { Snr::Noiseless };
        let a = ProblemInstance::generate(dims, &RowMagnitudes::ConstantOne, snr, seed).unwrap();
        let b = ProblemInstance::generate(dims, &RowMagnitudes::ConstantOne, snr, seed).unwrap();
        prop_assert!(a.check_invariants().is_ok());
        let bits = |x: &DenseMatrix| x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.a), bits(&b.a));
        prop_assert_eq!(bits(&a.y), bits(&b.y));
        prop_assert_eq!(&a.support, &b.support);
    }

    #[test]
    fn coherence_ignores_column_order(a in matrix(5, 4, -1.0, 1.0), shift in 0usize..4) {
        let a = a.normalize_columns().unwrap();
        let cols: Vec<usize> = (0..4).map(|c| (c + shift) % 4).collect();
        let b = a.select_columns(&cols).unwrap();
        prop_assert!((mu_coherence(&a).unwrap() - mu_coherence(&b).unwrap()).abs() <= 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences(
        a in matrix(4, 3, 0.1, 2.0),
        y in matrix(4, 2, 0.1, 2.0),
        g in prop::collection::vec(0.1f64..2.0, 3),
        v in matrix(3, 2, 0.1, 2.0),
    ) {
        let fp = FactorPair::new(g.clone(), v.clone()).unwrap();
        let (dg, dv) = gradients(&fp, &a, &y).unwrap();
        let h = 1e-6;
        let mut fd = Vec::new();
        for i in 0..3 {
            let (mut gp, mut gm) = (g.clone(), g.clone());
            gp[i] += h;
            gm[i] -= h;
            fd.push((common::naive_loss(&a, &y, &gp, &v) - common::naive_loss(&a, &y, &gm, &v)) / (2.0 * h));
        }
        for k in 0..6 {
            let mut vp = v.as_slice().to_vec();
            let mut vm = vp.clone();
            vp[k] += h;
            vm[k] -= h;
            let (vp, vm) = (DenseMatrix::new(3, 2, vp).unwrap(), DenseMatrix::new(3, 2, vm).unwrap());
            fd.push((common::naive_loss(&a, &y, &g, &vp) - common::naive_loss(&a, &y, &g, &vm)) / (2.0 * h));
        }
        let an: Vec<f64> = dg.iter().chain(dv.as_slice()).copied().collect();
        let diff = an.iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = fd.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        prop_assert!(diff / scale <= 1e-5);
    }

    #[test]
    fn unbalancedness_is_homogeneous(g in prop::collection::vec(-2.0f64..2.0, 4), v in matrix(4, 3, -2.0, 2.0)) {
        let a = unbalancedness(&FactorPair::new(g.clone(), v.clone()).unwrap());
        let g2: Vec<f64> = g.iter().map(|x| 2.0 * x).collect();
        let b = unbalancedness(&FactorPair::new(g2, v.scale(2.0).unwrap()).unwrap());
        for (x, y) in a.per_row.iter().zip(&b.per_row) {
            prop_assert_eq!(4.0 * x, *y);
        }
        prop_assert!(a.epsilon_r <= a.per_row.iter().map(|x| x.abs()).sum::<f64>() + 1e-15);
    }

    #[test]
    fn contraction_margin_is_nonnegative(
        g1 in prop::collection::vec(-1.5f64..1.5, 5),
        g2 in prop::collection::vec(-1.5f64..1.5, 5),
        v1 in matrix(5, 3, -1.5, 1.5),
        v2 in matrix(5, 3, -1.5, 1.5),
    ) {
        let a = FactorPair::new(g1, v1).unwrap();
        let b = FactorPair::new(g2, v2).unwrap();
        prop_assert!(contraction_margin(&a, &b).unwrap() >= -1e-12);
    }

    #[test]
    fn beta_increases_in_every_argument(
        mu in 0.01f64..0.9, b_y in 0.1f64..5.0, c in 1.0f64..3.0,
        m in 1usize..20, n in 1usize..20, l in 1usize..20, which in 0usize..6,
    ) {
        let base = SmoothnessParams::new(c, 0.5 * c, b_y, c, mu, m, n, l).unwrap();
        let bumped = match which {
            0 => SmoothnessParams::new(c, 0.5 * c, b_y, c, (mu * 1.1).min(1.0), m, n, l),
            1 => SmoothnessParams::new(c, 0.5 * c, b_y * 1.1, c, mu, m, n, l),
            2 => SmoothnessParams::new(c * 1.1, 0.55 * c, b_y, c * 1.1, mu, m, n, l),
            3 => SmoothnessParams::new(c, 0.5 * c, b_y, c, mu, m + 1, n, l),
            4 => SmoothnessParams::new(c, 0.5 * c, b_y, c, mu, m, n + 1, l),
            _ => SmoothnessParams::new(c, 0.5 * c, b_y, c, mu, m, n, l + 1),
        }
        .unwrap();
        prop_assert!(beta_constant(&bumped) > beta_constant(&base));
    }

    #[test]
    fn init_bound_decreases_with_horizon(beta in 0.1f64..1e4, t in 0.0f64..10.0, dt in 0.01f64..5.0, n in 1usize..30, l in 1usize..30, d in 0.0f64..10.0) {
        let a = theorem_init_bound_log(0.1, beta, t, n, l, d).unwrap();
        let b = theorem_init_bound_log(0.1, beta, t + dt, n, l, d).unwrap();
        prop_assert!(b < a);
        prop_assert!(((a - b) / dt - beta).abs() <= 1e-9 * beta.max(1.0) * (1.0 + a.abs() / dt));
    }

    #[test]
    fn rho_interval_caps_at_alpha(log_alpha in -60.0f64..-5.0, beta in 0.0f64..10.0, n in 1usize..10, l in 1usize..10) {
        let alpha = log_alpha.exp();
        if let Some((lo, hi)) = rho_interval(alpha, beta, 0.1, n, l) {
            prop_assert_eq!(hi, alpha);
            prop_assert!(lo <= hi && lo >= 0.0);
        }
    }

    #[test]
    fn aggregates_recompute(values in prop::collection::vec((0usize..3, 0usize..3, 0.0f64..1.0, any::<bool>()), 1..40)) {
        let solvers = [SolverKind::Irmmv, SolverKind::Momp, SolverKind::Msp];
        let records: Vec<ExperimentRecord> = values
            .iter()
            .enumerate()
            .map(|(t, &(s, p, e, failed))| ExperimentRecord {
                solver: solvers[s],
                sweep_param: "k",
                sweep_value: p as f64,
                trial: t,
                rel_error: if failed { f64::NAN } else { e },
                wall_time_s: 0.0,
                iters: 0,
                support_exact: false,
                nonzero_rows: 0,
                final_loss: None,
                error: failed.then(|| "diverged".to_string()),
            })
            .collect();
        for agg in aggregate(&records) {
            let cell: Vec<f64> = records
                .iter()
                .filter(|r| r.solver == agg.solver && r.sweep_value == agg.sweep_value && r.error.is_none())
                .map(|r| r.rel_error)
                .collect();
            if cell.is_empty() {
                prop_assert!(agg.mean.is_nan());
                continue;
            }
            let n = cell.len() as f64;
            let mean = cell.iter().sum::<f64>() / n;
            let std = (cell.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!((agg.mean - mean).abs() <= 1e-12);
            prop_assert!((agg.std - std).abs() <= 1e-12);
            prop_assert_eq!(agg.successes, cell.len());
            prop_assert_eq!(mean_std(&cell).0, agg.mean);
        }
    }

    #[test]
    fn relative_error_is_scale_free(x in matrix(4, 3, 0.1, 2.0), s in 0.1f64..10.0, c in -3.0f64..3.0) {
        let e1 = relative_error(&x, &x.scale(c).unwrap()).unwrap();
        let e2 = relative_error(&x.scale(s).unwrap(), &x.scale(s * c).unwrap()).unwrap();
        prop_assert!((e1 - (1.0 - c).powi(2)).abs() <= 1e-12 * (1.0 + e1));
        prop_assert!((e1 - e2).abs() <= 1e-12 * (1.0 + e1));
    }

    #[test]
    fn matrix_csv_round_trips(x in matrix(3, 4, -1e6, 1e6)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_matrix_csv(&p, &x).unwrap();
        prop_assert_eq!(read_matrix_csv(&p).unwrap(), x);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(24) })]

    #[test]
    fn greedy_outputs_have_k_rows_and_shrinking_residuals(seed in 0u64..10_000, k in 1usize..8, noisy in any::<bool>()) {
        let snr = if noisy { Snr::Db(20.0) } else { Snr::Noiseless };
        let inst = ProblemInstance::generate(Dims { m: 30, n: 20, l: 4, k: 3 }, &RowMagnitudes::ConstantOne, snr, seed).unwrap();
        let cfg = BaselineConfig::new(k);
        let (xs, ss) = somp_recover(&inst.a, &inst.y, &cfg).unwrap();
        let (xm, sm) = msp_recover(&inst.a, &inst.y, &cfg).unwrap();
        prop_assert_eq!(common::nonzero_rows(&xs), ss.clone());
        prop_assert_eq!(common::nonzero_rows(&xm), sm);
        prop_assert_eq!(ss.len(), k);

        let mut last = inst.y.frobenius_norm();
        for j in 1..=k {
            let (xj, _) = somp_recover(&inst.a, &inst.y, &BaselineConfig::new(j)).unwrap();
            let r = inst.y.sub(&matmul(&inst.a, &xj).unwrap()).unwrap().frobenius_norm();
            prop_assert!(r < last || r <= 1e-12 * inst.y.frobenius_norm(), "residual {} after {} picks, {} before", r, j, last);
            last = r;
        }
        // same inputs, same bits
        prop_assert_eq!(somp_recover(&inst.a, &inst.y, &cfg).unwrap().0, xs);
    }

    #[test]
    fn focuss_objective_does_not_increase(seed in 0u64..10_000, p in 0.5f64..1.0) {
        let inst = ProblemInstance::generate(Dims::default(), &RowMagnitudes::ConstantOne, Snr::Db(40.0), seed).unwrap();
        let lambda = inst.noise_variance().unwrap();
        let cfg = BaselineConfig::new(3).with_lambda(lambda).with_p(p);
        let run = mfocuss_run(&inst.a, &inst.y, &cfg, true).unwrap();
        // The reweighting majorizes the penalty with weight 2λ/p, so that is
        // the objective it must not increase.
        let obj: Vec<f64> = run
            .iterates
            .iter()
            .map(|x| focuss_objective(&inst.a, &inst.y, x, 2.0 * lambda / p, p).unwrap())
            .collect();
        for w in obj.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-10), "objective rose from {} to {}", w[0], w[1]);
        }
        prop_assert_eq!(mfocuss_run(&inst.a, &inst.y, &cfg, false).unwrap().x_hat, run.x_hat);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(8) })]

    #[test]
    fn trajectory_row_norms_match_reconstruction(seed in 0u64..1000) {
        let dims = Dims { m: 12, n: 8, l: 5, k: 2 };
        let inst = ProblemInstance::generate(dims, &RowMagnitudes::ConstantOne, Snr::Noiseless, seed).unwrap();
        let mut cfg = RecoveryConfig::balanced(dims.l).with_alpha_g(0.1, dims.l).with_eta(1e-2).with_max_iters(400);
        cfg.record_every = 1;
        let mut fp = irmmv_core::solver::init_factors(dims.n, dims.l, &cfg).unwrap();
        let rec = recover(&inst.a, &inst.y, &cfg).unwrap();
        let mut stepper = irmmv_core::solver::GradientStepper::new(&inst.a, &inst.y).unwrap();
        for s in 0..rec.trajectory.len() {
            let x = fp.reconstruct();
            for i in 0..dims.n {
                prop_assert!((rec.trajectory.row_norms[s][i] - x.row_norm(i)).abs() <= 1e-12);
            }
            stepper.step(&mut fp, cfg.eta_g, cfg.eta_v, cfg.update_order).unwrap();
        }
    }
}
