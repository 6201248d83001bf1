use irmmv_core::bench::relative_error;
use irmmv_core::problem::{Dims, ProblemInstance, RowMagnitudes, Snr};
use irmmv_core::solver::{init_factors, recover, GradientStepper, RecoveryConfig, StopReason, UpdateOrder};
use irmmv_core::Error;

fn default_instance(snr: Snr, seed: u64) -> ProblemInstance {
    ProblemInstance::generate(Dims::default(), &RowMagnitudes::ConstantOne, snr, seed).unwrap()
}

#[test]
fn default_step_diverges_on_the_default_instance() {
    // 3 g^4 η λ_max(A^T A) exceeds 1 once the rows approach norm 10
    let inst = default_instance(Snr::Noiseless, 0);
    let cfg = RecoveryConfig::balanced(100).with_max_iters(100_000);
    match recover(&inst.a, &inst.y, &cfg) {
        Err(Error::Divergence { iteration, last_finite }) => {
            assert!(iteration > 1_000);
            assert!(last_finite.g().iter().all(|v| v.is_finite()));
            assert!(last_finite.v().as_slice().iter().all(|v| v.is_finite()));
        }
        other => panic!("expected divergence, got {:?}", other.map(|r| r.iterations)),
    }
}

#[test]
fn noiseless_default_instance_recovered_at_a_stable_step() {
    let inst = default_instance(Snr::Noiseless, 0);
    let cfg = RecoveryConfig::balanced(100).with_eta(5e-3).with_max_iters(200_000);
    let rec = recover(&inst.a, &inst.y, &cfg).unwrap();
    let err = relative_error(&inst.x_true, &rec.x_hat).unwrap();
    assert!(err < 1e-2, "e_r {err}");
    assert_ne!(rec.stop, StopReason::MaxIters);
}

#[test]
fn g_stays_positive_through_convergence() {
    let inst = default_instance(Snr::Noiseless, 1);
    let cfg = RecoveryConfig::balanced(100).with_eta(5e-3);
    let mut fp = init_factors(25, 100, &cfg).unwrap();
    let mut stepper = GradientStepper::new(&inst.a, &inst.y).unwrap();
    let mut min_g = f64::INFINITY;
    for _ in 0..120_000 {
        stepper.step(&mut fp, cfg.eta_g, cfg.eta_v, UpdateOrder::Sequential).unwrap();
        min_g = fp.g().iter().fold(min_g, |m, &v| m.min(v));
    }
    assert!(min_g > 0.0, "min g {min_g}");
    assert!(relative_error(&inst.x_true, &fp.reconstruct()).unwrap() < 1e-6);
}

#[test]
fn loss_is_monotone_at_small_step() {
    let inst = default_instance(Snr::Db(40.0), 0);
    let mut cfg = RecoveryConfig::balanced(100).with_eta(1e-3).with_max_iters(300_000);
    cfg.record_every = 100;
    cfg.loss_tol = 0.0;
    cfg.rel_change_tol = 0.0;
    let rec = recover(&inst.a, &inst.y, &cfg).unwrap();
    let loss = &rec.trajectory.loss;
    assert!(loss.len() > 1000);
    for (s, w) in loss.windows(2).enumerate() {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "loss rose at sample {s}: {} -> {}", w[0], w[1]);
    }
    assert!(loss.last().unwrap() < &loss[0]);
}

#[test]
fn simultaneous_mode_also_recovers() {
    let dims = Dims { m: 20, n: 10, l: 5, k: 2 };
    let inst = ProblemInstance::generate(dims, &RowMagnitudes::ConstantOne, Snr::Noiseless, 3).unwrap();
    let mut cfg = RecoveryConfig::balanced(5).with_alpha_g(1e-2, 5).with_eta(1e-2).with_max_iters(200_000);
    cfg.update_order = UpdateOrder::Simultaneous;
    let rec = recover(&inst.a, &inst.y, &cfg).unwrap();
    assert!(relative_error(&inst.x_true, &rec.x_hat).unwrap() < 1e-6);
}
