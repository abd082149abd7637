use ccc_core::dynamics::VehicleState;
use ccc_core::mpc::linalg::DenseMatrix;
use ccc_core::mpc::qp::{kkt_residuals, solve_qp, solve_qp_with, QpProblem, QpSettings, QpStatus};
use ccc_core::mpc::{mpc_step, safety_margins};
use ccc_core::predict::predict_constant_speed;
use ccc_core::MpcConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Strictly convex QP with a known feasible point `x0`.
fn random_qp(seed: u64, n: usize, m_eq: usize, m_in: usize) -> (QpProblem<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| u(-1.0, 1.0)).collect()).collect();
    let mut p = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s: f64 = (0..n).map(|k| m[i][k] * m[j][k]).sum();
            if i == j {
                s += 0.1;
            }
            p.row_mut(i)[j] = s;
        }
    }
    let x0: Vec<f64> = (0..n).map(|_| u(-2.0, 2.0)).collect();
    let c: Vec<f64> = (0..n).map(|_| u(-5.0, 5.0)).collect();
    let mut random_rows = |m: usize| {
        let mut a = DenseMatrix::zeros(m, n);
        for i in 0..m {
            a.row_mut(i).iter_mut().for_each(|x| *x = u(-1.0, 1.0));
        }
        a
    };
    let a_eq = random_rows(m_eq);
    let g = random_rows(m_in);
    let mut qp = QpProblem::unconstrained(p, c);
    qp.b_eq = a_eq.mul_vec(&x0);
    qp.a_eq = a_eq;
    qp.h = g.mul_vec(&x0).into_iter().map(|r| r + u(0.0, 1.0)).collect();
    qp.g = g;
    (qp, x0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn qp_solutions_satisfy_kkt(seed in any::<u64>(), n in 1usize..8, m_eq in 0usize..3, m_in in 0usize..10) {
        let (qp, x0) = random_qp(seed, n, m_eq.min(n - 1), m_in);
        let sol = solve_qp(&qp).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        let r = kkt_residuals(&qp, &sol.x, &sol.y, &sol.z);
        prop_assert!(r.max() <= 1e-6, "{:?}", r);
        prop_assert!(sol.objective <= qp.objective(&x0) + 1e-8);
    }

    #[test]
    fn qp_is_deterministic_and_warm_start_neutral(seed in any::<u64>(), n in 1usize..8, m_in in 0usize..10) {
        let (qp, x0) = random_qp(seed, n, 0, m_in);
        let a = solve_qp(&qp).unwrap();
        let b = solve_qp(&qp).unwrap();
        prop_assert_eq!(&a, &b);
        let warm = solve_qp_with(&qp, &QpSettings::default(), Some(&x0)).unwrap();
        prop_assert!((warm.objective - a.objective).abs() <= 1e-6 * (1.0 + a.objective.abs()));
    }

    #[test]
    fn margins_vanish_after_schedule_and_decay_after_peak(
        sigma in 0.0f64..2.0,
        alpha_start in 0.51f64..0.999,
        chance_steps in 2usize..150,
        horizon in 1usize..200,
    ) {
        let cfg = MpcConfig { sigma_a1: sigma, alpha_start, chance_steps, horizon, ..MpcConfig::default() };
        let m = safety_margins(horizon, &cfg);
        prop_assert!(m.iter().all(|&x| x >= 0.0));
        for (k, &x) in m.iter().enumerate() {
            if k >= chance_steps {
                prop_assert_eq!(x, 0.0);
            }
        }
        let peak = m.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(k, _)| k);
        prop_assert!(m[peak..].windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mpc_command_respects_envelope(
        v0 in 0.0f64..30.0,
        v1 in 0.0f64..30.0,
        gap in 5.0f64..80.0,
        committed in proptest::collection::vec(-3.0f64..1.0, 6),
    ) {
        let cfg = MpcConfig { horizon: 40, chance_steps: 40, ..MpcConfig::default() };
        let x0 = VehicleState::new(0.0, v0);
        let pred = predict_constant_speed(gap + cfg.vehicle.length, v1, cfg.horizon, cfg.dt);
        let out = mpc_step(&x0, &committed, &pred, &cfg, 0.0).unwrap();
        prop_assert!(!out.fallback);
        let vq = out.planned_speeds(v0, cfg.dt)[committed.len()];
        let tol = 1e-6;
        prop_assert!(out.command >= cfg.vehicle.u_min - tol, "{} below u_min", out.command);
        prop_assert!(out.command <= cfg.vehicle.accel_cap(vq) + tol, "{} above cap at v = {vq}", out.command);
    }
}
