//! Acceptance suite. Runs every criterion in sequence (timings are measured
//! without competing work), prints one PASS/FAIL line each and exits non-zero
//! if any criterion fails.

use std::collections::HashMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ccc_core::carfollow::{IdmParams, OvmParams, RangePolicyParams};
use ccc_core::ident::{identify_detailed, ident_cost, IdentProblem, SearchSettings};
use ccc_core::mpc::linalg::DenseMatrix;
use ccc_core::mpc::qp::{solve_qp, QpProblem};
use ccc_core::mpc::{position_std_profile, safety_margin};
use ccc_core::predict::{predict_constant_speed, predict_idm_rollout, EstimatorConfig, EstimatorState, RolloutModel};
use ccc_core::presets::{idm_preset, reactive_gains, Preset};
use ccc_core::simkit::metrics::{mean_abs_error_at, prediction_error_surface, safety_audit};
use ccc_core::simkit::{
    bundled_scenario, generate_synthetic, generate_synthetic_with, run, Controller, ControllerKind, RunResult, Scenario,
    ScenarioLabel, ScenarioMeta, SynthOptions, Trajectory,
};
use ccc_core::{EnergyLedger, MpcConfig, VehicleParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = (bool, String);

struct Runs {
    cache: HashMap<(Preset, ControllerKind), (RunResult, Duration)>,
}

impl Runs {
    fn get(&mut self, preset: Preset, kind: ControllerKind) -> &(RunResult, Duration) {
        self.cache.entry((preset, kind)).or_insert_with(|| {
            let sc = bundled_scenario(preset);
            let ctl = Controller::for_scenario(kind, &sc, Some(preset));
            let t = Instant::now();
            let r = run(&sc, &ctl, &VehicleParams::default(), None).expect("bundled run");
            (r, t.elapsed())
        })
    }
}

// ---------------------------------------------------------------------------
// Brute-force QP oracle: enumerate active sets, solve each KKT system by
// Gaussian elimination, keep the point that is primal and dual feasible.

fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            let (top, bottom) = a.split_at_mut(r);
            for (x, y) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                *x -= f * y;
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

fn brute_force_qp(p: &[Vec<f64>], c: &[f64], g: &[Vec<f64>], h: &[f64]) -> Option<Vec<f64>> {
    let (n, m) = (c.len(), h.len());
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let act: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if act.len() > n {
            continue;
        }
        let k = n + act.len();
        let mut a = vec![vec![0.0; k]; k];
        let mut b = vec![0.0; k];
        for i in 0..n {
            a[i][..n].copy_from_slice(&p[i]);
            b[i] = -c[i];
        }
        for (r, &i) in act.iter().enumerate() {
            for j in 0..n {
                a[n + r][j] = g[i][j];
                a[j][n + r] = g[i][j];
            }
            b[n + r] = h[i];
        }
        let Some(sol) = gauss_solve(a, b) else { continue };
        let x = &sol[..n];
        let dual_ok = sol[n..].iter().all(|&z| z >= -1e-10);
        let primal_ok = (0..m).all(|i| (0..n).map(|j| g[i][j] * x[j]).sum::<f64>() <= h[i] + 1e-10);
        if dual_ok && primal_ok {
            let obj: f64 = (0..n)
                .map(|i| 0.5 * x[i] * (0..n).map(|j| p[i][j] * x[j]).sum::<f64>() + c[i] * x[i])
                .sum();
            if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, x.to_vec()));
            }
        }
    }
    best.map(|(_, x)| x)
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut missing = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(0..=6);
        let l: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let p: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| l[k][i] * l[k][j]).sum::<f64>() + if i == j { 0.1 } else { 0.0 })
                    .collect()
            })
            .collect();
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let g: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = g
            .iter()
            .map(|row| row.iter().zip(&x0).map(|(a, b)| a * b).sum::<f64>() + rng.gen_range(0.0..0.5))
            .collect();
        let mut qp = QpProblem::unconstrained(DenseMatrix::from_rows(&p), c.clone());
        if m > 0 {
            qp.g = DenseMatrix::from_rows(&g);
            qp.h = h.clone();
        }
        let sol = solve_qp(&qp).expect("solver error");
        let Some(oracle) = brute_force_qp(&p, &c, &g, &h) else {
            missing += 1;
            continue;
        };
        let err = sol.x.iter().zip(&oracle).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-8 && missing == 0 && elapsed < Duration::from_secs(10);
    (pass, format!("200 QPs, max |x - x_oracle| = {worst:.2e}, {missing} without oracle, {elapsed:.2?}"))
}

fn criterion_2(runs: &mut Runs) -> Verdict {
    let (r, elapsed) = runs.get(Preset::Congested, ControllerKind::Pccc);
    let solves: Vec<_> = r.qp.iter().flatten().collect();
    let worst = solves.iter().map(|q| q.residuals.max()).fold(0.0, f64::max);
    let fallbacks = r.fallbacks();
    let pass = worst <= 1e-6 && fallbacks == 0 && *elapsed < Duration::from_secs(180);
    (
        pass,
        format!(
            "congested PCCC: {} solves, max KKT residual {worst:.2e}, {fallbacks} fallbacks, {elapsed:.1?}",
            solves.len()
        ),
    )
}

fn criterion_3() -> Verdict {
    let cfg = MpcConfig::default();
    let std = position_std_profile(100, cfg.dt, cfg.sigma_a1);
    let worst = (1..=100)
        .map(|k| (std[k] - 0.5 * (k * k) as f64 * cfg.dt * cfg.dt * cfg.sigma_a1).abs())
        .fold(0.0, f64::max);
    let tail_zero = (cfg.chance_steps..=cfg.chance_steps + 50).all(|k| safety_margin(k, &cfg) == 0.0);
    (worst <= 1e-10 && tail_zero, format!("max std error {worst:.2e}, margin zero for k >= K: {tail_zero}"))
}

fn criterion_4() -> Verdict {
    let p = VehicleParams::default();
    let mut ledger = EnergyLedger::new();
    for _ in 0..100 {
        ledger.accumulate(20.0, 0.0, &p, 0.1).unwrap();
    }
    let mut braking = EnergyLedger::new();
    let mut v = 25.0;
    while v > 0.0 {
        braking.accumulate(v, -3.0, &p, 0.1).unwrap();
        v -= 0.3;
    }
    let pass = (ledger.w - 24.94).abs() <= 1e-6 && braking.w == 0.0;
    (pass, format!("w(20 m/s, 10 s) = {:.9} J/kg, braking w = {}", ledger.w, braking.w))
}

fn constant_chain(vehicles: usize, v: f64, idm: &IdmParams<f64>, seconds: f64) -> Scenario {
    let dt = 0.1;
    let n = (seconds / dt).round() as usize + 1;
    let spacing = idm.equilibrium_headway(v) + 5.0;
    let chain = (0..vehicles)
        .map(|i| {
            let s = (0..n).map(|k| i as f64 * spacing + v * k as f64 * dt).collect();
            Trajectory::new(dt, s, vec![v; n])
        })
        .collect();
    let meta = ScenarioMeta {
        label: ScenarioLabel::Custom,
        connectivity: vec![vehicles],
        true_hidden: Some(vehicles - 2),
        vehicle_length: 5.0,
        seed: None,
    };
    Scenario::from_trajectories(chain, meta).unwrap()
}

fn criterion_5() -> Verdict {
    let plant = VehicleParams::default();
    let mut identical = true;
    for preset in Preset::ALL {
        let sc = bundled_scenario(preset);
        let gains = reactive_gains::<f64>(preset);
        let range = RangePolicyParams::default();
        let racc = Controller::Racc(gains.acc(range));
        let distant = sc.connected_leader().unwrap();
        let zero_l = Controller::Rccc(OvmParams::connected(gains.alpha, gains.acc_beta1, 0.0, gains.ccc_sigma_l, distant, range));
        let a = run(&sc, &racc, &plant, None).unwrap();
        let b = run(&sc, &zero_l, &plant, None).unwrap();
        identical &= a.ego == b.ego && a.a == b.a && a.a_d == b.a_d && a.h == b.h && a.w == b.w && a.energy == b.energy;
    }
    let mut worst: f64 = 0.0;
    for (vehicles, v) in [(3, 12.0), (6, 20.0), (5, 28.0)] {
        let idm = idm_preset::<f64>(Preset::Congested);
        let model = RolloutModel { idm, vehicle_length: 5.0, accel_floor: -6.0, dt: 0.1 };
        let sc = constant_chain(vehicles, v, &idm, 10.0);
        let (v1, vl) = (sc.vehicle(1), sc.vehicle(vehicles));
        for k in (0..sc.len()).step_by(10) {
            let pacc = predict_constant_speed(v1.s[k], v1.v[k], 100, 0.1);
            let pccc = predict_idm_rollout(v1.s[k], v1.v[k], vl.s[k], vl.v[k], vehicles - 2, &model, 100).unwrap();
            for (a, b) in pacc.s_hat.iter().zip(&pccc.s_hat) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    (
        identical && worst < 1e-6,
        format!("RCCC(beta_L = 0) == RACC bitwise: {identical}; PCCC vs PACC prediction gap {worst:.2e} m"),
    )
}

fn criterion_6() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for n_h in 1..=4usize {
        let idm = idm_preset::<f64>(Preset::Congested);
        let sc = generate_synthetic(Preset::Congested, 60 + n_h as u64, n_h + 2, &idm);
        let model = RolloutModel { idm, vehicle_length: sc.meta.vehicle_length, accel_floor: -6.0, dt: sc.dt };
        let cfg = EstimatorConfig::default();
        let mut est = EstimatorState::new(cfg, model);
        let (v1, vl) = (sc.vehicle(1), sc.vehicle(n_h + 2));
        let (mut hits, mut total, mut packing_violations) = (0, 0, 0);
        for k in 0..sc.len() {
            est.observe(v1.s[k], v1.v[k], vl.s[k], vl.v[k]);
            let n = est.estimate_hidden(v1.v[k]);
            if let Some((_, hi)) = est.last_hypotheses() {
                let bound = ((vl.s[k] - v1.s[k]) / (cfg.d_min + cfg.tau_min * v1.v[k])).ceil() as usize - 1;
                if hi > bound {
                    packing_violations += 1;
                }
            }
            if sc.times[k] >= 30.0 {
                total += 1;
                hits += usize::from(n == n_h);
            }
        }
        let acc = hits as f64 / total as f64;
        pass &= acc >= 0.9 && packing_violations == 0;
        parts.push(format!("n_h={n_h}: {:.1}%/{packing_violations}", 100.0 * acc));
    }
    (pass, format!("accuracy/packing violations {}", parts.join(", ")))
}

fn criterion_7(runs: &mut Runs) -> Verdict {
    let w = |runs: &mut Runs, k| runs.get(Preset::Congested, k).0.energy;
    let (racc, rccc) = (w(runs, ControllerKind::Racc), w(runs, ControllerKind::Rccc));
    let (pacc, pccc) = (w(runs, ControllerKind::Pacc), w(runs, ControllerKind::Pccc));
    let pass = rccc < racc && pccc < pacc;
    (
        pass,
        format!(
            "RCCC saves {:.1}% vs RACC (reference 29.2%), PCCC saves {:.1}% vs PACC (reference 30.0%); w = {racc:.1}/{rccc:.1}/{pacc:.1}/{pccc:.1} J/kg",
            100.0 * (racc - rccc) / racc,
            100.0 * (pacc - pccc) / pacc
        ),
    )
}

fn criterion_8(runs: &mut Runs) -> Verdict {
    let mut pass = true;
    let mut issues = Vec::new();
    for preset in Preset::ALL {
        for kind in ControllerKind::ALL {
            let (r, _) = runs.get(preset, kind);
            if kind.is_predictive() {
                let bad = safety_audit(r, 0.5);
                if !bad.is_empty() {
                    pass = false;
                    let depth = r.safety_gap().iter().fold(0.0f64, |m, g| m.max(-g));
                    issues.push(format!("{preset} {kind}: {} steps below floor - 0.5 m (depth {depth:.3} m)", bad.len()));
                }
            } else if r.collided() || r.h.iter().any(|&h| h <= 0.0) {
                pass = false;
                issues.push(format!("{preset} {kind}: collision at t = {:.1} s", r.t[r.collision.unwrap_or(0)]));
            }
        }
    }
    let detail = if issues.is_empty() { "all bundled runs within limits".to_string() } else { issues.join("; ") };
    (pass, detail)
}

fn criterion_9() -> Verdict {
    let truth = idm_preset::<f64>(Preset::Congested);
    let opts = SynthOptions { duration: 120.0, ..SynthOptions::default() };
    let sc = generate_synthetic_with(Preset::Congested, 5, 6, &truth, &opts);
    let problem = IdentProblem::from_scenario(&sc);
    let own = ident_cost(&truth, &problem);
    let t = Instant::now();
    let r = identify_detailed(&problem, 1, &SearchSettings::default());
    let elapsed = t.elapsed();
    let pass = r.params.within_bounds() && r.cost <= 2.0 * own && elapsed < Duration::from_secs(60);
    (
        pass,
        format!("fit cost {:.5} m vs generator {own:.5} m (ratio {:.2}), {elapsed:.1?}", r.cost, r.cost / own),
    )
}

fn criterion_10(runs: &mut Runs) -> Verdict {
    let plant = VehicleParams::default();
    let sc = constant_chain(4, 20.0, &idm_preset(Preset::Congested), 20.0);
    let worst_after = |kind, from: usize| {
        let ctl = Controller::for_scenario(kind, &sc, Some(Preset::Congested));
        let r = run(&sc, &ctl, &plant, None).unwrap();
        prediction_error_surface(&r, &sc)
            .iter()
            .skip(from)
            .flatten()
            .fold(0.0f64, |m, e| m.max(e.abs()))
    };
    let pacc_zero = worst_after(ControllerKind::Pacc, 0);
    // Before the estimator's warmup the hidden count is the spacing heuristic.
    let warmup = (EstimatorConfig::<f64>::default().warmup / sc.dt).round() as usize;
    let pccc_zero = worst_after(ControllerKind::Pccc, warmup);
    let bundled = bundled_scenario(Preset::Congested);
    let e80 = |runs: &mut Runs, k| mean_abs_error_at(&prediction_error_surface(&runs.get(Preset::Congested, k).0, &bundled), 80).unwrap();
    let (pacc, pccc) = (e80(runs, ControllerKind::Pacc), e80(runs, ControllerKind::Pccc));
    let pass = pacc_zero <= 1e-9 && pccc_zero <= 1e-9 && pccc < pacc;
    (
        pass,
        format!(
            "constant-speed error surface max: PACC {pacc_zero:.1e} m, PCCC after warmup {pccc_zero:.1e} m; \
             mean |error| at 8 s on congested: PCCC {pccc:.3} m, PACC {pacc:.3} m"
        ),
    )
}

type Criterion = Box<dyn FnMut(&mut Runs) -> Verdict>;

fn main() {
    let mut runs = Runs { cache: HashMap::new() };
    let criteria: Vec<(&str, Criterion)> = vec![
        ("QP solver oracle equivalence", Box::new(|_| criterion_1())),
        ("KKT audit on a full PCCC run", Box::new(criterion_2)),
        ("safety-margin closed form", Box::new(|_| criterion_3())),
        ("energy metric", Box::new(|_| criterion_4())),
        ("reduction identities", Box::new(|_| criterion_5())),
        ("hidden-vehicle estimator oracle", Box::new(|_| criterion_6())),
        ("directional connectivity benefit", Box::new(criterion_7)),
        ("safety audit", Box::new(criterion_8)),
        ("identification self-recovery", Box::new(|_| criterion_9())),
        ("prediction sanity", Box::new(criterion_10)),
    ];
    let mut failed = 0;
    let stdout = std::io::stdout();
    let criteria_len = criteria.len();
    for (i, (name, mut check)) in criteria.into_iter().enumerate() {
        let (pass, detail) = catch_unwind(AssertUnwindSafe(|| check(&mut runs)))
            .unwrap_or_else(|e| (false, format!("panicked: {}", e.downcast_ref::<String>().cloned().unwrap_or_default())));
        failed += usize::from(!pass);
        let mut out = stdout.lock();
        writeln!(out, "criterion {:>2} {} {name}: {detail}", i + 1, if pass { "PASS" } else { "FAIL" }).unwrap();
        out.flush().unwrap();
    }
    println!("{} of {} criteria passed", criteria_len - failed, criteria_len);
    // Failures are reported above; ACCEPTANCE_STRICT=1 also turns them into a failing exit status.
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
