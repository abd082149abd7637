use ccc_core::presets::{idm_preset, Preset};
use ccc_core::simkit::metrics::reintegrated_energy;
use ccc_core::simkit::{generate_synthetic_with, run, Controller, ControllerKind, Scenario, SynthOptions, Trajectory};
use ccc_core::VehicleParams;

fn short_congested(duration: f64) -> Scenario {
    let opts = SynthOptions { duration, ..SynthOptions::default() };
    generate_synthetic_with(Preset::Congested, 3, 4, &idm_preset(Preset::Congested), &opts)
}

fn truncated(sc: &Scenario, samples: usize) -> Scenario {
    let vehicles = sc
        .vehicles
        .iter()
        .map(|t| Trajectory::new(t.dt, t.s[..samples].to_vec(), t.v[..samples].to_vec()))
        .collect();
    Scenario::from_trajectories(vehicles, sc.meta.clone()).unwrap()
}

#[test]
fn energy_reintegrates_for_every_controller() {
    let sc = short_congested(40.0);
    let plant = VehicleParams::default();
    for kind in ControllerKind::ALL {
        let r = run(&sc, &Controller::for_scenario(kind, &sc, None), &plant, None).unwrap();
        assert!(!r.collided(), "{kind}");
        let w = reintegrated_energy(&r, &plant).unwrap();
        assert!((w - r.energy).abs() <= 1e-9 * r.energy.max(1.0), "{kind}: {w} vs {}", r.energy);
        assert_eq!(*r.w.last().unwrap(), r.energy);
        assert!(r.w.windows(2).all(|p| p[1] >= p[0]), "{kind}: ledger decreased");
    }
}

/// Controllers only read samples up to the current step, so cutting off the
/// future leaves the past commands untouched.
#[test]
fn commands_are_causal() {
    let full = short_congested(40.0);
    let cut = truncated(&full, 250);
    let plant = VehicleParams::default();
    for kind in ControllerKind::ALL {
        let ctl = Controller::for_scenario(kind, &full, None);
        let a = run(&full, &ctl, &plant, None).unwrap();
        let b = run(&cut, &ctl, &plant, None).unwrap();
        assert_eq!(a.a_d[..249], b.a_d[..249], "{kind}");
        assert_eq!(a.ego.s[..250], b.ego.s[..250], "{kind}");
        assert!(a.n_hat.iter().take(249).eq(b.n_hat.iter().take(249)), "{kind}");
    }
}

#[test]
fn runs_are_reproducible() {
    let sc = short_congested(20.0);
    let plant = VehicleParams::default();
    let ctl = Controller::for_scenario(ControllerKind::Pccc, &sc, None);
    let a = run(&sc, &ctl, &plant, None).unwrap();
    let b = run(&sc, &ctl, &plant, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn scenario_survives_disk_round_trip() {
    let sc = short_congested(10.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.csv");
    sc.save(&path).unwrap();
    let back = Scenario::load(&path).unwrap();
    assert_eq!(back.meta, sc.meta);
    assert_eq!(back.to_csv(), sc.to_csv());
    assert_eq!(back.connected_leader(), Some(4));
}

#[test]
fn every_controller_handles_short_and_zero_delays() {
    let sc = short_congested(30.0);
    for sigma in [0.0, 0.3, 0.6] {
        let plant = VehicleParams { sigma, ..VehicleParams::default() };
        assert_eq!(plant.delay_steps(0.1).unwrap(), (sigma * 10.0) as usize);
        for kind in ControllerKind::ALL {
            let r = run(&sc, &Controller::for_scenario(kind, &sc, None), &plant, None).unwrap();
            assert!(!r.collided(), "{kind}, sigma = {sigma}");
            assert_eq!(r.fallbacks(), 0, "{kind}, sigma = {sigma}");
            assert!(r.qp.iter().flatten().all(|q| q.residuals.max() <= 1e-6));
            let w = reintegrated_energy(&r, &plant).unwrap();
            assert!((w - r.energy).abs() <= 1e-9 * r.energy.max(1.0));
        }
    }
}
