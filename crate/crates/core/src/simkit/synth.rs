//! Synthetic traffic: a scripted lead vehicle followed by an IDM chain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{Scenario, ScenarioMeta, Trajectory};
use crate::carfollow::IdmParams;
use crate::dynamics::{integrate, VehicleState};
use crate::presets::{idm_preset, Preset};

/// Sampling and integration settings of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOptions {
    pub duration: f64,
    pub dt: f64,
    /// Integration substeps per sample for the IDM followers.
    pub substeps: usize,
    pub vehicle_length: f64,
    /// Lower bound on follower accelerations [m/s^2].
    pub accel_floor: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            duration: 300.0,
            dt: 0.1,
            substeps: 2,
            vehicle_length: 5.0,
            accel_floor: -9.0,
        }
    }
}

/// Piecewise-linear speed program given by `(time, speed)` knots.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProgram {
    knots: Vec<(f64, f64)>,
}

impl SpeedProgram {
    fn hold_and_ramp(start: f64) -> Self {
        Self { knots: vec![(0.0, start)] }
    }

    fn hold_until(&mut self, t: f64) {
        let (_, v) = *self.knots.last().unwrap();
        self.knots.push((t, v));
    }

    fn ramp_to(&mut self, v: f64, rate: f64) {
        let (t0, v0) = *self.knots.last().unwrap();
        self.knots.push((t0 + (v - v0).abs() / rate, v));
    }

    fn end(&self) -> f64 {
        self.knots.last().unwrap().0
    }

    pub fn speed(&self, t: f64) -> f64 {
        let i = self.knots.partition_point(|&(tk, _)| tk <= t);
        if i == 0 {
            return self.knots[0].1;
        }
        if i == self.knots.len() {
            return self.knots[i - 1].1;
        }
        let (t0, v0) = self.knots[i - 1];
        let (t1, v1) = self.knots[i];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

fn step_program(rng: &mut ChaCha8Rng, duration: f64) -> SpeedProgram {
    let mut p = SpeedProgram::hold_and_ramp(0.0);
    p.hold_until(10.0 + rng.gen_range(0.0..5.0));
    p.ramp_to(18.0, 1.5);
    p.hold_until(duration * 0.4 + rng.gen_range(0.0..20.0));
    p.ramp_to(27.0, 1.0);
    p
}

fn congested_program(rng: &mut ChaCha8Rng, duration: f64) -> SpeedProgram {
    let mut p = SpeedProgram::hold_and_ramp(20.0);
    while p.end() < duration {
        let hold_fast = p.end() + rng.gen_range(15.0..25.0);
        p.hold_until(hold_fast);
        p.ramp_to(8.0, 1.5);
        let hold_slow = p.end() + rng.gen_range(10.0..20.0);
        p.hold_until(hold_slow);
        p.ramp_to(20.0, 1.0);
    }
    p
}

/// Sum of slow sinusoids bounded by 0.48 m/s around 30 m/s.
fn free_flow_speeds(rng: &mut ChaCha8Rng, times: &[f64]) -> Vec<f64> {
    let tones: Vec<(f64, f64)> = (0..4)
        .map(|_| (rng.gen_range(0.005..0.05), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    times
        .iter()
        .map(|&t| {
            30.0 + tones
                .iter()
                .map(|&(f, ph)| 0.12 * (std::f64::consts::TAU * f * t + ph).sin())
                .sum::<f64>()
        })
        .collect()
}

/// Speed series of the lead vehicle for one traffic regime.
pub fn lead_speed_profile(kind: Preset, seed: u64, times: &[f64]) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration = times.last().copied().unwrap_or(0.0);
    match kind {
        Preset::FreeFlow => free_flow_speeds(&mut rng, times),
        Preset::Step => {
            let p = step_program(&mut rng, duration);
            times.iter().map(|&t| p.speed(t)).collect()
        }
        Preset::Congested => {
            let p = congested_program(&mut rng, duration);
            times.iter().map(|&t| p.speed(t)).collect()
        }
    }
}

/// Simulates an IDM follower behind a sampled leader with `substeps` per sample.
///
/// Within a sample interval the leader is interpolated linearly.
pub fn follow_substepped(
    leader: &Trajectory,
    s0: f64,
    v0: f64,
    idm: &IdmParams<f64>,
    opts: &SynthOptions,
) -> Trajectory {
    let n = leader.len();
    let h = leader.dt / opts.substeps as f64;
    let mut x = VehicleState::new(s0, v0);
    let (mut s, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        s.push(x.s);
        v.push(x.v);
        if k + 1 == n {
            break;
        }
        for j in 0..opts.substeps {
            let w = j as f64 / opts.substeps as f64;
            let ls = leader.s[k] + w * (leader.s[k + 1] - leader.s[k]);
            let lv = leader.v[k] + w * (leader.v[k + 1] - leader.v[k]);
            let gap = ls - x.s - opts.vehicle_length;
            let a = idm.accel_floored(gap, x.v, lv, opts.accel_floor);
            x = integrate(&x, a, h);
            x.v = x.v.min(idm.v_max);
        }
    }
    Trajectory::new(leader.dt, s, v)
}

/// Synthetic scenario with `chain_len` vehicles using the default options.
pub fn generate_synthetic(kind: Preset, seed: u64, chain_len: usize, idm: &IdmParams<f64>) -> Scenario {
    generate_synthetic_with(kind, seed, chain_len, idm, &SynthOptions::default())
}

/// Generates a chain whose farthest vehicle follows the regime's speed program
/// and whose other vehicles drive IDM from equilibrium spacing.
///
/// The farthest vehicle is marked connected; all vehicles between it and
/// vehicle 1 are hidden.
pub fn generate_synthetic_with(
    kind: Preset,
    seed: u64,
    chain_len: usize,
    idm: &IdmParams<f64>,
    opts: &SynthOptions,
) -> Scenario {
    assert!(chain_len >= 2, "a chain needs at least two vehicles");
    let n = (opts.duration / opts.dt).round() as usize + 1;
    let times: Vec<f64> = (0..n).map(|k| k as f64 * opts.dt).collect();
    let v_lead = lead_speed_profile(kind, seed, &times);
    let mut s_lead = Vec::with_capacity(n);
    let spacing = idm.equilibrium_headway(v_lead[0]) + opts.vehicle_length;
    let mut pos = spacing * (chain_len - 1) as f64;
    s_lead.push(pos);
    for k in 1..n {
        pos += 0.5 * opts.dt * (v_lead[k - 1] + v_lead[k]);
        s_lead.push(pos);
    }
    let mut chain = vec![Trajectory::new(opts.dt, s_lead, v_lead)];
    for i in (1..chain_len).rev() {
        let leader = chain.last().unwrap();
        let f = follow_substepped(leader, spacing * (i - 1) as f64, leader.v[0], idm, opts);
        chain.push(f);
    }
    chain.reverse();
    let meta = ScenarioMeta {
        label: kind.into(),
        connectivity: vec![chain_len],
        true_hidden: Some(chain_len - 2),
        vehicle_length: opts.vehicle_length,
        seed: Some(seed),
    };
    Scenario::from_trajectories(chain, meta).expect("IDM chain keeps positive gaps")
}

/// Seeds of the bundled scenarios.
pub const BUNDLED_SEEDS: [(Preset, u64); 3] = [(Preset::FreeFlow, 11), (Preset::Step, 23), (Preset::Congested, 37)];

/// Chain length of the bundled scenarios (four hidden vehicles).
pub const BUNDLED_CHAIN: usize = 6;

/// The bundled scenario of a regime.
pub fn bundled_scenario(kind: Preset) -> Scenario {
    let seed = BUNDLED_SEEDS.iter().find(|(p, _)| *p == kind).map(|(_, s)| *s).unwrap();
    generate_synthetic(kind, seed, BUNDLED_CHAIN, &idm_preset(kind))
}

/// All bundled scenarios, keyed by regime.
pub fn bundled_scenarios() -> Vec<(Preset, Scenario)> {
    Preset::ALL.iter().map(|&p| (p, bundled_scenario(p))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(kind: Preset, seed: u64) -> Scenario {
        let opts = SynthOptions { duration: 60.0, ..SynthOptions::default() };
        generate_synthetic_with(kind, seed, 4, &idm_preset(kind), &opts)
    }

    #[test]
    fn sample_count() {
        let sc = generate_synthetic(Preset::Congested, 1, 6, &idm_preset(Preset::Congested));
        assert_eq!(sc.len(), 3001);
        assert_eq!(sc.num_vehicles(), 6);
        assert_eq!(sc.meta.true_hidden, Some(4));
        assert_eq!(sc.connected_leader(), Some(6));
    }

    #[test]
    fn deterministic_in_seed() {
        let a = short(Preset::FreeFlow, 5).to_csv();
        assert_eq!(a, short(Preset::FreeFlow, 5).to_csv());
        assert_ne!(a, short(Preset::FreeFlow, 6).to_csv());
    }

    #[test]
    fn step_plateaus_are_exact() {
        let times: Vec<f64> = (0..3001).map(|k| k as f64 * 0.1).collect();
        let v = lead_speed_profile(Preset::Step, 3, &times);
        assert_eq!(v[0], 0.0);
        assert!(v.contains(&18.0));
        assert_eq!(*v.last().unwrap(), 27.0);
        let plateau = v.iter().filter(|&&x| x == 18.0).count();
        assert!(plateau as f64 * 0.1 > 60.0);
        assert!(v.iter().all(|&x| (0.0..=27.0).contains(&x)));
    }

    #[test]
    fn congested_cycles_between_8_and_20() {
        let times: Vec<f64> = (0..3001).map(|k| k as f64 * 0.1).collect();
        let v = lead_speed_profile(Preset::Congested, 3, &times);
        assert!(v.iter().all(|&x| (8.0..=20.0).contains(&x)));
        let dips = v.windows(2).filter(|w| w[0] > 8.0 && w[1] == 8.0).count();
        assert!(dips >= 4, "{dips} braking cycles");
    }

    #[test]
    fn free_flow_chain_stays_near_equilibrium() {
        let idm = idm_preset::<f64>(Preset::FreeFlow);
        let sc = generate_synthetic(Preset::FreeFlow, 9, 6, &idm);
        let lead = sc.vehicle(6);
        assert!(lead.v.iter().all(|&v| (v - 30.0).abs() <= 0.5));
        let l = sc.meta.vehicle_length;
        for i in 1..6 {
            let (me, ahead) = (sc.vehicle(i), sc.vehicle(i + 1));
            for k in 0..sc.len() {
                let h = ahead.s[k] - me.s[k] - l;
                let dev = h - idm.equilibrium_headway(me.v[k]);
                assert!(dev.abs() <= 1.0, "vehicle {i} at step {k}: {dev}");
            }
        }
    }
}
