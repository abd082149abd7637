//! Closed-loop simulation of the ego vehicle behind replayed traffic.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scenario::{Scenario, Trajectory};
use crate::carfollow::{OvmParams, RangePolicyParams};
use crate::dynamics::{step, DelayBuffer, DynamicsError, EnergyLedger, VehicleParams, VehicleState};
use crate::mpc::qp::{KktResiduals, QpStatus};
use crate::mpc::{MpcConfig, MpcController, MpcError};
use crate::predict::{predict_constant_speed, predict_idm_rollout, EstimatorConfig, EstimatorState, RolloutModel};
use crate::presets::{idm_preset, reactive_gains, Preset};
use crate::reactive::{ReactiveController, ReactiveError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("controller needs a connected vehicle beyond vehicle 1, scenario has none")]
    NoConnectedVehicle,
    #[error("ego must start behind vehicle 1 with a positive gap (gap = {0} m)")]
    BadInitialGap(f64),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Reactive(#[from] ReactiveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Racc,
    Rccc,
    Pacc,
    Pccc,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [ControllerKind::Racc, ControllerKind::Rccc, ControllerKind::Pacc, ControllerKind::Pccc];

    pub fn is_predictive(self) -> bool {
        matches!(self, ControllerKind::Pacc | ControllerKind::Pccc)
    }

    pub fn is_connected(self) -> bool {
        matches!(self, ControllerKind::Rccc | ControllerKind::Pccc)
    }

    /// The non-connected counterpart used as the energy baseline.
    pub fn baseline(self) -> ControllerKind {
        match self {
            ControllerKind::Racc | ControllerKind::Rccc => ControllerKind::Racc,
            ControllerKind::Pacc | ControllerKind::Pccc => ControllerKind::Pacc,
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControllerKind::Racc => "RACC",
            ControllerKind::Rccc => "RCCC",
            ControllerKind::Pacc => "PACC",
            ControllerKind::Pccc => "PCCC",
        })
    }
}

impl FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "racc" => Ok(ControllerKind::Racc),
            "rccc" => Ok(ControllerKind::Rccc),
            "pacc" => Ok(ControllerKind::Pacc),
            "pccc" => Ok(ControllerKind::Pccc),
            other => Err(format!("unknown controller '{other}' (expected racc, rccc, pacc or pccc)")),
        }
    }
}

/// How PCCC decides the number of hidden vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HiddenMode {
    Estimate,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcccConfig {
    pub mpc: MpcConfig<f64>,
    pub model: RolloutModel<f64>,
    pub estimator: EstimatorConfig<f64>,
    pub hidden: HiddenMode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    Racc(OvmParams<f64>),
    Rccc(OvmParams<f64>),
    Pacc(MpcConfig<f64>),
    Pccc(PcccConfig),
}

impl Controller {
    pub fn kind(&self) -> ControllerKind {
        match self {
            Controller::Racc(_) => ControllerKind::Racc,
            Controller::Rccc(_) => ControllerKind::Rccc,
            Controller::Pacc(_) => ControllerKind::Pacc,
            Controller::Pccc(_) => ControllerKind::Pccc,
        }
    }

    /// Controller with the shipped parameters of `preset`.
    ///
    /// `distant` is the index of the connected vehicle used by RCCC and PCCC.
    pub fn from_preset(kind: ControllerKind, preset: Preset, distant: usize, vehicle_length: f64) -> Self {
        let gains = reactive_gains::<f64>(preset);
        let range = RangePolicyParams::default();
        match kind {
            ControllerKind::Racc => Controller::Racc(gains.acc(range)),
            ControllerKind::Rccc => Controller::Rccc(gains.ccc(distant, range)),
            ControllerKind::Pacc => Controller::Pacc(MpcConfig::default()),
            ControllerKind::Pccc => {
                let mpc = MpcConfig::default();
                Controller::Pccc(PcccConfig {
                    model: RolloutModel {
                        idm: idm_preset(preset),
                        vehicle_length,
                        accel_floor: mpc.vehicle.u_min,
                        dt: mpc.dt,
                    },
                    mpc,
                    estimator: EstimatorConfig::default(),
                    hidden: HiddenMode::Estimate,
                })
            }
        }
    }

    /// Preset controller for a scenario, picking the regime from its label.
    pub fn for_scenario(kind: ControllerKind, scenario: &Scenario, preset: Option<Preset>) -> Self {
        let preset = preset.or(scenario.meta.label.preset()).unwrap_or(Preset::Congested);
        let distant = scenario.connected_leader().unwrap_or(scenario.num_vehicles());
        Self::from_preset(kind, preset, distant, scenario.meta.vehicle_length)
    }

    /// Desired headway the ego is initialized at.
    pub fn range(&self) -> RangePolicyParams<f64> {
        match self {
            Controller::Racc(p) | Controller::Rccc(p) => p.range,
            Controller::Pacc(m) => m.range,
            Controller::Pccc(c) => c.mpc.range,
        }
    }

    /// Minimum safe headway `(d_min, tau_min)` used for safety audits.
    pub fn min_headway_params(&self) -> (f64, f64) {
        match self {
            Controller::Pacc(m) => (m.d_min, m.tau_min),
            Controller::Pccc(c) => (c.mpc.d_min, c.mpc.tau_min),
            _ => {
                let m = MpcConfig::<f64>::default();
                (m.d_min, m.tau_min)
            }
        }
    }
}

/// Per-step solver diagnostics of predictive runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpStepInfo {
    pub status: QpStatus,
    pub iterations: usize,
    pub residuals: KktResiduals<f64>,
    pub epsilon: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub controller: ControllerKind,
    pub dt: f64,
    pub t: Vec<f64>,
    pub ego: Trajectory,
    /// Realized acceleration over `[t_k, t_k + dt)`; zero at the final sample.
    pub a: Vec<f64>,
    /// Desired acceleration issued at `t_k`; zero at the final sample.
    pub a_d: Vec<f64>,
    /// Headway to vehicle 1.
    pub h: Vec<f64>,
    /// Cumulative energy per unit mass at `t_k`.
    pub w: Vec<f64>,
    /// Total energy per unit mass [J/kg].
    pub energy: f64,
    /// Vehicle length used for headways.
    pub vehicle_length: f64,
    /// First step with a non-positive headway; the run stops there.
    pub collision: Option<usize>,
    /// Hidden-vehicle estimates (PCCC only).
    pub n_hat: Vec<Option<usize>>,
    /// Solver diagnostics (predictive only).
    pub qp: Vec<Option<QpStepInfo>>,
    /// Predicted positions of vehicle 1 issued at each step (predictive only).
    pub predictions: Vec<Vec<f64>>,
    pub d_min: f64,
    pub tau_min: f64,
}

impl RunResult {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn collided(&self) -> bool {
        self.collision.is_some()
    }

    pub fn fallbacks(&self) -> usize {
        self.qp.iter().flatten().filter(|q| q.fallback).count()
    }

    /// `h - H_min(v)` at every step.
    pub fn safety_gap(&self) -> Vec<f64> {
        self.h
            .iter()
            .zip(&self.ego.v)
            .map(|(&h, &v)| h - (self.d_min + self.tau_min * v))
            .collect()
    }
}

/// Ego state at the desired headway behind vehicle 1, at vehicle 1's speed.
pub fn default_ego_init(scenario: &Scenario, range: &RangePolicyParams<f64>) -> VehicleState<f64> {
    let v1 = scenario.vehicle(1);
    let v = v1.v[0];
    VehicleState::new(v1.s[0] - scenario.meta.vehicle_length - range.desired_headway(v), v)
}

#[allow(clippy::large_enum_variant)]
enum Policy {
    Reactive(ReactiveController<f64>),
    Predictive {
        mpc: Box<MpcController<f64>>,
        connected: Option<(usize, RolloutModel<f64>, EstimatorState<f64>, HiddenMode)>,
    },
}

/// Runs `controller` against `scenario` with ego plant `plant`.
///
/// `ego_init` defaults to [`default_ego_init`].
pub fn run(
    scenario: &Scenario,
    controller: &Controller,
    plant: &VehicleParams<f64>,
    ego_init: Option<VehicleState<f64>>,
) -> Result<RunResult, SimError> {
    let dt = scenario.dt;
    let l = scenario.meta.vehicle_length;
    let q = plant.delay_steps(dt)?;
    let distant = scenario.connected_leader();
    if controller.kind().is_connected() && distant.is_none() {
        return Err(SimError::NoConnectedVehicle);
    }
    let mut policy = match controller {
        Controller::Racc(p) | Controller::Rccc(p) => Policy::Reactive(ReactiveController::new(p.clone(), dt)),
        Controller::Pacc(cfg) => Policy::Predictive {
            mpc: Box::new(MpcController::new(MpcConfig { dt, vehicle: *plant, ..*cfg })?),
            connected: None,
        },
        Controller::Pccc(c) => {
            let model = RolloutModel { dt, ..c.model };
            Policy::Predictive {
                mpc: Box::new(MpcController::new(MpcConfig { dt, vehicle: *plant, ..c.mpc })?),
                connected: Some((
                    distant.unwrap_or(1),
                    model,
                    EstimatorState::new(c.estimator, model),
                    c.hidden,
                )),
            }
        }
    };
    let horizon = match controller {
        Controller::Pacc(cfg) => cfg.horizon,
        Controller::Pccc(c) => c.mpc.horizon,
        _ => 0,
    };

    let mut x = ego_init.unwrap_or_else(|| default_ego_init(scenario, &controller.range()));
    let veh1 = scenario.vehicle(1);
    let gap0 = veh1.s[0] - x.s - l;
    if !(gap0 > 0.0) {
        return Err(SimError::BadInitialGap(gap0));
    }
    let (d_min, tau_min) = controller.min_headway_params();
    let n = scenario.len();
    let mut res = RunResult {
        controller: controller.kind(),
        dt,
        t: Vec::with_capacity(n),
        ego: Trajectory::new(dt, Vec::with_capacity(n), Vec::with_capacity(n)),
        a: Vec::with_capacity(n),
        a_d: Vec::with_capacity(n),
        h: Vec::with_capacity(n),
        w: Vec::with_capacity(n),
        energy: 0.0,
        vehicle_length: l,
        collision: None,
        n_hat: Vec::new(),
        qp: Vec::new(),
        predictions: Vec::new(),
        d_min,
        tau_min,
    };
    let mut buffer = DelayBuffer::new(q, 0.0);
    let mut ledger = EnergyLedger::new();
    let mut last_cmd = 0.0;

    for k in 0..n {
        let (s1, v1) = (veh1.s[k], veh1.v[k]);
        let h = s1 - x.s - l;
        res.t.push(scenario.times[k]);
        res.ego.s.push(x.s);
        res.ego.v.push(x.v);
        res.h.push(h);
        res.w.push(ledger.w);
        if h <= 0.0 {
            res.collision = Some(k);
            res.a.push(0.0);
            res.a_d.push(0.0);
            break;
        }
        if k + 1 == n {
            res.a.push(0.0);
            res.a_d.push(0.0);
            break;
        }
        let a_d = match &mut policy {
            Policy::Reactive(ctl) => {
                let observed: Vec<usize> = ctl.observed().collect();
                for i in observed {
                    let tr = scenario.vehicle(i);
                    ctl.observe(i, tr.s[k], tr.v[k]);
                }
                ctl.command(h, x.v)?
            }
            Policy::Predictive { mpc, connected } => {
                let pred = match connected {
                    None => predict_constant_speed(s1, v1, horizon, dt),
                    Some((l_idx, model, est, mode)) => {
                        let lead = scenario.vehicle(*l_idx);
                        let (s_l, v_l) = (lead.s[k], lead.v[k]);
                        est.observe(s1, v1, s_l, v_l);
                        let n_hat = match mode {
                            HiddenMode::Estimate => est.estimate_hidden(x.v),
                            HiddenMode::Fixed(m) => *m,
                        };
                        res.n_hat.push(Some(n_hat));
                        predict_idm_rollout(s1, v1, s_l, v_l, n_hat, model, horizon)
                            .unwrap_or_else(|_| predict_constant_speed(s1, v1, horizon, dt))
                    }
                };
                let committed = buffer.pending();
                let out = mpc.step(&x, &committed, &pred, last_cmd)?;
                res.qp.push(Some(QpStepInfo {
                    status: out.status,
                    iterations: out.iterations,
                    residuals: out.residuals,
                    epsilon: out.epsilon,
                    fallback: out.fallback,
                }));
                res.predictions.push(pred.s_hat);
                out.command
            }
        };
        last_cmd = a_d;
        let next = step(&x, &mut buffer, a_d, dt, plant);
        ledger.accumulate(x.v, next.a, plant, dt)?;
        res.a.push(next.a);
        res.a_d.push(a_d);
        x = next;
    }
    res.energy = ledger.w;
    Ok(res)
}

/// Runs independent jobs in parallel, returning results in input order.
pub fn run_batch<K: Send + Sync + Clone>(
    jobs: &[(K, &Scenario, Controller)],
    plant: &VehicleParams<f64>,
) -> Vec<(K, Result<RunResult, SimError>)> {
    jobs.par_iter()
        .map(|(key, sc, ctl)| (key.clone(), run(sc, ctl, plant, None)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::energy_of_series;
    use crate::simkit::scenario::ScenarioMeta;

    fn constant_traffic(v: f64, n: usize, vehicles: usize) -> Scenario {
        let range = RangePolicyParams::<f64>::default();
        let gap = range.desired_headway(v) + 5.0;
        let trs = (0..vehicles)
            .map(|i| {
                let s0 = 100.0 + gap * i as f64;
                Trajectory::new(0.1, (0..n).map(|k| s0 + v * 0.1 * k as f64).collect(), vec![v; n])
            })
            .collect();
        Scenario::from_trajectories(trs, ScenarioMeta::custom(vehicles)).unwrap()
    }

    #[test]
    fn racc_holds_speed_in_uniform_flow() {
        let sc = constant_traffic(20.0, 101, 3);
        let ctl = Controller::from_preset(ControllerKind::Racc, Preset::Congested, 3, 5.0);
        let plant = VehicleParams::default();
        let r = run(&sc, &ctl, &plant, None).unwrap();
        assert_eq!(r.len(), 101);
        assert!(r.ego.v.iter().all(|&v| (v - 20.0).abs() < 1e-9));
        // 10 s at 20 m/s against resistance only.
        let closed = 20.0 * (0.0147 + 2.75e-4 * 400.0) * 10.0;
        assert!((r.energy - closed).abs() < 1e-9, "{} vs {closed}", r.energy);
        let w = energy_of_series(&r.ego.v[..100], &r.a[..100], &plant, 0.1).unwrap();
        assert!((w - r.energy).abs() < 1e-9);
    }

    #[test]
    fn commands_take_effect_after_the_delay() {
        // Probe: the ego sees a sudden headway surplus at step 0; realized
        // acceleration stays zero for exactly q steps.
        let sc = constant_traffic(15.0, 40, 2);
        let ctl = Controller::from_preset(ControllerKind::Racc, Preset::Step, 2, 5.0);
        let plant = VehicleParams::default();
        let mut init = default_ego_init(&sc, &ctl.range());
        init.s -= 10.0;
        let r = run(&sc, &ctl, &plant, Some(init)).unwrap();
        assert!(r.a_d[0] > 0.0);
        assert!(r.a[..6].iter().all(|&a| a == 0.0));
        assert!(r.a[6] > 0.0);
    }

    #[test]
    fn connected_controllers_need_a_distant_vehicle() {
        let mut sc = constant_traffic(15.0, 10, 2);
        sc.meta.connectivity.clear();
        let ctl = Controller::from_preset(ControllerKind::Rccc, Preset::Step, 2, 5.0);
        assert!(matches!(run(&sc, &ctl, &VehicleParams::default(), None), Err(SimError::NoConnectedVehicle)));
    }

    #[test]
    fn collision_is_flagged_not_fatal() {
        // Vehicle 1 stops dead while the ego starts fast and close behind.
        let n = 60;
        let leader = Trajectory::new(0.1, vec![50.0; n], vec![0.0; n]);
        let sc = Scenario::from_trajectories(vec![leader], ScenarioMeta::custom(1)).unwrap();
        let ctl = Controller::from_preset(ControllerKind::Racc, Preset::Congested, 1, 5.0);
        let r = run(&sc, &ctl, &VehicleParams::default(), Some(VehicleState::new(30.0, 30.0))).unwrap();
        assert!(r.collided());
        assert_eq!(r.len(), r.collision.unwrap() + 1);
        assert_eq!(r.a.len(), r.len());
    }

    #[test]
    fn controller_names() {
        for k in ControllerKind::ALL {
            assert_eq!(k.to_string().parse::<ControllerKind>().unwrap(), k);
        }
        assert_eq!(ControllerKind::Pccc.baseline(), ControllerKind::Pacc);
    }
}
