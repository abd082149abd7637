//! Run configuration: a TOML file whose sections mirror the core parameter
//! types. Every key is optional; missing keys take the shipped defaults.

use std::path::Path;

use ccc_core::carfollow::{IdmParams, RangePolicyParams};
use ccc_core::dynamics::VehicleParams;
use ccc_core::ident::SearchSettings;
use ccc_core::mpc::MpcConfig;
use ccc_core::predict::{EstimatorConfig, RolloutModel};
use ccc_core::presets::{idm_preset, reactive_gains, Preset, ReactiveGains};
use ccc_core::simkit::{Controller, ControllerKind, HiddenMode, PcccConfig, SynthOptions};
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Weights, safety floor and chance schedule of the predictive controllers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSection {
    pub horizon: usize,
    pub q_g: f64,
    pub q_a: f64,
    pub q_eps: f64,
    pub d_min: f64,
    pub tau_min: f64,
    pub sigma_a1: f64,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub chance_steps: usize,
    pub v_max: f64,
}

impl Default for MpcSection {
    fn default() -> Self {
        let m = MpcConfig::<f64>::default();
        Self {
            horizon: m.horizon,
            q_g: m.q_g,
            q_a: m.q_a,
            q_eps: m.q_eps,
            d_min: m.d_min,
            tau_min: m.tau_min,
            sigma_a1: m.sigma_a1,
            alpha_start: m.alpha_start,
            alpha_end: m.alpha_end,
            chance_steps: m.chance_steps,
            v_max: m.v_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangeSection {
    pub tau: f64,
    pub d: f64,
    pub v_max: f64,
}

impl Default for RangeSection {
    fn default() -> Self {
        let r = RangePolicyParams::<f64>::default();
        Self { tau: r.tau, d: r.d, v_max: r.v_max }
    }
}

impl From<RangeSection> for RangePolicyParams<f64> {
    fn from(r: RangeSection) -> Self {
        Self { tau: r.tau, d: r.d, v_max: r.v_max }
    }
}

/// Hidden-vehicle estimator windows; its safety floor is taken from `[mpc]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub history_window: f64,
    pub scoring_window: f64,
    pub mismatch_penalty: f64,
    pub warmup: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let e = EstimatorConfig::<f64>::default();
        Self {
            history_window: e.history_window,
            scoring_window: e.scoring_window,
            mismatch_penalty: e.mismatch_penalty,
            warmup: e.warmup,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Vehicles in a generated chain.
    pub chain_len: usize,
    /// Largest tolerated share of QP solves that fell back to the previous command.
    pub fallback_threshold: f64,
    /// Use this hidden-vehicle count in PCCC instead of estimating it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_hidden: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            chain_len: 6,
            fallback_threshold: 0.01,
            fixed_hidden: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub plant: VehicleParams<f64>,
    pub range: RangeSection,
    /// Overrides the preset's reactive gains when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reactive: Option<ReactiveGains<f64>>,
    /// Overrides the preset's IDM parameters when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idm: Option<IdmParams<f64>>,
    pub mpc: MpcSection,
    pub estimator: EstimatorSection,
    pub synth: SynthOptions,
    pub ident: SearchSettings,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let cfg: Config = toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full configuration with the preset's gains and IDM parameters written out.
    pub fn expanded(preset: Preset) -> Self {
        Self {
            reactive: Some(reactive_gains(preset)),
            idm: Some(idm_preset(preset)),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let bad = |e: String| Failure::Config(e);
        self.range().validate().map_err(|e| bad(e.to_string()))?;
        self.plant.validate(self.synth.dt, self.mpc.v_max).map_err(|e| bad(e.to_string()))?;
        self.mpc_config(self.synth.dt).validate().map_err(|e| bad(e.to_string()))?;
        if self.run.chain_len < 2 {
            return Err(bad("run.chain_len must be at least 2".into()));
        }
        if self.ident.starts == 0 || self.ident.max_evals_per_start == 0 {
            return Err(bad("ident.starts and ident.max_evals_per_start must be positive".into()));
        }
        if !(self.synth.duration > 0.0 && self.synth.dt > 0.0) || self.synth.substeps == 0 {
            return Err(bad("synth.duration, synth.dt and synth.substeps must be positive".into()));
        }
        if !(self.run.fallback_threshold >= 0.0) {
            return Err(bad("run.fallback_threshold must be non-negative".into()));
        }
        Ok(())
    }

    pub fn range(&self) -> RangePolicyParams<f64> {
        self.range.into()
    }

    pub fn estimator(&self) -> EstimatorConfig<f64> {
        let e = &self.estimator;
        EstimatorConfig {
            history_window: e.history_window,
            scoring_window: e.scoring_window,
            mismatch_penalty: e.mismatch_penalty,
            warmup: e.warmup,
            d_min: self.mpc.d_min,
            tau_min: self.mpc.tau_min,
            range: self.range(),
        }
    }

    pub fn gains(&self, preset: Preset) -> ReactiveGains<f64> {
        self.reactive.unwrap_or_else(|| reactive_gains(preset))
    }

    pub fn idm(&self, preset: Preset) -> IdmParams<f64> {
        self.idm.unwrap_or_else(|| idm_preset(preset))
    }

    pub fn mpc_config(&self, dt: f64) -> MpcConfig<f64> {
        let m = &self.mpc;
        MpcConfig {
            dt,
            horizon: m.horizon,
            q_g: m.q_g,
            q_a: m.q_a,
            q_eps: m.q_eps,
            range: self.range(),
            d_min: m.d_min,
            tau_min: m.tau_min,
            sigma_a1: m.sigma_a1,
            alpha_start: m.alpha_start,
            alpha_end: m.alpha_end,
            chance_steps: m.chance_steps,
            v_max: m.v_max,
            vehicle: self.plant,
        }
    }

    /// Controller of `kind` using vehicle `distant` as its connected leader.
    pub fn controller(&self, kind: ControllerKind, preset: Preset, distant: usize, dt: f64, vehicle_length: f64) -> Controller {
        let gains = self.gains(preset);
        match kind {
            ControllerKind::Racc => Controller::Racc(gains.acc(self.range())),
            ControllerKind::Rccc => Controller::Rccc(gains.ccc(distant, self.range())),
            ControllerKind::Pacc => Controller::Pacc(self.mpc_config(dt)),
            ControllerKind::Pccc => {
                let mpc = self.mpc_config(dt);
                Controller::Pccc(PcccConfig {
                    model: RolloutModel {
                        idm: self.idm(preset),
                        vehicle_length,
                        accel_floor: self.plant.u_min,
                        dt,
                    },
                    mpc,
                    estimator: self.estimator(),
                    hidden: self.run.fixed_hidden.map_or(HiddenMode::Estimate, HiddenMode::Fixed),
                })
            }
        }
    }
}
