//! Shipped parameter sets for the three traffic regimes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::carfollow::{IdmParams, OvmParams, RangePolicyParams};
use crate::scalar::Scalar;

/// Traffic regime a parameter set was tuned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[serde(rename = "freeflow")]
    FreeFlow,
    Step,
    Congested,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::FreeFlow, Preset::Step, Preset::Congested];

    pub fn name(self) -> &'static str {
        match self {
            Preset::FreeFlow => "freeflow",
            Preset::Step => "step",
            Preset::Congested => "congested",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "freeflow" => Ok(Preset::FreeFlow),
            "step" => Ok(Preset::Step),
            "congested" => Ok(Preset::Congested),
            other => Err(format!("unknown preset '{other}' (expected freeflow, step or congested)")),
        }
    }
}

/// Reactive controller gains for one regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactiveGains<T> {
    pub alpha: T,
    /// Gain on vehicle 1 when no V2V signal is used.
    pub acc_beta1: T,
    /// Gain on vehicle 1 when the distant vehicle is also used.
    pub ccc_beta1: T,
    /// Gain on the distant connected vehicle.
    pub ccc_beta_l: T,
    /// Response delay on the distant vehicle's speed [s].
    pub ccc_sigma_l: T,
}

pub fn reactive_gains<T: Scalar>(preset: Preset) -> ReactiveGains<T> {
    let (b1, cb1, bl, sl) = match preset {
        Preset::FreeFlow => (0.6617, 0.3041, 1.0277, 5.3372),
        Preset::Step => (0.4728, 0.2163, 1.1459, 1.7432),
        Preset::Congested => (0.4857, 0.2410, 0.9895, 2.4331),
    };
    ReactiveGains {
        alpha: T::lit(0.4),
        acc_beta1: T::lit(b1),
        ccc_beta1: T::lit(cb1),
        ccc_beta_l: T::lit(bl),
        ccc_sigma_l: T::lit(sl),
    }
}

impl<T: Scalar> ReactiveGains<T> {
    pub fn acc(&self, range: RangePolicyParams<T>) -> OvmParams<T> {
        OvmParams::acc(self.alpha, self.acc_beta1, range)
    }

    pub fn ccc(&self, distant: usize, range: RangePolicyParams<T>) -> OvmParams<T> {
        OvmParams::connected(self.alpha, self.ccc_beta1, self.ccc_beta_l, self.ccc_sigma_l, distant, range)
    }
}

/// IDM parameters identified for each regime.
pub fn idm_preset<T: Scalar>(preset: Preset) -> IdmParams<T> {
    let x = match preset {
        Preset::FreeFlow => [0.684, 2.9693, 3.3066, 0.7154, 5.0001, 36.0],
        Preset::Step => [2.2868, 8.5, 3.0, 0.9282, 5.0, 32.8682],
        Preset::Congested => [2.5732, 8.5, 4.3393, 0.6409, 5.067, 36.0],
    };
    IdmParams::from_array(x.map(T::lit))
}
