//! Range and speed policies, the optimal velocity model (OVM) gains and the
//! intelligent driver model (IDM).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{fmax, fmin, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CarFollowError {
    #[error("non-positive headway {0} m (collision state)")]
    Collision(f64),
    #[error("invalid car-following parameter: {0}")]
    InvalidParams(String),
}

/// Linear range policy `V(h)` with saturation, and the matching speed policy `W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangePolicyParams<T> {
    /// Time headway [s].
    pub tau: T,
    /// Stopping distance [m].
    pub d: T,
    /// Free speed [m/s].
    pub v_max: T,
}

impl<T: Scalar> Default for RangePolicyParams<T> {
    fn default() -> Self {
        Self {
            tau: T::lit(1.67),
            d: T::lit(5.0),
            v_max: T::lit(35.0),
        }
    }
}

impl<T: Scalar> RangePolicyParams<T> {
    /// Desired velocity for headway `h`: `min(v_max, max(0, (h - d) / tau))`.
    pub fn range_policy(&self, h: T) -> T {
        fmin(self.v_max, fmax(T::zero(), (h - self.d) / self.tau))
    }

    /// Reference speed derived from a preceding vehicle's speed: `min(v_max, v1)`.
    pub fn speed_policy(&self, v1: T) -> T {
        fmin(self.v_max, v1)
    }

    /// Desired headway `d + tau v`, the inverse of [`Self::range_policy`] on its linear band.
    pub fn desired_headway(&self, v: T) -> T {
        self.d + self.tau * v
    }

    pub fn validate(&self) -> Result<(), CarFollowError> {
        if self.tau > T::zero() && self.d > T::zero() && self.v_max > T::zero() {
            Ok(())
        } else {
            Err(CarFollowError::InvalidParams(
                "range policy needs tau, d, v_max > 0".into(),
            ))
        }
    }
}

/// OVM-type feedback gains: `alpha (V(h) - v) + sum_i beta_i (W(v_i(t - sigma_i)) - v)`.
///
/// Vehicle indices count forward from the ego: 1 is the vehicle immediately ahead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvmParams<T> {
    pub alpha: T,
    pub betas: BTreeMap<usize, T>,
    #[serde(default)]
    pub sigmas: BTreeMap<usize, T>,
    pub range: RangePolicyParams<T>,
}

impl<T: Scalar> OvmParams<T> {
    /// Adaptive cruise control: reacts to vehicle 1 only.
    pub fn acc(alpha: T, beta1: T, range: RangePolicyParams<T>) -> Self {
        Self {
            alpha,
            betas: BTreeMap::from([(1, beta1)]),
            sigmas: BTreeMap::new(),
            range,
        }
    }

    /// Connected cruise control with one distant connected vehicle at index `distant`.
    pub fn connected(alpha: T, beta1: T, beta_l: T, sigma_l: T, distant: usize, range: RangePolicyParams<T>) -> Self {
        let mut p = Self::acc(alpha, beta1, range);
        p.betas.insert(distant, beta_l);
        p.sigmas.insert(distant, sigma_l);
        p
    }

    pub fn beta(&self, i: usize) -> T {
        self.betas.get(&i).copied().unwrap_or_else(T::zero)
    }

    pub fn sigma(&self, i: usize) -> T {
        self.sigmas.get(&i).copied().unwrap_or_else(T::zero)
    }

    /// Sum of all feedback gains on the ego speed.
    pub fn total_gain(&self) -> T {
        self.alpha + self.betas.values().copied().sum::<T>()
    }

    pub fn validate(&self) -> Result<(), CarFollowError> {
        self.range.validate()?;
        let bad = |m: &str| Err(CarFollowError::InvalidParams(m.into()));
        if !(self.alpha > T::zero()) {
            return bad("alpha must be positive");
        }
        if !self.betas.contains_key(&1) {
            return bad("beta for vehicle 1 is required");
        }
        if self.betas.values().any(|b| !(*b >= T::zero())) || self.sigmas.values().any(|s| !(*s >= T::zero())) {
            return bad("gains and delays must be non-negative");
        }
        Ok(())
    }
}

/// Intelligent driver model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams<T> {
    /// Maximum acceleration [m/s^2].
    pub a0: T,
    /// Comfortable deceleration [m/s^2].
    pub b0: T,
    /// Free-road exponent [-].
    pub delta: T,
    /// Desired time headway [s].
    pub tau: T,
    /// Stopping distance [m].
    pub d: T,
    /// Desired speed [m/s].
    pub v_max: T,
}

/// Identification box for IDM parameters, in the order `a0, b0, delta, tau, d, v_max`.
pub const IDM_BOUNDS: [(f64, f64); 6] = [
    (0.1, 4.0),
    (0.1, 8.5),
    (3.0, 5.0),
    (0.1, 4.0),
    (5.0, 10.0),
    (30.0, 36.0),
];

impl<T: Scalar> IdmParams<T> {
    pub fn to_array(&self) -> [T; 6] {
        [self.a0, self.b0, self.delta, self.tau, self.d, self.v_max]
    }

    pub fn from_array(x: [T; 6]) -> Self {
        let [a0, b0, delta, tau, d, v_max] = x;
        Self { a0, b0, delta, tau, d, v_max }
    }

    /// Bound-touching values count as inside.
    pub fn within_bounds(&self) -> bool {
        self.to_array()
            .iter()
            .zip(IDM_BOUNDS)
            .all(|(x, (lo, hi))| *x >= T::lit(lo) && *x <= T::lit(hi))
    }

    /// Dynamic desired gap `H(v, v1) = d + max(0, tau v - v (v1 - v) / sqrt(a0 b0))`.
    pub fn desired_gap(&self, v: T, v1: T) -> T {
        let brake = v * (v1 - v) / (self.a0 * self.b0).sqrt();
        self.d + fmax(T::zero(), self.tau * v - brake)
    }

    /// IDM acceleration for headway `h`, own speed `v`, leader speed `v1`.
    pub fn accel(&self, h: T, v: T, v1: T) -> Result<T, CarFollowError> {
        if !(h > T::zero()) {
            return Err(CarFollowError::Collision(h.as_f64()));
        }
        let free = (v / self.v_max).powf(self.delta);
        let inter = self.desired_gap(v, v1) / h;
        Ok(self.a0 * (T::one() - free - inter * inter))
    }

    /// IDM acceleration floored at `floor`; a non-positive headway yields `floor`.
    pub fn accel_floored(&self, h: T, v: T, v1: T, floor: T) -> T {
        match self.accel(h, v, v1) {
            Ok(a) => fmax(a, floor),
            Err(_) => floor,
        }
    }

    /// Steady-state range policy `d + tau v`.
    pub fn range_simplified(&self, v: T) -> T {
        self.d + self.tau * v
    }

    /// Headway at which a vehicle travelling at `v` behind a leader at `v` does not accelerate.
    ///
    /// Defined for `0 <= v < v_max`.
    pub fn equilibrium_headway(&self, v: T) -> T {
        let free = (v / self.v_max).powf(self.delta);
        self.range_simplified(v) / (T::one() - free).sqrt()
    }
}
