//! Longitudinal plant of the automated (ego) vehicle.
//!
//! The plant integrates `s' = v`, `v' = sat(a_d(t - sigma))` on a uniform grid:
//! the desired acceleration goes through a fixed-length [`DelayBuffer`], is
//! clipped by [`saturate`], and the state is advanced with the exact
//! piecewise-constant-acceleration formula. Resistance is assumed to be fully
//! compensated by the low-level controller, so [`resistance`] only enters the
//! tractive-energy account kept by [`EnergyLedger`].

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{fmax, fmin, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("velocity must be non-negative, got {0}")]
    NegativeVelocity(f64),
    #[error("invalid vehicle parameter: {0}")]
    InvalidParams(String),
    #[error("powertrain delay {sigma} s is not an integer multiple of the step {dt} s")]
    DelayNotOnGrid { sigma: f64, dt: f64 },
}

/// Physical parameters of the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct VehicleParams<T> {
    /// Constant rolling/grade resistance, as an acceleration [m/s^2].
    pub c0: T,
    /// Quadratic aerodynamic resistance coefficient [1/m].
    pub c2: T,
    /// Braking limit [m/s^2], negative.
    pub u_min: T,
    /// Slope and intercept of the first (torque-limited) envelope line.
    pub m1: T,
    pub b1: T,
    /// Slope and intercept of the second (power-limited) envelope line.
    pub m2: T,
    pub b2: T,
    /// Optional constant acceleration cap on top of the two envelope lines.
    #[serde(default)]
    pub u_max_cap: Option<T>,
    /// Vehicle length [m].
    pub length: T,
    /// Powertrain delay [s].
    pub sigma: T,
}

impl<T: Scalar> Default for VehicleParams<T> {
    fn default() -> Self {
        Self {
            c0: T::lit(0.0147),
            c2: T::lit(2.75e-4),
            u_min: T::lit(-6.0),
            m1: T::lit(0.285),
            b1: T::lit(2.0),
            m2: T::lit(-0.121),
            b2: T::lit(4.83),
            u_max_cap: None,
            length: T::lit(5.0),
            sigma: T::lit(0.6),
        }
    }
}

impl<T: Scalar> VehicleParams<T> {
    /// Upper acceleration limit at speed `v`.
    pub fn accel_cap(&self, v: T) -> T {
        let env = fmin(self.m1 * v + self.b1, self.m2 * v + self.b2);
        match self.u_max_cap {
            Some(cap) => fmin(cap, env),
            None => env,
        }
    }

    /// Number of simulation steps covered by the powertrain delay.
    pub fn delay_steps(&self, dt: T) -> Result<usize, DynamicsError> {
        let ratio = self.sigma / dt;
        let q = ratio.round();
        if (ratio - q).abs() > T::lit(1e-6) {
            return Err(DynamicsError::DelayNotOnGrid {
                sigma: self.sigma.as_f64(),
                dt: dt.as_f64(),
            });
        }
        q.to_usize()
            .ok_or_else(|| DynamicsError::InvalidParams(format!("sigma = {}", self.sigma)))
    }

    pub fn validate(&self, dt: T, v_max: T) -> Result<(), DynamicsError> {
        let bad = |what: &str| Err(DynamicsError::InvalidParams(what.to_string()));
        if !(self.c0 >= T::zero()) || !(self.c2 >= T::zero()) {
            return bad("resistance coefficients must be non-negative");
        }
        if !(self.u_min < T::zero()) {
            return bad("u_min must be negative");
        }
        if !(self.length >= T::zero()) {
            return bad("length must be non-negative");
        }
        if !(self.sigma >= T::zero()) {
            return bad("sigma must be non-negative");
        }
        // Both envelope lines are affine, so positivity at the interval ends suffices.
        if self.accel_cap(T::zero()) <= T::zero() || self.accel_cap(v_max) <= T::zero() {
            return bad("acceleration envelope must be positive on [0, v_max]");
        }
        self.delay_steps(dt).map(|_| ())
    }
}

/// Acceleration-equivalent resistance `c0 + c2 v^2`.
pub fn resistance<T: Scalar>(v: T, p: &VehicleParams<T>) -> Result<T, DynamicsError> {
    if !(v >= T::zero()) {
        return Err(DynamicsError::NegativeVelocity(v.as_f64()));
    }
    Ok(p.c0 + p.c2 * v * v)
}

/// Clips a commanded acceleration into `[u_min, u_max(v)]`.
pub fn saturate<T: Scalar>(u: T, v: T, p: &VehicleParams<T>) -> T {
    fmin(p.accel_cap(v), fmax(p.u_min, u))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState<T> {
    pub s: T,
    pub v: T,
    /// Acceleration realized over the step that produced this state.
    pub a: T,
}

impl<T: Scalar> VehicleState<T> {
    pub fn new(s: T, v: T) -> Self {
        Self { s, v, a: T::zero() }
    }
}

/// FIFO of desired accelerations that have been issued but not yet realized.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayBuffer<T> {
    queue: VecDeque<T>,
}

impl<T: Scalar> DelayBuffer<T> {
    /// Buffer of `q` slots pre-filled with `initial`.
    pub fn new(q: usize, initial: T) -> Self {
        Self {
            queue: std::iter::repeat_n(initial, q).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Issues `a_d` and returns the command that reaches the powertrain now.
    pub fn push(&mut self, a_d: T) -> T {
        match self.queue.pop_front() {
            Some(due) => {
                self.queue.push_back(a_d);
                due
            }
            None => a_d,
        }
    }

    /// Commands already in flight, oldest (next to be realized) first.
    pub fn pending(&self) -> Vec<T> {
        self.queue.iter().copied().collect()
    }
}

/// Advances the state by `dt` under constant acceleration `a`, stopping at zero speed.
///
/// Returns the new state; its `a` is the mean acceleration over the step, so
/// `v' = v + dt * a` holds even when the vehicle comes to rest mid-step.
pub fn integrate<T: Scalar>(state: &VehicleState<T>, a: T, dt: T) -> VehicleState<T> {
    let half = T::lit(0.5);
    let v_end = state.v + dt * a;
    if v_end >= T::zero() {
        return VehicleState {
            s: state.s + dt * state.v + half * dt * dt * a,
            v: v_end,
            a,
        };
    }
    // a < 0 here; the vehicle stops after t_stop <= dt and holds.
    let t_stop = -state.v / a;
    VehicleState {
        s: state.s + state.v * t_stop + half * a * t_stop * t_stop,
        v: T::zero(),
        a: -state.v / dt,
    }
}

/// One plant step: realize the delayed command, saturate it, integrate.
pub fn step<T: Scalar>(
    state: &VehicleState<T>,
    buffer: &mut DelayBuffer<T>,
    a_d: T,
    dt: T,
    p: &VehicleParams<T>,
) -> VehicleState<T> {
    let delayed = buffer.push(a_d);
    let a = saturate(delayed, state.v, p);
    integrate(state, a, dt)
}

/// Cumulative tractive energy per unit mass, `w = int v * max(a + f(v), 0) dt`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger<T> {
    pub w: T,
    pub t: T,
}

impl<T: Scalar> EnergyLedger<T> {
    pub fn new() -> Self {
        Self {
            w: T::zero(),
            t: T::zero(),
        }
    }

    /// Adds one left-endpoint rectangle of width `dt` at speed `v` and acceleration `a`.
    pub fn accumulate(&mut self, v: T, a: T, p: &VehicleParams<T>, dt: T) -> Result<(), DynamicsError> {
        let f = resistance(v, p)?;
        self.w = self.w + v * fmax(a + f, T::zero()) * dt;
        self.t = self.t + dt;
        Ok(())
    }
}

/// Re-integrates the energy of a sampled `(v, a)` series.
pub fn energy_of_series<T: Scalar>(v: &[T], a: &[T], p: &VehicleParams<T>, dt: T) -> Result<T, DynamicsError> {
    let mut ledger = EnergyLedger::new();
    for (&vk, &ak) in v.iter().zip(a) {
        ledger.accumulate(vk, ak, p, dt)?;
    }
    Ok(ledger.w)
}
