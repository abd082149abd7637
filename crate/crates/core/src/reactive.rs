//! Explicit feedback laws: reactive adaptive cruise control (RACC) and its
//! connected extension (RCCC) with per-link response delays.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::carfollow::OvmParams;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReactiveError {
    #[error("no signal recorded for vehicle {0}")]
    MissingSignal(usize),
}

/// Uniformly sampled speed histories of the observed vehicles.
#[derive(Debug, Clone)]
pub struct SignalHistory<T> {
    dt: T,
    capacity: usize,
    speeds: BTreeMap<usize, VecDeque<T>>,
    positions: BTreeMap<usize, T>,
}

impl<T: Scalar> SignalHistory<T> {
    /// History able to serve lookups up to `max_delay` seconds back.
    pub fn new(dt: T, max_delay: T) -> Self {
        let lag = (max_delay / dt).round().to_usize().unwrap_or(0);
        Self {
            dt,
            capacity: lag + 1,
            speeds: BTreeMap::new(),
            positions: BTreeMap::new(),
        }
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// Records the current sample of vehicle `i`.
    pub fn record(&mut self, i: usize, s: T, v: T) {
        let series = self.speeds.entry(i).or_default();
        if series.len() == self.capacity {
            series.pop_front();
        }
        series.push_back(v);
        self.positions.insert(i, s);
    }

    pub fn position(&self, i: usize) -> Option<T> {
        self.positions.get(&i).copied()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.speeds.contains_key(&i)
    }

    /// Number of whole samples a delay of `sigma` seconds maps to.
    pub fn lag_steps(&self, sigma: T) -> usize {
        (sigma / self.dt).round().to_usize().unwrap_or(0)
    }

    /// Speed of vehicle `i` as it was `sigma` seconds ago.
    ///
    /// Delays are rounded to the sampling grid; before enough history exists
    /// the oldest sample is held.
    pub fn delayed_speed(&self, i: usize, sigma: T) -> Result<T, ReactiveError> {
        let series = self.speeds.get(&i).ok_or(ReactiveError::MissingSignal(i))?;
        let lag = self.lag_steps(sigma);
        let idx = series.len().saturating_sub(1 + lag);
        series.get(idx).copied().ok_or(ReactiveError::MissingSignal(i))
    }
}

/// RACC law `alpha (V(h) - v) + beta_1 (W(v1) - v)`.
pub fn racc_accel<T: Scalar>(h: T, v: T, v1: T, p: &OvmParams<T>) -> T {
    let r = &p.range;
    p.alpha * (r.range_policy(h) - v) + p.beta(1) * (r.speed_policy(v1) - v)
}

/// RCCC law `alpha (V(h) - v) + sum_i beta_i (W(v_i(t - sigma_i)) - v)` evaluated at the latest sample.
pub fn rccc_accel<T: Scalar>(h: T, v: T, history: &SignalHistory<T>, p: &OvmParams<T>) -> Result<T, ReactiveError> {
    let r = &p.range;
    let mut a = p.alpha * (r.range_policy(h) - v);
    for (&i, &beta) in p.betas.iter().filter(|(_, b)| **b != T::zero()) {
        let vi = history.delayed_speed(i, p.sigma(i))?;
        a = a + beta * (r.speed_policy(vi) - v);
    }
    Ok(a)
}

/// A reactive controller that owns its signal history.
#[derive(Debug, Clone)]
pub struct ReactiveController<T> {
    params: OvmParams<T>,
    history: SignalHistory<T>,
}

impl<T: Scalar> ReactiveController<T> {
    pub fn new(params: OvmParams<T>, dt: T) -> Self {
        let max_delay = params.sigmas.values().copied().fold(T::zero(), T::max);
        Self {
            history: SignalHistory::new(dt, max_delay),
            params,
        }
    }

    pub fn params(&self) -> &OvmParams<T> {
        &self.params
    }

    /// Vehicle indices this controller listens to.
    pub fn observed(&self) -> impl Iterator<Item = usize> + '_ {
        self.params.betas.keys().copied()
    }

    pub fn observe(&mut self, i: usize, s: T, v: T) {
        self.history.record(i, s, v);
    }

    /// Desired acceleration given the current headway and ego speed.
    pub fn command(&self, h: T, v: T) -> Result<T, ReactiveError> {
        rccc_accel(h, v, &self.history, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carfollow::RangePolicyParams;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn range() -> RangePolicyParams<f64> {
        RangePolicyParams::default()
    }

    #[test]
    fn racc_examples() {
        let p = OvmParams::acc(0.4, 0.6617, range());
        let h = range().desired_headway(12.0);
        assert_abs_diff_eq!(racc_accel(h, 12.0, 12.0, &p), 0.0, epsilon = 1e-12);
        let expected = 0.4 * ((20.0 - 5.0) / 1.67 - 10.0) + 0.6617 * 2.0;
        assert_abs_diff_eq!(racc_accel(20.0, 10.0, 12.0, &p), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(racc_accel(20.0, 10.0, 12.0, &p), 0.9162, epsilon = 1e-3);
        assert_eq!(racc_accel(100.0, 35.0, 40.0, &p), 0.0);
    }

    #[test]
    fn rccc_reduces_to_racc() {
        let p = OvmParams::acc(0.4, 0.6617, range());
        let mut hist = SignalHistory::new(0.1, 0.0);
        hist.record(1, 50.0, 12.0);
        assert_eq!(rccc_accel(20.0, 10.0, &hist, &p).unwrap(), racc_accel(20.0, 10.0, 12.0, &p));
        let mut with_zero = OvmParams::connected(0.4, 0.6617, 0.0, 2.4, 6, range());
        with_zero.betas.insert(6, 0.0);
        hist.record(6, 150.0, 30.0);
        assert_eq!(rccc_accel(20.0, 10.0, &hist, &with_zero).unwrap(), racc_accel(20.0, 10.0, 12.0, &p));
    }

    #[test]
    fn delayed_lookup_reads_rounded_lag() {
        let p = OvmParams::connected(0.4, 0.241, 0.9895, 2.4331, 6, range());
        let mut ctl = ReactiveController::new(p, 0.1);
        for k in 0..100 {
            ctl.observe(6, 0.0, k as f64);
        }
        // 2.4331 s rounds to 24 samples; latest sample is 99.
        assert_eq!(ctl.history.lag_steps(2.4331), 24);
        assert_eq!(ctl.history.delayed_speed(6, 2.4331).unwrap(), 75.0);
        // Warm start: only three samples, hold the oldest.
        let mut short = SignalHistory::new(0.1, 2.4);
        for k in 0..3 {
            short.record(6, 0.0, 10.0 + k as f64);
        }
        assert_eq!(short.delayed_speed(6, 2.4).unwrap(), 10.0);
    }

    #[test]
    fn missing_signal_is_an_error() {
        let p = OvmParams::connected(0.4, 0.241, 0.9895, 2.4, 6, range());
        let mut hist = SignalHistory::new(0.1, 2.4);
        hist.record(1, 0.0, 10.0);
        assert_eq!(rccc_accel(20.0, 10.0, &hist, &p), Err(ReactiveError::MissingSignal(6)));
    }

    #[test]
    fn uniform_flow_equilibrium() {
        let p = OvmParams::connected(0.4, 0.241, 0.9895, 2.4, 6, range());
        let mut hist = SignalHistory::new(0.1, 2.4);
        for _ in 0..40 {
            hist.record(1, 0.0, 17.0);
            hist.record(6, 0.0, 17.0);
        }
        let h = range().desired_headway(17.0);
        assert_abs_diff_eq!(rccc_accel(h, 17.0, &hist, &p).unwrap(), 0.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn affine_in_ego_speed(h in 5.0f64..60.0, v in 0.0f64..30.0, dv in 0.1f64..5.0,
                               v1 in 0.0f64..35.0, vl in 0.0f64..35.0) {
            let p = OvmParams::connected(0.4, 0.241, 0.9895, 2.4, 6, range());
            let mut hist = SignalHistory::new(0.1, 2.4);
            hist.record(1, 0.0, v1);
            hist.record(6, 0.0, vl);
            let a0 = rccc_accel(h, v, &hist, &p).unwrap();
            let a1 = rccc_accel(h, v + dv, &hist, &p).unwrap();
            let slope = (a1 - a0) / dv;
            prop_assert!((slope + p.total_gain()).abs() < 1e-9);
        }

        #[test]
        fn bounded_output(h in 5.0f64..63.45, v in 0.0f64..35.0, v1 in 0.0f64..35.0, vl in 0.0f64..35.0) {
            let p = OvmParams::connected(0.4, 0.241, 0.9895, 2.4, 6, range());
            let mut hist = SignalHistory::new(0.1, 2.4);
            hist.record(1, 0.0, v1);
            hist.record(6, 0.0, vl);
            let a = rccc_accel(h, v, &hist, &p).unwrap();
            prop_assert!(a.abs() <= p.total_gain() * 35.0 + 1e-9);
        }
    }
}
