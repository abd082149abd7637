//! Motion prediction of the vehicle immediately ahead of the ego.
//!
//! Two predictors feed the MPC: a constant-speed extrapolation of vehicle 1,
//! and an IDM rollout of the chain between a distant connected vehicle `L`
//! and vehicle 1. The number of unconnected ("hidden") vehicles in that chain
//! is unknown and is estimated online by [`EstimatorState`], which backtests
//! each candidate count against the recorded motion of vehicle 1.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carfollow::{IdmParams, RangePolicyParams};
use crate::dynamics::{integrate, VehicleState};
use crate::scalar::{fmin, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("distant vehicle at {s_l} m is not ahead of vehicle 1 at {s1} m")]
    Ordering { s1: f64, s_l: f64 },
    #[error("prediction horizon must be at least one step")]
    EmptyHorizon,
}

/// Predicted positions and speeds over `k = 0..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction<T> {
    pub dt: T,
    pub s_hat: Vec<T>,
    pub v_hat: Vec<T>,
}

impl<T: Scalar> Prediction<T> {
    pub fn horizon(&self) -> usize {
        self.s_hat.len().saturating_sub(1)
    }
}

/// Constant-speed extrapolation `s1 + k dt v1`.
pub fn predict_constant_speed<T: Scalar>(s1: T, v1: T, horizon: usize, dt: T) -> Prediction<T> {
    let s_hat = (0..=horizon).map(|k| s1 + T::from_usize_lossy(k) * dt * v1).collect();
    Prediction {
        dt,
        s_hat,
        v_hat: vec![v1; horizon + 1],
    }
}

/// Simulation settings shared by forward prediction, backtesting and identification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutModel<T> {
    pub idm: IdmParams<T>,
    /// Length of every simulated human-driven vehicle [m].
    pub vehicle_length: T,
    /// Lower bound applied to IDM accelerations [m/s^2].
    pub accel_floor: T,
    pub dt: T,
}

/// Follower trajectory produced by [`RolloutModel::follow`].
#[derive(Debug, Clone, PartialEq)]
pub struct Followed<T> {
    pub s: Vec<T>,
    pub v: Vec<T>,
    /// First step at which the headway was non-positive, if any.
    pub collision: Option<usize>,
}

impl<T: Scalar> RolloutModel<T> {
    /// Simulates a follower behind a given leader trajectory.
    ///
    /// The output has the leader's length; sample 0 is the initial state.
    pub fn follow(&self, leader_s: &[T], leader_v: &[T], s0: T, v0: T) -> Followed<T> {
        let n = leader_s.len();
        let mut s = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let mut collision = None;
        let mut x = VehicleState::new(s0, self.clamp_speed(v0));
        for k in 0..n {
            s.push(x.s);
            v.push(x.v);
            if k + 1 == n {
                break;
            }
            let h = leader_s[k] - x.s - self.vehicle_length;
            if collision.is_none() && h <= T::zero() {
                collision = Some(k);
            }
            let a = self.idm.accel_floored(h, x.v, leader_v[k], self.accel_floor);
            x = integrate(&x, a, self.dt);
            x.v = self.clamp_speed(x.v);
        }
        Followed { s, v, collision }
    }

    fn clamp_speed(&self, v: T) -> T {
        fmin(self.idm.v_max, v.max(T::zero()))
    }

    /// Simulates `n_hidden` uniformly initialized vehicles and then vehicle 1
    /// behind a given trajectory of the connected vehicle.
    ///
    /// Returns the trajectories from vehicle 1 up to the last hidden vehicle
    /// (index 0 is vehicle 1) and whether any link collided.
    pub fn rollout_chain(
        &self,
        leader_s: &[T],
        leader_v: &[T],
        s1: T,
        v1: T,
        n_hidden: usize,
    ) -> (Vec<Followed<T>>, bool) {
        let gap = (leader_s[0] - s1) / T::from_usize_lossy(n_hidden + 1);
        let v_init = (v1 + leader_v[0]) / T::lit(2.0);
        // Simulate from the vehicle right behind L down to vehicle 2.
        let mut chain: Vec<Followed<T>> = Vec::with_capacity(n_hidden + 1);
        let mut collided = false;
        for i in (2..=n_hidden + 1).rev() {
            let s0 = s1 + T::from_usize_lossy(i - 1) * gap;
            let (ls, lv) = match chain.last() {
                Some(f) => (&f.s[..], &f.v[..]),
                None => (leader_s, leader_v),
            };
            let f = self.follow(ls, lv, s0, v_init);
            collided |= f.collision.is_some();
            chain.push(f);
        }
        let (ls, lv) = match chain.last() {
            Some(f) => (&f.s[..], &f.v[..]),
            None => (leader_s, leader_v),
        };
        let first = self.follow(ls, lv, s1, v1);
        collided |= first.collision.is_some();
        chain.push(first);
        chain.reverse();
        (chain, collided)
    }
}

/// Predicts vehicle 1 by rolling the IDM chain forward behind a constant-speed vehicle `L`.
pub fn predict_idm_rollout<T: Scalar>(
    s1: T,
    v1: T,
    s_l: T,
    v_l: T,
    n_hat: usize,
    model: &RolloutModel<T>,
    horizon: usize,
) -> Result<Prediction<T>, PredictError> {
    Ok(predict_chain(s1, v1, s_l, v_l, n_hat, model, horizon)?.swap_remove(0))
}

/// Like [`predict_idm_rollout`] but returns every simulated vehicle, vehicle 1 first.
pub fn predict_chain<T: Scalar>(
    s1: T,
    v1: T,
    s_l: T,
    v_l: T,
    n_hat: usize,
    model: &RolloutModel<T>,
    horizon: usize,
) -> Result<Vec<Prediction<T>>, PredictError> {
    if horizon == 0 {
        return Err(PredictError::EmptyHorizon);
    }
    if !(s_l > s1) {
        return Err(PredictError::Ordering {
            s1: s1.as_f64(),
            s_l: s_l.as_f64(),
        });
    }
    let leader = predict_constant_speed(s_l, v_l, horizon, model.dt);
    let (chain, _) = model.rollout_chain(&leader.s_hat, &leader.v_hat, s1, v1, n_hat);
    Ok(chain
        .into_iter()
        .map(|f| Prediction {
            dt: model.dt,
            s_hat: f.s,
            v_hat: f.v,
        })
        .collect())
}

/// Tuning of the hidden-vehicle estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig<T> {
    /// Backtest window cap [s].
    pub history_window: T,
    /// Scoring window cap [s].
    pub scoring_window: T,
    /// Cost multiplier for hypotheses that differ from the previous estimate.
    pub mismatch_penalty: T,
    /// History required before backtesting starts [s].
    pub warmup: T,
    /// Minimum headway floor used in the packing bound [m].
    pub d_min: T,
    /// Minimum time headway used in the packing bound [s].
    pub tau_min: T,
    /// Desired headway used for the initial estimate.
    pub range: RangePolicyParams<T>,
}

impl<T: Scalar> Default for EstimatorConfig<T> {
    fn default() -> Self {
        Self {
            history_window: T::lit(23.0),
            scoring_window: T::lit(5.0),
            mismatch_penalty: T::lit(1.5),
            warmup: T::lit(1.0),
            d_min: T::lit(3.0),
            tau_min: T::lit(0.67),
            range: RangePolicyParams::default(),
        }
    }
}

/// Online estimator of the number of hidden vehicles between vehicle 1 and `L`.
#[derive(Debug, Clone)]
pub struct EstimatorState<T> {
    cfg: EstimatorConfig<T>,
    model: RolloutModel<T>,
    capacity: usize,
    s1: VecDeque<T>,
    v1: VecDeque<T>,
    s_l: VecDeque<T>,
    v_l: VecDeque<T>,
    n_hat_prev: Option<usize>,
    last_range: Option<(usize, usize)>,
}

impl<T: Scalar> EstimatorState<T> {
    pub fn new(cfg: EstimatorConfig<T>, model: RolloutModel<T>) -> Self {
        let capacity = (cfg.history_window / model.dt).round().to_usize().unwrap_or(0) + 1;
        Self {
            cfg,
            model,
            capacity,
            s1: VecDeque::with_capacity(capacity),
            v1: VecDeque::with_capacity(capacity),
            s_l: VecDeque::with_capacity(capacity),
            v_l: VecDeque::with_capacity(capacity),
            n_hat_prev: None,
            last_range: None,
        }
    }

    /// Stores the current measurements of vehicle 1 and of the connected vehicle.
    pub fn observe(&mut self, s1: T, v1: T, s_l: T, v_l: T) {
        if self.s1.len() == self.capacity {
            self.s1.pop_front();
            self.v1.pop_front();
            self.s_l.pop_front();
            self.v_l.pop_front();
        }
        self.s1.push_back(s1);
        self.v1.push_back(v1);
        self.s_l.push_back(s_l);
        self.v_l.push_back(v_l);
    }

    pub fn previous(&self) -> Option<usize> {
        self.n_hat_prev
    }

    /// Hypothesis range searched by the last call to [`Self::estimate_hidden`].
    pub fn last_hypotheses(&self) -> Option<(usize, usize)> {
        self.last_range
    }

    fn elapsed(&self) -> T {
        T::from_usize_lossy(self.s1.len().saturating_sub(1)) * self.model.dt
    }

    fn latest(&self) -> Option<(T, T, T)> {
        Some((*self.s1.back()?, *self.v1.back()?, *self.s_l.back()?))
    }

    /// Count implied by equal spacing at the desired headway of vehicle 1.
    pub fn initial_estimate(&self) -> usize {
        let Some((s1, v1, s_l)) = self.latest() else {
            return 0;
        };
        let spacing = self.cfg.range.desired_headway(v1);
        ceil_minus_one((s_l - s1) / spacing)
    }

    /// Largest hidden count that fits between vehicle 1 and `L` at minimum headway.
    pub fn packing_bound(&self, v_now: T) -> usize {
        let Some((s1, _, s_l)) = self.latest() else {
            return 0;
        };
        ceil_minus_one((s_l - s1) / (self.cfg.d_min + self.cfg.tau_min * v_now))
    }

    /// Backtest cost (before the mismatch weight) of a hidden-vehicle hypothesis.
    ///
    /// Returns infinity when the rollout collides.
    pub fn backtest_cost(&self, n_h: usize) -> T {
        let dt = self.model.dt;
        let len = self.s1.len();
        let t = self.elapsed();
        let k_h = (fmin(t, self.cfg.history_window) / dt).round().to_usize().unwrap_or(0).min(len - 1);
        let k_s = (fmin(t, self.cfg.scoring_window) / dt).round().to_usize().unwrap_or(0).min(k_h);
        let w0 = len - 1 - k_h;
        let leader_s: Vec<T> = self.s_l.range(w0..).copied().collect();
        let leader_v: Vec<T> = self.v_l.range(w0..).copied().collect();
        let (chain, collided) = self.model.rollout_chain(&leader_s, &leader_v, self.s1[w0], self.v1[w0], n_h);
        if collided {
            return T::infinity();
        }
        let sim = &chain[0].s;
        (0..=k_s)
            .map(|k| {
                let e = self.s1[len - 1 - k] - sim[k_h - k];
                e * e
            })
            .sum()
    }

    /// Updates and returns the hidden-vehicle estimate.
    pub fn estimate_hidden(&mut self, v_now: T) -> usize {
        if self.s1.is_empty() {
            return self.n_hat_prev.unwrap_or(0);
        }
        let prev = match self.n_hat_prev {
            Some(p) if self.elapsed() >= self.cfg.warmup => p,
            _ => {
                let n = self.initial_estimate();
                self.n_hat_prev = Some(n);
                self.last_range = None;
                return n;
            }
        };
        let lo = prev.saturating_sub(1);
        let hi = (prev + 1).min(self.packing_bound(v_now));
        if lo > hi {
            self.last_range = None;
            return prev;
        }
        self.last_range = Some((lo, hi));
        let mut best = prev;
        let mut best_j = T::infinity();
        for n_h in lo..=hi {
            let weight = if n_h == prev { T::one() } else { self.cfg.mismatch_penalty };
            let j = weight * self.backtest_cost(n_h);
            if j < best_j {
                best_j = j;
                best = n_h;
            }
        }
        self.n_hat_prev = Some(best);
        best
    }
}

fn ceil_minus_one<T: Scalar>(x: T) -> usize {
    let c = x.ceil() - T::one();
    if c > T::zero() {
        c.to_usize().unwrap_or(0)
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{idm_preset, Preset};
    use approx::assert_abs_diff_eq;

    fn model() -> RolloutModel<f64> {
        RolloutModel {
            idm: idm_preset(Preset::Congested),
            vehicle_length: 5.0,
            accel_floor: -6.0,
            dt: 0.1,
        }
    }

    #[test]
    fn constant_speed_examples() {
        let p = predict_constant_speed(100.0, 0.0, 30, 0.1);
        assert!(p.s_hat.iter().all(|&s| s == 100.0));
        let p = predict_constant_speed(0.0, 20.0, 60, 0.1);
        assert_abs_diff_eq!(p.s_hat[50], 100.0, epsilon = 1e-12);
        assert_eq!(p.horizon(), 60);
    }

    #[test]
    fn rollout_at_equilibrium_is_constant_speed() {
        let m = model();
        for v in [5.0, 12.0, 25.0] {
            let gap = m.idm.equilibrium_headway(v) + m.vehicle_length;
            let idm = predict_idm_rollout(50.0, v, 50.0 + gap, v, 0, &m, 100).unwrap();
            let cs = predict_constant_speed(50.0, v, 100, 0.1);
            for (a, b) in idm.s_hat.iter().zip(&cs.s_hat) {
                assert!((a - b).abs() < 1e-6, "v={v}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn uniform_flow_initialization() {
        let m = model();
        let chain = predict_chain(0.0, 10.0, 90.0, 16.0, 2, &m, 5).unwrap();
        assert_eq!(chain.len(), 3);
        assert_abs_diff_eq!(chain[1].s_hat[0], 30.0, epsilon = 1e-12);
        assert_abs_diff_eq!(chain[2].s_hat[0], 60.0, epsilon = 1e-12);
        assert_abs_diff_eq!(chain[1].v_hat[0], 13.0, epsilon = 1e-12);
        assert_abs_diff_eq!(chain[2].v_hat[0], 13.0, epsilon = 1e-12);
        assert_eq!(chain[0].s_hat[0], 0.0);
        assert_eq!(chain[0].v_hat[0], 10.0);
    }

    #[test]
    fn rollout_rejects_bad_ordering() {
        let m = model();
        assert!(matches!(predict_idm_rollout(10.0, 1.0, 5.0, 1.0, 0, &m, 10), Err(PredictError::Ordering { .. })));
        assert_eq!(predict_idm_rollout(0.0, 1.0, 50.0, 1.0, 0, &m, 0), Err(PredictError::EmptyHorizon));
    }

    #[test]
    fn rollout_speeds_stay_physical() {
        let m = model();
        // Leader stopped close ahead: followers brake hard and stop.
        let chain = predict_chain(0.0, 30.0, 60.0, 0.0, 2, &m, 200).unwrap();
        for p in &chain {
            for w in p.s_hat.windows(2) {
                assert!(w[1] >= w[0]);
            }
            assert!(p.v_hat.iter().all(|&v| (0.0..=m.idm.v_max).contains(&v)));
        }
    }

    #[test]
    fn initial_estimate_example() {
        let mut est = EstimatorState::new(EstimatorConfig::default(), model());
        est.observe(0.0, 15.0, 100.0, 15.0);
        assert_eq!(est.initial_estimate(), 3);
        assert_eq!(est.estimate_hidden(15.0), 3);
    }

    #[test]
    fn hypotheses_stay_within_one_of_previous() {
        let m = model();
        let mut est = EstimatorState::new(EstimatorConfig::default(), m);
        // Equilibrium chain with 2 hidden vehicles at 15 m/s.
        let spacing = m.idm.equilibrium_headway(15.0) + m.vehicle_length;
        for k in 0..40 {
            let t = k as f64 * 0.1;
            est.observe(15.0 * t, 15.0, 3.0 * spacing + 15.0 * t, 15.0);
            let n = est.estimate_hidden(15.0);
            if let Some((lo, hi)) = est.last_hypotheses() {
                assert!(hi <= est.packing_bound(15.0));
                assert!(hi - lo <= 2);
            }
            if k >= 10 {
                assert_eq!(n, 2);
            }
        }
    }

    #[test]
    fn mismatch_weight_and_tie_break() {
        let m = model();
        let mut est = EstimatorState::new(EstimatorConfig::default(), m);
        let spacing = m.idm.equilibrium_headway(15.0) + m.vehicle_length;
        for k in 0..30 {
            let t = k as f64 * 0.1;
            est.observe(15.0 * t, 15.0, 3.0 * spacing + 15.0 * t, 15.0);
        }
        // Exact hypothesis has essentially zero backtest error.
        assert!(est.backtest_cost(2) < 1e-12);
        assert!(est.backtest_cost(1) > 1e-6);
    }
}
