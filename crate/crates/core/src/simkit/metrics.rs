//! Summary statistics of closed-loop runs.

use serde::{Deserialize, Serialize};

use super::engine::RunResult;
use super::scenario::Scenario;
use crate::dynamics::{energy_of_series, DynamicsError, VehicleParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub controller: String,
    pub steps: usize,
    pub duration: f64,
    /// Energy per unit mass [J/kg].
    pub energy: f64,
    pub min_headway: f64,
    pub mean_headway: f64,
    pub max_abs_accel: f64,
    /// Steps with `h < H_min(v)`.
    pub floor_violations: usize,
    /// Largest `H_min(v) - h` over the run (0 if never violated).
    pub max_violation_depth: f64,
    pub collided: bool,
    pub qp_fallbacks: usize,
    pub max_kkt_residual: Option<f64>,
    pub max_slack: Option<f64>,
}

/// Summarizes a run; an empty run yields zeros.
pub fn summarize(r: &RunResult) -> Summary {
    let n = r.len();
    let gaps = r.safety_gap();
    let viol: Vec<f64> = gaps.iter().filter(|&&g| g < 0.0).map(|&g| -g).collect();
    let qp: Vec<_> = r.qp.iter().flatten().collect();
    Summary {
        controller: r.controller.to_string(),
        steps: n,
        duration: n.saturating_sub(1) as f64 * r.dt,
        energy: r.energy,
        min_headway: if n == 0 { 0.0 } else { r.h.iter().copied().fold(f64::INFINITY, f64::min) },
        mean_headway: if n == 0 { 0.0 } else { r.h.iter().sum::<f64>() / n as f64 },
        max_abs_accel: r.a.iter().fold(0.0, |m, a| m.max(a.abs())),
        floor_violations: viol.len(),
        max_violation_depth: viol.iter().copied().fold(0.0, f64::max),
        collided: r.collided(),
        qp_fallbacks: r.fallbacks(),
        max_kkt_residual: (!qp.is_empty()).then(|| qp.iter().map(|q| q.residuals.max()).fold(0.0, f64::max)),
        max_slack: (!qp.is_empty()).then(|| qp.iter().map(|q| q.epsilon).fold(0.0, f64::max)),
    }
}

impl Summary {
    /// Human-readable multi-line report.
    pub fn report(&self) -> String {
        let mut s = format!(
            "controller        {}\nsteps             {}\nduration [s]      {:.1}\nenergy [J/kg]     {:.4}\n\
             min headway [m]   {:.3}\nmean headway [m]  {:.3}\nmax |a| [m/s^2]   {:.3}\n\
             floor violations  {}\nmax depth [m]     {:.3}\ncollided          {}\n",
            self.controller,
            self.steps,
            self.duration,
            self.energy,
            self.min_headway,
            self.mean_headway,
            self.max_abs_accel,
            self.floor_violations,
            self.max_violation_depth,
            self.collided,
        );
        if let Some(r) = self.max_kkt_residual {
            s.push_str(&format!("qp fallbacks      {}\nmax KKT residual  {r:.3e}\n", self.qp_fallbacks));
        }
        if let Some(e) = self.max_slack {
            s.push_str(&format!("max slack [m]     {e:.4}\n"));
        }
        s
    }
}

/// Re-integrates the energy from the stored ego series.
pub fn reintegrated_energy(r: &RunResult, plant: &VehicleParams<f64>) -> Result<f64, DynamicsError> {
    let m = r.len().saturating_sub(1);
    energy_of_series(&r.ego.v[..m], &r.a[..m], plant, r.dt)
}

/// Steps at which `h < H_min(v) - tolerance`.
pub fn safety_audit(r: &RunResult, tolerance: f64) -> Vec<usize> {
    r.safety_gap()
        .iter()
        .enumerate()
        .filter(|(_, &g)| g < -tolerance)
        .map(|(k, _)| k)
        .collect()
}

/// `error[t][k] = s1_hat(k | t) - s1(t + k)` for every `t + k` inside the scenario.
pub fn prediction_error_surface(r: &RunResult, scenario: &Scenario) -> Vec<Vec<f64>> {
    let s1 = &scenario.vehicle(1).s;
    r.predictions
        .iter()
        .enumerate()
        .map(|(t, pred)| {
            pred.iter()
                .enumerate()
                .take_while(|(k, _)| t + k < s1.len())
                .map(|(k, &p)| p - s1[t + k])
                .collect()
        })
        .collect()
}

/// Mean `|error(t, k)|` over all `t` for which step `k` is available.
pub fn mean_abs_error_at(surface: &[Vec<f64>], k: usize) -> Option<f64> {
    let vals: Vec<f64> = surface.iter().filter_map(|row| row.get(k)).map(|e| e.abs()).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Fraction of steps at or after `warmup` seconds with `n_hat == truth`.
pub fn estimator_accuracy(n_hat: &[Option<usize>], truth: usize, dt: f64, warmup: f64) -> Option<f64> {
    let start = (warmup / dt).round() as usize;
    let tail: Vec<_> = n_hat.iter().skip(start).collect();
    if tail.is_empty() {
        return None;
    }
    let hits = tail.iter().filter(|e| ***e == Some(truth)).count();
    Some(hits as f64 / tail.len() as f64)
}

/// Relative saving `(w_base - w) / w_base`.
pub fn energy_saving(w: f64, w_base: f64) -> f64 {
    (w_base - w) / w_base
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkit::engine::ControllerKind;
    use crate::simkit::scenario::Trajectory;

    fn empty() -> RunResult {
        RunResult {
            controller: ControllerKind::Racc,
            dt: 0.1,
            t: vec![],
            ego: Trajectory::new(0.1, vec![], vec![]),
            a: vec![],
            a_d: vec![],
            h: vec![],
            w: vec![],
            energy: 0.0,
            vehicle_length: 5.0,
            collision: None,
            n_hat: vec![],
            qp: vec![],
            predictions: vec![],
            d_min: 3.0,
            tau_min: 0.67,
        }
    }

    #[test]
    fn empty_run_summary() {
        let s = summarize(&empty());
        assert_eq!(s.steps, 0);
        assert_eq!(s.energy, 0.0);
        assert_eq!(s.floor_violations, 0);
        assert!(s.max_kkt_residual.is_none());
        assert_eq!(reintegrated_energy(&empty(), &VehicleParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_counts_matches_after_warmup() {
        let n_hat = [Some(0), Some(0), Some(2), Some(2), Some(1), Some(2)];
        assert_eq!(estimator_accuracy(&n_hat, 2, 0.1, 0.2), Some(0.75));
        assert_eq!(estimator_accuracy(&n_hat, 2, 0.1, 1.0), None);
    }

    #[test]
    fn mean_error_skips_short_rows() {
        let surface = vec![vec![0.0, 1.0, -3.0], vec![0.0, -1.0]];
        assert_eq!(mean_abs_error_at(&surface, 1), Some(1.0));
        assert_eq!(mean_abs_error_at(&surface, 2), Some(3.0));
        assert_eq!(mean_abs_error_at(&surface, 5), None);
    }

    #[test]
    fn saving_sign() {
        assert!((energy_saving(80.0, 100.0) - 0.2).abs() < 1e-15);
        assert!(energy_saving(120.0, 100.0) < 0.0);
    }
}
