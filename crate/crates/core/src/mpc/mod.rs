//! Receding-horizon controller with a chance-constrained safety margin.
//!
//! The plan over `N = T + q` accelerations is condensed: positions and speeds
//! are affine prefix sums of the accelerations, so the only decision
//! variables are `a(0..N)` and the shared slack `epsilon`. The first `q`
//! accelerations are already committed to the powertrain and enter as
//! equality rows.

pub mod linalg;
pub mod qp;

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::carfollow::RangePolicyParams;
use crate::dynamics::{saturate, DynamicsError, VehicleParams, VehicleState};
use crate::predict::Prediction;
use crate::scalar::{fmax, Scalar};
use linalg::DenseMatrix;
use qp::{solve_qp_with, KktResiduals, QpError, QpProblem, QpSettings, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("prediction covers {got} steps, horizon needs {need}")]
    ShortPrediction { got: usize, need: usize },
    #[error("expected {expected} committed commands, got {got}")]
    Committed { expected: usize, got: usize },
    #[error("invalid MPC configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct MpcConfig<T> {
    pub dt: T,
    /// Prediction horizon [steps].
    pub horizon: usize,
    pub q_g: T,
    pub q_a: T,
    pub q_eps: T,
    /// Desired headway `d + tau v`.
    pub range: RangePolicyParams<T>,
    pub d_min: T,
    pub tau_min: T,
    /// Std of the leader's acceleration noise [m/s^2].
    pub sigma_a1: T,
    pub alpha_start: T,
    pub alpha_end: T,
    /// Step at which the confidence level reaches `alpha_end`.
    pub chance_steps: usize,
    pub v_max: T,
    pub vehicle: VehicleParams<T>,
}

impl<T: Scalar> Default for MpcConfig<T> {
    fn default() -> Self {
        Self {
            dt: T::lit(0.1),
            horizon: 100,
            q_g: T::one(),
            q_a: T::lit(960.0),
            q_eps: T::lit(1e6),
            range: RangePolicyParams::default(),
            d_min: T::lit(3.0),
            tau_min: T::lit(0.67),
            sigma_a1: T::lit(0.6),
            alpha_start: T::lit(0.99),
            alpha_end: T::lit(0.5),
            chance_steps: 100,
            v_max: T::lit(35.0),
            vehicle: VehicleParams::default(),
        }
    }
}

impl<T: Scalar> MpcConfig<T> {
    pub fn delay_steps(&self) -> Result<usize, MpcError> {
        Ok(self.vehicle.delay_steps(self.dt)?)
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let bad = |m: &str| Err(MpcError::Config(m.to_string()));
        if !(self.dt > T::zero()) {
            return bad("dt must be positive");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least one step");
        }
        if !(self.q_g > T::zero() && self.q_a > T::zero() && self.q_eps > T::zero()) {
            return bad("objective weights must be positive");
        }
        if !(self.alpha_start > T::lit(0.5) && self.alpha_start < T::one()) {
            return bad("alpha_start must lie in (0.5, 1)");
        }
        if !(self.alpha_end >= T::lit(0.5) && self.alpha_end <= self.alpha_start) {
            return bad("alpha_end must lie in [0.5, alpha_start]");
        }
        if self.chance_steps < 2 {
            return bad("chance schedule needs at least two steps");
        }
        if !(self.sigma_a1 >= T::zero() && self.d_min >= T::zero() && self.tau_min >= T::zero()) {
            return bad("safety parameters must be non-negative");
        }
        self.vehicle.validate(self.dt, self.v_max)?;
        Ok(())
    }

    /// Minimum safe headway `d_min + tau_min v`.
    pub fn min_headway(&self, v: T) -> T {
        self.d_min + self.tau_min * v
    }
}

/// Confidence level required at prediction step `k >= 1`.
pub fn alpha_schedule<T: Scalar>(k: usize, cfg: &MpcConfig<T>) -> T {
    let k_end = cfg.chance_steps;
    if k >= k_end {
        return cfg.alpha_end;
    }
    let frac = T::from_usize_lossy(k.saturating_sub(1)) / T::from_usize_lossy(k_end - 1);
    cfg.alpha_start - (cfg.alpha_start - cfg.alpha_end) * frac
}

/// Stacked response of the leader state `[s, v]` at steps `1..=steps` to a
/// unit acceleration bias held over the whole horizon.
pub fn noise_gain_matrix<T: Scalar>(steps: usize, dt: T) -> DenseMatrix<T> {
    let a = DenseMatrix::from_rows(&[vec![T::one(), dt], vec![T::zero(), T::one()]]);
    let b = [T::lit(0.5) * dt * dt, dt];
    let mut out = DenseMatrix::zeros(2 * steps, 1);
    // block_k = A block_{k-1} + B
    let mut block = [T::zero(); 2];
    for k in 0..steps {
        let prop = a.mul_vec(&block);
        block = [prop[0] + b[0], prop[1] + b[1]];
        out[(2 * k, 0)] = block[0];
        out[(2 * k + 1, 0)] = block[1];
    }
    out
}

/// Position standard deviations of the leader for `k = 0..=steps`.
pub fn position_std_profile<T: Scalar>(steps: usize, dt: T, sigma_a1: T) -> Vec<T> {
    let g = noise_gain_matrix(steps, dt);
    // Diagonal of G G' at the position rows (1-based row 2k-1).
    let mut out = Vec::with_capacity(steps + 1);
    out.push(T::zero());
    for k in 1..=steps {
        let row = g.row(2 * k - 2);
        let b_k: T = row.iter().map(|&x| x * x).sum();
        out.push(b_k.sqrt() * sigma_a1);
    }
    out
}

/// `Phi^{-1}(p)` of the standard normal distribution.
pub fn inverse_normal_cdf<T: Scalar>(p: T) -> T {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    T::lit(n.inverse_cdf(p.as_f64()))
}

fn margin_from_std<T: Scalar>(k: usize, std: T, cfg: &MpcConfig<T>) -> T {
    if k == 0 {
        return T::zero();
    }
    let alpha = alpha_schedule(k, cfg);
    if alpha <= T::lit(0.5) {
        return T::zero();
    }
    fmax(T::zero(), std * inverse_normal_cdf(alpha))
}

/// Chance-constraint safety margin at prediction step `k` [m].
pub fn safety_margin<T: Scalar>(k: usize, cfg: &MpcConfig<T>) -> T {
    let std = position_std_profile(k, cfg.dt, cfg.sigma_a1)[k];
    margin_from_std(k, std, cfg)
}

/// Safety margins for `k = 0..=steps`.
pub fn safety_margins<T: Scalar>(steps: usize, cfg: &MpcConfig<T>) -> Vec<T> {
    position_std_profile(steps, cfg.dt, cfg.sigma_a1)
        .into_iter()
        .enumerate()
        .map(|(k, std)| margin_from_std(k, std, cfg))
        .collect()
}

/// Accelerations the committed commands will actually produce.
fn realized_committed<T: Scalar>(x0: &VehicleState<T>, committed: &[T], cfg: &MpcConfig<T>) -> Vec<T> {
    let mut v = x0.v;
    committed
        .iter()
        .map(|&a_d| {
            let a = fmax(saturate(a_d, v, &cfg.vehicle), -v / cfg.dt);
            v = fmax(T::zero(), v + cfg.dt * a);
            a
        })
        .collect()
}

/// Builds the condensed QP over `x = [a(0), ..., a(T+q-1), epsilon]`.
pub fn build_qp<T: Scalar>(
    x0: &VehicleState<T>,
    committed: &[T],
    pred: &Prediction<T>,
    cfg: &MpcConfig<T>,
) -> Result<QpProblem<T>, MpcError> {
    let q = cfg.delay_steps()?;
    if committed.len() != q {
        return Err(MpcError::Committed { expected: q, got: committed.len() });
    }
    let t_h = cfg.horizon;
    if pred.horizon() < t_h {
        return Err(MpcError::ShortPrediction { got: pred.horizon(), need: t_h });
    }
    let margins = safety_margins(t_h, cfg);
    build_qp_with_margins(x0, committed, pred, cfg, q, &margins)
}

fn build_qp_with_margins<T: Scalar>(
    x0: &VehicleState<T>,
    committed: &[T],
    pred: &Prediction<T>,
    cfg: &MpcConfig<T>,
    q: usize,
    margins: &[T],
) -> Result<QpProblem<T>, MpcError> {
    let t_h = cfg.horizon;
    let n_a = t_h + q;
    let n = n_a + 1;
    let eps = n_a;
    let dt = cfg.dt;
    let dt2 = dt * dt;
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let (s0, v0) = (x0.s, x0.v);
    let len = cfg.vehicle.length;
    let kf = |k: usize| T::from_usize_lossy(k);
    // Coefficient of a(j) in s(k) for j < k.
    let pos_coef = |k: usize, j: usize| dt2 * (kf(k - j) - half);

    // Headway tracking residual r(k) = const(k) - g(k) . a
    let mut gmat = DenseMatrix::zeros(t_h + 1, n_a);
    let mut konst = vec![T::zero(); t_h + 1];
    for k in 0..=t_h {
        konst[k] = pred.s_hat[k] - s0 - kf(k) * dt * v0 - len - cfg.range.d - cfg.range.tau * v0;
        let row = gmat.row_mut(k);
        for (j, g) in row.iter_mut().enumerate().take(k) {
            *g = pos_coef(k, j) + cfg.range.tau * dt;
        }
    }
    let mut p = DenseMatrix::zeros(n, n);
    let gtg = gmat.transpose().matmul(&gmat);
    for i in 0..n_a {
        for j in 0..n_a {
            p[(i, j)] = two * cfg.q_g * gtg[(i, j)];
        }
    }
    for k in 0..t_h {
        p[(k, k)] = p[(k, k)] + two * cfg.q_a;
    }
    let gtc = gmat.tr_mul_vec(&konst);
    let mut c: Vec<T> = gtc.iter().map(|&v| -two * cfg.q_g * v).collect();
    c.push(cfg.q_eps);
    let constant = cfg.q_g * konst.iter().map(|&v| v * v).sum::<T>();

    let mut a_eq = DenseMatrix::zeros(q, n);
    for k in 0..q {
        a_eq[(k, k)] = T::one();
    }
    let b_eq = realized_committed(x0, committed, cfg);

    let mut g_rows: Vec<Vec<T>> = Vec::new();
    let mut h = Vec::new();
    // Soft safety: s(k) + tau_min v(k) - eps <= s1_hat(k) - l - d_min - margin(k)
    for k in 0..=t_h {
        let mut row = vec![T::zero(); n];
        for (j, r) in row.iter_mut().enumerate().take(k) {
            *r = pos_coef(k, j) + cfg.tau_min * dt;
        }
        row[eps] = -T::one();
        g_rows.push(row);
        h.push(pred.s_hat[k] - s0 - kf(k) * dt * v0 - len - cfg.min_headway(v0) - margins[k]);
    }
    // Speed box on the steps the free commands can influence.
    for k in q + 1..=t_h {
        let mut lo = vec![T::zero(); n];
        let mut hi = vec![T::zero(); n];
        for j in 0..k {
            lo[j] = -dt;
            hi[j] = dt;
        }
        g_rows.push(lo);
        h.push(v0);
        g_rows.push(hi);
        h.push(cfg.v_max - v0);
    }
    // Braking floor and the two envelope lines on every free command.
    let veh = &cfg.vehicle;
    let mut lines = vec![(veh.m1, veh.b1), (veh.m2, veh.b2)];
    if let Some(cap) = veh.u_max_cap {
        lines.push((T::zero(), cap));
    }
    for k in q..n_a {
        let mut row = vec![T::zero(); n];
        row[k] = -T::one();
        g_rows.push(row);
        h.push(-veh.u_min);
        for &(m, b) in &lines {
            let mut row = vec![T::zero(); n];
            for r in row.iter_mut().take(k) {
                *r = -m * dt;
            }
            row[k] = T::one();
            g_rows.push(row);
            h.push(m * v0 + b);
        }
    }
    let mut row = vec![T::zero(); n];
    row[eps] = -T::one();
    g_rows.push(row);
    h.push(T::zero());

    Ok(QpProblem {
        p,
        c,
        constant,
        a_eq,
        b_eq,
        g: DenseMatrix::from_rows(&g_rows),
        h,
    })
}

/// Result of one receding-horizon step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcOutcome<T> {
    /// Desired acceleration handed to the powertrain.
    pub command: T,
    pub status: QpStatus,
    /// True when the solver failed and the previous command was reused.
    pub fallback: bool,
    pub epsilon: T,
    pub objective: T,
    pub iterations: usize,
    pub residuals: KktResiduals<T>,
    /// Planned accelerations `a(0..T+q)`.
    pub plan: Vec<T>,
}

impl<T: Scalar> MpcOutcome<T> {
    /// Speeds implied by the plan, `v(0..=T+q)`.
    pub fn planned_speeds(&self, v0: T, dt: T) -> Vec<T> {
        let mut v = vec![v0];
        for &a in &self.plan {
            v.push(*v.last().unwrap() + dt * a);
        }
        v
    }
}

/// Builds and solves one step, returning the first uncommitted acceleration `a(q)`.
///
/// On an iteration-capped solve the `fallback` command is returned instead.
pub fn mpc_step<T: Scalar>(
    x0: &VehicleState<T>,
    committed: &[T],
    pred: &Prediction<T>,
    cfg: &MpcConfig<T>,
    fallback: T,
) -> Result<MpcOutcome<T>, MpcError> {
    MpcController::new(*cfg)?.step(x0, committed, pred, fallback)
}

/// Receding-horizon controller that caches the margin table.
#[derive(Debug, Clone)]
pub struct MpcController<T> {
    cfg: MpcConfig<T>,
    q: usize,
    margins: Vec<T>,
    settings: QpSettings<T>,
    last_qp: Option<QpProblem<T>>,
    keep_qp: bool,
}

impl<T: Scalar> MpcController<T> {
    pub fn new(cfg: MpcConfig<T>) -> Result<Self, MpcError> {
        cfg.validate()?;
        Ok(Self {
            q: cfg.delay_steps()?,
            margins: safety_margins(cfg.horizon, &cfg),
            cfg,
            settings: QpSettings::default(),
            last_qp: None,
            keep_qp: false,
        })
    }

    pub fn config(&self) -> &MpcConfig<T> {
        &self.cfg
    }

    pub fn delay_steps(&self) -> usize {
        self.q
    }

    pub fn with_settings(mut self, settings: QpSettings<T>) -> Self {
        self.settings = settings;
        self
    }

    /// Keep the most recent QP for inspection via [`Self::last_qp`].
    pub fn keep_last_qp(mut self, keep: bool) -> Self {
        self.keep_qp = keep;
        self
    }

    pub fn last_qp(&self) -> Option<&QpProblem<T>> {
        self.last_qp.as_ref()
    }

    pub fn step(
        &mut self,
        x0: &VehicleState<T>,
        committed: &[T],
        pred: &Prediction<T>,
        fallback: T,
    ) -> Result<MpcOutcome<T>, MpcError> {
        if committed.len() != self.q {
            return Err(MpcError::Committed { expected: self.q, got: committed.len() });
        }
        if pred.horizon() < self.cfg.horizon {
            return Err(MpcError::ShortPrediction { got: pred.horizon(), need: self.cfg.horizon });
        }
        let qp = build_qp_with_margins(x0, committed, pred, &self.cfg, self.q, &self.margins)?;
        let sol = solve_qp_with(&qp, &self.settings, None)?;
        let n_a = self.cfg.horizon + self.q;
        let outcome = match sol.status {
            QpStatus::Optimal => {
                MpcOutcome {
                    command: sol.x[self.q],
                    status: sol.status,
                    fallback: false,
                    epsilon: sol.x[n_a],
                    objective: sol.objective,
                    iterations: sol.iterations,
                    residuals: sol.residuals,
                    plan: sol.x[..n_a].to_vec(),
                }
            }
            QpStatus::MaxIterations => {
                warn!(
                    "QP hit the iteration cap (residual {:e}); reusing previous command {}",
                    sol.residuals.max().as_f64(),
                    fallback
                );
                MpcOutcome {
                    command: fallback,
                    status: sol.status,
                    fallback: true,
                    epsilon: sol.x[n_a],
                    objective: sol.objective,
                    iterations: sol.iterations,
                    residuals: sol.residuals,
                    plan: sol.x[..n_a].to_vec(),
                }
            }
        };
        if self.keep_qp {
            self.last_qp = Some(qp);
        }
        Ok(outcome)
    }
}
