//! IDM parameter identification from recorded car-following data.
//!
//! Each follower is re-simulated behind its recorded leader and the fit is
//! scored by the RMS headway error, averaged over followers. The box-bounded
//! problem is solved by a coordinate pattern search from seeded random starts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::carfollow::{IdmParams, IDM_BOUNDS};
use crate::predict::RolloutModel;
use crate::simkit::{Scenario, Trajectory};

/// One recorded follower and the vehicle directly ahead of it.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerPair {
    pub leader: Trajectory,
    pub follower: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentProblem {
    pub pairs: Vec<FollowerPair>,
    pub bounds: [(f64, f64); 6],
    pub dt: f64,
    pub vehicle_length: f64,
    /// Lower bound on simulated accelerations [m/s^2].
    pub accel_floor: f64,
}

impl IdentProblem {
    /// Pairs `(i, i + 1)` for every vehicle of the chain except the farthest.
    pub fn from_scenario(sc: &Scenario) -> Self {
        let pairs = (1..sc.num_vehicles())
            .map(|i| FollowerPair {
                leader: sc.vehicle(i + 1).clone(),
                follower: sc.vehicle(i).clone(),
            })
            .collect();
        Self {
            pairs,
            bounds: IDM_BOUNDS,
            dt: sc.dt,
            vehicle_length: sc.meta.vehicle_length,
            accel_floor: -9.0,
        }
    }

    /// Keeps only the first `samples` samples of every series.
    pub fn truncated(mut self, samples: usize) -> Self {
        for p in &mut self.pairs {
            for tr in [&mut p.leader, &mut p.follower] {
                tr.s.truncate(samples);
                tr.v.truncate(samples);
            }
        }
        self
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    fn to_unit(&self, x: [f64; 6]) -> [f64; 6] {
        let mut u = [0.0; 6];
        for i in 0..6 {
            let (lo, hi) = self.bounds[i];
            u[i] = (x[i] - lo) / (hi - lo);
        }
        u
    }

    /// Maps a point of the unit cube into the box, projecting onto its faces.
    fn params_at(&self, u: [f64; 6]) -> IdmParams<f64> {
        let mut x = [0.0; 6];
        for i in 0..6 {
            let (lo, hi) = self.bounds[i];
            x[i] = (lo + u[i].clamp(0.0, 1.0) * (hi - lo)).clamp(lo, hi);
        }
        IdmParams::from_array(x)
    }
}

/// Mean over followers of the RMS headway error of the re-simulated follower.
///
/// After a simulated collision the last valid headway is held.
pub fn ident_cost(params: &IdmParams<f64>, problem: &IdentProblem) -> f64 {
    if problem.pairs.is_empty() {
        return 0.0;
    }
    let model = RolloutModel {
        idm: *params,
        vehicle_length: problem.vehicle_length,
        accel_floor: problem.accel_floor,
        dt: problem.dt,
    };
    let total: f64 = problem
        .pairs
        .iter()
        .map(|p| {
            let f = &p.follower;
            let sim = model.follow(&p.leader.s, &p.leader.v, f.s[0], f.v[0]);
            let n = f.len();
            if n < 2 {
                return 0.0;
            }
            let valid_until = sim.collision.unwrap_or(n);
            let mut sq = 0.0;
            let mut last = 0.0;
            for k in 1..n {
                // h_hat - h = s - s_hat since both use the same leader.
                let err = if k < valid_until {
                    last = f.s[k] - sim.s[k];
                    last
                } else {
                    last
                };
                sq += err * err;
            }
            (sq / (n - 1) as f64).sqrt()
        })
        .sum();
    total / problem.pairs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSettings {
    pub starts: usize,
    pub max_evals_per_start: usize,
    /// Stop once the mesh (in box-normalized units) falls below this.
    pub min_mesh: f64,
    pub initial_mesh: f64,
    /// Random candidates screened per start; the best ones seed the searches.
    pub screening: usize,
    /// Half-width of the random restarts around a converged point.
    pub kick: f64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            starts: 8,
            max_evals_per_start: 2000,
            min_mesh: 1e-4,
            initial_mesh: 0.25,
            screening: 16,
            kick: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartReport {
    pub start: IdmParams<f64>,
    pub best: IdmParams<f64>,
    pub cost: f64,
    pub evaluations: usize,
    /// Best cost seen after every evaluation.
    pub incumbent_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentResult {
    pub params: IdmParams<f64>,
    pub cost: f64,
    pub starts: Vec<StartReport>,
}

struct Search<'a> {
    problem: &'a IdentProblem,
    settings: &'a SearchSettings,
    evals: usize,
    incumbent: f64,
    trace: Vec<f64>,
}

impl Search<'_> {
    fn budget_left(&self) -> bool {
        self.evals < self.settings.max_evals_per_start
    }

    fn eval(&mut self, u: &[f64; 6]) -> f64 {
        self.evals += 1;
        let c = ident_cost(&self.problem.params_at(*u), self.problem);
        self.incumbent = self.incumbent.min(c);
        self.trace.push(self.incumbent);
        c
    }

    /// Coordinate search with one mesh size per coordinate: a successful poll
    /// doubles that coordinate's mesh (capped at 0.5), a failed pair halves it.
    /// After a sweep that moved the incumbent, the move is extrapolated once.
    fn local(&mut self, mut u: [f64; 6], mut best: f64, initial_mesh: f64) -> ([f64; 6], f64) {
        let min_mesh = self.settings.min_mesh;
        let mut mesh = [initial_mesh; 6];
        'outer: while mesh.iter().any(|&m| m >= min_mesh) {
            let base = u;
            for i in 0..6 {
                if mesh[i] < min_mesh {
                    continue;
                }
                let mut improved = false;
                for dir in [1.0, -1.0] {
                    if !self.budget_left() {
                        break 'outer;
                    }
                    let mut cand = u;
                    cand[i] = (u[i] + dir * mesh[i]).clamp(0.0, 1.0);
                    if cand[i] == u[i] {
                        continue;
                    }
                    let c = self.eval(&cand);
                    if c < best {
                        best = c;
                        u = cand;
                        improved = true;
                        break;
                    }
                }
                mesh[i] = if improved { (mesh[i] * 2.0).min(0.5) } else { mesh[i] * 0.5 };
            }
            if u != base && self.budget_left() {
                let cand: [f64; 6] = std::array::from_fn(|i| (2.0 * u[i] - base[i]).clamp(0.0, 1.0));
                let c = self.eval(&cand);
                if c < best {
                    best = c;
                    u = cand;
                }
            }
        }
        (u, best)
    }
}

/// Local searches from `start`, then from random kicks of the incumbent
/// until the evaluation budget is spent. Kicks are clamped onto the box, so
/// faces of the box get explored.
fn pattern_search(problem: &IdentProblem, start: [f64; 6], settings: &SearchSettings, seed: u64) -> StartReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut search = Search { problem, settings, evals: 0, incumbent: f64::INFINITY, trace: Vec::new() };
    let u0 = start.map(|x| x.clamp(0.0, 1.0));
    let c0 = search.eval(&u0);
    let (mut u, mut best) = search.local(u0, c0, settings.initial_mesh);
    while search.budget_left() {
        let kick: [f64; 6] = std::array::from_fn(|i| (u[i] + settings.kick * rng.gen_range(-1.0..=1.0)).clamp(0.0, 1.0));
        let c = search.eval(&kick);
        let (v, cv) = search.local(kick, c, settings.kick * 0.5);
        if cv < best {
            best = cv;
            u = v;
        }
    }
    StartReport {
        start: problem.params_at(start),
        best: problem.params_at(u),
        cost: best,
        evaluations: search.evals,
        incumbent_trace: search.trace,
    }
}

/// Full identification report.
pub fn identify_detailed(problem: &IdentProblem, seed: u64, settings: &SearchSettings) -> IdentResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_starts = settings.starts.max(1);
    let pool: Vec<[f64; 6]> = (0..n_starts * settings.screening.max(1))
        .map(|_| std::array::from_fn(|_| rng.gen_range(0.0..=1.0)))
        .collect();
    let costs: Vec<f64> = pool.par_iter().map(|u| ident_cost(&problem.params_at(*u), problem)).collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&i, &j| costs[i].total_cmp(&costs[j]).then(i.cmp(&j)));
    let starts: Vec<[f64; 6]> = order[..n_starts].iter().map(|&i| pool[i]).collect();
    let reports: Vec<StartReport> = starts
        .par_iter()
        .enumerate()
        .map(|(i, s)| pattern_search(problem, *s, settings, seed.wrapping_add(i as u64 + 1))).collect();
    let best = reports
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.cost.total_cmp(&b.cost).then(i.cmp(j)))
        .map(|(_, r)| r.clone())
        .expect("at least one start");
    IdentResult {
        params: best.best,
        cost: best.cost,
        starts: reports,
    }
}

/// Best-found IDM parameters; deterministic in `seed`.
pub fn identify(problem: &IdentProblem, seed: u64) -> IdmParams<f64> {
    identify_detailed(problem, seed, &SearchSettings::default()).params
}

/// Normalized coordinates of a parameter vector, useful for reporting.
pub fn normalized(problem: &IdentProblem, p: &IdmParams<f64>) -> [f64; 6] {
    problem.to_unit(p.to_array())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{idm_preset, Preset};
    use crate::simkit::{generate_synthetic_with, SynthOptions};
    use proptest::prelude::*;

    fn problem(seconds: f64) -> (IdentProblem, IdmParams<f64>) {
        let truth = idm_preset(Preset::Congested);
        let opts = SynthOptions { duration: seconds, ..SynthOptions::default() };
        let sc = generate_synthetic_with(Preset::Congested, 4, 4, &truth, &opts);
        (IdentProblem::from_scenario(&sc), truth)
    }

    #[test]
    fn self_consistent_cost_is_small() {
        let (p, truth) = problem(120.0);
        assert_eq!(p.num_pairs(), 3);
        let c = ident_cost(&truth, &p);
        assert!(c > 0.0 && c < 0.01, "{c}");
    }

    #[test]
    fn low_acceleration_fits_worse() {
        let (p, truth) = problem(120.0);
        let slow = IdmParams { a0: 0.1, ..truth };
        assert!(ident_cost(&slow, &p) > ident_cost(&truth, &p));
    }

    #[test]
    fn single_sample_costs_nothing() {
        let (p, truth) = problem(10.0);
        assert_eq!(ident_cost(&truth, &p.truncated(1)), 0.0);
    }

    #[test]
    fn projection_onto_box() {
        let (p, _) = problem(5.0);
        let x = p.params_at([-1.0, 2.0, 0.5, 0.0, 1.0, 0.3]);
        assert!(x.within_bounds());
        assert_eq!(x.a0, 0.1);
        assert_eq!(x.b0, 8.5);
    }

    #[test]
    fn incumbent_never_increases() {
        let (p, _) = problem(20.0);
        let settings = SearchSettings { starts: 2, max_evals_per_start: 150, ..SearchSettings::default() };
        let r = identify_detailed(&p, 1, &settings);
        for s in &r.starts {
            assert!(s.incumbent_trace.windows(2).all(|w| w[1] <= w[0]));
            assert!(s.best.within_bounds());
            assert!(s.evaluations <= 150);
        }
        assert_eq!(r, identify_detailed(&p, 1, &settings));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn cost_is_permutation_invariant(rot in 0usize..3, u in proptest::array::uniform6(0.0f64..1.0)) {
            let (p, _) = problem(15.0);
            let x = p.params_at(u);
            let mut q = p.clone();
            q.pairs.rotate_left(rot);
            let (a, b) = (ident_cost(&x, &p), ident_cost(&x, &q));
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
