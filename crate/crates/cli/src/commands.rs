//! Subcommand implementations.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ccc_core::carfollow::IdmParams;
use ccc_core::ident::{ident_cost, identify_detailed, normalized, IdentProblem};
use ccc_core::presets::Preset;
use ccc_core::simkit::metrics::energy_saving;
use ccc_core::simkit::{generate_synthetic_with, run, run_batch, summarize, ControllerKind, RunResult, Scenario, SimError};
use log::info;
use serde::Serialize;

use crate::config::Config;
use crate::svg::{bar_chart, line_chart, Panel, Series};
use crate::{Common, Failure, NhArg, Source};

/// Hidden-vehicle counts covered by `--nh sweep`.
const SWEEP: std::ops::RangeInclusive<usize> = 1..=4;

fn load_config(common: &Common) -> Result<Config, Failure> {
    match &common.config {
        Some(path) => Config::load(path),
        None => Ok(Config::default()),
    }
}

struct Traffic {
    scenario: Scenario,
    preset: Preset,
    /// Generator parameters of synthetic traffic.
    generator: Option<IdmParams<f64>>,
    origin: String,
}

fn traffic(source: &Source, common: &Common, cfg: &Config) -> Result<Traffic, Failure> {
    if let Some(path) = &source.scenario {
        let scenario = Scenario::load(path)?;
        let preset = common
            .preset
            .or(scenario.meta.label.preset())
            .unwrap_or(Preset::Congested);
        return Ok(Traffic { scenario, preset, generator: None, origin: path.display().to_string() });
    }
    let kind = source.synthetic.expect("clap enforces one source");
    let chain = common.chain_len.unwrap_or(cfg.run.chain_len);
    if chain < 2 {
        return Err(Failure::Config("a chain needs at least two vehicles".into()));
    }
    let idm = cfg.idm(kind);
    let scenario = generate_synthetic_with(kind, common.seed, chain, &idm, &cfg.synth);
    Ok(Traffic {
        scenario,
        preset: common.preset.unwrap_or(kind),
        generator: Some(idm),
        origin: format!("synthetic {kind} (seed {}, {chain} vehicles)", common.seed),
    })
}

/// Copy of `sc` connected to vehicle `n + 2`, leaving `n` vehicles hidden.
fn with_hidden(sc: &Scenario, n: usize) -> Result<Scenario, Failure> {
    if n + 2 > sc.num_vehicles() {
        return Err(Failure::Config(format!(
            "{n} hidden vehicles need a chain of {} vehicles, scenario has {}",
            n + 2,
            sc.num_vehicles()
        )));
    }
    let mut out = sc.clone();
    out.meta.connectivity = vec![n + 2];
    out.meta.true_hidden = Some(n);
    Ok(out)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::io(&path, e))
}

fn sim_failure(e: SimError) -> Failure {
    Failure::Config(e.to_string())
}

fn fallback_fraction(r: &RunResult) -> f64 {
    let solves = r.qp.iter().flatten().count();
    if solves == 0 {
        0.0
    } else {
        r.fallbacks() as f64 / solves as f64
    }
}

fn collision_time(r: &RunResult) -> Option<f64> {
    r.collision.map(|k| r.t.get(k).copied().unwrap_or(k as f64 * r.dt))
}

fn result_csv(r: &RunResult, sc: &Scenario) -> String {
    let v1 = sc.vehicle(1);
    let mut out = String::from("t,s,v,a,a_d,h,w,s_1,v_1,n_hat,qp_status,qp_iterations,kkt_residual,epsilon,fallback\n");
    for k in 0..r.len() {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},",
            r.t[k], r.ego.s[k], r.ego.v[k], r.a[k], r.a_d[k], r.h[k], r.w[k], v1.s[k], v1.v[k]
        );
        if let Some(Some(n)) = r.n_hat.get(k) {
            let _ = write!(out, "{n}");
        }
        match r.qp.get(k).copied().flatten() {
            Some(q) => {
                let _ = writeln!(
                    out,
                    ",{:?},{},{},{},{}",
                    q.status,
                    q.iterations,
                    q.residuals.max(),
                    q.epsilon,
                    q.fallback
                );
            }
            None => out.push_str(",,,,,\n"),
        }
    }
    out
}

fn timeseries_svg(r: &RunResult, sc: &Scenario) -> String {
    let v1 = &sc.vehicle(1).v[..r.len()];
    let floor: Vec<f64> = r.ego.v.iter().map(|v| r.d_min + r.tau_min * v).collect();
    let panels = [
        Panel {
            title: "Headway".into(),
            x_label: "t [s]".into(),
            y_label: "h [m]".into(),
            series: vec![Series::new("h", &r.t, &r.h), Series::new("safety floor", &r.t, &floor)],
        },
        Panel {
            title: "Speed".into(),
            x_label: "t [s]".into(),
            y_label: "v [m/s]".into(),
            series: vec![Series::new("ego", &r.t, &r.ego.v), Series::new("vehicle 1", &r.t, v1)],
        },
        Panel {
            title: "Acceleration".into(),
            x_label: "t [s]".into(),
            y_label: "a [m/s^2]".into(),
            series: vec![Series::new("realized", &r.t, &r.a), Series::new("desired", &r.t, &r.a_d)],
        },
    ];
    line_chart(&panels, 900.0, 260.0)
}

fn phase_svg(r: &RunResult) -> String {
    let panel = Panel {
        title: format!("{} phase portrait", r.controller),
        x_label: "h [m]".into(),
        y_label: "v [m/s]".into(),
        series: vec![Series::new("ego", &r.h, &r.ego.v)],
    };
    line_chart(&[panel], 600.0, 480.0)
}

/// Collision takes precedence over solver fallbacks.
fn run_status(runs: &[(String, &RunResult)], threshold: f64) -> Result<(), Failure> {
    let crashed: Vec<String> = runs
        .iter()
        .filter_map(|(name, r)| collision_time(r).map(|t| format!("{name} collided at t = {t:.1} s")))
        .collect();
    if !crashed.is_empty() {
        return Err(Failure::Collision(crashed.join("; ")));
    }
    let over: Vec<String> = runs
        .iter()
        .filter(|(_, r)| fallback_fraction(r) > threshold)
        .map(|(name, r)| format!("{name}: {:.2}% of solves", 100.0 * fallback_fraction(r)))
        .collect();
    if !over.is_empty() {
        return Err(Failure::Fallback(format!("{} (threshold {:.2}%)", over.join("; "), 100.0 * threshold)));
    }
    Ok(())
}

pub fn simulate(source: &Source, common: &Common, kind: ControllerKind, nh: Option<usize>) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let tr = traffic(source, common, &cfg)?;
    let sc = match nh {
        Some(n) => with_hidden(&tr.scenario, n)?,
        None => tr.scenario,
    };
    let distant = sc.connected_leader().unwrap_or(sc.num_vehicles());
    let ctl = cfg.controller(kind, tr.preset, distant, sc.dt, sc.meta.vehicle_length);
    let started = Instant::now();
    let r = run(&sc, &ctl, &cfg.plant, None).map_err(sim_failure)?;
    info!("{kind} run took {:.2} s", started.elapsed().as_secs_f64());

    create_dir(&common.out)?;
    let mut summary = format!("scenario          {}\npreset            {}\n", tr.origin, tr.preset);
    if kind.is_connected() {
        let _ = writeln!(summary, "connected vehicle {distant}");
    }
    summary.push_str(&summarize(&r).report());
    if kind.is_predictive() {
        let _ = writeln!(summary, "fallback share    {:.2}%", 100.0 * fallback_fraction(&r));
    }
    match collision_time(&r) {
        Some(t) => {
            let _ = writeln!(summary, "status            FAILED: collision at t = {t:.1} s");
        }
        None => summary.push_str("status            ok\n"),
    }
    write(&common.out, "result.csv", &result_csv(&r, &sc))?;
    write(&common.out, "summary.txt", &summary)?;
    write(&common.out, "timeseries.svg", &timeseries_svg(&r, &sc))?;
    write(&common.out, "phase.svg", &phase_svg(&r))?;
    print!("{summary}");
    run_status(&[(kind.to_string(), &r)], cfg.run.fallback_threshold)
}

/// One row of a comparison table.
struct Row {
    kind: ControllerKind,
    nh: Option<usize>,
    connected: Option<usize>,
    result: RunResult,
}

impl Row {
    fn name(&self) -> String {
        match self.nh {
            Some(n) => format!("{} (n_h = {n})", self.kind),
            None => self.kind.to_string(),
        }
    }
}

fn saving_cell(w: f64, base: Option<f64>) -> String {
    base.map_or(String::new(), |b| format!("{:.1}", 100.0 * energy_saving(w, b)))
}

pub fn compare(source: &Source, common: &Common, kinds: &[ControllerKind], nh: Option<NhArg>) -> Result<(), Failure> {
    let listed: BTreeSet<ControllerKind> = kinds.iter().copied().collect();
    if listed.len() < 2 {
        return Err(Failure::Config("compare needs at least two distinct controllers".into()));
    }
    let cfg = load_config(common)?;
    let tr = traffic(source, common, &cfg)?;
    let base_sc = match nh {
        Some(NhArg::Count(n)) => with_hidden(&tr.scenario, n)?,
        _ => tr.scenario.clone(),
    };
    let connected: Vec<ControllerKind> = listed.iter().copied().filter(|k| k.is_connected()).collect();
    let sweep_scenarios: Vec<(usize, Scenario)> = if nh == Some(NhArg::Sweep) {
        if connected.is_empty() {
            return Err(Failure::Config("an n_h sweep needs a connected controller".into()));
        }
        SWEEP.map(|n| with_hidden(&tr.scenario, n).map(|s| (n, s))).collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };

    // Baselines of the listed controllers are always run so savings can be reported.
    let mut table: BTreeSet<ControllerKind> = listed.clone();
    table.extend(listed.iter().map(|k| k.baseline()));
    let controller = |kind: ControllerKind, sc: &Scenario| {
        let distant = sc.connected_leader().unwrap_or(sc.num_vehicles());
        cfg.controller(kind, tr.preset, distant, sc.dt, sc.meta.vehicle_length)
    };
    let mut jobs: Vec<((ControllerKind, Option<usize>), &Scenario, _)> =
        table.iter().map(|&k| ((k, None), &base_sc, controller(k, &base_sc))).collect();
    for (n, sc) in &sweep_scenarios {
        for &k in &connected {
            jobs.push(((k, Some(*n)), sc, controller(k, sc)));
        }
    }
    let started = Instant::now();
    let mut rows = Vec::with_capacity(jobs.len());
    for ((kind, n), res) in run_batch(&jobs, &cfg.plant) {
        let sc = match n {
            Some(n) => &sweep_scenarios[n - 1].1,
            None => &base_sc,
        };
        let result = res.map_err(sim_failure)?;
        let connected = kind.is_connected().then(|| sc.connected_leader()).flatten();
        rows.push(Row { kind, nh: n, connected, result });
    }
    info!("{} runs took {:.2} s", rows.len(), started.elapsed().as_secs_f64());

    let base_energy = |k: ControllerKind| {
        rows.iter()
            .find(|r| r.nh.is_none() && r.kind == k.baseline() && k.baseline() != k)
            .map(|r| r.result.energy)
    };
    create_dir(&common.out)?;
    let mut csv = String::from("controller,connected_vehicle,energy,baseline,saving_pct,collided,fallbacks\n");
    let mut text = format!("scenario {}\npreset {}\n\n{:<8} {:>14} {:>9} {:>10}\n", tr.origin, tr.preset, "ctrl", "energy [J/kg]", "baseline", "saving %");
    let mut bars = Vec::new();
    for r in rows.iter().filter(|r| r.nh.is_none()) {
        let w = r.result.energy;
        let base = base_energy(r.kind);
        let base_name = if base.is_some() { r.kind.baseline().to_string() } else { String::new() };
        let _ = writeln!(
            csv,
            "{},{},{w},{base_name},{},{},{}",
            r.kind,
            r.connected.map_or(String::new(), |c| c.to_string()),
            saving_cell(w, base),
            r.result.collided(),
            r.result.fallbacks()
        );
        let _ = writeln!(text, "{:<8} {w:>14.1} {base_name:>9} {:>10}", r.kind.to_string(), saving_cell(w, base));
        bars.push((r.kind.to_string(), w));
    }
    write(&common.out, "energy.csv", &csv)?;
    write(&common.out, "energy.svg", &bar_chart("Energy per unit mass", "w [J/kg]", &bars))?;

    if !sweep_scenarios.is_empty() {
        let mut csv = String::from("n_h,connected_vehicle,controller,energy,baseline,saving_pct,collided,fallbacks\n");
        let _ = writeln!(text, "\n{:<4} {:<8} {:>14} {:>10}", "n_h", "ctrl", "energy [J/kg]", "saving %");
        let mut series = Vec::new();
        for &k in &connected {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for r in rows.iter().filter(|r| r.kind == k && r.nh.is_some()) {
                let (n, w, base) = (r.nh.unwrap(), r.result.energy, base_energy(k));
                let _ = writeln!(
                    csv,
                    "{n},{},{k},{w},{},{},{},{}",
                    r.connected.map_or(String::new(), |c| c.to_string()),
                    k.baseline(),
                    saving_cell(w, base),
                    r.result.collided(),
                    r.result.fallbacks()
                );
                let _ = writeln!(text, "{n:<4} {:<8} {w:>14.1} {:>10}", k.to_string(), saving_cell(w, base));
                xs.push(n as f64);
                ys.push(w);
            }
            if let Some(b) = base_energy(k) {
                series.push(Series::new(k.baseline().to_string(), &xs, &vec![b; xs.len()]));
            }
            series.push(Series::new(k.to_string(), &xs, &ys));
        }
        let panel = Panel {
            title: "Energy versus hidden vehicles".into(),
            x_label: "n_h".into(),
            y_label: "w [J/kg]".into(),
            series,
        };
        write(&common.out, "sweep.csv", &csv)?;
        write(&common.out, "sweep.svg", &line_chart(&[panel], 700.0, 420.0))?;
    }
    write(&common.out, "compare.txt", &text)?;
    print!("{text}");
    let named: Vec<(String, &RunResult)> = rows.iter().map(|r| (r.name(), &r.result)).collect();
    run_status(&named, cfg.run.fallback_threshold)
}

#[derive(Serialize)]
struct IdmFragment {
    idm: IdmParams<f64>,
}

pub fn identify(source: &Source, common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let tr = traffic(source, common, &cfg)?;
    let mut problem = IdentProblem::from_scenario(&tr.scenario);
    problem.accel_floor = cfg.synth.accel_floor;
    let started = Instant::now();
    let res = identify_detailed(&problem, common.seed, &cfg.ident);
    info!("identification took {:.2} s", started.elapsed().as_secs_f64());

    let fragment = toml::to_string(&IdmFragment { idm: res.params }).map_err(|e| Failure::Config(e.to_string()))?;
    let mut report = format!(
        "dataset           {}\nfollower pairs    {}\nseed              {}\nfit cost [m]      {:.6}\n",
        tr.origin,
        problem.num_pairs(),
        common.seed,
        res.cost
    );
    if let Some(g) = tr.generator {
        let gc = ident_cost(&g, &problem);
        let _ = writeln!(report, "generator cost    {gc:.6}\ncost ratio        {:.3}", res.cost / gc);
    }
    report.push_str("\nparameter  value      normalized\n");
    let names = ["a0", "b0", "delta", "tau", "d", "v_max"];
    for ((name, x), u) in names.iter().zip(res.params.to_array()).zip(normalized(&problem, &res.params)) {
        let _ = writeln!(report, "{name:<10} {x:<10.4} {u:.4}");
    }
    report.push_str("\nstart  cost        evaluations\n");
    for (i, s) in res.starts.iter().enumerate() {
        let _ = writeln!(report, "{i:<6} {:<11.6} {}", s.cost, s.evaluations);
    }
    create_dir(&common.out)?;
    write(&common.out, "idm.toml", &fragment)?;
    write(&common.out, "ident.txt", &report)?;
    print!("{report}");
    Ok(())
}

pub fn generate(kind: Preset, common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let source = Source { scenario: None, synthetic: Some(kind) };
    let tr = traffic(&source, common, &cfg)?;
    create_dir(&common.out)?;
    let path = common.out.join(format!("{kind}.csv"));
    tr.scenario.save(&path)?;
    println!("wrote {} and {}", path.display(), Scenario::meta_path(&path).display());
    Ok(())
}

pub fn print_config(preset: Preset) -> Result<(), Failure> {
    let text = toml::to_string_pretty(&Config::expanded(preset)).map_err(|e| Failure::Config(e.to_string()))?;
    print!("{text}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ccc_core::simkit::{Controller, ScenarioMeta, Trajectory};

    fn chain(vehicles: usize) -> Scenario {
        let trs = (0..vehicles)
            .map(|i| Trajectory::new(0.1, (0..50).map(|k| 40.0 * i as f64 + 2.0 * k as f64).collect(), vec![20.0; 50]))
            .collect();
        Scenario::from_trajectories(trs, ScenarioMeta::custom(vehicles)).unwrap()
    }

    #[test]
    fn hidden_count_sets_connectivity() {
        let sc = with_hidden(&chain(6), 3).unwrap();
        assert_eq!(sc.connected_leader(), Some(5));
        assert_eq!(sc.meta.true_hidden, Some(3));
        assert!(matches!(with_hidden(&chain(4), 3), Err(Failure::Config(_))));
    }

    #[test]
    fn savings_print_one_decimal() {
        assert_eq!(saving_cell(1147.2, Some(1203.4)), "4.7");
        assert_eq!(saving_cell(900.0, Some(1000.0)), "10.0");
        assert_eq!(saving_cell(900.0, None), "");
    }

    #[test]
    fn result_csv_has_one_line_per_step() {
        let sc = chain(3);
        let ctl = Controller::for_scenario(ControllerKind::Racc, &sc, Some(Preset::Step));
        let r = run(&sc, &ctl, &Default::default(), None).unwrap();
        let csv = result_csv(&r, &sc);
        assert_eq!(csv.lines().count(), r.len() + 1);
        let cols = csv.lines().next().unwrap().split(',').count();
        assert!(csv.lines().all(|l| l.split(',').count() == cols));
    }
}
