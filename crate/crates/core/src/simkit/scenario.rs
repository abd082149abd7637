//! Recorded multi-vehicle traffic and its on-disk format.
//!
//! A scenario is a CSV file with header `t,s_1,v_1,...,s_N,v_N` (vehicle 1 is
//! the one directly ahead of the ego) plus an optional TOML sidecar
//! `<stem>.meta.toml` carrying the label, the V2V-connected indices and, for
//! synthetic data, the true number of hidden vehicles.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::presets::Preset;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("line {line}: vehicle {ahead} is not ahead of vehicle {behind} by more than {length} m")]
    Ordering {
        line: u64,
        behind: usize,
        ahead: usize,
        length: f64,
    },
    #[error("line {line}: time step deviates from the inferred dt = {dt}")]
    NonUniform { line: u64, dt: f64 },
    #[error("metadata: {0}")]
    Meta(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Uniformly sampled motion of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

impl Trajectory {
    pub fn new(dt: f64, s: Vec<f64>, v: Vec<f64>) -> Self {
        assert_eq!(s.len(), v.len(), "position and speed series differ in length");
        Self { dt, s, v }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioLabel {
    FreeFlow,
    Step,
    Congested,
    Custom,
}

impl ScenarioLabel {
    /// Parameter preset tuned for this kind of traffic, if any.
    pub fn preset(self) -> Option<Preset> {
        match self {
            ScenarioLabel::FreeFlow => Some(Preset::FreeFlow),
            ScenarioLabel::Step => Some(Preset::Step),
            ScenarioLabel::Congested => Some(Preset::Congested),
            ScenarioLabel::Custom => None,
        }
    }
}

impl From<Preset> for ScenarioLabel {
    fn from(p: Preset) -> Self {
        match p {
            Preset::FreeFlow => ScenarioLabel::FreeFlow,
            Preset::Step => ScenarioLabel::Step,
            Preset::Congested => ScenarioLabel::Congested,
        }
    }
}

impl fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioLabel::FreeFlow => "free-flow",
            ScenarioLabel::Step => "step",
            ScenarioLabel::Congested => "congested",
            ScenarioLabel::Custom => "custom",
        })
    }
}

impl FromStr for ScenarioLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("custom") {
            return Ok(ScenarioLabel::Custom);
        }
        s.parse::<Preset>().map(ScenarioLabel::from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub label: ScenarioLabel,
    /// Vehicle indices whose signals reach the ego over V2V.
    pub connectivity: Vec<usize>,
    /// Number of unconnected vehicles between vehicle 1 and the connected one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_hidden: Option<usize>,
    /// Length `l` of every vehicle [m].
    pub vehicle_length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ScenarioMeta {
    pub fn custom(n_vehicles: usize) -> Self {
        Self {
            label: ScenarioLabel::Custom,
            connectivity: vec![n_vehicles],
            true_hidden: None,
            vehicle_length: 5.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub dt: f64,
    /// Sample times as recorded.
    pub times: Vec<f64>,
    /// Vehicles `1..=N`; index 0 holds vehicle 1.
    pub vehicles: Vec<Trajectory>,
    pub meta: ScenarioMeta,
}

impl Scenario {
    /// Builds a scenario sampled at `t0 + k dt`.
    pub fn from_trajectories(vehicles: Vec<Trajectory>, meta: ScenarioMeta) -> Result<Self, ScenarioError> {
        let first = vehicles
            .first()
            .ok_or_else(|| ScenarioError::Invalid("no vehicles".into()))?;
        let dt = first.dt;
        let times = (0..first.len()).map(|k| k as f64 * dt).collect();
        let sc = Self { dt, times, vehicles, meta };
        sc.validate()?;
        Ok(sc)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn num_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    pub fn duration(&self) -> f64 {
        self.len().saturating_sub(1) as f64 * self.dt
    }

    /// Vehicle `i` (1-based).
    pub fn vehicle(&self, i: usize) -> &Trajectory {
        &self.vehicles[i - 1]
    }

    /// Farthest connected vehicle, the `L` of the connected controllers.
    pub fn connected_leader(&self) -> Option<usize> {
        self.meta.connectivity.iter().copied().filter(|&i| i > 1).max()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.dt > 0.0) {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        let n = self.len();
        for (i, tr) in self.vehicles.iter().enumerate() {
            if tr.len() != n || tr.v.len() != n {
                return invalid(format!("vehicle {} has {} samples, expected {n}", i + 1, tr.len()));
            }
            if (tr.dt - self.dt).abs() > 1e-9 {
                return invalid(format!("vehicle {} sampled at dt = {}", i + 1, tr.dt));
            }
        }
        if let Some(&bad) = self
            .meta
            .connectivity
            .iter()
            .find(|&&i| i == 0 || i > self.num_vehicles())
        {
            return Err(ScenarioError::Meta(format!("connected vehicle {bad} does not exist")));
        }
        for k in 0..n {
            self.check_row(k, k as u64 + 2)?;
        }
        Ok(())
    }

    fn check_row(&self, k: usize, line: u64) -> Result<(), ScenarioError> {
        let l = self.meta.vehicle_length;
        for (i, tr) in self.vehicles.iter().enumerate() {
            if !tr.s[k].is_finite() || !tr.v[k].is_finite() {
                return Err(ScenarioError::Parse {
                    line,
                    msg: format!("non-finite value for vehicle {}", i + 1),
                });
            }
            if tr.v[k] < 0.0 {
                return Err(ScenarioError::Parse {
                    line,
                    msg: format!("negative speed {} for vehicle {}", tr.v[k], i + 1),
                });
            }
        }
        for i in 1..self.vehicles.len() {
            if !(self.vehicles[i].s[k] - self.vehicles[i - 1].s[k] > l) {
                return Err(ScenarioError::Ordering {
                    line,
                    behind: i,
                    ahead: i + 1,
                    length: l,
                });
            }
        }
        Ok(())
    }

    /// CSV text of the trajectories.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["t".to_string()];
        for i in 1..=self.num_vehicles() {
            header.push(format!("s_{i}"));
            header.push(format!("v_{i}"));
        }
        w.write_record(&header).expect("in-memory write");
        for k in 0..self.len() {
            let mut row = vec![self.times[k].to_string()];
            for tr in &self.vehicles {
                row.push(tr.s[k].to_string());
                row.push(tr.v[k].to_string());
            }
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    /// Parses CSV text; `meta` defaults to a custom scenario connected to the last vehicle.
    pub fn from_csv(text: &str, meta: Option<ScenarioMeta>) -> Result<Self, ScenarioError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = rdr
            .headers()
            .map_err(|e| ScenarioError::Parse { line: 1, msg: e.to_string() })?
            .clone();
        let cols: Vec<&str> = header.iter().map(str::trim).collect();
        if cols.len() < 3 || cols.len().is_multiple_of(2) || cols[0] != "t" {
            return Err(ScenarioError::Parse {
                line: 1,
                msg: "header must be t,s_1,v_1,...,s_N,v_N".into(),
            });
        }
        let n_veh = (cols.len() - 1) / 2;
        for i in 1..=n_veh {
            if cols[2 * i - 1] != format!("s_{i}") || cols[2 * i] != format!("v_{i}") {
                return Err(ScenarioError::Parse {
                    line: 1,
                    msg: format!("expected columns s_{i},v_{i}, found {},{}", cols[2 * i - 1], cols[2 * i]),
                });
            }
        }
        let mut times = Vec::new();
        let mut s: Vec<Vec<f64>> = vec![Vec::new(); n_veh];
        let mut v: Vec<Vec<f64>> = vec![Vec::new(); n_veh];
        let mut lines = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| ScenarioError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let num = |j: usize| -> Result<f64, ScenarioError> {
                let raw = rec.get(j).unwrap_or("").trim();
                let x: f64 = raw.parse().map_err(|_| ScenarioError::Parse {
                    line,
                    msg: format!("column {} ('{}'): not a number: '{raw}'", j + 1, cols[j]),
                })?;
                if x.is_nan() {
                    return Err(ScenarioError::Parse {
                        line,
                        msg: format!("column {} ('{}') is NaN", j + 1, cols[j]),
                    });
                }
                Ok(x)
            };
            times.push(num(0)?);
            for i in 0..n_veh {
                s[i].push(num(2 * i + 1)?);
                v[i].push(num(2 * i + 2)?);
            }
            lines.push(line);
        }
        if times.len() < 2 {
            return Err(ScenarioError::Parse {
                line: lines.last().copied().unwrap_or(1),
                msg: "at least two samples are required".into(),
            });
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        if !(dt > 0.0) {
            return Err(ScenarioError::NonUniform { line: lines[1], dt });
        }
        for k in 1..times.len() {
            if ((times[k] - times[k - 1]) - dt).abs() > 1e-9 {
                return Err(ScenarioError::NonUniform { line: lines[k], dt });
            }
        }
        let meta = meta.unwrap_or_else(|| ScenarioMeta::custom(n_veh));
        let vehicles = s
            .into_iter()
            .zip(v)
            .map(|(s, v)| Trajectory::new(dt, s, v))
            .collect();
        let sc = Self { dt, times, vehicles, meta };
        for (k, &line) in lines.iter().enumerate() {
            sc.check_row(k, line)?;
        }
        sc.validate()?;
        Ok(sc)
    }

    /// Sidecar path `<dir>/<stem>.meta.toml` of a scenario CSV.
    pub fn meta_path(csv_path: &Path) -> PathBuf {
        let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        csv_path.with_file_name(format!("{stem}.meta.toml"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let io = |source| ScenarioError::Io { path: path.to_path_buf(), source };
        let text = fs::read_to_string(path).map_err(io)?;
        let meta_path = Self::meta_path(path);
        let meta = if meta_path.exists() {
            let raw = fs::read_to_string(&meta_path).map_err(|source| ScenarioError::Io {
                path: meta_path.clone(),
                source,
            })?;
            Some(toml::from_str(&raw).map_err(|e| ScenarioError::Meta(e.to_string()))?)
        } else {
            None
        };
        Self::from_csv(&text, meta)
    }

    /// Writes the CSV and its metadata sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        let meta_path = Self::meta_path(path);
        let meta = toml::to_string(&self.meta).map_err(|e| ScenarioError::Meta(e.to_string()))?;
        fs::write(&meta_path, meta).map_err(|source| ScenarioError::Io { path: meta_path, source })
    }
}
