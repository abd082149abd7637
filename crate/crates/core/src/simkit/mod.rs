//! Scenario data, synthetic traffic, the closed-loop engine and run metrics.

pub mod engine;
pub mod metrics;
pub mod scenario;
pub mod synth;

pub use engine::{default_ego_init, run, run_batch, Controller, ControllerKind, HiddenMode, PcccConfig, QpStepInfo, RunResult, SimError};
pub use metrics::{summarize, Summary};
pub use scenario::{Scenario, ScenarioError, ScenarioLabel, ScenarioMeta, Trajectory};
pub use synth::{bundled_scenario, bundled_scenarios, generate_synthetic, generate_synthetic_with, SynthOptions};
