//! Registered numerical experiments. A scenario reads a [`ScenarioConfig`],
//! produces tables and checks, and reports a [`RunSummary`].

pub mod config;
pub mod output;
mod runners;

use std::time::Instant;

pub use config::{
    default_config_text, parse_config, parse_config_file, ConfigError, ConfigErrorKind, ConfigErrors, ScenarioConfig,
    ScenarioKind,
};
pub use output::{plot_script, write_artifacts, Check, RunStatus, RunSummary, Table};
pub use runners::check_names;

/// Result of one run held in memory.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub summary: RunSummary,
    pub tables: Vec<Table>,
}

/// Runs `cfg`. A solver error ends the run early: the tables written so far
/// are kept and the checks that were not reached are reported as not run.
pub fn run_scenario(cfg: &ScenarioConfig) -> ScenarioRun {
    let start = Instant::now();
    let mut out = (Vec::new(), Vec::new());
    let result = runners::run(cfg, &mut out);
    let (tables, mut checks) = out;
    let error = result.err().map(|e| e.to_string());
    if let Some(e) = &error {
        for name in check_names(cfg.scenario) {
            if !checks.iter().any(|c: &Check| c.name == *name) {
                checks.push(Check::not_run(name, &format!("solver failed: {e}")));
            }
        }
    }
    let status = if error.is_some() {
        RunStatus::SolverFailed
    } else if checks.iter().all(|c| c.passed) {
        RunStatus::Passed
    } else {
        RunStatus::CheckFailed
    };
    ScenarioRun {
        summary: RunSummary {
            scenario: cfg.scenario.name().to_string(),
            status,
            wall_time_s: start.elapsed().as_secs_f64(),
            defaults: cfg.defaults.clone(),
            checks,
            files: Vec::new(),
            error,
        },
        tables,
    }
}
