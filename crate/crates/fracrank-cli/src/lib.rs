pub mod config;
pub mod pipeline;
pub mod report;
pub mod scenarios;

use std::path::{Path, PathBuf};

pub use config::{ConfigError, ExperimentConfig};
pub use report::{RunReport, Timings};
pub use scenarios::{resolve, run_scenario, Outcome, SCENARIOS};

pub const OUT_ENV: &str = "FRACRANK_OUT";

/// --out wins, then FRACRANK_OUT, then the config, then ./fracrank-out.
pub fn output_root(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("fracrank-out"))
}

/// Runs a scenario and writes its outputs under `root/<scenario>/`.
pub fn run_and_write(name: &str, cfg: &ExperimentConfig, root: &Path) -> Result<(RunReport, PathBuf), ConfigError> {
    let start = std::time::Instant::now();
    let mut out = run_scenario(name, cfg)?;
    let timings = Timings {
        scenario: out.report.scenario.clone(),
        total_ms: start.elapsed().as_secs_f64() * 1e3,
        phases: out.phases.clone(),
    };
    let dir = root.join(&out.report.scenario);
    let path = report::write_outputs(&dir, &mut out.report, &out.tables, &timings)
        .map_err(|e| config::config_error("out", format!("{}: {e}", dir.display())))?;
    Ok((out.report, path))
}
