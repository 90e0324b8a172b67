use std::path::{Path, PathBuf};

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assertion {
    pub id: String,
    /// Acceptance criterion this assertion stands for, if any.
    pub criterion: Option<u32>,
    pub pass: bool,
    /// Signed headroom; negative means violated.
    pub margin: Option<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub params: [usize; 3],
    pub assertions: Vec<Assertion>,
    pub summary: serde_json::Value,
    /// Relative to the scenario directory.
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn new(scenario: &str, seed: u64, params: (usize, usize, usize)) -> RunReport {
        RunReport {
            scenario: scenario.to_string(),
            seed,
            params: [params.0, params.1, params.2],
            assertions: Vec::new(),
            summary: serde_json::Value::Null,
            artifacts: Vec::new(),
        }
    }

    pub fn check(&mut self, id: &str, criterion: Option<u32>, pass: bool, margin: Option<f64>, detail: impl Into<String>) {
        assert!(self.assertions.iter().all(|a| a.id != id), "assertion {id} listed twice");
        self.assertions.push(Assertion { id: id.to_string(), criterion, pass, margin, detail: detail.into() });
    }

    pub fn pass(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    pub fn get(&self, id: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.id == id)
    }

    pub fn lines(&self) -> Vec<String> {
        self.assertions
            .iter()
            .map(|a| {
                let crit = a.criterion.map(|c| format!(" [criterion {c}]")).unwrap_or_default();
                format!("{} {}{}: {}", if a.pass { "PASS" } else { "FAIL" }, a.id, crit, a.detail)
            })
            .collect()
    }
}

/// CSV tables collected while a scenario runs, written next to the report.
#[derive(Clone, Debug, Default)]
pub struct Tables {
    pub tables: Vec<(String, String)>,
}

impl Tables {
    pub fn add<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        self.tables.push((format!("{name}.csv"), String::from_utf8(bytes).expect("csv is utf-8")));
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Timings {
    pub scenario: String,
    pub total_ms: f64,
    pub phases: Vec<(String, f64)>,
}

/// Writes report.json, the CSV tables and timings.json into `dir`; returns the report path.
pub fn write_outputs(dir: &Path, report: &mut RunReport, tables: &Tables, timings: &Timings) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    report.artifacts = tables.tables.iter().map(|(n, _)| n.clone()).collect();
    report.artifacts.push("timings.json".to_string());
    for (name, body) in &tables.tables {
        std::fs::write(dir.join(name), body)?;
    }
    let path = dir.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(report).expect("report serializes") + "\n")?;
    std::fs::write(dir.join("timings.json"), serde_json::to_string_pretty(timings).expect("timings serialize") + "\n")?;
    Ok(path)
}
