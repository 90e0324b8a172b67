use std::path::{Path, PathBuf};

use fracrank::grids::GridConstants;
use fracrank::singlescale::is_odd_prime;
use fracrank::tiles::SyntheticSpec;
use serde::{Deserialize, Serialize};

/// One experiment definition. Every field is optional; scenarios fill in their own
/// defaults, and unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Option<String>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub k: Option<usize>,
    /// (C0, …, C4).
    pub constants: Option<[u64; 5]>,
    /// Constants for the Whitney half of the grid scenario.
    pub whitney_constants: Option<[u64; 5]>,
    /// Lattice points per axis for sampled fields (power of 2).
    pub resolution: Option<usize>,
    pub seed: Option<u64>,
    /// Explicit seed list; overrides `seed` + `instances`.
    pub seeds: Option<Vec<u64>>,
    pub instances: Option<usize>,
    pub trials: Option<usize>,
    pub moduli: Option<Vec<usize>>,
    /// Seed of the generic form used by the single-scale suites.
    pub form_seed: Option<u64>,
    /// p_1, …, p_n for the pipeline.
    pub exponents: Option<Vec<f64>>,
    pub synthetic: Option<SyntheticSpec>,
    /// Tuple cap for exhaustive injectivity checks.
    pub cap: Option<u64>,
    /// Output root, overridden by FRACRANK_OUT and by --out.
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.to_string(), message: message.into() }
}

impl ExperimentConfig {
    /// TOML, or JSON when the path ends in `.json`.
    pub fn parse(text: &str, json: bool) -> Result<ExperimentConfig, ConfigError> {
        if json {
            serde_json::from_str(text).map_err(|e| config_error(&unknown_field(&e.to_string()), e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| config_error(&unknown_field(e.message()), e.message().to_string()))
        }
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error("path", format!("{}: {e}", path.display())))?;
        ExperimentConfig::parse(&text, path.extension().is_some_and(|e| e == "json"))
    }

    pub fn params(&self, default: (usize, usize, usize)) -> (usize, usize, usize) {
        (self.n.unwrap_or(default.0), self.d.unwrap_or(default.1), self.k.unwrap_or(default.2))
    }

    pub fn seed_list(&self, default_count: usize) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => {
                let base = self.seed.unwrap_or(0);
                (base..base + self.instances.unwrap_or(default_count) as u64).collect()
            }
        }
    }

    /// Checks that apply to every scenario; scenario-specific ones live with the scenario.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [("n", self.n), ("d", self.d)] {
            if v == Some(0) {
                return Err(config_error(name, "must be positive"));
            }
        }
        if let Some(c) = self.constants {
            GridConstants::new(c).map_err(|e| config_error("constants", e.to_string()))?;
        }
        if let Some(c) = self.whitney_constants {
            GridConstants::new(c).map_err(|e| config_error("whitney_constants", e.to_string()))?;
        }
        if let Some(r) = self.resolution {
            if !r.is_power_of_two() || r < 8 {
                return Err(config_error("resolution", format!("{r} is not a power of 2 that is at least 8")));
            }
        }
        if self.instances == Some(0) {
            return Err(config_error("instances", "must be positive"));
        }
        if self.trials == Some(0) {
            return Err(config_error("trials", "must be positive"));
        }
        if let Some(s) = &self.seeds {
            if s.is_empty() {
                return Err(config_error("seeds", "must not be empty"));
            }
        }
        if let Some(m) = &self.moduli {
            if m.is_empty() || m.iter().any(|&x| x < 2) {
                return Err(config_error("moduli", "need at least one modulus, each at least 2"));
            }
        }
        if let Some(p) = &self.exponents {
            check_exponents(p, self.n)?;
        }
        if self.cap == Some(0) {
            return Err(config_error("cap", "must be positive"));
        }
        Ok(())
    }

    pub fn require_odd_primes(&self, moduli: &[usize]) -> Result<(), ConfigError> {
        match moduli.iter().find(|&&m| !is_odd_prime(m)) {
            Some(m) => Err(config_error("moduli", format!("{m} is not an odd prime"))),
            None => Ok(()),
        }
    }
}

/// Σ 1/p_i = 1 with every p_i > 2 (∞ allowed).
pub fn check_exponents(p: &[f64], n: Option<usize>) -> Result<(), ConfigError> {
    if let Some(n) = n {
        if p.len() != n {
            return Err(config_error("exponents", format!("{} exponents for n = {n}", p.len())));
        }
    }
    if let Some(bad) = p.iter().find(|&&x| x.is_nan() || x <= 2.0) {
        return Err(config_error("exponents", format!("p = {bad} is not greater than 2")));
    }
    let sum: f64 = p.iter().map(|x| 1.0 / x).sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(config_error("exponents", format!("reciprocals sum to {sum}, not 1")));
    }
    Ok(())
}

fn unknown_field(msg: &str) -> String {
    // serde reports "unknown field `name`, expected ..."
    msg.split('`').nth(1).filter(|_| msg.contains("unknown field")).unwrap_or("config").to_string()
}
