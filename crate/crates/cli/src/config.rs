use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ncs_core::riccati::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use ncs_core::SystemSpec;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Time-varying gains from the backward recursion over `0..=N`.
    Finite,
    /// Stationary gains from the algebraic equations.
    Stationary,
}

/// An experiment: one problem instance, how to synthesize its gains, and
/// how to simulate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: SystemSpec,
    pub mode: Mode,
    /// Dropout probabilities to sweep; the spec's own `p` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_grid: Option<Vec<f64>>,
    pub replicates: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_tol")]
    pub are_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Simulated control steps; `N + 1` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Previously written `gains.json` to simulate instead of synthesizing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<PathBuf>,
    /// Number of per-replicate trajectory files to write (at most 10).
    #[serde(default)]
    pub trajectories: usize,
}

pub const MAX_TRAJECTORIES: usize = 10;

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        // Relative gain files are resolved against the config's directory.
        if let (Some(g), Some(dir)) = (&cfg.gains, path.parent()) {
            if g.is_relative() {
                cfg.gains = Some(dir.join(g));
            }
        }
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), CliError> {
        if self.replicates < 1 {
            return Err(CliError::Config("replicates must be at least 1".into()));
        }
        if let Some(grid) = &self.p_grid {
            if grid.is_empty() {
                return Err(CliError::Config("p_grid is empty".into()));
            }
            if let Some(p) = grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(CliError::Config(format!("p_grid entry {p} outside [0, 1]")));
            }
        }
        if !(self.are_tol > 0.0) {
            return Err(CliError::Config("are_tol must be positive".into()));
        }
        if self.trajectories > MAX_TRAJECTORIES {
            return Err(CliError::Config(format!("at most {MAX_TRAJECTORIES} trajectory files")));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        self.p_grid.clone().unwrap_or_else(|| vec![self.spec.p])
    }

    pub fn steps(&self) -> usize {
        self.steps.unwrap_or(self.spec.horizon + 1)
    }
}

/// Configs for the vehicle-positioning experiments, shipped with the binary.
pub mod shipped {
    pub const FIG3: &str = include_str!("../../../configs/fig3_velocity.json");
    pub const FIG4: &str = include_str!("../../../configs/fig4_cost.json");
    pub const FIG5: &str = include_str!("../../../configs/fig5_noiseless.json");
    pub const FIG6: &str = include_str!("../../../configs/fig6_noisy.json");
    pub const STATIONARY: &str = include_str!("../../../configs/auuv_stationary.json");
    pub const UNSTABILIZABLE: &str = include_str!("../../../configs/unstabilizable.json");

    pub const ALL: [(&str, &str); 6] = [
        ("fig3_velocity.json", FIG3),
        ("fig4_cost.json", FIG4),
        ("fig5_noiseless.json", FIG5),
        ("fig6_noisy.json", FIG6),
        ("auuv_stationary.json", STATIONARY),
        ("unstabilizable.json", UNSTABILIZABLE),
    ];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_parse() {
        for (name, text) in shipped::ALL {
            ExperimentConfig::from_json(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn bad_grid_rejected() {
        let mut cfg = ExperimentConfig::from_json(shipped::FIG4).unwrap();
        cfg.p_grid = Some(vec![0.2, 1.5]);
        assert!(matches!(cfg.check(), Err(CliError::Config(_))));
        cfg.p_grid = Some(vec![]);
        assert!(cfg.check().is_err());
    }

    #[test]
    fn zero_replicates_rejected() {
        let mut cfg = ExperimentConfig::from_json(shipped::FIG4).unwrap();
        cfg.replicates = 0;
        assert!(cfg.check().is_err());
    }

    #[test]
    fn unknown_field_rejected() {
        let text = shipped::STATIONARY.replacen('{', r#"{"bogus": 1,"#, 1);
        assert!(ExperimentConfig::from_json(&text).is_err());
    }
}
