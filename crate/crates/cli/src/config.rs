//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nla_core::shrinkage::Regime;
use nla_core::{Error as CoreError, EstimatorConfig};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_id")]
    pub experiment_id: String,
    pub problem: Problem,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub target: Target,
    #[serde(default)]
    pub output: Output,
}

fn default_id() -> String {
    "run".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub d: usize,
    pub s: f64,
    pub p: f64,
    pub q: f64,
    #[serde(default)]
    pub tau: Option<f64>,
    /// Overrides the polynomial order `floor(s) + 1`.
    #[serde(default)]
    pub r: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Estimator {
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "one")]
    pub kappa: f64,
    /// Noise level handed to the estimator; defaults to the true one.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default = "one")]
    pub norm_scale: f64,
}

impl Default for Estimator {
    fn default() -> Self {
        Self {
            beta: None,
            kappa: 1.0,
            sigma: None,
            norm_scale: 1.0,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default = "default_n_list")]
    pub n_list: Vec<u32>,
    #[serde(default = "default_sigma_list")]
    pub sigma_list: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_list() -> Vec<u32> {
    vec![8]
}

fn default_sigma_list() -> Vec<f64> {
    vec![0.0]
}

fn default_trials() -> usize {
    1
}

impl Default for Sweep {
    fn default() -> Self {
        Self {
            n_list: default_n_list(),
            sigma_list: default_sigma_list(),
            trials: default_trials(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    /// One of the bundled target names.
    #[serde(default = "default_target")]
    pub name: String,
    /// Multiplies the target.
    #[serde(default = "one")]
    pub scale: f64,
}

fn default_target() -> String {
    "bump-s2".into()
}

impl Default for Target {
    fn default() -> Self {
        Self {
            name: default_target(),
            scale: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default)]
    pub format: Format,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

impl Default for Output {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            format: Format::Csv,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            r: self.problem.r,
            beta: self.estimator.beta,
            kappa: self.estimator.kappa,
            sigma: self.estimator.sigma,
            norm_scale: self.estimator.norm_scale,
            tau: self.problem.tau,
            ..EstimatorConfig::new(self.problem.s, self.problem.p, self.problem.q, self.problem.d)
        }
    }

    /// Checks every section and reports the regime of the run.
    pub fn validate(&self) -> Result<Regime, CliError> {
        let regime = self.estimator_config().validate().map_err(|e| match e {
            CoreError::CompactEmbedding { s, bound } => CliError::Config(format!(
                "compact embedding s > d/p violated: s = {s}, d/p = {bound}"
            )),
            other => CliError::Config(other.to_string()),
        })?;
        if let Some(r) = self.problem.r {
            if (r as f64) <= self.problem.s {
                return Err(CliError::Config(format!(
                    "problem.r = {r} must exceed s = {}",
                    self.problem.s
                )));
            }
        }
        if self.sweep.trials == 0 {
            return Err(CliError::Config("sweep.trials must be at least 1".into()));
        }
        if self.sweep.n_list.is_empty() || self.sweep.sigma_list.is_empty() {
            return Err(CliError::Config("sweep.n_list and sweep.sigma_list must be nonempty".into()));
        }
        if let Some(bad) = self.sweep.sigma_list.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(CliError::Config(format!("sweep.sigma_list entries must be >= 0, got {bad}")));
        }
        if !(self.target.scale.is_finite()) {
            return Err(CliError::Config("target.scale must be finite".into()));
        }
        nla_core::oracles::bundled_target(&self.target.name, self.problem.d)
            .map_err(|e| CliError::Config(format!("target.name: {e}")))?;
        Ok(regime)
    }

    pub fn regime_note(regime: Regime) -> &'static str {
        match regime {
            Regime::Primary => "primary regime q < p + 2sp/d",
            Regime::NonPrimary => "primary regime q < p + 2sp/d violated; the rate may carry a logarithmic factor",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[problem]\nd = 1\ns = 2.0\np = 2.0\nq = 2.0\n";

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::parse(MINIMAL, "test").unwrap();
        assert_eq!(cfg.sweep.trials, 1);
        assert_eq!(cfg.target.name, "bump-s2");
        assert_eq!(cfg.validate().unwrap(), Regime::Primary);
    }

    #[test]
    fn unknown_keys_name_the_line() {
        let err = ExperimentConfig::parse(&format!("{MINIMAL}tpyo = 3\n"), "cfg.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 6") && msg.contains("tpyo"), "{msg}");
    }

    #[test]
    fn embedding_violation_is_named() {
        let cfg = ExperimentConfig::parse("[problem]\nd = 2\ns = 0.5\np = 2.0\nq = 2.0\n", "t").unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("compact embedding s > d/p"), "{msg}");
    }

    #[test]
    fn non_primary_regime_is_reported() {
        let cfg = ExperimentConfig::parse("[problem]\nd = 1\ns = 1.5\np = 1.0\nq = 5.0\n", "t").unwrap();
        let regime = cfg.validate().unwrap();
        assert_eq!(regime, Regime::NonPrimary);
        assert!(ExperimentConfig::regime_note(regime).contains("q < p + 2sp/d"));
    }
}
