use std::path::{Path, PathBuf};

use ace_core::distance::DistanceId;
use ace_core::gbi::{RejectionConfig, SliceConfig};
use ace_core::metrics::BenchmarkConfig;
use ace_core::nn::{FitConfig, NetArch};
use ace_core::targets::{MisspecConfig, NoiseConfig};
use ace_core::tasks::TaskId;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationCounts {
    pub well_specified: usize,
    pub misspecified: usize,
}

impl Default for ObservationCounts {
    fn default() -> Self {
        Self {
            well_specified: 10,
            misspecified: 10,
        }
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_sims() -> usize {
    10_000
}
fn default_bounds() -> usize {
    100_000
}
fn default_min_accept() -> usize {
    50
}

/// Pipeline configuration file. Only `task` and `output_dir` are required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub task: TaskId,
    pub output_dir: PathBuf,
    #[serde(default = "default_sims")]
    pub n_simulations: usize,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Observations included in the target set.
    #[serde(default)]
    pub observations: ObservationCounts,
    /// Observations held out of the target set.
    #[serde(default)]
    pub unseen_observations: ObservationCounts,
    #[serde(default)]
    pub misspec: MisspecConfig,
    #[serde(default = "default_bounds")]
    pub bounds_sims: usize,
    /// Defaults to the task's distance (MMD² bandwidth by median heuristic).
    #[serde(default)]
    pub distance: Option<DistanceId>,
    #[serde(default)]
    pub arch: Option<NetArch>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub betas: Option<Vec<f64>>,
    #[serde(default)]
    pub slice: SliceConfig,
    #[serde(default)]
    pub rejection: RejectionConfig,
    #[serde(default = "default_min_accept")]
    pub abc_min_accept: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to a single-task benchmark of `task`.
    #[serde(default)]
    pub benchmark: Option<BenchmarkConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ace_core::Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| ace_core::Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ace_core::Error> {
        let bad = |m: String| Err(ace_core::Error::InvalidConfig(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.n_simulations == 0 {
            return bad("n_simulations must be >= 1".into());
        }
        if self.bounds_sims < 2 {
            return bad("bounds_sims must be >= 2".into());
        }
        if self.noise.n_augmented > self.n_simulations {
            return bad("noise.n_augmented exceeds n_simulations".into());
        }
        if !(self.noise.sigma_multiplier > 0.0) {
            return bad("noise.sigma_multiplier must be positive".into());
        }
        if let Some(betas) = &self.betas {
            if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
                return bad("betas must be non-empty and positive".into());
            }
        }
        if let Some(d) = &self.distance {
            d.validate()?;
        }
        self.fit.validate()?;
        self.misspec.validate()?;
        if let Some(b) = &self.benchmark {
            b.validate()?;
        }
        Ok(())
    }

    pub fn benchmark_config(&self) -> BenchmarkConfig {
        let mut b = self.benchmark.clone().unwrap_or_else(|| BenchmarkConfig {
            tasks: vec![self.task],
            ..Default::default()
        });
        b.seed = self.seed;
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"task":"two_moons","output_dir":"o"}"#).unwrap();
        assert_eq!(c.n_simulations, 10_000);
        assert_eq!(c.noise.n_augmented, 100);
        assert_eq!(c.fit.batch_size, 500);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn unknown_and_missing_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"task":"two_moons","output_dir":"o","sims":5}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"output_dir":"o"}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"task":"two_moons"}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"task":"two_moons","output_dir":"o","fit":{"batch":1}}"#).is_err());
    }

    #[test]
    fn zero_budget_is_invalid() {
        let c: RunConfig = serde_json::from_str(r#"{"task":"uniform1d","output_dir":"o","n_simulations":0}"#).unwrap();
        assert!(c.validate().is_err());
    }
}
