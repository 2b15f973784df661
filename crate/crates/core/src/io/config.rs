use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::StratConfig;
use crate::baseline::BaselineConfig;
use crate::error::{Error, Result};
use crate::io::table::ErrorPolicy;
use crate::ions::{CanonicalSpace, DEFAULT_L_REF, DEFAULT_Z_FRAG_MAX};
use crate::metrics::{BootstrapConfig, SaConvention};
use crate::splits::{SplitRule, DEFAULT_SEED};

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "PEPSPEC_THREADS";
pub const DEFAULT_NCE: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapParams {
    pub resamples: usize,
    pub level: f64,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        let d = BootstrapConfig::default();
        Self {
            resamples: d.resamples,
            level: d.level,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingParams {
    /// Balanced quota per split group.
    pub quota: Option<usize>,
    /// Size of the top-N OOD selection.
    pub top_n: Option<usize>,
}

/// Run configuration, loaded from TOML. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub l_ref: usize,
    pub z_frag_max: u8,
    pub sa_convention: SaConvention,
    pub seed: u64,
    pub split_rule: SplitRule,
    /// Collision energy injected when a table has no `collision_energy`
    /// column.
    pub default_nce: f64,
    pub error_policy: ErrorPolicy,
    pub threads: Option<usize>,
    pub sampling: SamplingParams,
    pub bootstrap: BootstrapParams,
    pub strat: StratConfig,
    pub baseline: BaselineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            l_ref: DEFAULT_L_REF,
            z_frag_max: DEFAULT_Z_FRAG_MAX,
            sa_convention: SaConvention::default(),
            seed: DEFAULT_SEED,
            split_rule: SplitRule::default(),
            default_nce: DEFAULT_NCE,
            error_policy: ErrorPolicy::default(),
            threads: None,
            sampling: SamplingParams::default(),
            bootstrap: BootstrapParams::default(),
            strat: StratConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.space()?;
        if !(self.default_nce.is_finite() && self.default_nce > 0.0) {
            return Err(Error::Config(format!(
                "default_nce must be positive, got {}",
                self.default_nce
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.sampling.quota == Some(0) || self.sampling.top_n == Some(0) {
            return Err(Error::QuotaZero);
        }
        let b = self.bootstrap;
        if b.resamples == 0 || !(b.level > 0.0 && b.level < 1.0) {
            return Err(Error::Config(
                "bootstrap needs resamples >= 1 and level in (0, 1)".into(),
            ));
        }
        self.strat.validate()?;
        if self.baseline.min_bucket_count == 0 || !(self.baseline.ridge_lambda > 0.0) {
            return Err(Error::Config(
                "baseline needs min_bucket_count >= 1 and ridge_lambda > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn space(&self) -> Result<CanonicalSpace> {
        CanonicalSpace::new(self.l_ref, self.z_frag_max).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            resamples: self.bootstrap.resamples,
            level: self.bootstrap.level,
            seed: self.seed,
        }
    }

    /// Worker count: explicit override, then `PEPSPEC_THREADS`, then the
    /// config value. `None` leaves the pool at its default size.
    pub fn resolve_threads(&self, cli: Option<usize>) -> Result<Option<usize>> {
        if cli.is_some() {
            return Ok(cli);
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(Some(n)),
                _ => Err(Error::Config(format!(
                    "{THREADS_ENV} must be a positive integer, got '{v}'"
                ))),
            },
            _ => Ok(self.threads),
        }
    }
}
