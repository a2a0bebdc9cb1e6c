//! Run configuration and its validation.

use std::path::Path;

use bamboo_core::lock_manager::{Policy, PolicyFlags, Protocol};
use bamboo_core::workload::{PayloadShape, WorkloadSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: String, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, message: message.into() }
}

fn one() -> usize {
    1
}

fn default_warmup() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub policy: Protocol,
    #[serde(default)]
    pub flags: PolicyFlags,
    #[serde(default = "one")]
    pub threads: usize,
    /// Timed run; exactly one of this and `txn_count` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    /// Transactions in total, split evenly over the workers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub txn_count: Option<u64>,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub payload: PayloadShape,
    #[serde(default)]
    pub inject_delay_us: u64,
    #[serde(default)]
    pub backoff_us: u64,
    #[serde(default)]
    pub seed: u64,
    /// Record histories and run the serializability checks afterwards.
    #[serde(default)]
    pub validate: bool,
    /// Leading fraction of a timed run left out of throughput and latency.
    #[serde(default = "default_warmup")]
    pub warmup: f64,
    #[serde(default)]
    pub retain_ts_on_restart: bool,
    /// Count wounds and cascades that hit the oldest live transaction.
    #[serde(default)]
    pub priority_audit: bool,
}

impl RunConfig {
    pub fn new(policy: Protocol, workload: WorkloadSpec) -> RunConfig {
        RunConfig {
            policy,
            flags: PolicyFlags::default(),
            threads: 1,
            duration_s: None,
            txn_count: Some(1000),
            workload,
            payload: PayloadShape::default(),
            inject_delay_us: 0,
            backoff_us: 0,
            seed: 0,
            validate: false,
            warmup: default_warmup(),
            retain_ts_on_restart: false,
            priority_audit: false,
        }
    }

    pub fn policy(&self) -> Policy {
        Policy::new(self.policy, self.flags)
    }

    pub fn from_toml(text: &str, path: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_string(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        RunConfig::from_toml(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.threads == 0 {
            return Err(invalid("threads", "must be at least 1"));
        }
        match (self.duration_s, self.txn_count) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(invalid("duration_s", "set exactly one of duration_s and txn_count"))
            }
            (Some(d), None) if !(d > 0.0 && d.is_finite()) => return Err(invalid("duration_s", format!("{d} must be positive"))),
            (None, Some(0)) => return Err(invalid("txn_count", "must be at least 1")),
            _ => {}
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(invalid("warmup", format!("{} must be in [0, 1)", self.warmup)));
        }
        if !(0.0..=1.0).contains(&self.flags.delta) {
            return Err(invalid("delta", format!("{} must be in [0, 1]", self.flags.delta)));
        }
        if self.payload.fields == 0 || self.payload.field_bytes == 0 {
            return Err(invalid("payload", "fields and field_bytes must be positive"));
        }
        self.workload.validate().map_err(|e| invalid("workload", e.to_string()))?;
        Ok(())
    }
}
