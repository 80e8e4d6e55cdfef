//! Run configuration: defaults, then an optional TOML file, then flags.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: u32,
    /// IoU cutoff for REC.
    pub threshold: f64,
    /// Chessboard boundary margin.
    pub epsilon: f64,
    /// Chessboard items per quadrant.
    pub quota: usize,
    pub endpoint: EndpointConfig,
    pub stage: StageConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            precision: 3,
            threshold: 0.5,
            epsilon: 0.0,
            quota: 600,
            endpoint: EndpointConfig::default(),
            stage: StageConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub address: Option<String>,
    /// Never echoed back; manifests show whether one was set.
    #[serde(serialize_with = "redact")]
    pub token: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub concurrency: usize,
    pub batch_size: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            address: None,
            token: None,
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_ms: 500,
            concurrency: 4,
            batch_size: 1,
        }
    }
}

fn redact<S: Serializer>(token: &Option<String>, s: S) -> Result<S::Ok, S::Error> {
    match token {
        Some(_) => s.serialize_str("<redacted>"),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    /// 1 or 2.
    pub stage: u8,
    /// Share of boosted draws in stage 2.
    pub ratio: f64,
    /// Relative weights of the boosted sub-sources, in source order. Empty
    /// means equal shares.
    pub weights: Vec<f64>,
    /// Number of mixed draws to emit; 0 disables mixing.
    pub draws: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            stage: 1,
            ratio: 0.5,
            weights: Vec::new(),
            draws: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("seed = 9\n[endpoint]\naddress = \"http://x\"\ntoken = \"s3cret\"\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.precision, 3);
        assert_eq!(c.endpoint.concurrency, 4);
        let echoed = serde_json::to_string(&c).unwrap();
        assert!(!echoed.contains("s3cret"));
        assert!(echoed.contains("<redacted>"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 1").is_err());
    }
}
