//! JSON run configuration. Every field is optional; command-line flags take
//! precedence over the file, and the file over built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::{builtin_catalog, load_catalog};
use crate::engine::ElasticConfig;
use crate::error::{Error, Result};
use crate::ingest::IngestConfig;
use crate::learning::ConvergencePolicy;
use crate::scoring::WeightPresets;
use crate::simulator::{PoolSpec, SimConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Catalog CSV; the built-in catalog when absent.
    pub catalog: Option<PathBuf>,
    pub pool: Option<PoolSpec>,
    pub elastic: Option<ElasticConfig>,
    pub lambda_reward: Option<f64>,
    pub lambda_penalty: Option<f64>,
    pub threshold: Option<f64>,
    pub convergence: Option<ConvergencePolicy>,
    pub weights: Option<WeightPresets<f64>>,
    pub billing_hours: Option<f64>,
    pub release_after_request: Option<bool>,
    /// Seed for synthetic workload generation, independent of run seeds.
    pub workload_seed: Option<u64>,
    pub ingest: Option<IngestConfig>,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let catalog = match &self.catalog {
            Some(p) => load_catalog(p)?,
            None => builtin_catalog(),
        };
        let mut cfg = SimConfig::new(catalog, self.pool.clone().unwrap_or_default());
        if let Some(e) = self.elastic {
            cfg.elastic = e;
        }
        if let Some(v) = self.lambda_reward {
            cfg.learning.lambda_reward = v;
        }
        if let Some(v) = self.lambda_penalty {
            cfg.learning.lambda_penalty = v;
        }
        if let Some(v) = self.threshold {
            cfg.learning.threshold = v;
        }
        if let Some(c) = self.convergence {
            cfg.convergence = c;
        }
        if let Some(w) = self.weights {
            cfg.weights = w;
        }
        if let Some(h) = self.billing_hours {
            cfg.billing_hours = h;
        }
        if let Some(r) = self.release_after_request {
            cfg.release_after_request = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
