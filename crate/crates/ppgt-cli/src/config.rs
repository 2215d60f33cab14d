//! TOML run configuration with command-line overrides.
//!
//! Every field has a default; unknown keys are rejected so that a typo in a
//! config file fails before any work starts.

use ppgt_core::backbone::ModelConfig;
use ppgt_core::error::{Error, Result};
use ppgt_core::norm::NormKind;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub expressivity: ExpressivityConfig,
    pub case_study: CaseStudyConfig,
    pub sweep: SweepConfig,
    pub out_dir: String,
    pub jobs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpressivityConfig {
    pub n_seeds: usize,
    /// Empty means every bank pair.
    pub pairs: Vec<String>,
}

impl Default for ExpressivityConfig {
    fn default() -> Self {
        ExpressivityConfig {
            n_seeds: 10,
            pairs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseStudyConfig {
    pub n_points: usize,
    pub epochs: usize,
    pub norms: Vec<NormKind>,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        CaseStudyConfig {
            n_points: 64,
            epochs: 5000,
            norms: vec![NormKind::Adarmsn, NormKind::Bn, NormKind::Rmsn],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub s_values: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub pair: String,
    pub n_seeds: usize,
    pub epochs: usize,
    pub n_points: usize,
    pub norms: Vec<NormKind>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            s_values: vec![0, 3, 6],
            batch_sizes: vec![4, 16, 64],
            pair: "c6-vs-2c3".to_string(),
            n_seeds: 3,
            epochs: 500,
            n_points: 64,
            norms: vec![NormKind::Adarmsn, NormKind::Bn, NormKind::Rmsn],
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let mut config = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{p:?}: {e}")))?
            }
        };
        if config.out_dir.is_empty() {
            config.out_dir = "out".to_string();
        }
        if config.jobs == 0 {
            config.jobs = 1;
        }
        config.model.validate()?;
        Ok(config)
    }
}
