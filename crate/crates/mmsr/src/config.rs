//! Run configuration: every stage's parameters plus input paths, loaded
//! from JSON and overridable from the command line.

use std::path::{Path, PathBuf};

use mmsr_core::dataset::PerturbationConfig;
use mmsr_core::model::ModelConfig;
use mmsr_core::quantizer::QuantizerConfig;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::experiments::MissingMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// JSON-lines interactions (`user`, `item`, `ts`).
    pub interactions: Option<PathBuf>,
    /// Binary feature files; each needs its `.ids.json` sidecar.
    pub image_features: Option<PathBuf>,
    pub text_features: Option<PathBuf>,
    /// Minimum interactions per user and item (core filter).
    pub core: usize,
    pub test_frac: f64,
    pub min_len: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            interactions: None,
            image_features: None,
            text_features: None,
            core: 5,
            test_frac: 0.2,
            min_len: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub robust_modes: Vec<MissingMode>,
    pub robust_ratios: Vec<f64>,
    pub sweep_cs: Vec<usize>,
    pub sweep_ks: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            robust_modes: MissingMode::ALL.to_vec(),
            robust_ratios: vec![0.1, 0.3, 0.5, 0.7],
            sweep_cs: vec![5, 10, 20, 40, 80],
            sweep_ks: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub quantizer: QuantizerConfig,
    pub model: ModelConfig,
    /// Test-time perturbation applied by `eval`, if any.
    pub perturbation: Option<PerturbationConfig>,
    pub experiments: ExperimentConfig,
    /// Metric cut-offs.
    pub ks: Vec<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            quantizer: QuantizerConfig::default(),
            model: ModelConfig::default(),
            perturbation: None,
            experiments: ExperimentConfig::default(),
            ks: vec![5, 20],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| AppError::Input(format!("{}: {e}", path.display())))
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Sets the seed of every stochastic stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.quantizer.seed = seed;
        if let Some(p) = &mut self.perturbation {
            p.seed = seed;
        }
    }

    pub fn seed(&self) -> u64 {
        self.model.seed
    }

    pub fn validate(&self) -> AppResult<()> {
        self.model.validate()?;
        if self.quantizer.code_dim != self.model.d {
            return Err(AppError::Input(format!(
                "quantizer.code_dim ({}) must equal model.d ({})",
                self.quantizer.code_dim, self.model.d
            )));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(AppError::Input("ks must be non-empty and positive".into()));
        }
        if self
            .experiments
            .robust_ratios
            .iter()
            .any(|r| !(0.0..=1.0).contains(r))
        {
            return Err(AppError::Input("robust_ratios must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
