use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::gru::TrainingConfig;
use crate::svm::GridSearchSpec;
use crate::wl::WlConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus_dir: PathBuf,
    pub model_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus_dir: "corpus".into(),
            model_dir: "model".into(),
            report_dir: "report".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub k: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub unit_normalize: bool,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            k: 50,
            batch_size: 256,
            iterations: 300,
            unit_normalize: false,
        }
    }
}

/// How WL feature vectors become the SVM's Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelMode {
    /// Raw inner products of WL count vectors.
    #[default]
    Linear,
    /// Inner products divided by `√(k(G,G)·k(G',G'))`.
    Normalized,
    /// `exp(-γ‖φ(G) − φ(G')‖²)`.
    Rbf { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitFractions {
    /// Share of every family withheld for final evaluation.
    pub test: f64,
    /// Share of the remaining files used to monitor the autoencoder.
    pub validation: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            test: 0.1,
            validation: 0.1,
        }
    }
}

/// Everything a training run depends on. Seeds inside nested sections are
/// ignored; each component draws from a named substream of `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub vocab_max_size: usize,
    pub autoencoder: TrainingConfig,
    pub clustering: ClusteringConfig,
    pub wl: WlConfig,
    pub kernel: KernelMode,
    pub grid: GridSearchSpec,
    pub split: SplitFractions,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            vocab_max_size: crate::asm::DEFAULT_MAX_SIZE,
            autoencoder: TrainingConfig::default(),
            clustering: ClusteringConfig::default(),
            wl: WlConfig::default(),
            kernel: KernelMode::default(),
            grid: GridSearchSpec::default(),
            split: SplitFractions::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let f = self.split;
        if !(f.test > 0.0 && f.test < 1.0 && f.validation > 0.0 && f.validation < 1.0) {
            return bad(format!("split fractions must lie in (0,1): {f:?}"));
        }
        if (1.0 - f.test) * (1.0 - f.validation) <= 0.0 {
            return bad("split fractions leave no training data".into());
        }
        if self.vocab_max_size == 0 {
            return bad("vocab_max_size must be positive".into());
        }
        let c = self.clustering;
        if c.k == 0 || c.batch_size == 0 || c.iterations == 0 {
            return bad(format!("invalid clustering parameters: {c:?}"));
        }
        if let KernelMode::Rbf { gamma } = self.kernel {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return bad(format!("rbf gamma must be positive, got {gamma}"));
            }
        }
        if self.grid.c_values.is_empty()
            || self
                .grid
                .c_values
                .iter()
                .any(|&c| !(c > 0.0 && c.is_finite()))
            || self.grid.folds < 2
        {
            return bad(format!("invalid grid search: {:?}", self.grid));
        }
        self.wl
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.autoencoder
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn hash(&self) -> String {
        crate::rng::sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    /// Identifies the feature space a classifier was trained in.
    pub fn feature_fingerprint(&self) -> String {
        let v = serde_json::json!({ "wl": self.wl, "kernel": self.kernel });
        crate::rng::sha256_hex(v.to_string().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(PipelineConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_json(r#"{"sed": 3}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"clustering": {"kk": 3}}"#).is_err());
    }

    #[test]
    fn kernel_mode_json() {
        let cfg =
            PipelineConfig::from_json(r#"{"kernel": {"kind": "rbf", "gamma": 0.5}}"#).unwrap();
        assert_eq!(cfg.kernel, KernelMode::Rbf { gamma: 0.5 });
        assert!(PipelineConfig::from_json(r#"{"kernel": {"kind": "rbf", "gamma": -1}}"#).is_err());
    }

    #[test]
    fn bad_fractions() {
        assert!(PipelineConfig::from_json(r#"{"split": {"test": 0.0}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"split": {"validation": 1.0}}"#).is_err());
    }
}
