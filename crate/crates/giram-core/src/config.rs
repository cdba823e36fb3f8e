//! Experiment configuration: one TOML file covering data sourcing, method
//! selection, and every module's hyperparameters, with paper-protocol
//! defaults baked in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::eval::EvalGranularity;
use crate::fusion::{FusionConfig, RetrievalMode, WeightMode};
use crate::keyenc::KeyEncoderConfig;
use crate::keygen::KeyGenConfig;
use crate::memory::MemoryConfig;
use crate::retrieval::RrfConfig;
use crate::synth::SynthSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Static,
    Finetune,
    Retrain,
    Giram,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Static => "static",
            Method::Finetune => "finetune",
            Method::Retrain => "retrain",
            Method::Giram => "giram",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Method::Static),
            "finetune" => Ok(Method::Finetune),
            "retrain" => Ok(Method::Retrain),
            "giram" => Ok(Method::Giram),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth,
    Csv,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    pub csv_path: Option<PathBuf>,
    pub category_map: Option<PathBuf>,
    /// POIs and users with fewer check-ins than this are filtered out.
    pub min_count: usize,
    /// Trajectory bucketing window.
    pub interval_days: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synth,
            csv_path: None,
            category_map: None,
            min_count: 10,
            interval_days: 7.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub method: Method,
    /// Number of incremental blocks after the base block.
    pub n_blocks: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub eval: EvalGranularity,
    /// Reuse finished per-block checkpoints when the config hash matches.
    pub resume: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            method: Method::Giram,
            n_blocks: 5,
            seed: 42,
            out_dir: PathBuf::from("out"),
            eval: EvalGranularity::Prefix,
            resume: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            rows: 100,
            cols: 100,
        }
    }
}

/// Method-variant switches for the retrieval and weighting components.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GiramVariant {
    pub retrieval: RetrievalMode,
    pub weights: WeightMode,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub run: RunSection,
    pub synth: SynthSpec,
    pub grid: GridConfig,
    pub backbone: BackboneConfig,
    pub keyenc: KeyEncoderConfig,
    pub keygen: KeyGenConfig,
    pub memory: MemoryConfig,
    pub fusion: FusionConfig,
    pub rrf: RrfConfig,
    pub giram: GiramVariant,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.n_blocks < 2 {
            return Err(Error::Config(
                "need at least 2 incremental blocks (one update, one evaluation)".into(),
            ));
        }
        if self.data.source == DataSource::Csv && self.data.csv_path.is_none() {
            return Err(Error::Config("csv source needs data.csv_path".into()));
        }
        if self.data.min_count == 0 {
            return Err(Error::Config("data.min_count must be at least 1".into()));
        }
        if self.data.interval_days <= 0.0 {
            return Err(Error::Config("data.interval_days must be positive".into()));
        }
        for (name, v) in [
            ("fusion.alpha_base", self.fusion.alpha_base),
            ("fusion.beta_base", self.fusion.beta_base),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.fusion.gamma < 0.0 {
            return Err(Error::Config("fusion.gamma must be non-negative".into()));
        }
        if self.rrf.a <= 0.0 {
            return Err(Error::Config("rrf.a must be positive".into()));
        }
        if self.memory.capacity == 0 || self.memory.top_k == 0 {
            return Err(Error::Config("memory capacity and top_k must be positive".into()));
        }
        if self.keygen.n_k == 0 {
            return Err(Error::Config("keygen.n_k must be at least 1".into()));
        }
        if self.keygen.eta < 0.0 || self.keygen.lambda < 0.0 || self.keygen.div_eps <= 0.0 {
            return Err(Error::Config("keygen loss weights out of range".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form; stamped into checkpoints so
    /// resumed runs only reuse artifacts from an identical configuration.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml_string().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The shipped full-default configuration template.
pub fn default_template() -> String {
    ExperimentConfig::default().to_toml_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn defaults_match_protocol_values() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.memory.capacity, 100);
        assert_eq!(cfg.memory.top_k, 50);
        assert_eq!(cfg.keygen.n_k, 20);
        assert_eq!(cfg.keygen.eta, 1.0);
        assert_eq!(cfg.keygen.lambda, 0.1);
        assert_eq!(cfg.keygen.hidden_dim, 128);
        assert_eq!(cfg.fusion.alpha_base, 0.5);
        assert_eq!(cfg.fusion.beta_base, 0.5);
        assert_eq!(cfg.fusion.gamma, 0.5);
        assert_eq!(cfg.fusion.delta, 0.95);
        assert_eq!(cfg.rrf.a, 50.0);
        assert_eq!(cfg.keyenc.d_k, 64);
        assert_eq!(cfg.keyenc.freqs, vec![1.0, 2.0, 4.0]);
        assert_eq!(cfg.backbone.finetune_epochs, 10);
        assert_eq!(cfg.data.min_count, 10);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "[run]\nmethod = \"finetune\"\nseed = 7\n[synth]\nn_users = 12\n",
        )
        .unwrap();
        assert_eq!(cfg.run.method, Method::Finetune);
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.synth.n_users, 12);
        assert_eq!(cfg.memory.capacity, 100);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[run]\nn_blocks = 1\n").is_err());
        assert!(
            ExperimentConfig::from_toml_str("[data]\nsource = \"csv\"\n").is_err()
        );
        assert!(ExperimentConfig::from_toml_str("[rrf]\na = 0.0\n").is_err());
    }
}
