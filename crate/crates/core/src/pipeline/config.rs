use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::AeTrainConfig;
use crate::baseline::CountMode;
use crate::embed::Aggregation;
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::metrics::{DEFAULT_K_MAX, DEFAULT_K_MIN};

fn default_top_k() -> usize {
    30
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_subgroup_size() -> usize {
    11
}

fn default_k_min() -> usize {
    DEFAULT_K_MIN
}

fn default_k_max() -> usize {
    DEFAULT_K_MAX
}

fn default_true() -> bool {
    true
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_aggregation() -> Aggregation {
    Aggregation::Concat
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    /// Generator config file.
    pub config: String,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynonymSettings {
    /// Tab-separated map; the built-in indoor map when absent.
    pub map: Option<String>,
    /// Substitution rate for plain runs.
    pub rate: f64,
    /// Grid for the synonym sweep.
    pub rates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSettings {
    /// Standard deviation for plain runs.
    pub sigma: f64,
    pub sigmas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    /// Latent size of the feature_sum / feature_mult variants.
    pub reduced_dim: usize,
    pub node_only_dim: usize,
    pub latent_grid: Vec<usize>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            reduced_dim: 128,
            node_only_dim: 512,
            latent_grid: vec![64, 128, 256, 512, 768],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeSettings {
    #[serde(default = "default_ae_epochs")]
    pub epochs: usize,
    #[serde(default = "default_ae_lr")]
    pub lr: f64,
    #[serde(default)]
    pub batch_size: Option<usize>,
}

fn default_ae_epochs() -> usize {
    AeTrainConfig::default().epochs
}

fn default_ae_lr() -> f64 {
    AeTrainConfig::default().lr
}

impl Default for AeSettings {
    fn default() -> Self {
        AeSettings {
            epochs: default_ae_epochs(),
            lr: default_ae_lr(),
            batch_size: None,
        }
    }
}

/// Everything one experiment needs. Paths are stored as written and resolved
/// against the directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub datasets: Vec<String>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSource>,
    pub embeddings: String,
    /// Restrict to these scenes; all loaded scenes when empty.
    #[serde(default)]
    pub scenes: Vec<String>,
    #[serde(default)]
    pub stoplist: Option<String>,
    #[serde(default = "default_aggregation")]
    pub aggregation: Aggregation,
    pub latent_dim: usize,
    #[serde(default = "default_true")]
    pub use_autoencoder: bool,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_subgroup_size")]
    pub subgroup_size: usize,
    #[serde(default = "default_k_min")]
    pub k_min: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub baseline: CountMode,
    #[serde(default)]
    pub autoencoder: AeSettings,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub synonyms: SynonymSettings,
    #[serde(default)]
    pub noise: NoiseSettings,
    #[serde(default)]
    pub ablation: AblationSettings,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let cfg = Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.check_files()?;
        Ok(cfg)
    }

    /// Parses and validates without touching the filesystem.
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return cfg_err("seed list is empty".into());
        }
        if self.datasets.is_empty() == self.synthetic.is_none() {
            return cfg_err("give exactly one of `datasets` or `synthetic`".into());
        }
        if self.top_k == 0 {
            return cfg_err("top_k must be >= 1".into());
        }
        if self.autoencoder.batch_size == Some(0) {
            return cfg_err("autoencoder.batch_size must be >= 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return cfg_err(format!("train_fraction must be in (0, 1), got {}", self.train_fraction));
        }
        if self.subgroup_size < 2 {
            return cfg_err(format!("subgroup_size must be >= 2, got {}", self.subgroup_size));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return cfg_err(format!("invalid k range [{}, {}]", self.k_min, self.k_max));
        }
        if self.latent_dim == 0 {
            return cfg_err("latent_dim must be >= 1".into());
        }
        let rate_ok = |r: f64| (0.0..=1.0).contains(&r);
        if !rate_ok(self.synonyms.rate) || !self.synonyms.rates.iter().all(|&r| rate_ok(r)) {
            return cfg_err("synonym rates must lie in [0, 1]".into());
        }
        let sigma_ok = |s: f64| s >= 0.0 && s.is_finite();
        if !sigma_ok(self.noise.sigma) || !self.noise.sigmas.iter().all(|&s| sigma_ok(s)) {
            return cfg_err("noise sigmas must be finite and >= 0".into());
        }
        self.flow.validate()
    }

    fn check_files(&self) -> Result<()> {
        let mut files: Vec<&str> = self.datasets.iter().map(String::as_str).collect();
        files.push(&self.embeddings);
        files.extend(self.stoplist.as_deref());
        files.extend(self.synonyms.map.as_deref());
        files.extend(self.synthetic.as_ref().map(|s| s.config.as_str()));
        for f in files {
            let p = self.resolve(f);
            if !p.is_file() {
                return Err(Error::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn ae_train_config(&self) -> AeTrainConfig {
        AeTrainConfig {
            latent_dim: self.latent_dim,
            epochs: self.autoencoder.epochs,
            lr: self.autoencoder.lr,
            batch_size: self.autoencoder.batch_size,
        }
    }

    pub fn k_range(&self) -> (usize, usize) {
        (self.k_min, self.k_max)
    }

    pub fn output_dir(&self) -> Option<PathBuf> {
        self.output_dir.as_deref().map(|p| self.resolve(p))
    }

    /// SHA-256 over the canonical JSON form; paths enter as written, so the
    /// hash does not depend on where the config lives.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
