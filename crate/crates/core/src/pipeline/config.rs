use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::classifier::TrainConfig;
use crate::corpus::CorpusFormat;
use crate::generation::{GenerationParams, ProviderConfig};
use crate::io;
use crate::prompting::{Strategy, DEFAULT_N_GENERATIONS, DEFAULT_TAXONOMY_K};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Defaults to a name derived from the config digest.
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_construct")]
    pub construct_name: String,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitSettings,
    #[serde(default)]
    pub generation: GenerationSettings,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub classifier: TrainConfig,
    #[serde(default)]
    pub discriminator: DiscriminatorSettings,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
}

fn default_construct() -> String {
    "sarcastic".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    /// Inferred from the extension when absent.
    #[serde(default)]
    pub format: Option<CorpusFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub train_fraction: f64,
    pub stratify: bool,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            stratify: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSettings {
    pub strategies: Vec<Strategy>,
    pub n_generations: usize,
    pub simple_repetitions: usize,
    pub taxonomy_k: usize,
    pub params: GenerationParams,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            n_generations: DEFAULT_N_GENERATIONS,
            simple_repetitions: 500,
            taxonomy_k: DEFAULT_TAXONOMY_K,
            params: GenerationParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSettings {
    pub enabled: bool,
    /// Strategy whose first decodes train the discriminator and whose
    /// corpus is filtered.
    pub strategy: Strategy,
    pub cull_threshold: f64,
    pub believability_threshold: f64,
    pub train: TrainConfig,
}

impl Default for DiscriminatorSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            strategy: Strategy::Grounding,
            cull_threshold: 0.5,
            believability_threshold: 0.5,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub groundtruth: bool,
    pub all_negative: bool,
    pub zero_shot: bool,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            groundtruth: true,
            all_negative: true,
            zero_shot: true,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub provider: Option<crate::generation::ProviderKind>,
    pub n_generations: Option<usize>,
    pub simple_repetitions: Option<usize>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config {
            path: base_dir.display().to_string(),
            reason: e.to_string(),
        })?;
        config.resolve_paths(base_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            PipelineError::Config { reason, .. } => PipelineError::Config {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    fn resolve_paths(&mut self, base_dir: &Path) {
        if self.dataset.path.is_relative() {
            self.dataset.path = base_dir.join(&self.dataset.path);
        }
        if let Some(f) = &self.provider.mock_fixture {
            if f.is_relative() {
                self.provider.mock_fixture = Some(base_dir.join(f));
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), PipelineError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = o.provider {
            self.provider.kind = p;
        }
        if let Some(n) = o.n_generations {
            self.generation.n_generations = n;
        }
        if let Some(r) = o.simple_repetitions {
            self.generation.simple_repetitions = r;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |reason: String| {
            Err(PipelineError::Config {
                path: "<config>".into(),
                reason,
            })
        };
        if self.construct_name.trim().is_empty() {
            return bad("construct_name is empty".into());
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return bad(format!("split.train_fraction {} outside (0, 1)", self.split.train_fraction));
        }
        if self.generation.strategies.is_empty() {
            return bad("generation.strategies is empty".into());
        }
        if self.generation.n_generations == 0 || self.generation.taxonomy_k == 0 {
            return bad("generation counts must be positive".into());
        }
        for t in [self.discriminator.cull_threshold, self.discriminator.believability_threshold] {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("threshold {t} outside [0, 1]"));
            }
        }
        if self.discriminator.enabled && !self.generation.strategies.contains(&self.discriminator.strategy) {
            return bad(format!(
                "discriminator.strategy {} is not among generation.strategies",
                self.discriminator.strategy
            ));
        }
        self.generation
            .params
            .validate()
            .or_else(|e| bad(e.to_string()))?;
        self.classifier.validate().or_else(|e| bad(e.to_string()))?;
        self.discriminator.train.validate().or_else(|e| bad(e.to_string()))?;
        Ok(())
    }

    pub fn dataset_format(&self) -> Result<CorpusFormat, PipelineError> {
        self.dataset
            .format
            .or_else(|| CorpusFormat::from_path(&self.dataset.path))
            .ok_or_else(|| PipelineError::Config {
                path: self.dataset.path.display().to_string(),
                reason: "cannot infer dataset format; set dataset.format".into(),
            })
    }

    /// Hash of the settings plus the dataset content. File locations are
    /// left out so the same inputs give the same digest anywhere.
    pub fn digest(&self) -> Result<String, PipelineError> {
        let mut anon = self.clone();
        anon.dataset.path = PathBuf::new();
        anon.provider.mock_fixture = anon.provider.mock_fixture.as_ref().map(|_| PathBuf::new());
        let mut h = Sha256::new();
        h.update(io::json_digest(&anon).as_bytes());
        for path in std::iter::once(&self.dataset.path).chain(self.provider.mock_fixture.as_ref()) {
            let bytes = std::fs::read(path).map_err(|e| PipelineError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            h.update(io::sha256_hex(&bytes).as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn run_id(&self, digest: &str) -> String {
        self.run_id.clone().unwrap_or_else(|| format!("run-{}", &digest[..12]))
    }
}

/// Independent per-purpose seed derived from the run seed.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_toml_str("[dataset]\npath = \"data.csv\"\n", Path::new("/x")).unwrap();
        assert_eq!(c.dataset.path, Path::new("/x/data.csv"));
        assert_eq!(c.generation.strategies.len(), 4);
        assert_eq!(c.generation.simple_repetitions, 500);
        assert_eq!(c.discriminator.cull_threshold, 0.5);
        assert_eq!(c.classifier.learning_rate, 0.1);
    }

    #[test]
    fn strategy_names_and_unknown_fields() {
        let c = RunConfig::from_toml_str(
            "[dataset]\npath = \"d.csv\"\n[generation]\nstrategies = [\"rewrite\", \"grounding\"]\n",
            Path::new("."),
        )
        .unwrap();
        assert_eq!(c.generation.strategies, [Strategy::GroundingRewrite, Strategy::Grounding]);
        let err = RunConfig::from_toml_str("bogus = 1\n[dataset]\npath = \"d.csv\"\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn derived_seeds_differ_by_purpose() {
        assert_ne!(derive_seed(1, "split"), derive_seed(1, "train"));
        assert_eq!(derive_seed(1, "split"), derive_seed(1, "split"));
    }
}
