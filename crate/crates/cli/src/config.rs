use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ctner::corpus::SynthConfig;
use ctner::pipeline::{TrainConfig, Variant};

/// Everything a command needs. Command-line flags override file values; the
/// resolved result is written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Command that produced a snapshot; informational on input.
    pub command: Option<String>,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    /// Run seeds; single-run commands use the first.
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub source_dir: Option<PathBuf>,
    pub target_dir: Option<PathBuf>,
    /// JSON map of event type to template, replacing the shipped tables.
    pub templates: Option<PathBuf>,
    /// word2vec text file backing the auxiliary embeddings.
    pub embeddings: Option<PathBuf>,
    /// Precomputed embedding sets from `embed-events`.
    pub event_sets: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub pseudo: Option<PathBuf>,
    /// CoNLL predictions scored instead of a checkpoint's output.
    pub predictions: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            seeds: vec![1, 2, 3],
            variants: Variant::ALL.to_vec(),
            source_dir: None,
            target_dir: None,
            templates: None,
            embeddings: None,
            event_sets: None,
            checkpoint: None,
            pseudo: None,
            predictions: None,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))
    }

    pub fn seed(&self) -> u64 {
        self.seeds[0]
    }

    /// Checks values and that every referenced input path exists.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.train.validate()?;
        self.synth.validate()?;
        anyhow::ensure!(!self.seeds.is_empty(), "at least one seed is required");
        anyhow::ensure!(
            !self.variants.is_empty(),
            "at least one variant is required"
        );
        let inputs = [
            ("source_dir", &self.source_dir),
            ("target_dir", &self.target_dir),
            ("templates", &self.templates),
            ("embeddings", &self.embeddings),
            ("event_sets", &self.event_sets),
            ("checkpoint", &self.checkpoint),
            ("pseudo", &self.pseudo),
            ("predictions", &self.predictions),
        ];
        for (name, path) in inputs {
            if let Some(p) = path {
                anyhow::ensure!(p.exists(), "{name} `{}` does not exist", p.display());
            }
        }
        Ok(())
    }

    pub fn require<'a>(&self, name: &str, path: &'a Option<PathBuf>) -> anyhow::Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| anyhow::anyhow!("`{name}` is required for this command"))
    }
}
