//! Run configuration: a single TOML file plus a handful of CLI overrides.
//! Credentials never live in the config; live providers read them from the
//! environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statetrait_core::providers::live::LiveProviderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    #[default]
    Mock,
    Live,
}

/// Provider endpoints for live mode; ignored under mocks.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProvidersConfig {
    #[serde(default)]
    pub mode: ProviderMode,
    /// Completion endpoint used for semantic-pattern extraction.
    #[serde(default)]
    pub extraction: Option<LiveProviderConfig>,
    /// Completion endpoint used for scale assessment.
    #[serde(default)]
    pub assessment: Option<LiveProviderConfig>,
    /// Embedding endpoint for similarity analysis.
    #[serde(default)]
    pub embedding: Option<LiveProviderConfig>,
    /// Generation models audited in Application A (also supplies reference
    /// responses for Application B via its first entry).
    #[serde(default)]
    pub generation_models: Vec<LiveProviderConfig>,
    /// Reward models audited in Application B.
    #[serde(default)]
    pub reward_models: Vec<LiveProviderConfig>,
}

fn default_input_format() -> String {
    "jsonl".into()
}
fn default_min_words() -> usize {
    50
}
fn default_min_contexts() -> usize {
    3
}
fn default_posts_per_user() -> usize {
    3
}
fn default_baseline() -> String {
    "general".into()
}
fn default_parallelism() -> usize {
    4
}
fn default_embedding_dimension() -> usize {
    384
}

/// Everything a pipeline run needs. `seed` is mandatory: every stochastic
/// step (sampling, mocks, clustering) derives from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    /// Corpus input; the bundled 12-user toy corpus when omitted.
    #[serde(default)]
    pub input_path: Option<PathBuf>,
    #[serde(default = "default_input_format")]
    pub input_format: String,

    #[serde(default = "default_min_words")]
    pub min_words: usize,
    #[serde(default = "default_min_contexts")]
    pub min_contexts: usize,
    #[serde(default = "default_posts_per_user")]
    pub posts_per_user: usize,

    /// Cluster count; when omitted and `k_range` is set, silhouette
    /// selection picks it (otherwise 6).
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub k_range: Option<(usize, usize)>,

    #[serde(default = "default_baseline")]
    pub baseline_context: String,

    #[serde(default)]
    pub registry_path: Option<PathBuf>,
    #[serde(default)]
    pub lexicon_paths: Vec<PathBuf>,
    #[serde(default)]
    pub thresholds_path: Option<PathBuf>,
    /// Question set (JSONL); bundled dilemmas + opinion examples when omitted.
    #[serde(default)]
    pub questions_path: Option<PathBuf>,

    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_embedding_dimension")]
    pub embedding_dimension: usize,

    /// Run DOSPERT on 1-7 instead of the default 1-5.
    #[serde(default)]
    pub dospert_range_1_7: bool,
    /// Use the paired-difference Cohen's d variant in the reward audit.
    #[serde(default)]
    pub paired_cohens_d: bool,

    #[serde(default)]
    pub providers: ProvidersConfig,
}

impl RunConfig {
    /// Defaults for a mock run writing under `out_dir`.
    pub fn mock_defaults(seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            seed,
            out_dir: out_dir.into(),
            input_path: None,
            input_format: default_input_format(),
            min_words: default_min_words(),
            min_contexts: default_min_contexts(),
            posts_per_user: default_posts_per_user(),
            k: None,
            k_range: None,
            baseline_context: default_baseline(),
            registry_path: None,
            lexicon_paths: Vec::new(),
            thresholds_path: None,
            questions_path: None,
            parallelism: default_parallelism(),
            embedding_dimension: default_embedding_dimension(),
            dospert_range_1_7: false,
            paired_cohens_d: false,
            providers: ProvidersConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        let config: RunConfig = toml::from_str(text)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config '{}': {e}", path.display()))?;
        Self::from_toml_str(&text)
    }

    /// Check paths and numeric invariants; called before any stage runs.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.min_words == 0 || self.min_contexts == 0 || self.posts_per_user == 0 {
            anyhow::bail!("min_words, min_contexts and posts_per_user must be >= 1");
        }
        if let Some(k) = self.k {
            if k < 2 {
                anyhow::bail!("k must be >= 2");
            }
        }
        if let Some((lo, hi)) = self.k_range {
            if lo < 2 || lo > hi {
                anyhow::bail!("k_range must satisfy 2 <= lo <= hi");
            }
        }
        if self.embedding_dimension == 0 {
            anyhow::bail!("embedding_dimension must be >= 1");
        }
        let mut paths: Vec<&PathBuf> = Vec::new();
        paths.extend(self.input_path.iter());
        paths.extend(self.registry_path.iter());
        paths.extend(self.thresholds_path.iter());
        paths.extend(self.questions_path.iter());
        paths.extend(self.lexicon_paths.iter());
        for path in paths {
            if !path.exists() {
                anyhow::bail!("configured path does not exist: {}", path.display());
            }
        }
        if self.providers.mode == ProviderMode::Live {
            if self.providers.extraction.is_none()
                || self.providers.assessment.is_none()
                || self.providers.embedding.is_none()
            {
                anyhow::bail!("live mode needs [providers.extraction], [providers.assessment] and [providers.embedding]");
            }
            if self.providers.generation_models.is_empty() || self.providers.reward_models.is_empty() {
                anyhow::bail!("live mode needs at least one generation model and one reward model");
            }
        }
        Ok(())
    }
}

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Extract,
    Assess,
    Fuse,
    Decompose,
    Validate,
    Archetypes,
    AuditGen,
    AuditReward,
    Report,
    All,
}

impl Stage {
    pub const ORDERED: [Stage; 10] = [
        Stage::Ingest,
        Stage::Extract,
        Stage::Assess,
        Stage::Fuse,
        Stage::Decompose,
        Stage::Validate,
        Stage::Archetypes,
        Stage::AuditGen,
        Stage::AuditReward,
        Stage::Report,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Extract => "extract",
            Stage::Assess => "assess",
            Stage::Fuse => "fuse",
            Stage::Decompose => "decompose",
            Stage::Validate => "validate",
            Stage::Archetypes => "archetypes",
            Stage::AuditGen => "audit-gen",
            Stage::AuditReward => "audit-reward",
            Stage::Report => "report",
            Stage::All => "all",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Ok(match s {
            "ingest" => Stage::Ingest,
            "extract" => Stage::Extract,
            "assess" => Stage::Assess,
            "fuse" => Stage::Fuse,
            "decompose" => Stage::Decompose,
            "validate" => Stage::Validate,
            "archetypes" => Stage::Archetypes,
            "audit-gen" => Stage::AuditGen,
            "audit-reward" => Stage::AuditReward,
            "report" => Stage::Report,
            "all" => Stage::All,
            other => anyhow::bail!(
                "unknown stage '{other}' (expected one of ingest, extract, assess, fuse, decompose, validate, archetypes, audit-gen, audit-reward, report, all)"
            ),
        })
    }
}
