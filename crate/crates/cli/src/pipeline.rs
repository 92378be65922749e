//! Staged pipeline execution. Every stage reads prior-stage artifacts from
//! the output directory, writes its own artifacts as plain JSONL/CSV files,
//! and records a provenance manifest (inputs hash, seed, version). With mock
//! providers the whole run is a pure function of (config, seed): outputs are
//! byte-identical across runs and parallelism settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use statetrait_core::archetypes::{self, ProfileCard, ThresholdTable};
use statetrait_core::audit::{self, Condition, Question};
use statetrait_core::corpus::{self, InputFormat, Post};
use statetrait_core::extraction::{self, FeatureVector, LexiconDictionary, SemanticPattern};
use statetrait_core::profiles::{self, DimensionStats, FusedProfile, NormalizedProfile, Normalizer};
use statetrait_core::providers::live::{
    LiveCompletionProvider, LiveEmbeddingProvider, LiveRewardProvider,
};
use statetrait_core::providers::mock::{
    MockCompletionProvider, MockEmbeddingProvider, MockRewardProvider,
};
use statetrait_core::providers::{
    map_indexed_parallel, CompletionProvider, CompletionRequest, EmbeddingProvider, RetryPolicy,
    RewardProvider,
};
use statetrait_core::psychometrics::{self, MixedModelFit};
use statetrait_core::scales::{self, FrameworkName, RawProfile, ScaleRegistry};
use statetrait_core::text::seeded_hash;
use statetrait_core::Method;

use crate::config::{ProviderMode, RunConfig, Stage};
use crate::report::{self, headers};

/// Artifact file names, shared between stages and tests.
pub mod files {
    pub const POSTS: &str = "posts.jsonl";
    pub const CORPUS_MANIFEST: &str = "corpus_manifest.json";
    pub const FEATURES_LEX: &str = "features_lex.jsonl";
    pub const PATTERNS: &str = "patterns.jsonl";
    pub const FEATURES_SEM: &str = "features_sem.jsonl";
    pub const RAW_PROFILES: &str = "raw_profiles.jsonl";
    pub const ASSESS_WARNINGS: &str = "assess_warnings.json";
    pub const NORMALIZER: &str = "normalizer.json";
    pub const POPULATION_STATS: &str = "population_stats.json";
    pub const FUSED_PROFILES: &str = "fused_profiles.jsonl";
    pub const AGREEMENT: &str = "agreement.csv";
    pub const AGREEMENT_SUMMARY: &str = "agreement_summary.json";
    pub const DECOMPOSITION: &str = "decomposition.csv";
    pub const DECOMPOSITION_SUMMARY: &str = "decomposition_summary.csv";
    pub const MTMM: &str = "mtmm.csv";
    pub const MTMM_SUMMARY: &str = "mtmm_summary.json";
    pub const REGRESSION: &str = "regression.csv";
    pub const REGRESSION_VARIANCE: &str = "regression_variance.json";
    pub const ARCHETYPE_MODEL: &str = "archetype_model.json";
    pub const ASSIGNMENTS: &str = "assignments.jsonl";
    pub const DIVERSITY: &str = "diversity.json";
    pub const SILHOUETTE: &str = "silhouette.csv";
    pub const CARDS_INDEX: &str = "cards_index.json";
    pub const GENERATION_GRID: &str = "generation_grid.jsonl";
    pub const GENERATION_HOLES: &str = "generation_holes.json";
    pub const SENSITIVITY_MODELS: &str = "sensitivity_models.csv";
    pub const SENSITIVITY_ARCHETYPES: &str = "sensitivity_archetypes.csv";
    pub const SENSITIVITY_PAIRS: &str = "sensitivity_pairs.csv";
    pub const SENSITIVITY_SUMMARY: &str = "sensitivity_summary.json";
    pub const REFERENCE_RESPONSES: &str = "reference_responses.jsonl";
    pub const REWARD_GRID: &str = "reward_grid.jsonl";
    pub const REWARD_HOLES: &str = "reward_holes.json";
    pub const INVARIANCE_EFFECTS: &str = "invariance_effects.csv";
    pub const INVARIANCE_DATASETS: &str = "invariance_datasets.csv";
    pub const INVARIANCE_DIRECTIONS: &str = "invariance_directions.csv";
    pub const INVARIANCE_SUMMARY: &str = "invariance_summary.json";
    pub const HEATMAP_SVG: &str = "heatmap_fused.svg";
    pub const HEATMAP_CSV: &str = "heatmap_fused.csv";
    pub const HEATMAP_JSON: &str = "heatmap_fused.json";
    pub const REPORT_SUMMARY: &str = "report_summary.json";
}

/// Outcome of a stage run; `partial` marks an audit grid with holes.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOutcome {
    pub partial: bool,
}

#[derive(Serialize)]
struct StageManifest {
    stage: String,
    seed: u64,
    version: String,
    inputs: Vec<FileDigest>,
}

#[derive(Serialize)]
struct FileDigest {
    name: String,
    sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureRecord {
    post_id: String,
    features: FeatureVector,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PatternRecord {
    post_id: String,
    patterns: Vec<SemanticPattern>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProfileRecord {
    post_id: String,
    user_id: String,
    context_id: String,
    lex: RawProfile,
    sem: RawProfile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AssignmentRecord {
    post_id: String,
    user_id: String,
    context_id: String,
    archetype: usize,
    label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CardEntry {
    index: usize,
    label: String,
    card: ProfileCard,
    text: String,
    exemplar_post_id: String,
    exemplar_text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReferenceResponse {
    question_id: String,
    response: String,
}

struct ProviderSet {
    extraction: Box<dyn CompletionProvider>,
    assessment: Box<dyn CompletionProvider>,
    embedding: Box<dyn EmbeddingProvider>,
    generation: Vec<(String, Box<dyn CompletionProvider>)>,
    reward: Vec<(String, Box<dyn RewardProvider>)>,
}

fn build_providers(config: &RunConfig) -> anyhow::Result<ProviderSet> {
    match config.providers.mode {
        ProviderMode::Mock => {
            let seed = config.seed;
            let mk = |name: &str| seeded_hash(seed, &["provider", name]);
            Ok(ProviderSet {
                extraction: Box::new(MockCompletionProvider::new("mock-extract", mk("extract"))),
                assessment: Box::new(MockCompletionProvider::new("mock-assess", mk("assess"))),
                embedding: Box::new(MockEmbeddingProvider::new(config.embedding_dimension)),
                generation: vec![
                    (
                        "mock-gen-a".to_string(),
                        Box::new(MockCompletionProvider::new("mock-gen-a", mk("gen-a")))
                            as Box<dyn CompletionProvider>,
                    ),
                    (
                        "mock-gen-b".to_string(),
                        Box::new(MockCompletionProvider::new("mock-gen-b", mk("gen-b"))),
                    ),
                ],
                reward: vec![
                    (
                        "mock-rm-blind".to_string(),
                        Box::new(MockRewardProvider::profile_blind("mock-rm-blind", mk("rm-blind")))
                            as Box<dyn RewardProvider>,
                    ),
                    (
                        "mock-rm-plus".to_string(),
                        Box::new(MockRewardProvider::biased("mock-rm-plus", mk("rm-bias"), 0.5)),
                    ),
                    (
                        "mock-rm-minus".to_string(),
                        Box::new(MockRewardProvider::biased("mock-rm-minus", mk("rm-bias"), -0.5)),
                    ),
                ],
            })
        }
        ProviderMode::Live => {
            let p = &config.providers;
            let need = |name: &str| anyhow::anyhow!("live mode is missing [providers.{name}]");
            let extraction = p.extraction.clone().ok_or_else(|| need("extraction"))?;
            let assessment = p.assessment.clone().ok_or_else(|| need("assessment"))?;
            let embedding = p.embedding.clone().ok_or_else(|| need("embedding"))?;
            let mut generation: Vec<(String, Box<dyn CompletionProvider>)> = Vec::new();
            for entry in &p.generation_models {
                generation.push((
                    entry.model.clone(),
                    Box::new(LiveCompletionProvider::new(entry.clone())?),
                ));
            }
            let mut reward: Vec<(String, Box<dyn RewardProvider>)> = Vec::new();
            for entry in &p.reward_models {
                reward.push((entry.model.clone(), Box::new(LiveRewardProvider::new(entry.clone())?)));
            }
            Ok(ProviderSet {
                extraction: Box::new(LiveCompletionProvider::new(extraction)?),
                assessment: Box::new(LiveCompletionProvider::new(assessment)?),
                embedding: Box::new(LiveEmbeddingProvider::new(embedding, config.embedding_dimension)?),
                generation,
                reward,
            })
        }
    }
}

fn retry_policy(config: &RunConfig) -> RetryPolicy {
    match config.providers.mode {
        ProviderMode::Mock => RetryPolicy::immediate(),
        ProviderMode::Live => RetryPolicy::default(),
    }
}

// ---------------------------------------------------------------------------
// Artifact i/o helpers
// ---------------------------------------------------------------------------

fn out_path(config: &RunConfig, name: &str) -> PathBuf {
    config.out_dir.join(name)
}

fn require(config: &RunConfig, name: &str, produced_by: Stage) -> anyhow::Result<PathBuf> {
    let path = out_path(config, name);
    if !path.exists() {
        anyhow::bail!(
            "missing artifact '{name}': run stage '{}' first",
            produced_by.name()
        );
    }
    Ok(path)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> anyhow::Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read '{}': {e}", path.display()))?;
    let mut items = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(line)
                .map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), idx + 1))?,
        );
    }
    Ok(items)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read '{}': {e}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn write_manifest(config: &RunConfig, stage: Stage, input_names: &[&str]) -> anyhow::Result<()> {
    let mut inputs = Vec::new();
    for name in input_names {
        let path = out_path(config, name);
        if path.exists() {
            inputs.push(FileDigest {
                name: name.to_string(),
                sha256: sha256_file(&path)?,
            });
        }
    }
    let manifest = StageManifest {
        stage: stage.name().to_string(),
        seed: config.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        inputs,
    };
    report::write_json(
        &out_path(config, &format!("manifest_{}.json", stage.name().replace('-', "_"))),
        &manifest,
    )
}

// ---------------------------------------------------------------------------
// Shared loaders
// ---------------------------------------------------------------------------

fn load_registry(config: &RunConfig) -> anyhow::Result<ScaleRegistry> {
    let mut registry = match &config.registry_path {
        Some(path) => ScaleRegistry::from_json_str(&std::fs::read_to_string(path)?)?,
        None => ScaleRegistry::bundled_default(),
    };
    if config.dospert_range_1_7 {
        registry.set_response_range(FrameworkName::DOSPERT, 1.0, 7.0)?;
    }
    Ok(registry)
}

fn load_lexicons(config: &RunConfig) -> anyhow::Result<Vec<LexiconDictionary>> {
    if config.lexicon_paths.is_empty() {
        return Ok(vec![LexiconDictionary::bundled_demo()]);
    }
    config
        .lexicon_paths
        .iter()
        .map(|path| Ok(LexiconDictionary::from_json_str(&std::fs::read_to_string(path)?)?))
        .collect()
}

fn load_thresholds(config: &RunConfig) -> anyhow::Result<ThresholdTable> {
    Ok(match &config.thresholds_path {
        Some(path) => ThresholdTable::from_json_str(&std::fs::read_to_string(path)?)?,
        None => ThresholdTable::bundled_default(),
    })
}

fn load_questions(config: &RunConfig) -> anyhow::Result<Vec<Question>> {
    Ok(match &config.questions_path {
        Some(path) => audit::questions_from_jsonl(&std::fs::read_to_string(path)?)?,
        None => {
            let mut questions = audit::bundled_opinion_examples();
            questions.extend(audit::bundled_dilemma_questions());
            questions
        }
    })
}

fn load_posts(config: &RunConfig) -> anyhow::Result<Vec<Post>> {
    read_jsonl(&require(config, files::POSTS, Stage::Ingest)?)
}

fn load_fused(config: &RunConfig) -> anyhow::Result<Vec<FusedProfile>> {
    read_jsonl(&require(config, files::FUSED_PROFILES, Stage::Fuse)?)
}

fn label_slug(label: &str) -> String {
    label
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '-' })
        .collect()
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

fn stage_ingest(config: &RunConfig) -> anyhow::Result<()> {
    let raw = match &config.input_path {
        Some(path) => {
            let format: InputFormat = config.input_format.parse()?;
            corpus::ingest(std::fs::File::open(path)?, format)?
        }
        None => corpus::bundled_toy_corpus(),
    };
    let eligible = corpus::filter_eligible(&raw, config.min_words, config.min_contexts);
    if eligible.is_empty() {
        anyhow::bail!(
            "no posts survive eligibility filtering (min_words = {}, min_contexts = {})",
            config.min_words,
            config.min_contexts
        );
    }
    let sampled = corpus::sample_per_user(&eligible, config.posts_per_user, config.seed)?;

    write_jsonl(&out_path(config, files::POSTS), &sampled)?;
    report::write_json(&out_path(config, files::CORPUS_MANIFEST), &corpus::corpus_stats(&sampled))?;
    write_manifest(config, Stage::Ingest, &[files::POSTS, files::CORPUS_MANIFEST])
}

fn stage_extract(config: &RunConfig, providers: &ProviderSet) -> anyhow::Result<()> {
    let posts = load_posts(config)?;
    let lexicons = load_lexicons(config)?;
    let retry = retry_policy(config);

    let mut lex_records = Vec::with_capacity(posts.len());
    for post in &posts {
        lex_records.push(FeatureRecord {
            post_id: post.post_id(),
            features: extraction::extract_lexicon_features(&post.text, &lexicons)?,
        });
    }

    let pattern_results = map_indexed_parallel(config.parallelism, &posts, |_, post| {
        extraction::extract_semantic_patterns(&post.text, providers.extraction.as_ref(), retry)
    });
    let mut pattern_records = Vec::with_capacity(posts.len());
    let mut sem_records = Vec::with_capacity(posts.len());
    for (post, result) in posts.iter().zip(pattern_results) {
        let patterns = result?;
        sem_records.push(FeatureRecord {
            post_id: post.post_id(),
            features: extraction::patterns_to_features(&patterns),
        });
        pattern_records.push(PatternRecord {
            post_id: post.post_id(),
            patterns,
        });
    }

    write_jsonl(&out_path(config, files::FEATURES_LEX), &lex_records)?;
    write_jsonl(&out_path(config, files::PATTERNS), &pattern_records)?;
    write_jsonl(&out_path(config, files::FEATURES_SEM), &sem_records)?;
    write_manifest(config, Stage::Extract, &[files::POSTS])
}

fn stage_assess(config: &RunConfig, providers: &ProviderSet) -> anyhow::Result<()> {
    let posts = load_posts(config)?;
    let lex: Vec<FeatureRecord> = read_jsonl(&require(config, files::FEATURES_LEX, Stage::Extract)?)?;
    let sem: Vec<FeatureRecord> = read_jsonl(&require(config, files::FEATURES_SEM, Stage::Extract)?)?;
    if lex.len() != posts.len() || sem.len() != posts.len() {
        anyhow::bail!("feature files do not match the post list; re-run 'extract'");
    }
    let registry = load_registry(config)?;
    let retry = retry_policy(config);

    // One assessment per (post, method).
    let tasks: Vec<(usize, Method)> = (0..posts.len())
        .flat_map(|i| [(i, Method::Lex), (i, Method::Sem)])
        .collect();
    let results = map_indexed_parallel(config.parallelism, &tasks, |_, &(i, method)| {
        let features = match method {
            Method::Lex => &lex[i].features,
            Method::Sem => &sem[i].features,
        };
        let assessment =
            scales::assess_items(features, &registry, providers.assessment.as_ref(), retry)?;
        let profile = scales::score_subscales(&assessment, &registry)?;
        Ok((profile, assessment.warnings))
    });

    let mut records = Vec::with_capacity(posts.len());
    let mut warnings = Vec::new();
    let mut iter = results.into_iter();
    for post in &posts {
        let (lex_profile, lex_warnings) = iter.next().unwrap()?;
        let (sem_profile, sem_warnings) = iter.next().unwrap()?;
        warnings.extend(lex_warnings);
        warnings.extend(sem_warnings);
        records.push(ProfileRecord {
            post_id: post.post_id(),
            user_id: post.user_id.clone(),
            context_id: post.context_id.clone(),
            lex: lex_profile,
            sem: sem_profile,
        });
    }

    write_jsonl(&out_path(config, files::RAW_PROFILES), &records)?;
    report::write_json(&out_path(config, files::ASSESS_WARNINGS), &warnings)?;
    write_manifest(
        config,
        Stage::Assess,
        &[files::POSTS, files::FEATURES_LEX, files::FEATURES_SEM],
    )
}

fn stage_fuse(config: &RunConfig) -> anyhow::Result<()> {
    let records: Vec<ProfileRecord> = read_jsonl(&require(config, files::RAW_PROFILES, Stage::Assess)?)?;
    if records.len() < 2 {
        anyhow::bail!("need at least 2 posts to fit normalization statistics");
    }

    let mut raw_profiles: Vec<RawProfile> = Vec::with_capacity(records.len() * 2);
    for record in &records {
        raw_profiles.push(record.lex.clone());
        raw_profiles.push(record.sem.clone());
    }
    let normalizer = Normalizer::fit(&raw_profiles)?;
    let stats = DimensionStats::from_raw_profiles(&raw_profiles)?;

    let mut fused_profiles = Vec::with_capacity(records.len());
    let mut agreement_rows = Vec::with_capacity(records.len());
    let mut agreement_values = Vec::new();
    let mut n_missing = 0usize;
    for record in &records {
        let lex_z = profiles::normalize(
            &record.lex,
            &normalizer,
            &record.post_id,
            &record.user_id,
            &record.context_id,
        )?;
        let sem_z = profiles::normalize(
            &record.sem,
            &normalizer,
            &record.post_id,
            &record.user_id,
            &record.context_id,
        )?;
        let agreement = profiles::profile_agreement(&lex_z, &sem_z)?;
        match agreement {
            Some(r) => agreement_values.push(r),
            None => n_missing += 1,
        }
        agreement_rows.push(vec![
            record.post_id.clone(),
            record.user_id.clone(),
            record.context_id.clone(),
            report::fmt_opt(agreement),
        ]);
        fused_profiles.push(profiles::fuse(&lex_z, &sem_z)?);
    }

    let agreement_summary = {
        let mut sorted = agreement_values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        let frac_above = |cut: f64| {
            if n == 0 {
                0.0
            } else {
                sorted.iter().filter(|&&r| r > cut).count() as f64 / n as f64
            }
        };
        serde_json::json!({
            "n_posts": records.len(),
            "n_defined": n,
            "n_missing": n_missing,
            "mean_r": if n == 0 { None } else { Some(sorted.iter().sum::<f64>() / n as f64) },
            "median_r": if n == 0 { None } else { Some(sorted[(n - 1) / 2]) },
            "frac_above_0_70": frac_above(0.70),
            "frac_above_0_50": frac_above(0.50),
        })
    };

    report::write_json(&out_path(config, files::NORMALIZER), &normalizer)?;
    report::write_json(&out_path(config, files::POPULATION_STATS), &stats)?;
    write_jsonl(&out_path(config, files::FUSED_PROFILES), &fused_profiles)?;
    report::write_csv(&out_path(config, files::AGREEMENT), headers::AGREEMENT, &agreement_rows)?;
    report::write_json(&out_path(config, files::AGREEMENT_SUMMARY), &agreement_summary)?;
    write_manifest(config, Stage::Fuse, &[files::RAW_PROFILES])
}

fn method_rows(
    fused: &[FusedProfile],
    view: &str,
) -> Vec<(String, BTreeMap<String, f64>)> {
    fused
        .iter()
        .map(|p| {
            let z = match view {
                "lex" => p.lex_z.clone(),
                "sem" => p.sem_z.clone(),
                _ => p.z.clone(),
            };
            (p.user_id.clone(), z)
        })
        .collect()
}

fn stage_decompose(config: &RunConfig) -> anyhow::Result<()> {
    let fused = load_fused(config)?;
    let mut rows = Vec::new();
    let mut summary_rows = Vec::new();
    for view in ["lex", "sem", "fused"] {
        let decomposition = psychometrics::decompose_all(&method_rows(&fused, view))?;
        rows.extend(report::decomposition_rows(view, &decomposition));
        summary_rows.push(report::decomposition_summary_row(view, &decomposition));
    }
    report::write_csv(&out_path(config, files::DECOMPOSITION), headers::DECOMPOSITION, &rows)?;
    report::write_csv(
        &out_path(config, files::DECOMPOSITION_SUMMARY),
        headers::DECOMPOSITION_SUMMARY,
        &summary_rows,
    )?;
    write_manifest(config, Stage::Decompose, &[files::FUSED_PROFILES])
}

fn normalized_view(fused: &[FusedProfile], method: Method) -> Vec<NormalizedProfile> {
    fused
        .iter()
        .map(|p| NormalizedProfile {
            post_id: p.post_id.clone(),
            user_id: p.user_id.clone(),
            context_id: p.context_id.clone(),
            method,
            z: match method {
                Method::Lex => p.lex_z.clone(),
                Method::Sem => p.sem_z.clone(),
            },
        })
        .collect()
}

fn stage_validate(config: &RunConfig) -> anyhow::Result<()> {
    let fused = load_fused(config)?;
    let registry = load_registry(config)?;

    // MTMM between the two method views.
    let lex_view = normalized_view(&fused, Method::Lex);
    let sem_view = normalized_view(&fused, Method::Sem);
    let mtmm = psychometrics::mtmm_matrix(&lex_view, &sem_view)?;
    let (mtmm_header, mtmm_rows) = report::mtmm_rows(&mtmm);
    report::write_csv(&out_path(config, files::MTMM), &mtmm_header, &mtmm_rows)?;
    report::write_json(
        &out_path(config, files::MTMM_SUMMARY),
        &serde_json::json!({
            "diagonal_mean": mtmm.diagonal_mean,
            "diagonal_min": mtmm.diagonal_min,
            "diagonal_max": mtmm.diagonal_max,
        }),
    )?;

    // Mixed-effects regression per dimension and method view.
    let contexts: Vec<String> = fused.iter().map(|p| p.context_id.clone()).collect();
    let users: Vec<String> = fused.iter().map(|p| p.user_id.clone()).collect();
    let baseline = &config.baseline_context;

    let mut context_levels: Vec<String> = contexts.clone();
    context_levels.sort();
    context_levels.dedup();
    let predictors: Vec<String> = context_levels
        .iter()
        .filter(|c| *c != baseline)
        .cloned()
        .collect();

    let fit_view = |view: &str, dimension: &str| -> anyhow::Result<MixedModelFit> {
        let outcome: Vec<f64> = fused
            .iter()
            .map(|p| match view {
                "lex" => p.lex_z[dimension],
                "sem" => p.sem_z[dimension],
                _ => p.z[dimension],
            })
            .collect();
        Ok(psychometrics::fit_random_intercept(&outcome, &contexts, &users, baseline)?)
    };

    let mut rows = Vec::new();
    let mut variance_entries = Vec::new();
    for dimension in registry.dimension_names() {
        let lex_fit = fit_view("lex", &dimension)?;
        let sem_fit = fit_view("sem", &dimension)?;
        let fused_fit = fit_view("fused", &dimension)?;
        for context in &predictors {
            rows.push(report::regression_row(context, &dimension, &lex_fit, &sem_fit, &fused_fit));
        }
        for (view, fit) in [("lex", &lex_fit), ("sem", &sem_fit), ("fused", &fused_fit)] {
            variance_entries.push(serde_json::json!({
                "method": view,
                "dimension": dimension,
                "sigma_u2": fit.sigma_u2,
                "sigma_e2": fit.sigma_e2,
                "lambda": fit.lambda,
                "converged": fit.converged,
            }));
        }
    }
    report::write_csv(&out_path(config, files::REGRESSION), headers::REGRESSION, &rows)?;
    report::write_json(&out_path(config, files::REGRESSION_VARIANCE), &variance_entries)?;
    write_manifest(config, Stage::Validate, &[files::FUSED_PROFILES])
}

fn stage_archetypes(config: &RunConfig) -> anyhow::Result<()> {
    let fused = load_fused(config)?;
    let registry = load_registry(config)?;
    let thresholds = load_thresholds(config)?;
    let stats: DimensionStats =
        read_json(&require(config, files::POPULATION_STATS, Stage::Fuse)?)?;

    let dimensions = registry.dimension_names();
    let matrix: Vec<Vec<f64>> = fused
        .iter()
        .map(|p| dimensions.iter().map(|d| p.z[d]).collect())
        .collect();

    let selection = match config.k_range {
        Some((lo, hi)) => {
            let selection = archetypes::select_k(&matrix, &dimensions, lo..=hi, config.seed)?;
            let rows: Vec<Vec<String>> = selection
                .scores
                .iter()
                .map(|(k, s)| vec![k.to_string(), report::fmt_f(*s)])
                .collect();
            report::write_csv(&out_path(config, files::SILHOUETTE), headers::SILHOUETTE, &rows)?;
            Some(selection)
        }
        None => None,
    };
    let k = config
        .k
        .or(selection.as_ref().map(|s| s.best_k))
        .unwrap_or(6);

    let model = archetypes::kmeans(&matrix, &dimensions, k, config.seed, 10)?;
    report::write_json(&out_path(config, files::ARCHETYPE_MODEL), &model)?;

    let mut assignments = Vec::with_capacity(fused.len());
    let mut by_user: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (profile, row) in fused.iter().zip(&matrix) {
        let archetype = archetypes::assign(row, &model);
        by_user.entry(profile.user_id.clone()).or_default().push(archetype);
        assignments.push(AssignmentRecord {
            post_id: profile.post_id.clone(),
            user_id: profile.user_id.clone(),
            context_id: profile.context_id.clone(),
            archetype,
            label: model.label_of(archetype).to_string(),
        });
    }
    write_jsonl(&out_path(config, files::ASSIGNMENTS), &assignments)?;
    report::write_json(&out_path(config, files::DIVERSITY), &archetypes::diversity_stats(&by_user)?)?;

    // Centroid cards plus nearest-real-profile exemplar cards.
    let cards_dir = out_path(config, "cards");
    std::fs::create_dir_all(&cards_dir)?;
    let mut entries = Vec::with_capacity(k);
    for index in 0..k {
        let label = model.label_of(index).to_string();
        let centroid = model.centroid_map(index);
        let card = archetypes::render_profile_card(&label, &centroid, &stats, &registry, &thresholds)?;
        let text = card.render_text(&registry);
        let slug = label_slug(&label);
        std::fs::write(cards_dir.join(format!("{:02}_{slug}.txt", index + 1)), &text)?;

        let exemplar_row = matrix
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let da: f64 = a
                    .iter()
                    .zip(&model.centroids[index])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                let db: f64 = b
                    .iter()
                    .zip(&model.centroids[index])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                da.partial_cmp(&db).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();
        let exemplar_centroid: BTreeMap<String, f64> = dimensions
            .iter()
            .cloned()
            .zip(matrix[exemplar_row].iter().copied())
            .collect();
        let exemplar_card = archetypes::render_profile_card(
            &format!("{label} (exemplar)"),
            &exemplar_centroid,
            &stats,
            &registry,
            &thresholds,
        )?;
        let exemplar_text = exemplar_card.render_text(&registry);
        std::fs::write(
            cards_dir.join(format!("{:02}_{slug}_exemplar.txt", index + 1)),
            &exemplar_text,
        )?;

        entries.push(CardEntry {
            index,
            label,
            card,
            text,
            exemplar_post_id: fused[exemplar_row].post_id.clone(),
            exemplar_text,
        });
    }
    report::write_json(&out_path(config, files::CARDS_INDEX), &entries)?;
    write_manifest(
        config,
        Stage::Archetypes,
        &[files::FUSED_PROFILES, files::POPULATION_STATS],
    )
}

fn audit_conditions(config: &RunConfig) -> anyhow::Result<Vec<Condition>> {
    let cards: Vec<CardEntry> = read_json(&require(config, files::CARDS_INDEX, Stage::Archetypes)?)?;
    let mut conditions = vec![Condition::baseline()];
    for entry in &cards {
        conditions.push(Condition::archetype(entry.label.clone(), entry.text.clone()));
    }
    Ok(conditions)
}

fn stage_audit_gen(config: &RunConfig, providers: &ProviderSet) -> anyhow::Result<RunOutcome> {
    let questions = load_questions(config)?;
    let conditions = audit_conditions(config)?;
    let retry = retry_policy(config);

    let models: Vec<(String, &dyn CompletionProvider)> = providers
        .generation
        .iter()
        .map(|(id, p)| (id.clone(), p.as_ref() as &dyn CompletionProvider))
        .collect();
    let grid = audit::run_generation_grid(&questions, &conditions, &models, config.parallelism, retry)?;
    write_jsonl(&out_path(config, files::GENERATION_GRID), &grid.cells)?;

    if !grid.is_complete() {
        report::write_json(&out_path(config, files::GENERATION_HOLES), &grid.holes)?;
        eprintln!(
            "audit-gen: grid is partial ({} hole(s)); similarity analysis skipped",
            grid.holes.len()
        );
        write_manifest(config, Stage::AuditGen, &[files::CARDS_INDEX])?;
        return Ok(RunOutcome { partial: true });
    }

    let analysis =
        audit::pairwise_similarity(&grid, providers.embedding.as_ref(), config.parallelism, retry)?;
    let sensitivity = audit::sensitivity_report(&analysis)?;
    report::write_csv(
        &out_path(config, files::SENSITIVITY_MODELS),
        headers::SENSITIVITY_MODELS,
        &report::sensitivity_model_rows(&sensitivity),
    )?;
    report::write_csv(
        &out_path(config, files::SENSITIVITY_ARCHETYPES),
        headers::SENSITIVITY_ARCHETYPES,
        &report::sensitivity_archetype_rows(&sensitivity),
    )?;
    report::write_csv(
        &out_path(config, files::SENSITIVITY_PAIRS),
        headers::SENSITIVITY_PAIRS,
        &report::sensitivity_pair_rows(&sensitivity),
    )?;
    report::write_json(&out_path(config, files::SENSITIVITY_SUMMARY), &sensitivity)?;
    write_manifest(config, Stage::AuditGen, &[files::CARDS_INDEX])?;
    Ok(RunOutcome { partial: false })
}

fn stage_audit_reward(config: &RunConfig, providers: &ProviderSet) -> anyhow::Result<RunOutcome> {
    let questions = load_questions(config)?;
    let conditions = audit_conditions(config)?;
    let retry = retry_policy(config);

    // Reference responses are generated once (baseline, first generation
    // model) and cached so reward grids are rerunnable without regeneration.
    let reference_path = out_path(config, files::REFERENCE_RESPONSES);
    let references: BTreeMap<String, String> = if reference_path.exists() {
        read_jsonl::<ReferenceResponse>(&reference_path)?
            .into_iter()
            .map(|r| (r.question_id, r.response))
            .collect()
    } else {
        let (_, generator) = providers
            .generation
            .first()
            .ok_or_else(|| anyhow::anyhow!("no generation provider available for reference responses"))?;
        let results = map_indexed_parallel(config.parallelism, &questions, |_, question| {
            let request = CompletionRequest::new(question.text.clone())?;
            retry.run(|| generator.complete(&request))
        });
        let mut references = BTreeMap::new();
        let mut records = Vec::with_capacity(questions.len());
        for (question, result) in questions.iter().zip(results) {
            let response = result?;
            records.push(ReferenceResponse {
                question_id: question.id.clone(),
                response: response.clone(),
            });
            references.insert(question.id.clone(), response);
        }
        write_jsonl(&reference_path, &records)?;
        references
    };

    let reward_models: Vec<(String, &dyn RewardProvider)> = providers
        .reward
        .iter()
        .map(|(id, p)| (id.clone(), p.as_ref() as &dyn RewardProvider))
        .collect();
    let grid = audit::run_reward_grid(
        &questions,
        &references,
        &conditions,
        &reward_models,
        config.parallelism,
        retry,
    )?;
    write_jsonl(&out_path(config, files::REWARD_GRID), &grid.cells)?;

    if !grid.is_complete() {
        report::write_json(&out_path(config, files::REWARD_HOLES), &grid.holes)?;
        eprintln!(
            "audit-reward: grid is partial ({} hole(s)); invariance analysis skipped",
            grid.holes.len()
        );
        write_manifest(
            config,
            Stage::AuditReward,
            &[files::CARDS_INDEX, files::REFERENCE_RESPONSES],
        )?;
        return Ok(RunOutcome { partial: true });
    }

    let invariance = audit::invariance_report(&grid, &questions, config.paired_cohens_d)?;
    report::write_csv(
        &out_path(config, files::INVARIANCE_EFFECTS),
        headers::INVARIANCE_EFFECTS,
        &report::invariance_effect_rows(&invariance),
    )?;
    report::write_csv(
        &out_path(config, files::INVARIANCE_DATASETS),
        headers::INVARIANCE_DATASETS,
        &report::invariance_dataset_rows(&invariance),
    )?;
    report::write_csv(
        &out_path(config, files::INVARIANCE_DIRECTIONS),
        headers::INVARIANCE_DIRECTIONS,
        &report::invariance_direction_rows(&invariance),
    )?;
    report::write_json(&out_path(config, files::INVARIANCE_SUMMARY), &invariance)?;
    write_manifest(
        config,
        Stage::AuditReward,
        &[files::CARDS_INDEX, files::REFERENCE_RESPONSES],
    )?;
    Ok(RunOutcome { partial: false })
}

fn stage_report(config: &RunConfig) -> anyhow::Result<()> {
    let fused = load_fused(config)?;
    require(config, files::DECOMPOSITION, Stage::Decompose)?;
    let registry = load_registry(config)?;

    // Dimensions x contexts mean fused z.
    let dimensions = registry.dimension_names();
    let mut contexts: Vec<String> = fused.iter().map(|p| p.context_id.clone()).collect();
    contexts.sort();
    contexts.dedup();
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for profile in &fused {
        for dimension in &dimensions {
            cells
                .entry((dimension.clone(), profile.context_id.clone()))
                .or_default()
                .push(profile.z[dimension]);
        }
    }
    let matrix = report::mean_matrix(&dimensions, &contexts, &cells);
    std::fs::write(
        out_path(config, files::HEATMAP_SVG),
        report::emit_matrix(&matrix, report::MatrixFormat::SvgHeatmap)?,
    )?;
    std::fs::write(
        out_path(config, files::HEATMAP_CSV),
        report::emit_matrix(&matrix, report::MatrixFormat::Csv)?,
    )?;
    std::fs::write(
        out_path(config, files::HEATMAP_JSON),
        report::emit_matrix(&matrix, report::MatrixFormat::Json)?,
    )?;

    // Roll-up of every summary artifact present.
    let mut summary = serde_json::Map::new();
    for (key, name) in [
        ("corpus", files::CORPUS_MANIFEST),
        ("agreement", files::AGREEMENT_SUMMARY),
        ("mtmm", files::MTMM_SUMMARY),
        ("diversity", files::DIVERSITY),
        ("sensitivity", files::SENSITIVITY_SUMMARY),
        ("invariance", files::INVARIANCE_SUMMARY),
    ] {
        let path = out_path(config, name);
        if path.exists() {
            summary.insert(key.to_string(), read_json(&path)?);
        }
    }
    report::write_json(
        &out_path(config, files::REPORT_SUMMARY),
        &serde_json::Value::Object(summary),
    )?;
    write_manifest(config, Stage::Report, &[files::FUSED_PROFILES, files::DECOMPOSITION])
}

/// Execute one stage (or `all`). Returns whether any audit grid came back
/// partial.
pub fn run(stage: Stage, config: &RunConfig) -> anyhow::Result<RunOutcome> {
    config.validate().map_err(|e| anyhow::anyhow!("invalid configuration: {e}"))?;
    std::fs::create_dir_all(&config.out_dir)?;

    let stages: Vec<Stage> = match stage {
        Stage::All => Stage::ORDERED.to_vec(),
        single => vec![single],
    };

    // Providers are only constructed when a stage needs them, so mock-free
    // stages never require live credentials.
    let needs_providers = stages
        .iter()
        .any(|s| matches!(s, Stage::Extract | Stage::Assess | Stage::AuditGen | Stage::AuditReward));
    let providers = if needs_providers {
        Some(build_providers(config)?)
    } else {
        None
    };

    let mut outcome = RunOutcome::default();
    for stage in stages {
        let result = match stage {
            Stage::Ingest => stage_ingest(config).map(|_| RunOutcome::default()),
            Stage::Extract => {
                stage_extract(config, providers.as_ref().unwrap()).map(|_| RunOutcome::default())
            }
            Stage::Assess => {
                stage_assess(config, providers.as_ref().unwrap()).map(|_| RunOutcome::default())
            }
            Stage::Fuse => stage_fuse(config).map(|_| RunOutcome::default()),
            Stage::Decompose => stage_decompose(config).map(|_| RunOutcome::default()),
            Stage::Validate => stage_validate(config).map(|_| RunOutcome::default()),
            Stage::Archetypes => stage_archetypes(config).map(|_| RunOutcome::default()),
            Stage::AuditGen => stage_audit_gen(config, providers.as_ref().unwrap()),
            Stage::AuditReward => stage_audit_reward(config, providers.as_ref().unwrap()),
            Stage::Report => stage_report(config).map(|_| RunOutcome::default()),
            Stage::All => unreachable!("expanded above"),
        };
        let stage_outcome = result.map_err(|e| anyhow::anyhow!("stage '{}': {e}", stage.name()))?;
        outcome.partial |= stage_outcome.partial;
    }
    Ok(outcome)
}

/// Collect output files relative to the out dir, for determinism checks.
pub fn list_output_files(out_dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut stack = vec![out_dir.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path.strip_prefix(out_dir)?.to_path_buf());
            }
        }
    }
    files.sort();
    Ok(files)
}
