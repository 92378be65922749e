//! Generation state-sensitivity and reward-model state-invariance audits
//! over a question set x condition grid.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::providers::{
    map_indexed_parallel, CompletionProvider, CompletionRequest, EmbeddingProvider, RetryPolicy,
    RewardProvider,
};
use crate::psychometrics::{self, AnovaResult, TTest};

/// System prompt wrapped around a profile card for generation audits.
pub fn generation_system_prompt(card: &str) -> String {
    format!(
        "You are a person with the following characteristics: {card}. Respond authentically as this person. Do not reference the profile explicitly."
    )
}

/// Profile prefix prepended to reward-model inputs for archetype conditions.
pub fn reward_profile_prefix(card: &str) -> String {
    format!("The user has this psychological profile: {card}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionSource {
    Opinion,
    Dilemma,
}

impl std::fmt::Display for QuestionSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QuestionSource::Opinion => "opinion",
            QuestionSource::Dilemma => "dilemma",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub source: QuestionSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

fn parse_questions_jsonl(data: &str) -> Result<Vec<Question>> {
    let mut questions = Vec::new();
    for (idx, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if q.text.is_empty() {
            return Err(Error::MalformedRecord {
                line: idx + 1,
                message: "question text is empty".into(),
            });
        }
        questions.push(q);
    }
    Ok(questions)
}

/// The 50 bundled psychological dilemma scenarios, organized by category.
pub fn bundled_dilemma_questions() -> Vec<Question> {
    parse_questions_jsonl(include_str!("../assets/dilemma_questions.jsonl"))
        .expect("bundled dilemma fixture is valid")
}

/// Five bundled opinion questions for smoke tests; full opinion sets are
/// user-supplied.
pub fn bundled_opinion_examples() -> Vec<Question> {
    parse_questions_jsonl(include_str!("../assets/opinion_questions.jsonl"))
        .expect("bundled opinion fixture is valid")
}

/// Load questions from a JSONL string (`id`, `text`, `source`, optional
/// `category` per line).
pub fn questions_from_jsonl(data: &str) -> Result<Vec<Question>> {
    parse_questions_jsonl(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    Baseline,
    Archetype,
}

/// One prompting condition: the bare baseline or an archetype with its
/// profile card.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub kind: ConditionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub card: Option<String>,
}

impl Condition {
    pub fn baseline() -> Self {
        Condition {
            name: "baseline".into(),
            kind: ConditionKind::Baseline,
            card: None,
        }
    }

    pub fn archetype(name: impl Into<String>, card: impl Into<String>) -> Self {
        Condition {
            name: name.into(),
            kind: ConditionKind::Archetype,
            card: Some(card.into()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ConditionKind::Baseline if self.card.is_some() => {
                Err(Error::Precondition("baseline condition must not carry a card".into()))
            }
            ConditionKind::Archetype if self.card.is_none() => Err(Error::Precondition(format!(
                "archetype condition '{}' is missing its card",
                self.name
            ))),
            _ => Ok(()),
        }
    }
}

fn validate_conditions(conditions: &[Condition]) -> Result<()> {
    for condition in conditions {
        condition.validate()?;
    }
    let n_baseline = conditions
        .iter()
        .filter(|c| c.kind == ConditionKind::Baseline)
        .count();
    if n_baseline != 1 {
        return Err(Error::Precondition(format!(
            "conditions must include exactly one baseline, found {n_baseline}"
        )));
    }
    let names: BTreeSet<&str> = conditions.iter().map(|c| c.name.as_str()).collect();
    if names.len() != conditions.len() {
        return Err(Error::Precondition("condition names must be unique".into()));
    }
    Ok(())
}

/// A cell that could not be produced, with the provider error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridHole {
    pub model_id: String,
    pub question_id: String,
    pub condition: String,
    pub error: String,
}

/// Responses per (model, question, condition).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationGrid {
    pub model_ids: Vec<String>,
    pub condition_names: Vec<String>,
    pub question_ids: Vec<String>,
    /// Row order: model-major, then question, then condition.
    pub cells: Vec<GenerationCell>,
    pub holes: Vec<GridHole>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationCell {
    pub model_id: String,
    pub question_id: String,
    pub condition: String,
    pub response: String,
}

impl GenerationGrid {
    pub fn is_complete(&self) -> bool {
        self.holes.is_empty()
    }

    pub fn response(&self, model: &str, question: &str, condition: &str) -> Option<&str> {
        self.cells
            .iter()
            .find(|c| c.model_id == model && c.question_id == question && c.condition == condition)
            .map(|c| c.response.as_str())
    }
}

/// Prompt every (model, question, condition) cell. Archetype conditions wrap
/// the card in the generation system prompt; the baseline sends the bare
/// question. Provider failures after retries become holes, not errors.
pub fn run_generation_grid(
    questions: &[Question],
    conditions: &[Condition],
    models: &[(String, &dyn CompletionProvider)],
    parallelism: usize,
    retry: RetryPolicy,
) -> Result<GenerationGrid> {
    if questions.is_empty() {
        return Err(Error::Precondition("generation grid needs at least one question".into()));
    }
    if models.is_empty() {
        return Err(Error::Precondition("generation grid needs at least one model".into()));
    }
    validate_conditions(conditions)?;

    let mut tasks: Vec<(usize, usize, usize)> = Vec::new();
    for mi in 0..models.len() {
        for qi in 0..questions.len() {
            for ci in 0..conditions.len() {
                tasks.push((mi, qi, ci));
            }
        }
    }

    let results = map_indexed_parallel(parallelism, &tasks, |_, &(mi, qi, ci)| {
        let question = &questions[qi];
        let condition = &conditions[ci];
        let mut request = CompletionRequest::new(question.text.clone())?;
        if let Some(card) = &condition.card {
            request = request.with_system(generation_system_prompt(card));
        }
        retry.run(|| models[mi].1.complete(&request))
    });

    let mut cells = Vec::new();
    let mut holes = Vec::new();
    for (&(mi, qi, ci), result) in tasks.iter().zip(results) {
        match result {
            Ok(response) => cells.push(GenerationCell {
                model_id: models[mi].0.clone(),
                question_id: questions[qi].id.clone(),
                condition: conditions[ci].name.clone(),
                response,
            }),
            Err(e) => holes.push(GridHole {
                model_id: models[mi].0.clone(),
                question_id: questions[qi].id.clone(),
                condition: conditions[ci].name.clone(),
                error: e.to_string(),
            }),
        }
    }

    Ok(GenerationGrid {
        model_ids: models.iter().map(|(id, _)| id.clone()).collect(),
        condition_names: conditions.iter().map(|c| c.name.clone()).collect(),
        question_ids: questions.iter().map(|q| q.id.clone()).collect(),
        cells,
        holes,
    })
}

/// Symmetric condition-by-condition cosine matrix for one (model, question).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub model_id: String,
    pub question_id: String,
    pub values: Vec<Vec<f64>>,
}

/// All similarity matrices plus the condition order they index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityAnalysis {
    pub condition_names: Vec<String>,
    pub baseline: String,
    pub matrices: Vec<SimilarityMatrix>,
}

/// Embed every response and compute pairwise cosine similarity per
/// (model, question). Requires a complete grid.
pub fn pairwise_similarity(
    grid: &GenerationGrid,
    embedder: &dyn EmbeddingProvider,
    parallelism: usize,
    retry: RetryPolicy,
) -> Result<SimilarityAnalysis> {
    if !grid.is_complete() {
        return Err(Error::Precondition(format!(
            "similarity analysis needs a complete grid; {} hole(s) present",
            grid.holes.len()
        )));
    }

    let embeddings = map_indexed_parallel(parallelism, &grid.cells, |_, cell| {
        retry.run(|| embedder.embed(&cell.response))
    });
    let mut by_key = BTreeMap::new();
    for (cell, embedding) in grid.cells.iter().zip(embeddings) {
        by_key.insert(
            (cell.model_id.clone(), cell.question_id.clone(), cell.condition.clone()),
            embedding?,
        );
    }

    let n = grid.condition_names.len();
    let mut matrices = Vec::new();
    for model in &grid.model_ids {
        for question in &grid.question_ids {
            let vectors: Vec<_> = grid
                .condition_names
                .iter()
                .map(|c| &by_key[&(model.clone(), question.clone(), c.clone())])
                .collect();
            let mut values = vec![vec![0.0; n]; n];
            for i in 0..n {
                values[i][i] = 1.0;
                for j in (i + 1)..n {
                    let sim = vectors[i].cosine(vectors[j]);
                    values[i][j] = sim;
                    values[j][i] = sim;
                }
            }
            matrices.push(SimilarityMatrix {
                model_id: model.clone(),
                question_id: question.clone(),
                values,
            });
        }
    }

    let baseline = grid
        .condition_names
        .iter()
        .find(|c| c.as_str() == "baseline")
        .cloned()
        .unwrap_or_else(|| grid.condition_names[0].clone());

    Ok(SimilarityAnalysis {
        condition_names: grid.condition_names.clone(),
        baseline,
        matrices,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSensitivity {
    pub model_id: String,
    pub mean_similarity: f64,
    pub sd_similarity: f64,
    /// Mean (1 - similarity to baseline) across archetypes and questions.
    pub baseline_deviation_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchetypeDeviation {
    pub archetype: String,
    pub mean_deviation: f64,
    pub sd_deviation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionPairStat {
    pub condition_a: String,
    pub condition_b: String,
    pub mean_similarity: f64,
    pub sd_similarity: f64,
}

/// Generation-sensitivity findings across models, archetypes, and condition
/// pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub per_model: Vec<ModelSensitivity>,
    /// Baseline deviation pooled over models (labelled separately from the
    /// per-model figures to avoid conflating the two).
    pub pooled_baseline_deviation: f64,
    pub per_archetype_deviation: Vec<ArchetypeDeviation>,
    /// Condition pairs ranked ascending by mean similarity (most
    /// differentiated first).
    pub condition_pairs: Vec<ConditionPairStat>,
    /// One-sample t of all pairwise similarities against 1.0; `None` when
    /// every similarity is identical (zero sd).
    pub t_vs_identity: Option<TTest>,
    pub model_anova: Option<AnovaResult>,
    pub model_anova_notice: Option<String>,
    pub archetype_anova: Option<AnovaResult>,
    pub archetype_anova_notice: Option<String>,
    /// Mean pairwise Pearson correlation between models' per-question mean
    /// similarity vectors.
    pub cross_model_consistency: Option<f64>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn sensitivity_report(analysis: &SimilarityAnalysis) -> Result<SensitivityReport> {
    if analysis.matrices.is_empty() {
        return Err(Error::Precondition("no similarity matrices to report on".into()));
    }
    let conditions = &analysis.condition_names;
    let n = conditions.len();
    let baseline_idx = conditions
        .iter()
        .position(|c| *c == analysis.baseline)
        .ok_or_else(|| Error::Precondition("baseline condition missing from analysis".into()))?;
    let archetype_indices: Vec<usize> = (0..n).filter(|&i| i != baseline_idx).collect();

    let mut model_ids: Vec<String> = analysis.matrices.iter().map(|m| m.model_id.clone()).collect();
    model_ids.sort();
    model_ids.dedup();

    // Pooled pairwise similarities per model, and per-question means for the
    // cross-model consistency correlation.
    let mut sims_by_model: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut all_sims: Vec<f64> = Vec::new();
    let mut question_means: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    let mut deviations_by_archetype: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut deviations_by_model: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut pair_sims: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();

    for matrix in &analysis.matrices {
        let mut question_total = 0.0;
        let mut question_count = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let sim = matrix.values[i][j];
                sims_by_model.entry(matrix.model_id.as_str()).or_default().push(sim);
                all_sims.push(sim);
                pair_sims.entry((i, j)).or_default().push(sim);
                question_total += sim;
                question_count += 1.0;
            }
        }
        question_means
            .entry(matrix.model_id.as_str())
            .or_default()
            .insert(matrix.question_id.as_str(), question_total / question_count);

        for &ai in &archetype_indices {
            let deviation = 1.0 - matrix.values[baseline_idx][ai];
            deviations_by_archetype
                .entry(conditions[ai].as_str())
                .or_default()
                .push(deviation);
            deviations_by_model
                .entry(matrix.model_id.as_str())
                .or_default()
                .push(deviation);
        }
    }

    let per_model: Vec<ModelSensitivity> = model_ids
        .iter()
        .map(|model| {
            let sims = &sims_by_model[model.as_str()];
            let (mean, sd) = mean_sd(sims);
            let (dev_mean, _) = mean_sd(&deviations_by_model[model.as_str()]);
            ModelSensitivity {
                model_id: model.clone(),
                mean_similarity: mean,
                sd_similarity: sd,
                baseline_deviation_mean: dev_mean,
            }
        })
        .collect();

    let pooled_deviations: Vec<f64> = deviations_by_archetype.values().flatten().copied().collect();
    let (pooled_baseline_deviation, _) = mean_sd(&pooled_deviations);

    let per_archetype_deviation: Vec<ArchetypeDeviation> = archetype_indices
        .iter()
        .map(|&ai| {
            let devs = &deviations_by_archetype[conditions[ai].as_str()];
            let (mean, sd) = mean_sd(devs);
            ArchetypeDeviation {
                archetype: conditions[ai].clone(),
                mean_deviation: mean,
                sd_deviation: sd,
            }
        })
        .collect();

    let mut condition_pairs: Vec<ConditionPairStat> = pair_sims
        .iter()
        .map(|(&(i, j), sims)| {
            let (mean, sd) = mean_sd(sims);
            ConditionPairStat {
                condition_a: conditions[i].clone(),
                condition_b: conditions[j].clone(),
                mean_similarity: mean,
                sd_similarity: sd,
            }
        })
        .collect();
    condition_pairs.sort_by(|a, b| {
        a.mean_similarity
            .partial_cmp(&b.mean_similarity)
            .unwrap()
            .then(a.condition_a.cmp(&b.condition_a))
            .then(a.condition_b.cmp(&b.condition_b))
    });

    let t_vs_identity = psychometrics::one_sample_t(&all_sims, 1.0)?;

    let (model_anova, model_anova_notice) = if model_ids.len() < 2 {
        (None, Some("model ANOVA skipped: fewer than 2 models".to_string()))
    } else {
        let groups: Vec<Vec<f64>> = model_ids
            .iter()
            .map(|m| sims_by_model[m.as_str()].clone())
            .collect();
        (Some(psychometrics::oneway_anova(&groups)?), None)
    };

    let (archetype_anova, archetype_anova_notice) = if archetype_indices.len() < 2 {
        (None, Some("archetype ANOVA skipped: fewer than 2 archetypes".to_string()))
    } else {
        let groups: Vec<Vec<f64>> = archetype_indices
            .iter()
            .map(|&ai| deviations_by_archetype[conditions[ai].as_str()].clone())
            .collect();
        if groups.iter().any(|g| g.len() < 2) {
            (None, Some("archetype ANOVA skipped: too few observations per archetype".to_string()))
        } else {
            (Some(psychometrics::oneway_anova(&groups)?), None)
        }
    };

    let cross_model_consistency = if model_ids.len() < 2 {
        None
    } else {
        let mut correlations = Vec::new();
        for a in 0..model_ids.len() {
            for b in (a + 1)..model_ids.len() {
                let ma = &question_means[model_ids[a].as_str()];
                let mb = &question_means[model_ids[b].as_str()];
                let xs: Vec<f64> = ma.values().copied().collect();
                let ys: Vec<f64> = ma.keys().map(|q| mb[q]).collect();
                if xs.len() >= 2 {
                    if let Some(r) = psychometrics::pearson(&xs, &ys)? {
                        correlations.push(r);
                    }
                }
            }
        }
        if correlations.is_empty() {
            None
        } else {
            Some(correlations.iter().sum::<f64>() / correlations.len() as f64)
        }
    };

    Ok(SensitivityReport {
        per_model,
        pooled_baseline_deviation,
        per_archetype_deviation,
        condition_pairs,
        t_vs_identity,
        model_anova,
        model_anova_notice,
        archetype_anova,
        archetype_anova_notice,
        cross_model_consistency,
    })
}

/// Reward scores per (reward model, question, condition), all against one
/// fixed reference response per question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardGrid {
    pub rm_ids: Vec<String>,
    pub condition_names: Vec<String>,
    pub question_ids: Vec<String>,
    pub reference_responses: BTreeMap<String, String>,
    pub cells: Vec<RewardCell>,
    pub holes: Vec<GridHole>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardCell {
    pub rm_id: String,
    pub question_id: String,
    pub condition: String,
    pub value: f64,
}

impl RewardGrid {
    pub fn is_complete(&self) -> bool {
        self.holes.is_empty()
    }
}

/// Score every (reward model, question, condition) cell. The response text
/// is the fixed per-question reference; archetype conditions add the profile
/// prefix.
pub fn run_reward_grid(
    questions: &[Question],
    reference_responses: &BTreeMap<String, String>,
    conditions: &[Condition],
    reward_models: &[(String, &dyn RewardProvider)],
    parallelism: usize,
    retry: RetryPolicy,
) -> Result<RewardGrid> {
    if questions.is_empty() {
        return Err(Error::Precondition("reward grid needs at least one question".into()));
    }
    if reward_models.is_empty() {
        return Err(Error::Precondition("reward grid needs at least one reward model".into()));
    }
    validate_conditions(conditions)?;
    for question in questions {
        if !reference_responses.contains_key(&question.id) {
            return Err(Error::Precondition(format!(
                "no reference response for question '{}'",
                question.id
            )));
        }
    }

    let mut tasks: Vec<(usize, usize, usize)> = Vec::new();
    for ri in 0..reward_models.len() {
        for qi in 0..questions.len() {
            for ci in 0..conditions.len() {
                tasks.push((ri, qi, ci));
            }
        }
    }

    let results = map_indexed_parallel(parallelism, &tasks, |_, &(ri, qi, ci)| {
        let question = &questions[qi];
        let response = &reference_responses[&question.id];
        let prefix = conditions[ci].card.as_deref().map(reward_profile_prefix);
        retry.run(|| reward_models[ri].1.score(&question.text, response, prefix.as_deref()))
    });

    let mut cells = Vec::new();
    let mut holes = Vec::new();
    for (&(ri, qi, ci), result) in tasks.iter().zip(results) {
        match result {
            Ok(score) => cells.push(RewardCell {
                rm_id: reward_models[ri].0.clone(),
                question_id: questions[qi].id.clone(),
                condition: conditions[ci].name.clone(),
                value: score.value,
            }),
            Err(e) => holes.push(GridHole {
                model_id: reward_models[ri].0.clone(),
                question_id: questions[qi].id.clone(),
                condition: conditions[ci].name.clone(),
                error: e.to_string(),
            }),
        }
    }

    Ok(RewardGrid {
        rm_ids: reward_models.iter().map(|(id, _)| id.clone()).collect(),
        condition_names: conditions.iter().map(|c| c.name.clone()).collect(),
        question_ids: questions.iter().map(|q| q.id.clone()).collect(),
        reference_responses: reference_responses.clone(),
        cells,
        holes,
    })
}

/// Direction of a reward model's profile bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionClass {
    RewardsProfiles,
    PenalizesProfiles,
    Invariant,
    Mixed,
}

impl std::fmt::Display for DirectionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DirectionClass::RewardsProfiles => "rewards profiles",
            DirectionClass::PenalizesProfiles => "penalizes profiles",
            DirectionClass::Invariant => "invariant",
            DirectionClass::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmArchetypeEffect {
    pub rm_id: String,
    pub archetype: String,
    pub cohens_d: Option<f64>,
    pub n_treatment: usize,
    pub n_baseline: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetAnova {
    pub rm_id: String,
    pub dataset: QuestionSource,
    pub n_questions: usize,
    pub anova: AnovaResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DisagreementFlag {
    pub archetype: String,
    pub rm_positive: String,
    pub d_positive: f64,
    pub rm_negative: String,
    pub d_negative: f64,
}

/// Reward-model state-invariance findings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub per_rm_archetype: Vec<RmArchetypeEffect>,
    pub per_rm_direction: Vec<(String, DirectionClass)>,
    pub per_rm_dataset_anova: Vec<DatasetAnova>,
    pub disagreements: Vec<DisagreementFlag>,
    /// "pooled" (two-sample, default) or "paired" (difference-score) d.
    pub d_variant: String,
}

/// Analyze a reward grid for state-invariance violations. `questions` maps
/// ids to their source dataset; `paired` switches Cohen's d to the
/// paired-difference variant.
pub fn invariance_report(
    grid: &RewardGrid,
    questions: &[Question],
    paired: bool,
) -> Result<InvarianceReport> {
    let baseline = grid
        .condition_names
        .iter()
        .find(|c| c.as_str() == "baseline")
        .ok_or_else(|| Error::Precondition("reward grid has no baseline condition".into()))?
        .clone();
    let archetypes: Vec<&String> = grid
        .condition_names
        .iter()
        .filter(|c| **c != baseline)
        .collect();

    let source_of: BTreeMap<&str, QuestionSource> = questions
        .iter()
        .map(|q| (q.id.as_str(), q.source))
        .collect();

    // (rm, condition) -> question -> score, keyed for deterministic order.
    let mut scores: BTreeMap<(&str, &str), BTreeMap<&str, f64>> = BTreeMap::new();
    for cell in &grid.cells {
        scores
            .entry((cell.rm_id.as_str(), cell.condition.as_str()))
            .or_default()
            .insert(cell.question_id.as_str(), cell.value);
    }

    let aligned = |rm: &str, condition: &str| -> Vec<f64> {
        let map = &scores[&(rm, condition)];
        grid.question_ids.iter().map(|q| map[q.as_str()]).collect()
    };

    let mut per_rm_archetype = Vec::new();
    let mut per_rm_direction = Vec::new();
    let mut d_by_archetype: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();

    for rm in &grid.rm_ids {
        let baseline_scores = aligned(rm, &baseline);
        let mut ds: Vec<Option<f64>> = Vec::new();
        for archetype in &archetypes {
            let treatment = aligned(rm, archetype);
            let d = if paired {
                psychometrics::cohens_d_paired(&treatment, &baseline_scores)?
            } else {
                psychometrics::cohens_d(&treatment, &baseline_scores)?
            };
            per_rm_archetype.push(RmArchetypeEffect {
                rm_id: rm.clone(),
                archetype: (*archetype).clone(),
                cohens_d: d,
                n_treatment: treatment.len(),
                n_baseline: baseline_scores.len(),
            });
            if let Some(d) = d {
                d_by_archetype.entry(archetype.as_str()).or_default().push((rm.as_str(), d));
            }
            ds.push(d);
        }

        let defined: Vec<f64> = ds.iter().flatten().copied().collect();
        let direction = if defined.is_empty() || defined.iter().all(|&d| d == 0.0) {
            DirectionClass::Invariant
        } else if defined.iter().all(|&d| d > 0.0) {
            DirectionClass::RewardsProfiles
        } else if defined.iter().all(|&d| d < 0.0) {
            DirectionClass::PenalizesProfiles
        } else {
            DirectionClass::Mixed
        };
        per_rm_direction.push((rm.clone(), direction));
    }

    // Per (rm, source dataset): one-way ANOVA across the full condition set.
    let mut per_rm_dataset_anova = Vec::new();
    for rm in &grid.rm_ids {
        for dataset in [QuestionSource::Opinion, QuestionSource::Dilemma] {
            let question_ids: Vec<&String> = grid
                .question_ids
                .iter()
                .filter(|q| source_of.get(q.as_str()) == Some(&dataset))
                .collect();
            if question_ids.is_empty() {
                continue;
            }
            let groups: Vec<Vec<f64>> = grid
                .condition_names
                .iter()
                .map(|condition| {
                    let map = &scores[&(rm.as_str(), condition.as_str())];
                    question_ids.iter().map(|q| map[q.as_str()]).collect()
                })
                .collect();
            if groups.iter().any(|g| g.is_empty()) || groups.len() < 2 {
                continue;
            }
            per_rm_dataset_anova.push(DatasetAnova {
                rm_id: rm.clone(),
                dataset,
                n_questions: question_ids.len(),
                anova: psychometrics::oneway_anova(&groups)?,
            });
        }
    }

    // Opposite-sign effects on the same archetype across reward models.
    let mut disagreements = Vec::new();
    for (archetype, entries) in &d_by_archetype {
        for i in 0..entries.len() {
            for j in (i + 1)..entries.len() {
                let (rm_a, d_a) = entries[i];
                let (rm_b, d_b) = entries[j];
                if d_a > 0.0 && d_b < 0.0 {
                    disagreements.push(DisagreementFlag {
                        archetype: archetype.to_string(),
                        rm_positive: rm_a.to_string(),
                        d_positive: d_a,
                        rm_negative: rm_b.to_string(),
                        d_negative: d_b,
                    });
                } else if d_b > 0.0 && d_a < 0.0 {
                    disagreements.push(DisagreementFlag {
                        archetype: archetype.to_string(),
                        rm_positive: rm_b.to_string(),
                        d_positive: d_b,
                        rm_negative: rm_a.to_string(),
                        d_negative: d_a,
                    });
                }
            }
        }
    }

    Ok(InvarianceReport {
        per_rm_archetype,
        per_rm_direction,
        per_rm_dataset_anova,
        disagreements,
        d_variant: if paired { "paired" } else { "pooled" }.to_string(),
    })
}
