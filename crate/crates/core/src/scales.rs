//! Stage 2 of the extraction pipeline: the scale registry (four frameworks,
//! 26 dimensions, 171 items in the shipped default), LLM-based item
//! assessment, and subscale scoring with reverse-keyed items.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::FeatureVector;
use crate::providers::mock::SCHEMA_ITEM_SCORES;
use crate::providers::{complete_validated, CompletionProvider, CompletionRequest, RetryPolicy};
use crate::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FrameworkName {
    BFI,
    SVS,
    SDT,
    DOSPERT,
}

impl std::fmt::Display for FrameworkName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FrameworkName::BFI => "BFI",
            FrameworkName::SVS => "SVS",
            FrameworkName::SDT => "SDT",
            FrameworkName::DOSPERT => "DOSPERT",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleItem {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub reverse_scored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleDimension {
    pub name: String,
    pub items: Vec<ScaleItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Framework {
    pub name: FrameworkName,
    pub response_min: f64,
    pub response_max: f64,
    pub dimensions: Vec<ScaleDimension>,
}

impl Framework {
    pub fn midpoint(&self) -> f64 {
        (self.response_min + self.response_max) / 2.0
    }
}

/// The full instrument set used for assessment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRegistry {
    pub frameworks: Vec<Framework>,
}

impl ScaleRegistry {
    pub fn from_json_str(json: &str) -> Result<Self> {
        let registry: ScaleRegistry =
            serde_json::from_str(json).map_err(|e| Error::Config(format!("invalid registry file: {e}")))?;
        registry.validate()?;
        Ok(registry)
    }

    /// The shipped default registry: BFI-44 (with the published reverse
    /// keys), 54 value items, 33 motivation/needs items, DOSPERT-40.
    /// Response ranges follow the instruments' original formats
    /// (BFI 1-5, SVS -1-7, SDT 1-7, DOSPERT 1-5).
    pub fn bundled_default() -> Self {
        Self::from_json_str(include_str!("../assets/default_registry.json"))
            .expect("bundled registry is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let mut item_ids = BTreeSet::new();
        let mut dimension_names = BTreeSet::new();
        for framework in &self.frameworks {
            if framework.response_min >= framework.response_max {
                return Err(Error::Config(format!(
                    "framework {}: response_min must be < response_max",
                    framework.name
                )));
            }
            for dimension in &framework.dimensions {
                if !dimension_names.insert(dimension.name.clone()) {
                    return Err(Error::Config(format!(
                        "dimension '{}' appears in more than one framework",
                        dimension.name
                    )));
                }
                if dimension.items.is_empty() {
                    return Err(Error::Config(format!("dimension '{}' has no items", dimension.name)));
                }
                for item in &dimension.items {
                    if !item_ids.insert(item.id.clone()) {
                        return Err(Error::Config(format!("duplicate item id '{}'", item.id)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn total_dimensions(&self) -> usize {
        self.frameworks.iter().map(|f| f.dimensions.len()).sum()
    }

    pub fn total_items(&self) -> usize {
        self.frameworks
            .iter()
            .flat_map(|f| &f.dimensions)
            .map(|d| d.items.len())
            .sum()
    }

    /// Dimension names in registry (framework, then declaration) order; this
    /// is the canonical column order for profile matrices.
    pub fn dimension_names(&self) -> Vec<String> {
        self.frameworks
            .iter()
            .flat_map(|f| f.dimensions.iter().map(|d| d.name.clone()))
            .collect()
    }

    pub fn framework_of(&self, dimension: &str) -> Option<&Framework> {
        self.frameworks
            .iter()
            .find(|f| f.dimensions.iter().any(|d| d.name == dimension))
    }

    pub fn framework(&self, name: FrameworkName) -> Option<&Framework> {
        self.frameworks.iter().find(|f| f.name == name)
    }

    /// Override a framework's response range (e.g. to run DOSPERT on 1-7
    /// instead of the default 1-5).
    pub fn set_response_range(&mut self, name: FrameworkName, min: f64, max: f64) -> Result<()> {
        if min >= max {
            return Err(Error::Config("response_min must be < response_max".into()));
        }
        let framework = self
            .frameworks
            .iter_mut()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::Config(format!("framework {name} not in registry")))?;
        framework.response_min = min;
        framework.response_max = max;
        Ok(())
    }
}

/// Item-level responses from one assessment call, plus any clamp warnings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemAssessment {
    pub method: Method,
    pub scores: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

/// Subscale means in framework-native units; one entry per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawProfile {
    pub method: Method,
    pub scores: BTreeMap<String, f64>,
}

/// Preamble of the scale-assessment prompt; the feature lines and item list
/// are appended per call.
pub const ASSESSMENT_PROMPT_PREAMBLE: &str = r#"Task: You are a psychological researcher. Based on the behavioral analysis below, respond to validated psychological scales AS IF YOU WERE this specific user. Use the behavioral patterns and text evidence to inform your responses.

Requirements: (1) Score ALL items with numeric values; (2) Use each item's stated scale; (3) Apply reverse scoring where indicated; (4) Ground responses in the behavioral analysis evidence; (5) Output valid JSON with a top-level "scale_responses" object mapping every item id to its numeric response.
"#;

/// Build the full assessment prompt for a feature vector against a registry.
/// Each item is listed as `[id] (Dimension; scale MIN to MAX[; reverse-scored]) text`.
pub fn assessment_prompt(features: &FeatureVector, registry: &ScaleRegistry) -> String {
    let mut prompt = String::from(ASSESSMENT_PROMPT_PREAMBLE);
    prompt.push_str("\nBehavioral analysis (");
    prompt.push_str(features.method.as_str());
    prompt.push_str(" features):\n");
    prompt.push_str(&features.render_lines());
    prompt.push_str("\n\nItems:\n");
    for framework in &registry.frameworks {
        for dimension in &framework.dimensions {
            for item in &dimension.items {
                let reverse = if item.reverse_scored { "; reverse-scored" } else { "" };
                prompt.push_str(&format!(
                    "[{}] ({}; scale {} to {}{reverse}) {}\n",
                    item.id, dimension.name, framework.response_min, framework.response_max, item.text
                ));
            }
        }
    }
    prompt
}

fn numeric_value(value: &serde_json::Value) -> Option<f64> {
    match value {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
}

/// Ask the provider to respond to every registry item conditioned on the
/// feature vector. Responses outside the framework range are clamped with a
/// warning; a missing or non-numeric item (after one repair re-prompt) is an
/// assessment error naming the item.
pub fn assess_items(
    features: &FeatureVector,
    registry: &ScaleRegistry,
    provider: &dyn CompletionProvider,
    retry: RetryPolicy,
) -> Result<ItemAssessment> {
    if features.features.is_empty() {
        return Err(Error::Precondition("feature vector is empty".into()));
    }

    let request = CompletionRequest::new(assessment_prompt(features, registry))?
        .with_schema(SCHEMA_ITEM_SCORES);

    let parse = |raw: &str| -> std::result::Result<BTreeMap<String, f64>, String> {
        let doc: serde_json::Value = serde_json::from_str(raw).map_err(|e| e.to_string())?;
        let responses = doc
            .get("scale_responses")
            .and_then(|v| v.as_object())
            .ok_or_else(|| "missing 'scale_responses' object".to_string())?;
        let mut scores = BTreeMap::new();
        for framework in &registry.frameworks {
            for dimension in &framework.dimensions {
                for item in &dimension.items {
                    let value = responses
                        .get(&item.id)
                        .ok_or_else(|| format!("item '{}' missing from scale_responses", item.id))?;
                    let value = numeric_value(value)
                        .ok_or_else(|| format!("item '{}' has non-numeric response {value}", item.id))?;
                    scores.insert(item.id.clone(), value);
                }
            }
        }
        Ok(scores)
    };

    let raw_scores = complete_validated(provider, &request, retry, parse).map_err(|e| match e {
        Error::Extraction(message) => {
            // Surface the offending item when the parse error names one.
            let item = message
                .split('\'')
                .nth(1)
                .unwrap_or("unknown")
                .to_string();
            Error::Assessment { item, message }
        }
        other => other,
    })?;

    let mut scores = BTreeMap::new();
    let mut warnings = Vec::new();
    for framework in &registry.frameworks {
        for dimension in &framework.dimensions {
            for item in &dimension.items {
                let raw = raw_scores[&item.id];
                let clamped = raw.clamp(framework.response_min, framework.response_max);
                if clamped != raw {
                    warnings.push(format!(
                        "item '{}': response {raw} outside [{}, {}], clamped to {clamped}",
                        item.id, framework.response_min, framework.response_max
                    ));
                }
                scores.insert(item.id.clone(), clamped);
            }
        }
    }

    Ok(ItemAssessment {
        method: features.method,
        scores,
        warnings,
    })
}

/// Reverse-key a response within [min, max]: r' = min + max - r.
pub fn reverse_score(value: f64, min: f64, max: f64) -> f64 {
    min + max - value
}

/// Compute subscale means from item scores, applying reverse keys first.
pub fn score_subscales(assessment: &ItemAssessment, registry: &ScaleRegistry) -> Result<RawProfile> {
    let mut scores = BTreeMap::new();
    for framework in &registry.frameworks {
        for dimension in &framework.dimensions {
            let mut sum = 0.0;
            for item in &dimension.items {
                let raw = *assessment.scores.get(&item.id).ok_or_else(|| {
                    Error::Scoring(format!(
                        "item '{}' (dimension '{}') missing from item scores",
                        item.id, dimension.name
                    ))
                })?;
                sum += if item.reverse_scored {
                    reverse_score(raw, framework.response_min, framework.response_max)
                } else {
                    raw
                };
            }
            scores.insert(dimension.name.clone(), sum / dimension.items.len() as f64);
        }
    }
    Ok(RawProfile {
        method: assessment.method,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::MockCompletionProvider;

    /// Per-dimension item counts of the shipped default registry.
    pub const EXPECTED_DIMENSION_ITEMS: [(&str, usize); 26] = [
        ("Extraversion", 8),
        ("Agreeableness", 9),
        ("Conscientiousness", 9),
        ("Neuroticism", 8),
        ("Openness", 10),
        ("Power", 5),
        ("Achievement", 6),
        ("Hedonism", 3),
        ("Stimulation", 3),
        ("Self-Direction", 6),
        ("Universalism", 9),
        ("Benevolence", 8),
        ("Tradition", 5),
        ("Conformity", 4),
        ("Security", 5),
        ("Intrinsic Motivation", 9),
        ("Extrinsic Motivation", 9),
        ("Competence", 5),
        ("Autonomy", 5),
        ("Relatedness", 5),
        ("Investment", 4),
        ("Gambling", 4),
        ("Health/Safety", 8),
        ("Recreational", 8),
        ("Ethical", 8),
        ("Social", 8),
    ];

    fn midpoint_assessment(registry: &ScaleRegistry) -> ItemAssessment {
        let mut scores = BTreeMap::new();
        for framework in &registry.frameworks {
            for dimension in &framework.dimensions {
                for item in &dimension.items {
                    scores.insert(item.id.clone(), framework.midpoint());
                }
            }
        }
        ItemAssessment {
            method: Method::Lex,
            scores,
            warnings: vec![],
        }
    }

    #[test]
    fn registry_integrity_matches_published_counts() {
        let registry = ScaleRegistry::bundled_default();
        registry.validate().unwrap();
        assert_eq!(registry.total_dimensions(), 26);
        assert_eq!(registry.total_items(), 171);
        let names = registry.dimension_names();
        for (name, count) in EXPECTED_DIMENSION_ITEMS {
            let framework = registry.framework_of(name).unwrap_or_else(|| panic!("missing {name}"));
            let dim = framework.dimensions.iter().find(|d| d.name == name).unwrap();
            assert_eq!(dim.items.len(), count, "item count for {name}");
        }
        assert_eq!(names.len(), 26);
    }

    #[test]
    fn registry_ranges_follow_original_formats() {
        let registry = ScaleRegistry::bundled_default();
        let range = |n| {
            let f = registry.framework(n).unwrap();
            (f.response_min, f.response_max)
        };
        assert_eq!(range(FrameworkName::BFI), (1.0, 5.0));
        assert_eq!(range(FrameworkName::SVS), (-1.0, 7.0));
        assert_eq!(range(FrameworkName::SDT), (1.0, 7.0));
        assert_eq!(range(FrameworkName::DOSPERT), (1.0, 5.0));
    }

    #[test]
    fn dospert_range_can_be_switched_to_1_7() {
        let mut registry = ScaleRegistry::bundled_default();
        registry.set_response_range(FrameworkName::DOSPERT, 1.0, 7.0).unwrap();
        let f = registry.framework(FrameworkName::DOSPERT).unwrap();
        assert_eq!((f.response_min, f.response_max), (1.0, 7.0));
    }

    #[test]
    fn bfi_reversal_counts_match_published_key() {
        let registry = ScaleRegistry::bundled_default();
        let bfi = registry.framework(FrameworkName::BFI).unwrap();
        let reversed: BTreeMap<&str, usize> = bfi
            .dimensions
            .iter()
            .map(|d| (d.name.as_str(), d.items.iter().filter(|i| i.reverse_scored).count()))
            .collect();
        assert_eq!(reversed["Extraversion"], 3);
        assert_eq!(reversed["Agreeableness"], 4);
        assert_eq!(reversed["Conscientiousness"], 4);
        assert_eq!(reversed["Neuroticism"], 3);
        assert_eq!(reversed["Openness"], 2);
    }

    #[test]
    fn reverse_score_example_and_involution() {
        assert_eq!(reverse_score(2.0, 1.0, 5.0), 4.0);
        for raw in [1.0, 2.5, 3.0, 4.9] {
            assert_eq!(reverse_score(reverse_score(raw, 1.0, 5.0), 1.0, 5.0), raw);
        }
    }

    #[test]
    fn midpoint_is_a_fixed_point_of_scoring() {
        let registry = ScaleRegistry::bundled_default();
        let assessment = midpoint_assessment(&registry);
        let profile = score_subscales(&assessment, &registry).unwrap();
        for framework in &registry.frameworks {
            for dimension in &framework.dimensions {
                let score = profile.scores[&dimension.name];
                assert!(
                    (score - framework.midpoint()).abs() < 1e-12,
                    "{} should sit at the midpoint, got {score}",
                    dimension.name
                );
            }
        }
    }

    #[test]
    fn uniform_fives_average_to_five_without_reversals() {
        // Fixture framework: one dimension, eight non-reversed items.
        let registry = ScaleRegistry {
            frameworks: vec![Framework {
                name: FrameworkName::BFI,
                response_min: 1.0,
                response_max: 5.0,
                dimensions: vec![ScaleDimension {
                    name: "Extraversion".into(),
                    items: (1..=8)
                        .map(|i| ScaleItem {
                            id: format!("e{i}"),
                            text: format!("item {i}"),
                            reverse_scored: false,
                        })
                        .collect(),
                }],
            }],
        };
        let assessment = ItemAssessment {
            method: Method::Sem,
            scores: (1..=8).map(|i| (format!("e{i}"), 5.0)).collect(),
            warnings: vec![],
        };
        let profile = score_subscales(&assessment, &registry).unwrap();
        assert_eq!(profile.scores["Extraversion"], 5.0);
    }

    #[test]
    fn missing_item_is_a_scoring_error() {
        let registry = ScaleRegistry::bundled_default();
        let mut assessment = midpoint_assessment(&registry);
        assessment.scores.remove("bfi_1");
        let err = score_subscales(&assessment, &registry).unwrap_err();
        assert!(matches!(err, Error::Scoring(_)));
    }

    fn unit_features() -> FeatureVector {
        FeatureVector {
            method: Method::Lex,
            features: [("demo.positive_affect".to_string(), 0.25)].into_iter().collect(),
        }
    }

    #[test]
    fn constant_midpoint_mock_assessment() {
        let registry = ScaleRegistry::bundled_default();
        let mut responses = serde_json::Map::new();
        for framework in &registry.frameworks {
            for dim in &framework.dimensions {
                for item in &dim.items {
                    responses.insert(item.id.clone(), serde_json::json!(framework.midpoint()));
                }
            }
        }
        let body = serde_json::json!({ "scale_responses": responses }).to_string();
        let provider = MockCompletionProvider::new("mock", 1).with_canned_response(SCHEMA_ITEM_SCORES, body);
        let assessment =
            assess_items(&unit_features(), &registry, &provider, RetryPolicy::immediate()).unwrap();
        assert!(assessment.warnings.is_empty());
        assert!(assessment
            .scores
            .iter()
            .filter(|(id, _)| id.starts_with("bfi_"))
            .all(|(_, &v)| v == 3.0));
    }

    #[test]
    fn out_of_range_response_is_clamped_with_warning() {
        let registry = ScaleRegistry::bundled_default();
        let mut responses = serde_json::Map::new();
        for framework in &registry.frameworks {
            for dim in &framework.dimensions {
                for item in &dim.items {
                    responses.insert(item.id.clone(), serde_json::json!(framework.midpoint()));
                }
            }
        }
        responses.insert("bfi_1".into(), serde_json::json!(7.0));
        let body = serde_json::json!({ "scale_responses": responses }).to_string();
        let provider = MockCompletionProvider::new("mock", 1).with_canned_response(SCHEMA_ITEM_SCORES, body);
        let assessment =
            assess_items(&unit_features(), &registry, &provider, RetryPolicy::immediate()).unwrap();
        assert_eq!(assessment.scores["bfi_1"], 5.0);
        assert_eq!(assessment.warnings.len(), 1);
        assert!(assessment.warnings[0].contains("bfi_1"));
    }

    #[test]
    fn non_numeric_item_is_an_assessment_error_naming_it() {
        let registry = ScaleRegistry::bundled_default();
        let mut responses = serde_json::Map::new();
        for framework in &registry.frameworks {
            for dim in &framework.dimensions {
                for item in &dim.items {
                    responses.insert(item.id.clone(), serde_json::json!(framework.midpoint()));
                }
            }
        }
        responses.insert("bfi_9".into(), serde_json::json!("high"));
        let body = serde_json::json!({ "scale_responses": responses }).to_string();
        let provider = MockCompletionProvider::new("mock", 1).with_canned_response(SCHEMA_ITEM_SCORES, body);
        let err =
            assess_items(&unit_features(), &registry, &provider, RetryPolicy::immediate()).unwrap_err();
        match err {
            Error::Assessment { item, .. } => assert_eq!(item, "bfi_9"),
            other => panic!("expected assessment error, got {other:?}"),
        }
    }

    #[test]
    fn seeded_mock_assessment_is_in_range_and_deterministic() {
        let registry = ScaleRegistry::bundled_default();
        let provider = MockCompletionProvider::new("mock", 5);
        let a = assess_items(&unit_features(), &registry, &provider, RetryPolicy::immediate()).unwrap();
        let b = assess_items(&unit_features(), &registry, &provider, RetryPolicy::immediate()).unwrap();
        assert_eq!(a.scores, b.scores);
        assert!(a.warnings.is_empty());
        let profile = score_subscales(&a, &registry).unwrap();
        assert_eq!(profile.scores.len(), 26);
        for framework in &registry.frameworks {
            for dim in &framework.dimensions {
                let v = profile.scores[&dim.name];
                assert!(v >= framework.response_min && v <= framework.response_max);
            }
        }
    }
}
