//! Stage 1 of the extraction pipeline: lexicon-density features and
//! LLM-extracted semantic pattern documents, plus the bridge that turns
//! pattern lists into a numeric feature vector.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::providers::{complete_validated, CompletionProvider, CompletionRequest, RetryPolicy};
use crate::providers::mock::SCHEMA_SEMANTIC_PATTERNS;
use crate::text::tokenize;
use crate::Method;

/// Wire names of the eight pattern categories, in prompt order.
pub const EXTRACTION_CLASS_NAMES: [&str; 8] = [
    "identity/self-concept",
    "emotional regulation",
    "social orientation",
    "cognitive style",
    "values/beliefs",
    "motivation",
    "trust/decision-making",
    "behavioral tendencies",
];

/// A term-to-category lexicon with per-entry weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconDictionary {
    pub name: String,
    /// lowercase term -> [(category, weight), ...]
    pub entries: BTreeMap<String, Vec<(String, f64)>>,
}

impl LexiconDictionary {
    pub fn from_json_str(json: &str) -> Result<Self> {
        let dict: LexiconDictionary =
            serde_json::from_str(json).map_err(|e| Error::Config(format!("invalid lexicon file: {e}")))?;
        dict.validate()?;
        Ok(dict)
    }

    /// Small general-purpose demonstration lexicon bundled with the crate.
    pub fn bundled_demo() -> Self {
        Self::from_json_str(include_str!("../assets/demo_lexicon.json")).expect("bundled lexicon is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("lexicon name is empty".into()));
        }
        for (term, cats) in &self.entries {
            for (category, weight) in cats {
                if !weight.is_finite() {
                    return Err(Error::Config(format!(
                        "lexicon '{}': non-finite weight for term '{term}' in category '{category}'",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// All category names appearing anywhere in the lexicon, sorted.
    pub fn categories(&self) -> Vec<String> {
        let mut cats: Vec<String> = self
            .entries
            .values()
            .flatten()
            .map(|(c, _)| c.clone())
            .collect();
        cats.sort();
        cats.dedup();
        cats
    }
}

/// A named numeric feature set from one extraction route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub method: Method,
    pub features: BTreeMap<String, f64>,
}

impl FeatureVector {
    /// Render as "name: value" lines for embedding in assessment prompts.
    pub fn render_lines(&self) -> String {
        self.features
            .iter()
            .map(|(name, value)| format!("- {name}: {value:.6}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExtractionClass {
    #[serde(rename = "identity/self-concept")]
    IdentitySelfConcept,
    #[serde(rename = "emotional regulation")]
    EmotionalRegulation,
    #[serde(rename = "social orientation")]
    SocialOrientation,
    #[serde(rename = "cognitive style")]
    CognitiveStyle,
    #[serde(rename = "values/beliefs")]
    ValuesBeliefs,
    #[serde(rename = "motivation")]
    Motivation,
    #[serde(rename = "trust/decision-making")]
    TrustDecisionMaking,
    #[serde(rename = "behavioral tendencies")]
    BehavioralTendencies,
}

impl ExtractionClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExtractionClass::IdentitySelfConcept => EXTRACTION_CLASS_NAMES[0],
            ExtractionClass::EmotionalRegulation => EXTRACTION_CLASS_NAMES[1],
            ExtractionClass::SocialOrientation => EXTRACTION_CLASS_NAMES[2],
            ExtractionClass::CognitiveStyle => EXTRACTION_CLASS_NAMES[3],
            ExtractionClass::ValuesBeliefs => EXTRACTION_CLASS_NAMES[4],
            ExtractionClass::Motivation => EXTRACTION_CLASS_NAMES[5],
            ExtractionClass::TrustDecisionMaking => EXTRACTION_CLASS_NAMES[6],
            ExtractionClass::BehavioralTendencies => EXTRACTION_CLASS_NAMES[7],
        }
    }

    pub fn all() -> [ExtractionClass; 8] {
        [
            ExtractionClass::IdentitySelfConcept,
            ExtractionClass::EmotionalRegulation,
            ExtractionClass::SocialOrientation,
            ExtractionClass::CognitiveStyle,
            ExtractionClass::ValuesBeliefs,
            ExtractionClass::Motivation,
            ExtractionClass::TrustDecisionMaking,
            ExtractionClass::BehavioralTendencies,
        ]
    }

    /// Feature-name slug, e.g. `identity_self_concept`.
    pub fn slug(&self) -> String {
        self.as_str()
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { '_' })
            .collect::<String>()
            .replace("__", "_")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Confidence {
    #[serde(rename = "high")]
    High,
    #[serde(rename = "medium")]
    Medium,
    #[serde(rename = "low")]
    Low,
}

impl Confidence {
    /// Weight used when aggregating patterns into features.
    pub fn weight(&self) -> f64 {
        match self {
            Confidence::High => 1.0,
            Confidence::Medium => 0.6,
            Confidence::Low => 0.3,
        }
    }
}

/// One structured psychological pattern extracted from a text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticPattern {
    pub extraction_class: ExtractionClass,
    pub extraction_text: String,
    pub interpretation: String,
    pub confidence: Confidence,
    #[serde(default)]
    pub cue_terms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big_five_hints: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_hints: Option<String>,
}

impl SemanticPattern {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let words = self.extraction_text.split_whitespace().count();
        if !(3..=50).contains(&words) {
            return Err(format!(
                "extraction_text must be 3-50 words, got {words}: '{}'",
                self.extraction_text
            ));
        }
        Ok(())
    }
}

/// Prompt sent to the extraction provider; the post text is appended after
/// the final "Text:" line.
pub const PATTERN_EXTRACTION_PROMPT: &str = r#"Task: Analyze text to identify psychological patterns that reveal how people think, feel, and behave. Find specific language patterns and explain what they suggest about the person's psychology. Always quote exact words from the text, then interpret what those patterns reveal.

Pattern categories:
- identity/self-concept: self-focus vs group-focus, self-criticism vs confidence, personal narratives
- emotional regulation: emotion words, intensity markers, coping strategies, stability vs volatility
- social orientation: politeness markers, agreement patterns, connection vs independence
- cognitive style: analytical vs storytelling, certainty vs uncertainty, tolerance for complexity
- values/beliefs: care/harm, fairness/justice, loyalty, authority, achievement vs relationship focus
- motivation: help-seeking vs self-reliance, achievement language, time orientation
- trust/decision-making: hedge words vs certainty words, skepticism vs trust, verification-seeking
- behavioral tendencies: impulsivity vs deliberation, openness vs routine, extraversion signs

For each pattern, produce a JSON object with:
- extraction_class: one of the 8 categories above
- extraction_text: exact quoted words (3-50 words)
- interpretation: clear explanation in everyday language
- confidence: high | medium | low
- cue_terms: specific key words or phrases signaling the pattern
- big_five_hints: optional directional tendencies (e.g., "toward higher Openness")
- scale_hints: optional connections to values, cognitive traits, motivation, risk

Output a JSON array of pattern objects and nothing else.

Text:
"#;

/// Density features: for every (lexicon, category) pair, the sum of matched
/// weights divided by the token count. Categories with no matches are
/// present with value 0, so all texts share one feature space.
pub fn extract_lexicon_features(text: &str, dictionaries: &[LexiconDictionary]) -> Result<FeatureVector> {
    if dictionaries.is_empty() {
        return Err(Error::Config("no lexicon dictionaries configured".into()));
    }

    let mut features: BTreeMap<String, f64> = BTreeMap::new();
    for dict in dictionaries {
        for category in dict.categories() {
            features.insert(format!("{}.{}", dict.name, category), 0.0);
        }
    }

    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Ok(FeatureVector {
            method: Method::Lex,
            features,
        });
    }

    let denom = tokens.len() as f64;
    for token in &tokens {
        for dict in dictionaries {
            if let Some(cats) = dict.entries.get(token) {
                for (category, weight) in cats {
                    *features.entry(format!("{}.{}", dict.name, category)).or_insert(0.0) +=
                        weight / denom;
                }
            }
        }
    }

    Ok(FeatureVector {
        method: Method::Lex,
        features,
    })
}

fn parse_patterns(raw: &str) -> std::result::Result<Vec<SemanticPattern>, String> {
    let patterns: Vec<SemanticPattern> = serde_json::from_str(raw).map_err(|e| e.to_string())?;
    for pattern in &patterns {
        pattern.validate()?;
    }
    Ok(patterns)
}

/// Extract semantic patterns from `text` via the provider. Invalid documents
/// get one repair re-prompt; a second failure is an extraction error.
pub fn extract_semantic_patterns(
    text: &str,
    provider: &dyn CompletionProvider,
    retry: RetryPolicy,
) -> Result<Vec<SemanticPattern>> {
    if text.is_empty() {
        return Err(Error::Precondition("cannot extract patterns from empty text".into()));
    }
    let request = CompletionRequest::new(format!("{PATTERN_EXTRACTION_PROMPT}{text}"))?
        .with_schema(SCHEMA_SEMANTIC_PATTERNS);
    complete_validated(provider, &request, retry, parse_patterns)
}

/// Aggregate patterns into a `sem` feature vector: per-class counts weighted
/// by confidence (high 1.0, medium 0.6, low 0.3) plus the raw total count.
pub fn patterns_to_features(patterns: &[SemanticPattern]) -> FeatureVector {
    let mut features: BTreeMap<String, f64> = ExtractionClass::all()
        .iter()
        .map(|c| (format!("patterns.{}", c.slug()), 0.0))
        .collect();
    for pattern in patterns {
        *features
            .entry(format!("patterns.{}", pattern.extraction_class.slug()))
            .or_insert(0.0) += pattern.confidence.weight();
    }
    features.insert("patterns.total".into(), patterns.len() as f64);
    FeatureVector {
        method: Method::Sem,
        features,
    }
}
