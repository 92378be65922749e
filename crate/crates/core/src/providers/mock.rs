//! Deterministic offline providers. Every mock is a pure function of
//! (input, seed): repeated calls return bit-identical payloads, which is what
//! makes end-to-end golden runs possible without network access.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::providers::{
    CompletionProvider, CompletionRequest, EmbeddingProvider, EmbeddingVector, RewardProvider,
    RewardScore,
};
use crate::text::{fnv1a64, seeded_hash, tokenize};

/// Schema id for semantic-pattern extraction documents.
pub const SCHEMA_SEMANTIC_PATTERNS: &str = "semantic_patterns";
/// Schema id for scale-assessment item-score documents.
pub const SCHEMA_ITEM_SCORES: &str = "item_scores";

/// Seeded template filler keyed by a stable hash of the request. Canned
/// responses (per schema id) take precedence and let tests pin exact
/// payloads, including invalid ones.
#[derive(Debug, Clone)]
pub struct MockCompletionProvider {
    model_id: String,
    seed: u64,
    canned: BTreeMap<String, String>,
}

impl MockCompletionProvider {
    pub fn new(model_id: impl Into<String>, seed: u64) -> Self {
        MockCompletionProvider {
            model_id: model_id.into(),
            seed,
            canned: BTreeMap::new(),
        }
    }

    /// Pin the response returned for a given schema id (use `""` for
    /// plain-text requests).
    pub fn with_canned_response(mut self, schema_id: impl Into<String>, body: impl Into<String>) -> Self {
        self.canned.insert(schema_id.into(), body.into());
        self
    }

    fn synth_patterns(&self, request: &CompletionRequest) -> String {
        // The extraction prompt ends with a "Text:" block holding the post;
        // quote spans from there, not from the instructions.
        let source = request
            .user_text
            .rsplit_once("Text:\n")
            .map(|(_, tail)| tail)
            .unwrap_or(&request.user_text);
        let tokens = tokenize(source);
        if tokens.len() < 3 {
            return "[]".to_string();
        }

        let classes = crate::extraction::EXTRACTION_CLASS_NAMES;
        let confidences = ["high", "medium", "low"];
        let h = seeded_hash(self.seed, &["patterns", &request.user_text]);
        let n_patterns = 1 + (h % 3) as usize;

        let mut out = Vec::new();
        for i in 0..n_patterns {
            let hi = seeded_hash(self.seed, &["pattern", &i.to_string(), source]);
            let class = classes[(hi % classes.len() as u64) as usize];
            let confidence = confidences[((hi >> 8) % 3) as usize];
            let span_len = 3 + ((hi >> 16) % 6) as usize;
            let start = ((hi >> 24) % tokens.len() as u64) as usize;
            let end = (start + span_len).min(tokens.len());
            let start = start.min(end.saturating_sub(3));
            let span = tokens[start..end].join(" ");
            let cues: Vec<&str> = tokens[start..end].iter().take(2).map(String::as_str).collect();
            out.push(serde_json::json!({
                "extraction_class": class,
                "extraction_text": span,
                "interpretation": format!("language consistent with {class}"),
                "confidence": confidence,
                "cue_terms": cues,
            }));
        }
        serde_json::to_string(&out).expect("mock pattern json")
    }

    fn synth_item_scores(&self, request: &CompletionRequest) -> String {
        let mut scores = serde_json::Map::new();
        for line in request.user_text.lines() {
            let line = line.trim();
            let Some(rest) = line.strip_prefix('[') else { continue };
            let Some((id, rest)) = rest.split_once(']') else { continue };
            // Range spec looks like "(Dimension; scale 1 to 5[; reverse-scored])".
            let Some(scale_pos) = rest.find("scale ") else { continue };
            let spec = &rest[scale_pos + "scale ".len()..];
            let spec = spec.split([';', ')']).next().unwrap_or("");
            let Some((lo, hi)) = spec.split_once(" to ") else { continue };
            let (Ok(lo), Ok(hi)) = (lo.trim().parse::<f64>(), hi.trim().parse::<f64>()) else {
                continue;
            };
            let steps = ((hi - lo).round() as u64).max(1) + 1;
            let h = seeded_hash(self.seed, &["item", &request.user_text, id]);
            let value = lo + (h % steps) as f64;
            scores.insert(id.trim().to_string(), serde_json::json!(value));
        }
        serde_json::json!({ "scale_responses": scores }).to_string()
    }

    fn synth_generation(&self, request: &CompletionRequest) -> String {
        const OPENERS: [&str; 6] = [
            "Honestly,",
            "Thinking it through,",
            "From where I stand,",
            "It depends, but",
            "For me,",
            "On balance,",
        ];
        const STANCES: [&str; 6] = [
            "I would lean toward doing it",
            "I would hold back",
            "I would talk it over with someone first",
            "I would weigh the risks carefully",
            "I would follow my instincts",
            "I would keep things as they are",
        ];
        const CLOSERS: [&str; 5] = [
            "That feels right to me.",
            "I could be persuaded otherwise.",
            "I have seen it go both ways.",
            "It is not a choice I would rush.",
            "People close to me would probably agree.",
        ];

        let system = request.system_text.as_deref().unwrap_or("");
        let h = seeded_hash(self.seed, &["gen", system, &request.user_text]);
        let mut topic: Vec<String> = tokenize(&request.user_text);
        topic.sort_by_key(|t| std::cmp::Reverse(t.len()));
        topic.truncate(3);
        let topic = if topic.is_empty() {
            "this".to_string()
        } else {
            topic.join(" and ")
        };

        let opener = OPENERS[(h % OPENERS.len() as u64) as usize];
        let stance = STANCES[((h >> 8) % STANCES.len() as u64) as usize];
        let closer = CLOSERS[((h >> 16) % CLOSERS.len() as u64) as usize];
        let persona_note = if system.is_empty() {
            String::new()
        } else {
            let hs = fnv1a64(system.as_bytes());
            format!(" Speaking as myself, shade {:x},", hs % 4096)
        };
        format!("{opener}{persona_note} when it comes to {topic}, {stance}. {closer}")
    }
}

impl CompletionProvider for MockCompletionProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        if request.user_text.is_empty() {
            return Err(Error::Precondition("completion request user_text is empty".into()));
        }
        let key = request.schema_id.clone().unwrap_or_default();
        if let Some(body) = self.canned.get(&key) {
            return Ok(body.clone());
        }
        Ok(match request.schema_id.as_deref() {
            Some(SCHEMA_SEMANTIC_PATTERNS) => self.synth_patterns(request),
            Some(SCHEMA_ITEM_SCORES) => self.synth_item_scores(request),
            _ => self.synth_generation(request),
        })
    }

    fn id(&self) -> &str {
        &self.model_id
    }
}

/// Hashed bag-of-words embedder: token counts bucketed by FNV-1a modulo the
/// dimension, then L2-normalized. Order-insensitive by construction, which
/// gives exact-similarity fixtures (identical token multisets embed
/// identically; disjoint, collision-free vocabularies embed orthogonally).
#[derive(Debug, Clone)]
pub struct MockEmbeddingProvider {
    dimension: usize,
}

impl MockEmbeddingProvider {
    pub fn new(dimension: usize) -> Self {
        MockEmbeddingProvider {
            dimension: dimension.max(1),
        }
    }

    /// The bucket a token lands in; exposed so tests can construct
    /// collision-free vocabularies.
    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dimension as u64) as usize
    }
}

impl Default for MockEmbeddingProvider {
    fn default() -> Self {
        MockEmbeddingProvider::new(384)
    }
}

impl EmbeddingProvider for MockEmbeddingProvider {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(Error::Precondition("cannot embed empty text".into()));
        }
        let mut counts = vec![0.0f64; self.dimension];
        for token in tokenize(text) {
            counts[self.bucket(&token)] += 1.0;
        }
        if counts.iter().all(|&c| c == 0.0) {
            // Punctuation-only input: fall back to a fixed unit vector.
            counts[0] = 1.0;
        }
        EmbeddingVector::unit_normalized(counts)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

/// Reward mock. The base score depends only on (question, response) and is a
/// dyadic rational, so `profile_bias` shifts scores by exactly that amount
/// when a profile prefix is present; with bias 0 the mock is profile-blind.
#[derive(Debug, Clone)]
pub struct MockRewardProvider {
    model_id: String,
    seed: u64,
    profile_bias: f64,
}

impl MockRewardProvider {
    pub fn profile_blind(model_id: impl Into<String>, seed: u64) -> Self {
        MockRewardProvider {
            model_id: model_id.into(),
            seed,
            profile_bias: 0.0,
        }
    }

    pub fn biased(model_id: impl Into<String>, seed: u64, profile_bias: f64) -> Self {
        MockRewardProvider {
            model_id: model_id.into(),
            seed,
            profile_bias,
        }
    }
}

impl RewardProvider for MockRewardProvider {
    fn score(&self, question: &str, response: &str, profile_prefix: Option<&str>) -> Result<RewardScore> {
        if question.is_empty() {
            return Err(Error::Precondition("reward question is empty".into()));
        }
        if response.is_empty() {
            return Err(Error::Precondition("reward response is empty".into()));
        }
        let h = seeded_hash(self.seed, &["reward", question, response]);
        // Multiples of 1/32 in [-2, 2]: exactly representable, so adding the
        // bias is exact in f64.
        let base = ((h % 129) as f64 - 64.0) / 32.0;
        let value = if profile_prefix.is_some() {
            base + self.profile_bias
        } else {
            base
        };
        Ok(RewardScore {
            value,
            model_id: self.model_id.clone(),
        })
    }

    fn id(&self) -> &str {
        &self.model_id
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_mock_is_deterministic() {
        let provider = MockCompletionProvider::new("mock", 7);
        let req = CompletionRequest::new("What should I do about my savings account this year?").unwrap();
        assert_eq!(provider.complete(&req).unwrap(), provider.complete(&req).unwrap());
    }

    #[test]
    fn completion_mock_varies_with_system_text() {
        let provider = MockCompletionProvider::new("mock", 7);
        let req = CompletionRequest::new("Should you return extra change?").unwrap();
        let baseline = provider.complete(&req).unwrap();
        let persona = provider
            .complete(&req.clone().with_system("You are a person with profile A"))
            .unwrap();
        assert_ne!(baseline, persona);
    }

    #[test]
    fn canned_response_wins() {
        let provider =
            MockCompletionProvider::new("mock", 7).with_canned_response(SCHEMA_SEMANTIC_PATTERNS, "[]");
        let req = CompletionRequest::new("anything at all here")
            .unwrap()
            .with_schema(SCHEMA_SEMANTIC_PATTERNS);
        assert_eq!(provider.complete(&req).unwrap(), "[]");
    }

    #[test]
    fn embedder_identical_texts_cosine_one() {
        let embedder = MockEmbeddingProvider::default();
        let a = embedder.embed("the quick brown fox").unwrap();
        let b = embedder.embed("the quick brown fox").unwrap();
        assert_eq!(a, b);
        assert!((a.cosine(&b) - 1.0).abs() < 1e-12);
        assert!((a.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn embedder_is_order_insensitive() {
        let embedder = MockEmbeddingProvider::default();
        let a = embedder.embed("alpha beta gamma").unwrap();
        let b = embedder.embed("gamma alpha beta").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embedder_disjoint_vocabulary_cosine_zero() {
        let embedder = MockEmbeddingProvider::default();
        // Collision check keeps the fixture exact.
        let left = ["river", "stone", "bridge"];
        let right = ["sunset", "meadow", "lantern"];
        let left_buckets: std::collections::BTreeSet<_> = left.iter().map(|t| embedder.bucket(t)).collect();
        let right_buckets: std::collections::BTreeSet<_> = right.iter().map(|t| embedder.bucket(t)).collect();
        assert!(left_buckets.is_disjoint(&right_buckets), "fixture tokens collide");
        let a = embedder.embed(&left.join(" ")).unwrap();
        let b = embedder.embed(&right.join(" ")).unwrap();
        assert_eq!(a.cosine(&b), 0.0);
    }

    #[test]
    fn embedder_rejects_empty_text() {
        assert!(MockEmbeddingProvider::default().embed("").is_err());
    }

    #[test]
    fn reward_blind_mock_ignores_prefix() {
        let rm = MockRewardProvider::profile_blind("rm", 3);
        let plain = rm.score("q", "r", None).unwrap();
        let prefixed = rm.score("q", "r", Some("profile")).unwrap();
        assert_eq!(plain.value, prefixed.value);
    }

    #[test]
    fn reward_bias_shifts_score_exactly() {
        let rm = MockRewardProvider::biased("rm", 3, 1.0);
        let plain = rm.score("q", "r", None).unwrap();
        let prefixed = rm.score("q", "r", Some("profile")).unwrap();
        assert_eq!(prefixed.value - plain.value, 1.0);
    }

    #[test]
    fn reward_rejects_empty_inputs() {
        let rm = MockRewardProvider::profile_blind("rm", 3);
        assert!(rm.score("", "r", None).is_err());
        assert!(rm.score("q", "", None).is_err());
    }
}
