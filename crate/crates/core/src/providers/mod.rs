//! Uniform contracts for external model services: text generation,
//! structured extraction, embeddings, and reward scoring. Each contract has
//! a deterministic offline mock (`mock`) and a generic HTTP transport
//! (`live`).

pub mod live;
pub mod mock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single completion call. `schema_id`, when set, names the structured
/// document the caller expects back (e.g. `semantic_patterns`,
/// `item_scores`); mocks key their synthetic output off it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_text: Option<String>,
    pub user_text: String,
    pub schema_id: Option<String>,
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn new(user_text: impl Into<String>) -> Result<Self> {
        let user_text = user_text.into();
        if user_text.is_empty() {
            return Err(Error::Precondition("completion request user_text is empty".into()));
        }
        Ok(CompletionRequest {
            system_text: None,
            user_text,
            schema_id: None,
            temperature: 0.0,
        })
    }

    pub fn with_system(mut self, system_text: impl Into<String>) -> Self {
        self.system_text = Some(system_text.into());
        self
    }

    pub fn with_schema(mut self, schema_id: impl Into<String>) -> Self {
        self.schema_id = Some(schema_id.into());
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(0.0..=2.0).contains(&temperature) {
            return Err(Error::Precondition(format!(
                "temperature {temperature} outside [0, 2]"
            )));
        }
        self.temperature = temperature;
        Ok(self)
    }
}

/// Fixed-length unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    /// Wrap raw values, checking finiteness and normalizing to unit L2 norm.
    pub fn unit_normalized(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("embedding contains non-finite entries".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Precondition("embedding has zero norm".into()));
        }
        Ok(EmbeddingVector {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity, clamped into [-1, 1]. Bitwise-identical vectors
    /// short-circuit to exactly 1 so that identical texts compare as
    /// identical instead of 1 minus a rounding ulp.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        if self.values == other.values {
            return 1.0;
        }
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            (dot / denom).clamp(-1.0, 1.0)
        }
    }
}

/// One reward-model score on the model's native scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardScore {
    pub value: f64,
    pub model_id: String,
}

/// Text-generation / structured-extraction service.
pub trait CompletionProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String>;
    fn id(&self) -> &str;
}

/// Sentence-embedding service. Returned vectors are unit-norm.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
    fn dimension(&self) -> usize;
}

/// Reward-model scoring service. `profile_prefix`, when present, is
/// prepended to the scored transcript exactly as given.
pub trait RewardProvider: Send + Sync {
    fn score(&self, question: &str, response: &str, profile_prefix: Option<&str>) -> Result<RewardScore>;
    fn id(&self) -> &str;
}

/// Assemble the reward-model input: optional profile prefix, then the
/// question/response transcript.
pub fn assemble_reward_input(question: &str, response: &str, profile_prefix: Option<&str>) -> String {
    let transcript = format!("User: {question}\n\nAssistant: {response}");
    match profile_prefix {
        Some(prefix) => format!("{prefix}\n\n{transcript}"),
        None => transcript,
    }
}

/// Bounded retry with exponential backoff. Only transport failures are
/// retried; any other error (and any success) passes straight through, so a
/// successful payload is never altered.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 100,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; used in tests and with offline mocks.
    pub fn immediate() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 0,
        }
    }

    pub fn run<T, F: FnMut() -> Result<T>>(&self, mut op: F) -> Result<T> {
        let attempts = self.max_attempts.max(1);
        let mut last_message = String::new();
        for attempt in 0..attempts {
            match op() {
                Ok(value) => return Ok(value),
                Err(Error::Transport { message, .. }) => {
                    last_message = message;
                    if attempt + 1 < attempts && self.base_delay_ms > 0 {
                        let delay = self.base_delay_ms.saturating_mul(1 << attempt);
                        std::thread::sleep(std::time::Duration::from_millis(delay));
                    }
                }
                Err(other) => return Err(other),
            }
        }
        Err(Error::Transport {
            attempts,
            message: last_message,
        })
    }
}

/// Run a completion whose output must parse into `T`. On a validation
/// failure the request is re-issued once with the validation error appended,
/// then the call fails with an extraction error.
pub fn complete_validated<T, F>(
    provider: &dyn CompletionProvider,
    request: &CompletionRequest,
    retry: RetryPolicy,
    parse: F,
) -> Result<T>
where
    F: Fn(&str) -> std::result::Result<T, String>,
{
    let raw = retry.run(|| provider.complete(request))?;
    let first_error = match parse(&raw) {
        Ok(value) => return Ok(value),
        Err(e) => e,
    };

    let mut repair = request.clone();
    repair.user_text = format!(
        "{}\n\nThe previous response was invalid: {first_error}\nReturn a corrected response that satisfies the required output schema.",
        request.user_text
    );
    let raw = retry.run(|| provider.complete(&repair))?;
    parse(&raw).map_err(|second_error| {
        Error::Extraction(format!(
            "schema violation after repair attempt: {second_error} (initial error: {first_error})"
        ))
    })
}

/// Apply `f` to every item using up to `parallelism` worker threads, and
/// join results in input order so downstream artifacts are
/// order-deterministic regardless of scheduling.
pub fn map_indexed_parallel<T, U, F>(parallelism: usize, items: &[T], f: F) -> Vec<Result<U>>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> Result<U> + Sync,
{
    let workers = parallelism.max(1).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, item)| f(i, item)).collect();
    }

    let cursor = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<U>>>> =
        (0..items.len()).map(|_| std::sync::Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(i, &items[i]);
                *slots[i].lock().unwrap() = Some(out);
            });
        }
    });

    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled every slot"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_rejects_empty_text() {
        assert!(CompletionRequest::new("").is_err());
    }

    #[test]
    fn request_rejects_out_of_range_temperature() {
        let req = CompletionRequest::new("hello").unwrap();
        assert!(req.clone().with_temperature(2.5).is_err());
        assert!(req.with_temperature(0.7).is_ok());
    }

    #[test]
    fn retry_recovers_after_transient_failures() {
        let calls = std::cell::Cell::new(0usize);
        let result = RetryPolicy::immediate().run(|| {
            calls.set(calls.get() + 1);
            if calls.get() < 3 {
                Err(Error::Transport {
                    attempts: 1,
                    message: "flaky".into(),
                })
            } else {
                Ok(42)
            }
        });
        assert_eq!(result.unwrap(), 42);
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn retry_does_not_retry_non_transport_errors() {
        let calls = std::cell::Cell::new(0usize);
        let result: Result<()> = RetryPolicy::immediate().run(|| {
            calls.set(calls.get() + 1);
            Err(Error::Config("bad".into()))
        });
        assert!(result.is_err());
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn parallel_map_preserves_input_order() {
        let items: Vec<usize> = (0..100).collect();
        for parallelism in [1, 8] {
            let out = map_indexed_parallel(parallelism, &items, |i, x| {
                if i % 7 == 0 {
                    std::thread::yield_now();
                }
                Ok(x * 2)
            });
            let values: Vec<usize> = out.into_iter().map(|r| r.unwrap()).collect();
            assert_eq!(values, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        }
    }

    #[test]
    fn reward_input_assembly() {
        assert_eq!(assemble_reward_input("q?", "a.", None), "User: q?\n\nAssistant: a.");
        assert_eq!(
            assemble_reward_input("q?", "a.", Some("The user has this psychological profile: X")),
            "The user has this psychological profile: X\n\nUser: q?\n\nAssistant: a."
        );
    }
}
