//! Generic HTTP JSON transport for live model services. Each provider posts
//! to a configurable base URL and authenticates with a bearer token read
//! from an environment variable; credentials never appear in config files.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::providers::{
    assemble_reward_input, CompletionProvider, CompletionRequest, EmbeddingProvider,
    EmbeddingVector, RewardProvider, RewardScore,
};

/// Default environment variable holding the API credential.
pub const DEFAULT_CREDENTIAL_ENV: &str = "STATETRAIT_API_KEY";

/// Connection settings for one live endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiveProviderConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_credential_env")]
    pub credential_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_credential_env() -> String {
    DEFAULT_CREDENTIAL_ENV.to_string()
}

fn default_timeout_secs() -> u64 {
    60
}

struct LiveClient {
    config: LiveProviderConfig,
    credential: String,
    client: reqwest::blocking::Client,
}

impl LiveClient {
    fn new(config: LiveProviderConfig) -> Result<Self> {
        let credential = std::env::var(&config.credential_env).map_err(|_| {
            Error::Config(format!(
                "credential environment variable '{}' is not set",
                config.credential_env
            ))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("failed to build HTTP client: {e}")))?;
        Ok(LiveClient {
            config,
            credential,
            client,
        })
    }

    fn post<B: Serialize, T: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<T> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.credential)
            .json(body)
            .send()
            .map_err(|e| Error::Transport {
                attempts: 1,
                message: e.to_string(),
            })?;
        if !response.status().is_success() {
            return Err(Error::Transport {
                attempts: 1,
                message: format!("{url} returned {}", response.status()),
            });
        }
        response.json().map_err(|e| Error::Transport {
            attempts: 1,
            message: format!("invalid JSON from {url}: {e}"),
        })
    }
}

/// POST `{base}/v1/complete` with `{model, system, user, schema_id,
/// temperature}`; expects `{"text": "..."}`.
pub struct LiveCompletionProvider {
    client: LiveClient,
}

#[derive(Serialize)]
struct CompleteBody<'a> {
    model: &'a str,
    system: Option<&'a str>,
    user: &'a str,
    schema_id: Option<&'a str>,
    temperature: f64,
}

#[derive(Deserialize)]
struct CompleteReply {
    text: String,
}

impl LiveCompletionProvider {
    pub fn new(config: LiveProviderConfig) -> Result<Self> {
        Ok(LiveCompletionProvider {
            client: LiveClient::new(config)?,
        })
    }
}

impl CompletionProvider for LiveCompletionProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let body = CompleteBody {
            model: &self.client.config.model,
            system: request.system_text.as_deref(),
            user: &request.user_text,
            schema_id: request.schema_id.as_deref(),
            temperature: request.temperature,
        };
        let reply: CompleteReply = self.client.post("v1/complete", &body)?;
        Ok(reply.text)
    }

    fn id(&self) -> &str {
        &self.client.config.model
    }
}

/// POST `{base}/v1/embed` with `{model, text}`; expects `{"values": [...]}`.
/// The reply is re-normalized to unit L2 norm.
pub struct LiveEmbeddingProvider {
    client: LiveClient,
    dimension: usize,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    model: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedReply {
    values: Vec<f64>,
}

impl LiveEmbeddingProvider {
    pub fn new(config: LiveProviderConfig, dimension: usize) -> Result<Self> {
        Ok(LiveEmbeddingProvider {
            client: LiveClient::new(config)?,
            dimension,
        })
    }
}

impl EmbeddingProvider for LiveEmbeddingProvider {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(Error::Precondition("cannot embed empty text".into()));
        }
        let body = EmbedBody {
            model: &self.client.config.model,
            text,
        };
        let reply: EmbedReply = self.client.post("v1/embed", &body)?;
        if reply.values.len() != self.dimension {
            return Err(Error::Transport {
                attempts: 1,
                message: format!(
                    "embedding dimension {} does not match configured {}",
                    reply.values.len(),
                    self.dimension
                ),
            });
        }
        EmbeddingVector::unit_normalized(reply.values)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

/// POST `{base}/v1/score` with `{model, input}` where `input` is the
/// assembled transcript (optional profile prefix, then question/response);
/// expects `{"value": <float>}`.
pub struct LiveRewardProvider {
    client: LiveClient,
}

#[derive(Serialize)]
struct ScoreBody<'a> {
    model: &'a str,
    input: String,
    question: &'a str,
    response: &'a str,
    profile_prefix: Option<&'a str>,
}

#[derive(Deserialize)]
struct ScoreReply {
    value: f64,
}

impl LiveRewardProvider {
    pub fn new(config: LiveProviderConfig) -> Result<Self> {
        Ok(LiveRewardProvider {
            client: LiveClient::new(config)?,
        })
    }
}

impl RewardProvider for LiveRewardProvider {
    fn score(&self, question: &str, response: &str, profile_prefix: Option<&str>) -> Result<RewardScore> {
        if question.is_empty() || response.is_empty() {
            return Err(Error::Precondition("reward question/response must be non-empty".into()));
        }
        let body = ScoreBody {
            model: &self.client.config.model,
            input: assemble_reward_input(question, response, profile_prefix),
            question,
            response,
            profile_prefix,
        };
        let reply: ScoreReply = self.client.post("v1/score", &body)?;
        if !reply.value.is_finite() {
            return Err(Error::Transport {
                attempts: 1,
                message: "reward endpoint returned a non-finite score".into(),
            });
        }
        Ok(RewardScore {
            value: reply.value,
            model_id: self.client.config.model.clone(),
        })
    }

    fn id(&self) -> &str {
        &self.client.config.model
    }
}
