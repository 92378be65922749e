//! Contextual psychological profiling over (user, context, text) corpora.
//!
//! The crate covers the full pipeline: corpus ingestion and sampling,
//! dual-route feature extraction (lexicon matching and LLM-extracted
//! semantic patterns), scale assessment against a 26-dimension registry,
//! per-dimension z-normalization and fusion, variance decomposition and
//! validation statistics, state-archetype derivation with profile cards,
//! and audits of generation state-sensitivity and reward-model
//! state-invariance.
//!
//! Every external model service sits behind a provider trait with a
//! deterministic offline mock, so the whole pipeline runs reproducibly
//! without network access.

pub mod archetypes;
pub mod audit;
pub mod corpus;
pub mod error;
pub mod extraction;
pub mod profiles;
pub mod providers;
pub mod psychometrics;
pub mod scales;
pub mod text;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Which of the two extraction routes produced a feature set or profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "lex")]
    Lex,
    #[serde(rename = "sem")]
    Sem,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Lex => "lex",
            Method::Sem => "sem",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
