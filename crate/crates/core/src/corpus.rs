//! Corpus ingestion, eligibility filtering, per-user sampling, and summary
//! statistics for (user, context, text) records.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::seeded_hash;

/// One (user, context, text) observation; the pipeline's atomic input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub user_id: String,
    pub context_id: String,
    pub text: String,
    /// Whitespace-delimited token count, derived from `text` at ingestion.
    pub word_count: usize,
}

impl Post {
    pub fn new(user_id: impl Into<String>, context_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let word_count = text.split_whitespace().count();
        Post {
            user_id: user_id.into(),
            context_id: context_id.into(),
            text,
            word_count,
        }
    }

    /// Stable identifier for a sampled post; unique once each user
    /// contributes at most one post per context.
    pub fn post_id(&self) -> String {
        format!("{}/{}", self.user_id, self.context_id)
    }
}

/// Summary statistics for a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub n_posts: usize,
    pub n_users: usize,
    pub n_contexts: usize,
    pub posts_per_user: usize,
    pub median_words: usize,
    pub word_range: (usize, usize),
}

/// Supported input encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(Error::Config(format!("unknown input format '{other}' (expected jsonl or csv)"))),
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    user_id: String,
    context_id: String,
    text: String,
}

fn validate_record(raw: RawRecord, line: usize) -> Result<Post> {
    if raw.user_id.is_empty() {
        return Err(Error::MalformedRecord {
            line,
            message: "user_id is empty".into(),
        });
    }
    if raw.context_id.is_empty() {
        return Err(Error::MalformedRecord {
            line,
            message: "context_id is empty".into(),
        });
    }
    Ok(Post::new(raw.user_id, raw.context_id, raw.text))
}

/// Small bundled corpus: 12 users, each posting in three contexts. Used by
/// smoke tests and the default pipeline demo.
pub fn bundled_toy_corpus() -> Vec<Post> {
    ingest(
        include_str!("../assets/toy_corpus.jsonl").as_bytes(),
        InputFormat::Jsonl,
    )
    .expect("bundled toy corpus is valid")
}

/// Decode posts from a byte stream. Input order is preserved; a malformed
/// record aborts with the 1-based line number it occurred on.
pub fn ingest<R: Read>(source: R, format: InputFormat) -> Result<Vec<Post>> {
    match format {
        InputFormat::Jsonl => ingest_jsonl(source),
        InputFormat::Csv => ingest_csv(source),
    }
}

fn ingest_jsonl<R: Read>(source: R) -> Result<Vec<Post>> {
    let reader = BufReader::new(source);
    let mut posts = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        posts.push(validate_record(raw, line_no)?);
    }
    Ok(posts)
}

fn ingest_csv<R: Read>(source: R) -> Result<Vec<Post>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let mut posts = Vec::new();
    for result in reader.deserialize::<RawRecord>() {
        match result {
            Ok(raw) => {
                // csv positions are only available on errors; recover the line
                // from the running count (+1 for the header row).
                let line = posts.len() + 2;
                posts.push(validate_record(raw, line)?);
            }
            Err(e) => {
                let line = e
                    .position()
                    .map(|p| p.line() as usize)
                    .unwrap_or(posts.len() + 2);
                return Err(Error::MalformedRecord {
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(posts)
}

/// Retain posts with at least `min_words` words whose author, after the word
/// filter, still spans at least `min_contexts` distinct contexts. The word
/// filter runs first so short posts cannot satisfy context counts.
/// Idempotent: applying it twice equals applying it once.
pub fn filter_eligible(posts: &[Post], min_words: usize, min_contexts: usize) -> Vec<Post> {
    let long_enough: Vec<&Post> = posts.iter().filter(|p| p.word_count >= min_words).collect();

    let mut contexts_per_user: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for post in &long_enough {
        contexts_per_user
            .entry(post.user_id.as_str())
            .or_default()
            .insert(post.context_id.as_str());
    }

    long_enough
        .into_iter()
        .filter(|p| contexts_per_user[p.user_id.as_str()].len() >= min_contexts)
        .cloned()
        .collect()
}

/// Draw exactly `k` posts per user, each from a distinct context, with a
/// seeded pseudo-random draw. Contexts are chosen first, then one post per
/// chosen context, so over-supplied contexts contribute a single post.
/// Output keeps the input's relative order; identical (input, k, seed) give
/// identical output.
pub fn sample_per_user(posts: &[Post], k: usize, seed: u64) -> Result<Vec<Post>> {
    if k == 0 {
        return Err(Error::Precondition("sample size k must be >= 1".into()));
    }

    // Group post indices by user, preserving first-appearance order of both
    // users and their contexts.
    let mut user_order: Vec<&str> = Vec::new();
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, post) in posts.iter().enumerate() {
        let entry = by_user.entry(post.user_id.as_str()).or_default();
        if entry.is_empty() {
            user_order.push(post.user_id.as_str());
        }
        entry.push(idx);
    }

    let mut selected: BTreeSet<usize> = BTreeSet::new();
    for user in user_order {
        let indices = &by_user[user];

        let mut context_order: Vec<&str> = Vec::new();
        let mut by_context: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for &idx in indices {
            let ctx = posts[idx].context_id.as_str();
            let entry = by_context.entry(ctx).or_default();
            if entry.is_empty() {
                context_order.push(ctx);
            }
            entry.push(idx);
        }

        if context_order.len() < k {
            return Err(Error::Precondition(format!(
                "user '{user}' has only {} distinct context(s), need {k}; run filter_eligible first",
                context_order.len()
            )));
        }

        // Per-user stream keyed by (seed, user id) so the draw does not
        // depend on how many other users precede this one.
        let mut rng = ChaCha8Rng::seed_from_u64(seeded_hash(seed, &["sample", user]));
        context_order.shuffle(&mut rng);
        for ctx in context_order.into_iter().take(k) {
            let candidates = &by_context[ctx];
            let pick = candidates[rng.gen_range(0..candidates.len())];
            selected.insert(pick);
        }
    }

    Ok(selected.into_iter().map(|i| posts[i].clone()).collect())
}

/// Counts and word statistics. The median uses the lower-middle element for
/// even counts.
pub fn corpus_stats(posts: &[Post]) -> CorpusManifest {
    if posts.is_empty() {
        return CorpusManifest {
            n_posts: 0,
            n_users: 0,
            n_contexts: 0,
            posts_per_user: 0,
            median_words: 0,
            word_range: (0, 0),
        };
    }

    let mut users: BTreeMap<&str, usize> = BTreeMap::new();
    let mut contexts: BTreeSet<&str> = BTreeSet::new();
    let mut words: Vec<usize> = Vec::with_capacity(posts.len());
    for post in posts {
        *users.entry(post.user_id.as_str()).or_default() += 1;
        contexts.insert(post.context_id.as_str());
        words.push(post.word_count);
    }
    words.sort_unstable();

    let n_users = users.len();
    CorpusManifest {
        n_posts: posts.len(),
        n_users,
        n_contexts: contexts.len(),
        posts_per_user: posts.len() / n_users,
        median_words: words[(words.len() - 1) / 2],
        word_range: (words[0], words[words.len() - 1]),
    }
}
