//! Provider abstraction for the two model-backed capabilities the engine
//! needs: chat completion and text embedding.
//!
//! Three backends ship here: a deterministic scripted mock (the default for
//! tests and offline runs), HTTP clients speaking the common JSON chat /
//! embeddings wire formats, and a precomputed-embedding file lookup.

mod http;
mod mock;

pub use http::{HttpEmbedder, HttpLlm};
pub use mock::{MockEmbedder, MockLlm, MockMatch, MockRule};

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retriever::Vector;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("mock script error: {0}")]
    Script(String),
    #[error("no precomputed embedding for key '{0}'")]
    MissingKey(String),
    #[error("provider returned a zero embedding for '{0}'")]
    ZeroEmbedding(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// One chat call. `template_tag` names the prompt template that produced
/// it and `step` is the 0-based episode iteration at call time; the mock
/// provider dispatches on these two fields.
#[derive(Debug, Clone)]
pub struct ChatCall {
    pub template_tag: &'static str,
    pub step: usize,
    pub messages: Vec<ChatMessage>,
    pub want_logprobs: bool,
}

/// A chat result plus the per-call scalars the scoring pass consumes.
/// Providers without log-prob or value support leave `None`.
#[derive(Debug, Clone)]
pub struct ChatOutcome {
    pub content: String,
    pub log_prob: Option<f64>,
    pub ref_log_prob: Option<f64>,
    pub value: Option<f64>,
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, call: &ChatCall) -> Result<ChatOutcome, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vector>, ProviderError>;

    /// Declared dimension, when the backend knows it up front.
    fn dim(&self) -> Option<usize>;
}

/// Embed one text and unit-normalize the result. A zero vector from the
/// backend is rejected.
pub fn embed(provider: &dyn EmbeddingProvider, text: &str) -> Result<Vector, ProviderError> {
    let mut out = provider.embed_batch(&[text])?;
    let v = out
        .pop()
        .ok_or_else(|| ProviderError::MalformedResponse("empty embedding batch".into()))?;
    v.unit_normalized()
        .ok_or_else(|| ProviderError::ZeroEmbedding(text.chars().take(40).collect()))
}

/// Batch size for bulk embedding.
const EMBED_CHUNK: usize = 128;

/// Embed many texts in wire-friendly chunks, unit-normalizing each result.
pub fn embed_all(
    provider: &dyn EmbeddingProvider,
    texts: &[String],
) -> Result<Vec<Vector>, ProviderError> {
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(EMBED_CHUNK) {
        let refs: Vec<&str> = chunk.iter().map(String::as_str).collect();
        let vectors = provider.embed_batch(&refs)?;
        if vectors.len() != refs.len() {
            return Err(ProviderError::MalformedResponse(format!(
                "asked for {} embeddings, got {}",
                refs.len(),
                vectors.len()
            )));
        }
        for (text, v) in chunk.iter().zip(vectors) {
            out.push(
                v.unit_normalized()
                    .ok_or_else(|| ProviderError::ZeroEmbedding(text.chars().take(40).collect()))?,
            );
        }
    }
    Ok(out)
}

/// Precomputed embeddings loaded from JSON Lines of
/// `{"key": string, "vector": [floats]}`, looked up by exact text.
pub struct FileEmbedder {
    map: HashMap<String, Vector>,
    dim: usize,
}

#[derive(Deserialize)]
struct FileEmbeddingLine {
    key: String,
    vector: Vec<f64>,
}

impl FileEmbedder {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let file = std::fs::File::open(path)?;
        let mut map = HashMap::new();
        let mut dim = 0usize;
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: FileEmbeddingLine = serde_json::from_str(&line).map_err(|e| {
                ProviderError::MalformedResponse(format!("embedding file line {}: {e}", i + 1))
            })?;
            let v = Vector::new(parsed.vector);
            if dim == 0 {
                dim = v.dim();
            } else if v.dim() != dim {
                return Err(ProviderError::MalformedResponse(format!(
                    "embedding file line {}: dim {} != {}",
                    i + 1,
                    v.dim(),
                    dim
                )));
            }
            map.insert(parsed.key, v);
        }
        Ok(Self { map, dim })
    }
}

impl EmbeddingProvider for FileEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vector>, ProviderError> {
        texts
            .iter()
            .map(|t| {
                self.map
                    .get(*t)
                    .cloned()
                    .ok_or_else(|| ProviderError::MissingKey((*t).to_string()))
            })
            .collect()
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }
}
