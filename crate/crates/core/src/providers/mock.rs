//! Deterministic scripted providers.
//!
//! The mock chat provider replays a script of JSON Lines rules:
//!
//! ```text
//! {"match": {"template_tag": "decide", "step": 1}, "response": "...", "log_prob": -0.4, "value": 0.2}
//! ```
//!
//! Rules are evaluated top-down per call; the first rule whose `match`
//! fields all agree with the call wins (absent fields match anything), and
//! rules are reusable across calls. A call matching no rule yields an empty
//! response with zero scalars, which downstream parsing treats as a format
//! fault. `ref_log_prob` is optional and defaults to `log_prob`.
//!
//! The mock embedder hashes the lowercased token multiset of the text into
//! a fixed-dimension vector (per-token streams summed with multiplicity,
//! then unit-normalized); empty text maps to the first basis vector.

use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatCall, ChatOutcome, ChatProvider, EmbeddingProvider, ProviderError};
use crate::retriever::Vector;
use crate::text::tokens;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match", default)]
    pub matcher: MockMatch,
    pub response: String,
    #[serde(default)]
    pub log_prob: f64,
    #[serde(default)]
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_log_prob: Option<f64>,
}

impl MockRule {
    fn matches(&self, call: &ChatCall) -> bool {
        self.matcher
            .template_tag
            .as_deref()
            .is_none_or(|t| t == call.template_tag)
            && self.matcher.step.is_none_or(|s| s == call.step)
    }
}

pub struct MockLlm {
    rules: Vec<MockRule>,
}

impl MockLlm {
    pub fn from_rules(rules: Vec<MockRule>) -> Self {
        Self { rules }
    }

    pub fn from_script_str(script: &str) -> Result<Self, ProviderError> {
        let mut rules = Vec::new();
        for (i, line) in script.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            rules.push(
                serde_json::from_str(line)
                    .map_err(|e| ProviderError::Script(format!("script line {}: {e}", i + 1)))?,
            );
        }
        Ok(Self { rules })
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let file = std::fs::File::open(path)?;
        let mut script = String::new();
        for line in std::io::BufReader::new(file).lines() {
            script.push_str(&line?);
            script.push('\n');
        }
        Self::from_script_str(&script)
    }
}

impl ChatProvider for MockLlm {
    fn chat(&self, call: &ChatCall) -> Result<ChatOutcome, ProviderError> {
        match self.rules.iter().find(|r| r.matches(call)) {
            Some(rule) => Ok(ChatOutcome {
                content: rule.response.clone(),
                log_prob: Some(rule.log_prob),
                ref_log_prob: Some(rule.ref_log_prob.unwrap_or(rule.log_prob)),
                value: Some(rule.value),
            }),
            None => {
                tracing::warn!(
                    tag = call.template_tag,
                    step = call.step,
                    "no mock rule matched; returning empty response"
                );
                Ok(ChatOutcome {
                    content: String::new(),
                    log_prob: Some(0.0),
                    ref_log_prob: Some(0.0),
                    value: Some(0.0),
                })
            }
        }
    }
}

pub struct MockEmbedder {
    dim: usize,
    seed: u64,
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha20Rng::from_seed(seed);
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(64, 0)
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vector>, ProviderError> {
        Ok(texts
            .iter()
            .map(|text| {
                let toks = tokens(text);
                if toks.is_empty() {
                    return Vector::basis(self.dim, 0);
                }
                let mut acc = vec![0.0; self.dim];
                for tok in &toks {
                    for (a, b) in acc.iter_mut().zip(self.token_vector(tok)) {
                        *a += b;
                    }
                }
                let v = Vector::new(acc);
                v.unit_normalized()
                    .unwrap_or_else(|| Vector::basis(self.dim, 0))
            })
            .collect())
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }
}
