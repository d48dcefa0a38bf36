//! Reward components and their composition.
//!
//! Per-step components: `r_path` scores the parsed meta-path selection and
//! `r_rel` scores how well a summarization step addresses its sub-query and
//! sticks to the retrieved evidence. Episode-level components attach to the
//! terminal step: `r_reason` scores reasoning-chain length against the
//! expected length, `r_orm` is the outcome-supervised indicator sum, and
//! `r_rank` compares the reasoning history against reference histories.
//!
//! Composition per step: `r_cost = r_reason + r_path + r_rel` and
//! `r_all = r_cost + eta * r_orm + r_rank`, with an optional normalization
//! pass over the episode's `r_all` stream.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::MetaPathSelection;
use crate::tasks::Label;
use crate::text::tokens;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("reference trajectory file: {0}")]
    Io(#[from] std::io::Error),
    #[error("reference trajectory line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
}

/// Normalization applied to the per-step `r_all` stream of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    #[default]
    None,
    Clamp,
    RunningZscore,
}

/// How the ranking reward combines the positive/negative similarities.
///
/// `Literal` is `max(alpha, sim_pos - sim_neg)` and therefore never falls
/// below `alpha`; `Margin` is the hinge reading `max(0, alpha - (sim_pos -
/// sim_neg))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    #[default]
    Literal,
    Margin,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Expected reasoning-chain length, in steps.
    pub expected_reason_len: usize,
    /// Weight of the outcome reward in the composition.
    pub eta: f64,
    /// Ranking margin.
    pub alpha: f64,
    pub normalization: NormalizationMode,
    pub rank_mode: RankMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            expected_reason_len: 3,
            eta: 5.0,
            alpha: 0.1,
            normalization: NormalizationMode::None,
            rank_mode: RankMode::Literal,
        }
    }
}

/// Reference reasoning histories for the ranking reward.
#[derive(Debug, Clone, Default)]
pub struct ReferenceTrajectories {
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct ReferenceLine {
    polarity: String,
    history: String,
}

impl ReferenceTrajectories {
    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }

    /// Load from JSON Lines of `{"polarity": "pos"|"neg", "history": "..."}`.
    pub fn load(path: &Path) -> Result<Self, RewardError> {
        let file = std::fs::File::open(path)?;
        let mut refs = Self::default();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ReferenceLine =
                serde_json::from_str(&line).map_err(|source| RewardError::Parse {
                    line: i + 1,
                    source,
                })?;
            match parsed.polarity.as_str() {
                "pos" => refs.positives.push(parsed.history),
                "neg" => refs.negatives.push(parsed.history),
                other => {
                    tracing::warn!(line = i + 1, polarity = other, "unknown polarity, skipping")
                }
            }
        }
        Ok(refs)
    }
}

/// Outcome indicators, each 0/1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Indicators {
    pub answer_correct: u8,
    pub answer_format: u8,
    pub action_format: u8,
}

/// Every reward component of one step, pre- and post-normalization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_reason: f64,
    pub r_path: f64,
    pub r_rel: f64,
    pub r_cost: f64,
    pub r_orm: f64,
    pub r_rank: f64,
    pub r_all: f64,
    pub r_all_norm: f64,
    pub indicators: Indicators,
}

/// Jaccard similarity of the lowercased whitespace-token sets.
///
/// Symmetric, in `[0, 1]`, `1` on identical non-empty inputs, and `0`
/// whenever either side has no tokens.
pub fn sim(a: &str, b: &str) -> f64 {
    let sa: BTreeSet<String> = tokens(a).into_iter().collect();
    let sb: BTreeSet<String> = tokens(b).into_iter().collect();
    if sa.is_empty() || sb.is_empty() {
        return 0.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    inter as f64 / union as f64
}

/// Reasoning-length reward: `1 - |len/L - 1|`. Peaks at 1 when the chain
/// has exactly the expected length; can go negative for very long chains.
pub fn reward_reason(history_len: usize, expected_len: usize) -> f64 {
    let l = expected_len.max(1) as f64;
    1.0 - (history_len as f64 / l - 1.0).abs()
}

/// Meta-path selection reward: `|correct| - 0.5|erroneous| - 0.5|repeated|`.
/// Steps without a selection (parametric route) score 0.
pub fn reward_path(selection: Option<&MetaPathSelection>) -> f64 {
    match selection {
        Some(sel) => {
            sel.correct.len() as f64
                - 0.5 * sel.erroneous.len() as f64
                - 0.5 * sel.repeated.len() as f64
        }
        None => 0.0,
    }
}

/// Retrieval-relevance reward: `sim(answer, sub_query) + sim(answer,
/// corpus)`, in `[0, 2]`. Only meaningful on retrieval-routed steps.
pub fn reward_rel(answer: &str, sub_query: &str, corpus_text: &str) -> f64 {
    sim(answer, sub_query) + sim(answer, corpus_text)
}

/// Outcome-supervised reward: correctness of the final label, answer format
/// validity, and action format validity across all steps; each 0/1.
pub fn reward_orm(
    prediction: &Label,
    answer_format_ok: bool,
    gold: &Label,
    actions_format_ok: bool,
) -> f64 {
    f64::from(indicators(
        prediction,
        answer_format_ok,
        gold,
        actions_format_ok,
    ))
}

pub fn indicators(
    prediction: &Label,
    answer_format_ok: bool,
    gold: &Label,
    actions_format_ok: bool,
) -> Indicators {
    Indicators {
        answer_correct: u8::from(prediction == gold),
        answer_format: u8::from(answer_format_ok),
        action_format: u8::from(actions_format_ok),
    }
}

impl From<Indicators> for f64 {
    fn from(ind: Indicators) -> f64 {
        f64::from(ind.answer_correct) + f64::from(ind.answer_format) + f64::from(ind.action_format)
    }
}

/// Ranking reward against the nearest positive and nearest negative
/// reference history (by [`sim`]); absent references contribute 0.
pub fn reward_rank(
    history_text: &str,
    refs: &ReferenceTrajectories,
    alpha: f64,
    mode: RankMode,
) -> f64 {
    let best = |pool: &[String]| {
        pool.iter()
            .map(|r| sim(history_text, r))
            .fold(0.0_f64, f64::max)
    };
    let sim_pos = best(&refs.positives);
    let sim_neg = best(&refs.negatives);
    match mode {
        RankMode::Literal => (sim_pos - sim_neg).max(alpha),
        RankMode::Margin => (alpha - (sim_pos - sim_neg)).max(0.0),
    }
}

/// Composition: `r_cost + eta * r_orm + r_rank`, before normalization.
pub fn reward_all(r_cost: f64, r_orm: f64, r_rank: f64, eta: f64) -> f64 {
    r_cost + eta * r_orm + r_rank
}

/// Streaming normalizer for one episode's reward stream. State is confined
/// to a single scoring pass; concurrent episodes each own one.
#[derive(Debug, Clone)]
pub struct Normalizer {
    mode: NormalizationMode,
    count: u64,
    mean: f64,
    m2: f64,
}

impl Normalizer {
    pub const CLAMP_BOUND: f64 = 5.0;
    const STD_FLOOR: f64 = 1e-8;

    pub fn new(mode: NormalizationMode) -> Self {
        Self {
            mode,
            count: 0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    /// Feed one value and return its normalized form.
    pub fn push(&mut self, x: f64) -> f64 {
        match self.mode {
            NormalizationMode::None => x,
            NormalizationMode::Clamp => x.clamp(-Self::CLAMP_BOUND, Self::CLAMP_BOUND),
            NormalizationMode::RunningZscore => {
                // Welford update including the current value.
                self.count += 1;
                let delta = x - self.mean;
                self.mean += delta / self.count as f64;
                self.m2 += delta * (x - self.mean);
                let std = (self.m2 / self.count as f64).sqrt();
                (x - self.mean) / std.max(Self::STD_FLOOR)
            }
        }
    }

    pub fn normalize_all(mode: NormalizationMode, values: &[f64]) -> Vec<f64> {
        let mut n = Self::new(mode);
        values.iter().map(|&v| n.push(v)).collect()
    }
}
