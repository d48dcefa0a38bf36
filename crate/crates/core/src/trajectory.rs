//! Logged episodes: the step records, the frozen config snapshot, stable
//! JSON Lines persistence, and deterministic episode ids.
//!
//! A trajectory line is byte-stable: struct field order is fixed, floats
//! serialize via the shortest round-trip form, and episode ids are pure
//! functions of `(seed, task, patient, config snapshot)` so identical runs
//! produce identical files on any platform.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kg::MetaPathSelection;
use crate::retriever::Provenance;
use crate::rewards::{NormalizationMode, RankMode, RewardBreakdown};
use crate::rl::CriticTarget;
use crate::tasks::{Label, TaskKind, TaskSpec};

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("trajectory line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
}

/// The runtime parameters an episode ran under. Paths and endpoints are
/// deliberately excluded so the snapshot (and the episode id derived from
/// it) is identical across machines and surfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub seed: u64,
    pub provider_mode: String,
    /// Number of query rewrites (K).
    pub k: usize,
    /// Retrieval depth per partition (N).
    pub top_n: usize,
    /// Iteration cap (I).
    pub max_iterations: usize,
    pub max_meta_paths: usize,
    /// Expected reasoning-chain length (L).
    pub expected_reason_len: usize,
    pub eta: f64,
    pub alpha: f64,
    pub normalization: NormalizationMode,
    pub rank_mode: RankMode,
    pub gamma: f64,
    pub lam: f64,
    pub epsilon: f64,
    pub critic_target: CriticTarget,
    pub kappa_days: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Llm,
    Rag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Control {
    Continue,
    Terminate,
}

/// The router's parsed decision for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopActionRecord {
    pub route: Route,
    pub control: Control,
    /// Control was coerced to terminate (iteration cap or drained queue).
    pub forced: bool,
    /// The decision output violated the expected grammar.
    pub malformed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryOrigin {
    Initial,
    Rewrite,
    Deepening,
}

/// One loop iteration of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based iteration number.
    pub iteration: usize,
    pub query: String,
    pub query_origin: QueryOrigin,
    pub top_action: TopActionRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<MetaPathSelection>,
    pub corpus_provenance: Vec<Provenance>,
    pub intermediate_answer: String,
    pub action_log_prob: Option<f64>,
    pub ref_log_prob: Option<f64>,
    pub value_estimate: Option<f64>,
    pub reward: RewardBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeStatus {
    Complete,
    Failed,
}

/// The full logged record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: String,
    pub task: TaskSpec,
    pub patient_id: String,
    pub seed: u64,
    pub config: ConfigSnapshot,
    pub initial_query: String,
    pub steps: Vec<StepRecord>,
    pub final_prediction: Option<Label>,
    pub gold: Label,
    pub status: EpisodeStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Trajectory {
    /// One stable JSON line (no trailing newline).
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

const CROCKFORD: &[u8; 32] = b"0123456789ABCDEFGHJKMNPQRSTVWXYZ";

/// Deterministic 26-character Crockford-base32 episode id (lexicographically
/// sortable, ULID-shaped). The high 48 bits carry the seed; the low 80 bits
/// are a hash of `(task, patient, snapshot)`. Identical inputs share an id,
/// which makes re-submission idempotent by construction.
pub fn episode_id(
    seed: u64,
    task: TaskKind,
    patient_id: &str,
    snapshot: &ConfigSnapshot,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(task.as_str().as_bytes());
    hasher.update([0x1f]);
    hasher.update(patient_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(serde_json::to_vec(snapshot).expect("snapshot serializes"));
    let digest = hasher.finalize();

    let mut bytes = [0u8; 16];
    bytes[..6].copy_from_slice(&seed.to_be_bytes()[2..]);
    bytes[6..].copy_from_slice(&digest[..10]);
    let value = u128::from_be_bytes(bytes);

    let mut out = String::with_capacity(26);
    for i in 0..26 {
        let shift = 125usize.saturating_sub(5 * i);
        let idx = ((value >> shift) & 0x1f) as usize;
        out.push(CROCKFORD[idx] as char);
    }
    out
}

/// Read a JSON Lines trajectory file.
pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, TrajectoryError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            Trajectory::from_line(&line).map_err(|source| TrajectoryError::Parse {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

/// Append trajectory lines to a writer.
pub fn write_trajectories<W: Write>(
    mut w: W,
    trajectories: &[Trajectory],
) -> Result<(), TrajectoryError> {
    for t in trajectories {
        w.write_all(t.to_line().as_bytes())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
