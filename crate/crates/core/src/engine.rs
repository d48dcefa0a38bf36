//! Engine assembly: resolve a config into a loaded graph, catalog, built
//! (or loaded) indexes, providers, and reference histories, then run
//! episodes against cohort entries.
//!
//! The engine is immutable once built and safe to share across threads;
//! each episode owns its trajectory.

use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{run_episode, EpisodeInputs};
use crate::config::{ConfigError, EmbeddingBackend, EngineConfig, ProviderMode, RuntimeOverrides};
use crate::kg::{catalog_meta_paths, ingest_triples, KgError, KnowledgeGraph, MetaPathCatalog};
use crate::prompt::CodeNames;
use crate::providers::{
    ChatProvider, EmbeddingProvider, FileEmbedder, HttpEmbedder, HttpLlm, MockEmbedder, MockLlm,
    ProviderError,
};
use crate::retriever::{IndexSet, IndexedPartition, RetrieverError};
use crate::rewards::{ReferenceTrajectories, RewardError};
use crate::tasks::{CohortEntry, Label, PatientRecord, TaskKind, TaskSpec};
use crate::trajectory::Trajectory;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    References(#[from] RewardError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config requires paths.{0} for this operation")]
    MissingPath(&'static str),
    #[error("patient {patient} has no gold label for task {task}")]
    MissingGold { patient: String, task: &'static str },
    #[error("stale index file {file}: {reason}")]
    StaleIndex { file: String, reason: String },
}

pub struct Engine {
    pub config: EngineConfig,
    pub kg: KnowledgeGraph,
    pub catalog: MetaPathCatalog,
    pub names: CodeNames,
    pub indexes: IndexSet,
    pub refs: ReferenceTrajectories,
    llm: Arc<dyn ChatProvider>,
    embedder: Arc<dyn EmbeddingProvider>,
}

impl Engine {
    /// Build everything a run needs. The knowledge graph is required;
    /// indexes are loaded from `paths.index_dir` when present there,
    /// otherwise built in memory with the configured embedding provider.
    pub fn from_config(config: EngineConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let kg_path = config
            .paths
            .kg_tsv
            .as_ref()
            .ok_or(EngineError::MissingPath("kg_tsv"))?;
        let file = std::fs::File::open(kg_path)?;
        let kg = ingest_triples(std::io::BufReader::new(file))?;
        let catalog = catalog_meta_paths(&kg);
        let names = CodeNames::from_kg(&kg);

        let llm = build_llm(&config)?;
        let embedder = build_embedder(&config)?;

        let indexes = match config.paths.index_dir.as_ref() {
            Some(dir) if has_index_files(dir) => load_indexes(dir, &catalog)?,
            _ => IndexSet::build_all(&kg, &catalog, embedder.as_ref())?,
        };

        let refs = match config.paths.references.as_ref() {
            Some(path) => ReferenceTrajectories::load(path)?,
            None => ReferenceTrajectories::default(),
        };

        Ok(Self {
            config,
            kg,
            catalog,
            names,
            indexes,
            refs,
            llm,
            embedder,
        })
    }

    pub fn llm(&self) -> &dyn ChatProvider {
        self.llm.as_ref()
    }

    pub fn embedder(&self) -> &dyn EmbeddingProvider {
        self.embedder.as_ref()
    }

    /// Gold label of a cohort entry for one task.
    pub fn gold_for(&self, kind: TaskKind, entry: &CohortEntry) -> Result<Label, EngineError> {
        match kind {
            TaskKind::Dec => Ok(entry.gold.dec.clone()),
            TaskKind::Los => Ok(entry.gold.los.clone()),
            TaskKind::Read => entry.gold.read.clone().ok_or(EngineError::MissingGold {
                patient: entry.patient.patient_id.clone(),
                task: "read",
            }),
        }
    }

    /// Run one episode for a cohort entry.
    pub fn run_for_entry(
        &self,
        kind: TaskKind,
        entry: &CohortEntry,
        overrides: Option<&RuntimeOverrides>,
    ) -> Result<Trajectory, EngineError> {
        let gold = self.gold_for(kind, entry)?;
        Ok(self.run_for_patient(kind, &entry.patient, gold, overrides))
    }

    /// Run one episode for an arbitrary patient record with a known gold
    /// label. Never fails: provider errors yield a failed trajectory.
    pub fn run_for_patient(
        &self,
        kind: TaskKind,
        patient: &PatientRecord,
        gold: Label,
        overrides: Option<&RuntimeOverrides>,
    ) -> Trajectory {
        let task = TaskSpec::for_kind(kind, self.config.tasks.kappa_days);
        let mut snapshot = self.config.snapshot();
        if let Some(ov) = overrides {
            ov.apply(&mut snapshot);
        }
        run_episode(&EpisodeInputs {
            task: &task,
            patient,
            gold,
            names: &self.names,
            catalog: &self.catalog,
            indexes: &self.indexes,
            refs: &self.refs,
            llm: self.llm.as_ref(),
            embedder: self.embedder.as_ref(),
            snapshot,
            want_logprobs: self.config.provider.llm.logprobs,
        })
    }

    /// SHA-256 of each partition's canonical index export.
    pub fn index_checksums(&self) -> Vec<(usize, String)> {
        self.indexes
            .iter()
            .map(|(&i, part)| (i, hex::encode(Sha256::digest(part.to_json().as_bytes()))))
            .collect()
    }
}

fn build_llm(config: &EngineConfig) -> Result<Arc<dyn ChatProvider>, EngineError> {
    match config.provider.mode {
        ProviderMode::Mock => {
            let llm = match config.provider.llm.script.as_ref() {
                Some(path) => MockLlm::load(path)?,
                None => {
                    tracing::warn!("mock provider has no script; all calls return empty output");
                    MockLlm::from_rules(Vec::new())
                }
            };
            Ok(Arc::new(llm))
        }
        ProviderMode::Http => {
            let endpoint = config
                .provider
                .llm
                .endpoint
                .clone()
                .ok_or(EngineError::MissingPath("provider.llm.endpoint"))?;
            Ok(Arc::new(HttpLlm::new(
                endpoint,
                config.provider.llm.model.clone(),
            )?))
        }
    }
}

/// Construct just the embedding provider from a config (used by index
/// builds that never touch the chat provider).
pub fn embedder_from_config(
    config: &EngineConfig,
) -> Result<Arc<dyn EmbeddingProvider>, EngineError> {
    build_embedder(config)
}

fn build_embedder(config: &EngineConfig) -> Result<Arc<dyn EmbeddingProvider>, EngineError> {
    let e = &config.provider.embedding;
    match e.backend {
        EmbeddingBackend::Mock => Ok(Arc::new(MockEmbedder::new(e.dim, e.seed))),
        EmbeddingBackend::Http => {
            let endpoint = e
                .endpoint
                .clone()
                .ok_or(EngineError::MissingPath("provider.embedding.endpoint"))?;
            Ok(Arc::new(HttpEmbedder::new(endpoint, e.model.clone())?))
        }
        EmbeddingBackend::File => {
            let path = e
                .file
                .clone()
                .ok_or(EngineError::MissingPath("provider.embedding.file"))?;
            Ok(Arc::new(FileEmbedder::load(&path)?))
        }
    }
}

fn index_file_name(catalog_index: usize) -> String {
    format!("partition-{catalog_index:04}.json")
}

fn has_index_files(dir: &Path) -> bool {
    std::fs::read_dir(dir)
        .map(|mut entries| {
            entries.any(|e| {
                e.map(|e| e.file_name().to_string_lossy().starts_with("partition-"))
                    .unwrap_or(false)
            })
        })
        .unwrap_or(false)
}

/// Persist every built partition index into `dir`.
pub fn save_indexes(dir: &Path, indexes: &IndexSet) -> Result<(), EngineError> {
    std::fs::create_dir_all(dir)?;
    for (&i, part) in indexes.iter() {
        std::fs::write(dir.join(index_file_name(i)), part.to_json())?;
    }
    Ok(())
}

/// Load previously saved partition indexes, validating each against the
/// current catalog.
pub fn load_indexes(dir: &Path, catalog: &MetaPathCatalog) -> Result<IndexSet, EngineError> {
    let mut set = IndexSet::default();
    for i in 0..catalog.count() {
        let path = dir.join(index_file_name(i));
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path)?;
        let part = IndexedPartition::from_json(&text).map_err(|e| EngineError::StaleIndex {
            file: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let expected = catalog.get(i).expect("index within catalog range");
        if part.partition.meta_path.triple() != expected.triple() {
            return Err(EngineError::StaleIndex {
                file: path.display().to_string(),
                reason: format!(
                    "file holds {} but catalog entry {i} is {}",
                    part.partition.meta_path.display_triple(),
                    expected.display_triple()
                ),
            });
        }
        set.insert(i, part);
    }
    Ok(set)
}
