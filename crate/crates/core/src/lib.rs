//! Hierarchical agentic graph-RAG engine for clinical outcome prediction.
//!
//! The engine runs an iterative two-agent loop over a patient record: a
//! top-level router decides per step whether to answer from the language
//! model's own knowledge or to retrieve from a meta-path-partitioned
//! knowledge graph, and whether to keep deepening or terminate; a low-level
//! summarizer turns retrieved subgraphs into intermediate answers. Every
//! episode is logged as a reward-annotated trajectory suitable for offline
//! PPO-style scoring.
//!
//! Module map:
//! - [`kg`] — triple ingestion, meta-path catalog, subgraph partitions
//! - [`retriever`] — vector index over partitions, top-N cosine retrieval
//! - [`providers`] — LLM / embedding provider abstraction (mock, HTTP, file)
//! - [`agent`] — the episode state machine (routing, summarization, finalize)
//! - [`rewards`] — reward components and composition
//! - [`rl`] — returns, GAE advantages, clipped PPO objective, critic loss
//! - [`tasks`] — task labels, synthetic cohorts, evaluation metrics
//! - [`engine`] — wiring: config -> loaded graph + indexes + providers

pub mod agent;
pub mod config;
pub mod engine;
pub mod kg;
pub mod prompt;
pub mod providers;
pub mod retriever;
pub mod rewards;
pub mod rl;
pub mod synth;
pub mod tasks;
pub mod text;
pub mod trajectory;
