//! Partition-restricted vector retrieval: an exact flat cosine index per
//! meta-path partition, top-N search with a deterministic tie rule, and the
//! line-oriented corpus rendering consumed by prompts and rewards.
//!
//! The index is an exact scan rather than an ANN structure; at the scales
//! this engine targets, exactness keeps the retrieval oracle-testable. An
//! approximate backend can replace the scan behind the same contract.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{
    Edge, KnowledgeGraph, MetaPath, MetaPathCatalog, MetaPathSelection, Node, SubgraphPartition,
};
use crate::providers::{embed, embed_all, EmbeddingProvider, ProviderError};

#[derive(Debug, Error)]
pub enum RetrieverError {
    #[error("dimension mismatch: query has {query}, index has {index}")]
    DimMismatch { query: usize, index: usize },
    #[error("no index built for meta-path {index} {triple}")]
    MissingPartition { index: usize, triple: String },
    #[error("non-finite vector component for key '{0}'")]
    NonFinite(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// A fixed-length real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// The `i`-th standard basis vector.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Unit-normalized copy; `None` for zero or non-finite vectors.
    pub fn unit_normalized(&self) -> Option<Self> {
        if !self.is_finite() {
            return None;
        }
        let n = self.norm();
        if n <= 0.0 {
            return None;
        }
        Some(Self(self.0.iter().map(|x| x / n).collect()))
    }

    /// Cosine similarity. Inputs are unit vectors throughout the engine, so
    /// this is a dot product; the denominator guards imported vectors.
    pub fn cosine(&self, other: &Self) -> f64 {
        let denom = self.norm() * other.norm();
        if denom <= 0.0 {
            return 0.0;
        }
        self.dot(other) / denom
    }
}

/// The vector index of one partition: one entry per node and per edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionIndex {
    pub meta_path: MetaPath,
    pub node_entries: Vec<(String, Vector)>,
    pub edge_entries: Vec<(String, Vector)>,
}

/// Text rendered for a node before embedding.
pub fn node_text(node: &Node) -> String {
    format!("{}: {}", node.node_type, node.name)
}

/// Text rendered for an edge before embedding, using endpoint names.
pub fn edge_text(edge: &Edge, names: &HashMap<&str, &str>) -> String {
    let head = names
        .get(edge.head.as_str())
        .copied()
        .unwrap_or(edge.head.as_str());
    let tail = names
        .get(edge.tail.as_str())
        .copied()
        .unwrap_or(edge.tail.as_str());
    format!("{} {} {}", head, edge.relation, tail)
}

/// Embed every node and edge of a partition (batched). Entries keep
/// partition order; keys are node ids and edge keys.
pub fn build_index(
    partition: &SubgraphPartition,
    provider: &dyn EmbeddingProvider,
) -> Result<PartitionIndex, RetrieverError> {
    let names: HashMap<&str, &str> = partition
        .nodes
        .iter()
        .map(|n| (n.id.as_str(), n.name.as_str()))
        .collect();
    let node_texts: Vec<String> = partition.nodes.iter().map(node_text).collect();
    let edge_texts: Vec<String> = partition
        .edges
        .iter()
        .map(|e| edge_text(e, &names))
        .collect();
    let node_entries = partition
        .nodes
        .iter()
        .zip(embed_all(provider, &node_texts)?)
        .map(|(n, v)| Ok((n.id.clone(), checked(v, &n.id)?)))
        .collect::<Result<Vec<_>, RetrieverError>>()?;
    let edge_entries = partition
        .edges
        .iter()
        .zip(embed_all(provider, &edge_texts)?)
        .map(|(e, v)| {
            let key = e.key();
            Ok((key.clone(), checked(v, &key)?))
        })
        .collect::<Result<Vec<_>, RetrieverError>>()?;
    Ok(PartitionIndex {
        meta_path: partition.meta_path.clone(),
        node_entries,
        edge_entries,
    })
}

fn checked(v: Vector, key: &str) -> Result<Vector, RetrieverError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(RetrieverError::NonFinite(key.to_string()))
    }
}

/// One ranked hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMatch {
    pub key: String,
    pub similarity: f64,
}

/// The `n` entries most cosine-similar to `query`, ties broken by
/// ascending key. Returns fewer than `n` only when the entry list is
/// smaller.
pub fn top_n(
    entries: &[(String, Vector)],
    query: &Vector,
    n: usize,
) -> Result<Vec<RankedMatch>, RetrieverError> {
    if let Some((key, v)) = entries.first() {
        if v.dim() != query.dim() {
            let _ = key;
            return Err(RetrieverError::DimMismatch {
                query: query.dim(),
                index: v.dim(),
            });
        }
    }
    let mut scored: Vec<RankedMatch> = entries
        .iter()
        .map(|(key, v)| RankedMatch {
            key: key.clone(),
            similarity: query.cosine(v),
        })
        .collect();
    scored.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .expect("finite similarities")
            .then_with(|| a.key.cmp(&b.key))
    });
    scored.truncate(n);
    Ok(scored)
}

/// A partition together with its index, the unit of retrieval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexedPartition {
    pub partition: SubgraphPartition,
    pub index: PartitionIndex,
}

impl IndexedPartition {
    /// Canonical JSON export; rebuilding the same partition with the same
    /// provider reproduces these bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// All built partition indexes, keyed by catalog index.
#[derive(Debug, Clone, Default)]
pub struct IndexSet {
    by_meta_path: BTreeMap<usize, IndexedPartition>,
}

impl IndexSet {
    /// Build indexes for every catalog entry.
    pub fn build_all(
        kg: &KnowledgeGraph,
        catalog: &MetaPathCatalog,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, RetrieverError> {
        let indices: Vec<usize> = (0..catalog.count()).collect();
        Self::build_some(kg, catalog, &indices, provider)
    }

    /// Build indexes for the listed catalog entries only.
    pub fn build_some(
        kg: &KnowledgeGraph,
        catalog: &MetaPathCatalog,
        indices: &[usize],
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, RetrieverError> {
        let mut set = Self::default();
        for &i in indices {
            let mp = catalog
                .get(i)
                .ok_or_else(|| RetrieverError::MissingPartition {
                    index: i,
                    triple: "(not in catalog)".to_string(),
                })?;
            let partition = crate::kg::partition(kg, mp);
            let index = build_index(&partition, provider)?;
            set.by_meta_path
                .insert(i, IndexedPartition { partition, index });
        }
        Ok(set)
    }

    pub fn insert(&mut self, catalog_index: usize, indexed: IndexedPartition) {
        self.by_meta_path.insert(catalog_index, indexed);
    }

    pub fn get(&self, catalog_index: usize) -> Option<&IndexedPartition> {
        self.by_meta_path.get(&catalog_index)
    }

    pub fn len(&self) -> usize {
        self.by_meta_path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_meta_path.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&usize, &IndexedPartition)> {
        self.by_meta_path.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Node,
    Edge,
}

/// Where a retrieved item came from and how well it matched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub meta_path: usize,
    pub kind: ItemKind,
    pub key: String,
    pub similarity: f64,
}

/// The union of per-partition top-N node and edge hits, deduplicated by
/// key, with full provenance in retrieval order.
#[derive(Debug, Clone, Default)]
pub struct RetrievedCorpus {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub provenance: Vec<Provenance>,
    names: HashMap<String, String>,
}

impl RetrievedCorpus {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.edges.is_empty()
    }
}

/// Run top-N retrieval over every selected partition for one query.
///
/// Nodes and edges are retrieved separately with the same `n`; items are
/// deduplicated across partitions by key (first hit kept) while provenance
/// records every hit. A selected partition without a built index is an
/// error naming it.
pub fn retrieve_subgraph(
    query_text: &str,
    selection: &MetaPathSelection,
    indexes: &IndexSet,
    n: usize,
    provider: &dyn EmbeddingProvider,
) -> Result<RetrievedCorpus, RetrieverError> {
    let mut corpus = RetrievedCorpus::default();
    if selection.correct.is_empty() {
        return Ok(corpus);
    }
    let query = embed(provider, query_text)?;
    let mut seen_nodes: HashSet<String> = HashSet::new();
    let mut seen_edges: HashSet<String> = HashSet::new();

    for &mp_index in &selection.correct {
        let indexed = indexes
            .get(mp_index)
            .ok_or_else(|| RetrieverError::MissingPartition {
                index: mp_index,
                triple: String::new(),
            })?;
        let node_by_id: HashMap<&str, &Node> = indexed
            .partition
            .nodes
            .iter()
            .map(|nd| (nd.id.as_str(), nd))
            .collect();
        for hit in top_n(&indexed.index.node_entries, &query, n)? {
            corpus.provenance.push(Provenance {
                meta_path: mp_index,
                kind: ItemKind::Node,
                key: hit.key.clone(),
                similarity: hit.similarity,
            });
            if seen_nodes.insert(hit.key.clone()) {
                let node = node_by_id[hit.key.as_str()].clone();
                corpus.names.insert(node.id.clone(), node.name.clone());
                corpus.nodes.push(node);
            }
        }
        let edge_by_key: HashMap<String, &Edge> = indexed
            .partition
            .edges
            .iter()
            .map(|e| (e.key(), e))
            .collect();
        for hit in top_n(&indexed.index.edge_entries, &query, n)? {
            corpus.provenance.push(Provenance {
                meta_path: mp_index,
                kind: ItemKind::Edge,
                key: hit.key.clone(),
                similarity: hit.similarity,
            });
            if seen_edges.insert(hit.key.clone()) {
                let edge = edge_by_key[&hit.key].clone();
                for id in [&edge.head, &edge.tail] {
                    if let Some(nd) = node_by_id.get(id.as_str()) {
                        corpus.names.insert(nd.id.clone(), nd.name.clone());
                    }
                }
                corpus.edges.push(edge);
            }
        }
    }
    Ok(corpus)
}

/// Deterministic line-per-item rendering in provenance order: nodes as
/// `type: name`, edges as `(head_name) -[relation]-> (tail_name)`.
/// Duplicate provenance hits render once.
pub fn serialize_corpus(corpus: &RetrievedCorpus) -> String {
    let node_by_id: HashMap<&str, &Node> =
        corpus.nodes.iter().map(|nd| (nd.id.as_str(), nd)).collect();
    let edge_by_key: HashMap<String, &Edge> = corpus.edges.iter().map(|e| (e.key(), e)).collect();
    let mut lines = Vec::new();
    let mut rendered: HashSet<&str> = HashSet::new();
    for p in &corpus.provenance {
        if !rendered.insert(p.key.as_str()) {
            continue;
        }
        match p.kind {
            ItemKind::Node => {
                if let Some(node) = node_by_id.get(p.key.as_str()) {
                    lines.push(node_text(node));
                }
            }
            ItemKind::Edge => {
                if let Some(edge) = edge_by_key.get(&p.key) {
                    let name = |id: &str| {
                        corpus
                            .names
                            .get(id)
                            .map(String::as_str)
                            .unwrap_or(id)
                            .to_string()
                    };
                    lines.push(format!(
                        "({}) -[{}]-> ({})",
                        name(&edge.head),
                        edge.relation,
                        name(&edge.tail)
                    ));
                }
            }
        }
    }
    lines.join("\n")
}
