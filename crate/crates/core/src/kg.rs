//! Heterogeneous knowledge-graph store: triple ingestion, meta-path
//! enumeration, and per-meta-path subgraph partitions.
//!
//! The on-disk format is a 7-field TSV, one edge per line:
//!
//! ```text
//! head_id <TAB> head_type <TAB> head_name <TAB> relation <TAB> tail_id <TAB> tail_type <TAB> tail_name
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. A meta-path is a
//! typed triple `(head_type, relation, tail_type)`; the catalog enumerates
//! every distinct triple occurring on an edge, sorted lexicographically and
//! indexed densely from zero.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("line {line}: expected 7 tab-separated fields, got {got}")]
    Malformed { line: usize, got: usize },
    #[error("line {line}: node '{id}' already has type '{existing}', got '{conflicting}'")]
    TypeConflict {
        line: usize,
        id: String,
        existing: String,
        conflicting: String,
    },
    #[error("line {line}: empty node id")]
    EmptyId { line: usize },
    #[error("unknown meta-path '{0}'")]
    UnknownMetaPath(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A typed, named entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    #[serde(rename = "type")]
    pub node_type: String,
    pub name: String,
}

/// A directed, typed edge between two node ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Edge {
    /// Stable unique key. Fields of a TSV-ingested graph cannot contain
    /// tabs, so the join is collision-free.
    pub fn key(&self) -> String {
        format!("{}\t{}\t{}", self.head, self.relation, self.tail)
    }
}

/// An immutable heterogeneous graph. Shared read-only across episodes.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub node_types: BTreeSet<String>,
    pub edge_types: BTreeSet<String>,
    by_id: HashMap<String, usize>,
}

impl KnowledgeGraph {
    pub fn node(&self, id: &str) -> Option<&Node> {
        self.by_id.get(id).map(|&i| &self.nodes[i])
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// A typed relational pattern `(head_type, relation, tail_type)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetaPath {
    pub index: usize,
    pub head_type: String,
    pub relation: String,
    pub tail_type: String,
}

impl MetaPath {
    pub fn triple(&self) -> (&str, &str, &str) {
        (&self.head_type, &self.relation, &self.tail_type)
    }

    pub fn display_triple(&self) -> String {
        format!(
            "({}, {}, {})",
            self.head_type, self.relation, self.tail_type
        )
    }

    fn matches(&self, kg: &KnowledgeGraph, edge: &Edge) -> bool {
        match (kg.node(&edge.head), kg.node(&edge.tail)) {
            (Some(h), Some(t)) => {
                h.node_type == self.head_type
                    && edge.relation == self.relation
                    && t.node_type == self.tail_type
            }
            _ => false,
        }
    }
}

/// The universal meta-path set of a graph: deterministic order, dense ids.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetaPathCatalog {
    pub paths: Vec<MetaPath>,
}

impl MetaPathCatalog {
    pub fn count(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&MetaPath> {
        self.paths.get(index)
    }

    pub fn find_triple(&self, head_type: &str, relation: &str, tail_type: &str) -> Option<usize> {
        self.paths
            .iter()
            .position(|p| p.triple() == (head_type, relation, tail_type))
    }

    /// JSON export: a list of `{index, head_type, relation, tail_type}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.paths).expect("catalog serializes")
    }
}

/// The edges of one meta-path together with exactly their endpoint nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubgraphPartition {
    pub meta_path: MetaPath,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

/// Parsed meta-path selection from agent output: resolved catalog indices,
/// unresolvable raw tokens, and redundant (duplicate or over-budget) indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPathSelection {
    pub correct: Vec<usize>,
    pub erroneous: Vec<String>,
    pub repeated: Vec<usize>,
}

impl MetaPathSelection {
    pub fn is_empty(&self) -> bool {
        self.correct.is_empty() && self.erroneous.is_empty() && self.repeated.is_empty()
    }
}

/// Parse the TSV triple format into a graph.
///
/// Nodes are deduplicated by id in first-appearance order; a node id seen
/// with two different types is a hard error, while a second name for the
/// same `(id, type)` keeps the first name and logs a warning. Exact
/// duplicate `(head, relation, tail)` lines collapse to one edge.
pub fn ingest_triples<R: BufRead>(reader: R) -> Result<KnowledgeGraph, KgError> {
    let mut kg = KnowledgeGraph::default();
    let mut seen_edges: HashSet<Edge> = HashSet::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 7 {
            return Err(KgError::Malformed {
                line: lineno,
                got: fields.len(),
            });
        }
        let (head_id, head_type, head_name, relation, tail_id, tail_type, tail_name) = (
            fields[0], fields[1], fields[2], fields[3], fields[4], fields[5], fields[6],
        );
        upsert_node(&mut kg, lineno, head_id, head_type, head_name)?;
        upsert_node(&mut kg, lineno, tail_id, tail_type, tail_name)?;

        let edge = Edge {
            head: head_id.to_string(),
            relation: relation.to_string(),
            tail: tail_id.to_string(),
        };
        kg.edge_types.insert(relation.to_string());
        if seen_edges.insert(edge.clone()) {
            kg.edges.push(edge);
        }
    }
    Ok(kg)
}

fn upsert_node(
    kg: &mut KnowledgeGraph,
    line: usize,
    id: &str,
    node_type: &str,
    name: &str,
) -> Result<(), KgError> {
    if id.is_empty() {
        return Err(KgError::EmptyId { line });
    }
    if let Some(&idx) = kg.by_id.get(id) {
        let existing = &kg.nodes[idx];
        if existing.node_type != node_type {
            return Err(KgError::TypeConflict {
                line,
                id: id.to_string(),
                existing: existing.node_type.clone(),
                conflicting: node_type.to_string(),
            });
        }
        if existing.name != name {
            tracing::warn!(line, id, kept = %existing.name, dropped = %name, "node name conflict, keeping first");
        }
        return Ok(());
    }
    kg.by_id.insert(id.to_string(), kg.nodes.len());
    kg.nodes.push(Node {
        id: id.to_string(),
        node_type: node_type.to_string(),
        name: name.to_string(),
    });
    kg.node_types.insert(node_type.to_string());
    Ok(())
}

/// Enumerate every distinct `(head_type, relation, tail_type)` occurring on
/// an edge, sorted lexicographically by the triple and indexed from zero.
pub fn catalog_meta_paths(kg: &KnowledgeGraph) -> MetaPathCatalog {
    let mut triples: BTreeSet<(String, String, String)> = BTreeSet::new();
    for edge in &kg.edges {
        if let (Some(h), Some(t)) = (kg.node(&edge.head), kg.node(&edge.tail)) {
            triples.insert((
                h.node_type.clone(),
                edge.relation.clone(),
                t.node_type.clone(),
            ));
        }
    }
    MetaPathCatalog {
        paths: triples
            .into_iter()
            .enumerate()
            .map(|(index, (head_type, relation, tail_type))| MetaPath {
                index,
                head_type,
                relation,
                tail_type,
            })
            .collect(),
    }
}

/// Extract the subgraph instantiating one meta-path: exactly the matching
/// edges plus their endpoint nodes (first-appearance order). A triple that
/// matches nothing yields an empty partition; membership validation against
/// a catalog is the caller's concern.
pub fn partition(kg: &KnowledgeGraph, mp: &MetaPath) -> SubgraphPartition {
    let mut nodes: Vec<Node> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut edges: Vec<Edge> = Vec::new();
    for edge in &kg.edges {
        if mp.matches(kg, edge) {
            for id in [&edge.head, &edge.tail] {
                if seen.insert(id.clone()) {
                    nodes.push(kg.node(id).expect("edge endpoint exists").clone());
                }
            }
            edges.push(edge.clone());
        }
    }
    SubgraphPartition {
        meta_path: mp.clone(),
        nodes,
        edges,
    }
}

/// Validated variant: the index must name a catalog entry.
pub fn partition_by_index(
    kg: &KnowledgeGraph,
    catalog: &MetaPathCatalog,
    index: usize,
) -> Result<SubgraphPartition, KgError> {
    let mp = catalog
        .get(index)
        .ok_or_else(|| KgError::UnknownMetaPath(index.to_string()))?;
    Ok(partition(kg, mp))
}

/// Classify the meta-path ids in a model response against `catalog`.
///
/// Two token forms are recognized: bare decimal integers and bracketed
/// triples `(head_type, relation, tail_type)`. A token resolving to a
/// catalog entry lands in `correct` on first sight; later sightings of the
/// same index land in `repeated`, as do first sightings past the
/// `max_meta_paths` budget. Everything else becomes an `erroneous` raw
/// token. Total: every extracted token is classified exactly once.
pub fn parse_meta_path_ids(
    text: &str,
    catalog: &MetaPathCatalog,
    max_meta_paths: usize,
) -> MetaPathSelection {
    let mut selection = MetaPathSelection::default();
    for token in extract_id_tokens(text) {
        let resolved = match &token {
            IdToken::Index(raw, value) => {
                if *value < catalog.count() {
                    Ok(*value)
                } else {
                    Err(raw.clone())
                }
            }
            IdToken::Triple(raw, h, r, t) => {
                catalog.find_triple(h, r, t).ok_or_else(|| raw.clone())
            }
        };
        match resolved {
            Ok(index) if selection.correct.contains(&index) => selection.repeated.push(index),
            Ok(index) if selection.correct.len() < max_meta_paths => selection.correct.push(index),
            Ok(index) => selection.repeated.push(index),
            Err(raw) => selection.erroneous.push(raw),
        }
    }
    selection
}

enum IdToken {
    /// (raw text, parsed value)
    Index(String, usize),
    /// (raw text, head_type, relation, tail_type)
    Triple(String, String, String, String),
}

/// Scan for `(a, b, c)` triples first, then for integers outside them,
/// returning tokens in textual order.
fn extract_id_tokens(text: &str) -> Vec<IdToken> {
    let triple_re = triple_regex();
    let mut tokens: Vec<(usize, IdToken)> = Vec::new();
    let mut covered: Vec<(usize, usize)> = Vec::new();

    for caps in triple_re.captures_iter(text) {
        let m = caps.get(0).expect("full match");
        covered.push((m.start(), m.end()));
        tokens.push((
            m.start(),
            IdToken::Triple(
                m.as_str().to_string(),
                caps[1].trim().to_string(),
                caps[2].trim().to_string(),
                caps[3].trim().to_string(),
            ),
        ));
    }

    let int_re = int_regex();
    for m in int_re.find_iter(text) {
        if covered.iter().any(|&(s, e)| m.start() >= s && m.end() <= e) {
            continue;
        }
        let raw = m.as_str().to_string();
        match raw.parse::<usize>() {
            Ok(v) => tokens.push((m.start(), IdToken::Index(raw, v))),
            // Overflowing a usize is certainly not a catalog index.
            Err(_) => tokens.push((m.start(), IdToken::Index(raw, usize::MAX))),
        }
    }

    tokens.sort_by_key(|&(pos, _)| pos);
    tokens.into_iter().map(|(_, t)| t).collect()
}

fn triple_regex() -> &'static regex::Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    RE.get_or_init(|| {
        regex::Regex::new(r"\(\s*([^(),]+?)\s*,\s*([^(),]+?)\s*,\s*([^(),]+?)\s*\)")
            .expect("triple regex compiles")
    })
}

fn int_regex() -> &'static regex::Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    RE.get_or_init(|| regex::Regex::new(r"\d+").expect("int regex compiles"))
}
