//! Seeded synthetic knowledge-graph generation for tests and offline runs.
//!
//! Node ids align with the synthetic cohort's code vocabulary (`d*`
//! diseases, `p*` procedures, `m*` drugs) so prompts can resolve code
//! names; `g*` proteins exist only in the graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{ingest_triples, KnowledgeGraph};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthKgSpec {
    pub seed: u64,
    pub diseases: usize,
    pub procedures: usize,
    pub drugs: usize,
    pub proteins: usize,
}

impl Default for SynthKgSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            diseases: 40,
            procedures: 20,
            drugs: 30,
            proteins: 15,
        }
    }
}

impl SynthKgSpec {
    pub fn node_count(&self) -> usize {
        self.diseases + self.procedures + self.drugs + self.proteins
    }
}

/// Render the synthetic graph as the 7-field TSV the ingester reads.
///
/// Edge families: every disease is `treated_by` one or two drugs and may be
/// `evaluated_by` a procedure or `comorbid_with` an earlier disease; every
/// drug is `drug_protein`-linked to one protein. Generation is a pure
/// function of the spec.
pub fn gen_kg_tsv(spec: &SynthKgSpec) -> String {
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut lines = vec!["# synthetic biomedical triples".to_string()];
    let mut used_procedures = std::collections::HashSet::new();

    let disease = |i: usize| (format!("d{i}"), "disease", format!("Condition {i}"));
    let procedure = |i: usize| (format!("p{i}"), "procedure", format!("Procedure {i}"));
    let drug = |i: usize| (format!("m{i}"), "drug", format!("Drug {i}"));
    let protein = |i: usize| (format!("g{i}"), "gene/protein", format!("Protein {i}"));

    fn push(
        lines: &mut Vec<String>,
        head: (String, &str, String),
        rel: &str,
        tail: (String, &str, String),
    ) {
        lines.push(format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            head.0, head.1, head.2, rel, tail.0, tail.1, tail.2
        ));
    }

    for i in 0..spec.diseases {
        let n_drugs = rng.gen_range(1..=2.min(spec.drugs.max(1)));
        for _ in 0..n_drugs {
            let d = rng.gen_range(0..spec.drugs.max(1));
            push(&mut lines, disease(i), "treated_by", drug(d));
        }
        if spec.procedures > 0 && rng.gen_range(0.0..1.0) < 0.6 {
            let p = rng.gen_range(0..spec.procedures);
            used_procedures.insert(p);
            push(&mut lines, disease(i), "evaluated_by", procedure(p));
        }
        if i > 0 && rng.gen_range(0.0..1.0) < 0.3 {
            let other = rng.gen_range(0..i);
            push(&mut lines, disease(i), "comorbid_with", disease(other));
        }
    }
    let mut used_proteins = std::collections::HashSet::new();
    for i in 0..spec.drugs {
        if spec.proteins > 0 {
            let g = rng.gen_range(0..spec.proteins);
            used_proteins.insert(g);
            push(&mut lines, drug(i), "drug_protein", protein(g));
        }
    }
    // Isolated vocabulary nodes still need names for prompt rendering (and
    // node counts to be exact): attach unreferenced procedures and proteins
    // to the first disease and drug.
    for i in 0..spec.procedures {
        if !used_procedures.contains(&i) {
            push(&mut lines, disease(0), "evaluated_by", procedure(i));
        }
    }
    for i in 0..spec.proteins {
        if !used_proteins.contains(&i) && spec.drugs > 0 {
            push(&mut lines, drug(0), "drug_protein", protein(i));
        }
    }
    lines.join("\n") + "\n"
}

/// Generate and ingest in one step.
pub fn gen_kg(spec: &SynthKgSpec) -> KnowledgeGraph {
    ingest_triples(std::io::Cursor::new(gen_kg_tsv(spec))).expect("generated TSV is well-formed")
}
