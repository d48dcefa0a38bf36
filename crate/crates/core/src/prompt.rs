//! Prompt templates and the template-tag vocabulary.
//!
//! Every chat call the engine makes is rendered here and tagged with one of
//! the [`tags`] constants; the scripted mock provider dispatches on the tag
//! and the 0-based iteration (see [`crate::providers::MockLlm`]). Response
//! grammar expected back from the model:
//!
//! - router calls: `ROUTE: LLM|RAG; IDS: <meta-path ids>; CONTROL:
//!   TERMINATE|CONTINUE` (markers may appear anywhere, `IDS` only for RAG)
//! - final calls: the label wrapped as `<answer>label</answer>`
//! - rewrite calls: one rewritten query per line
//! - deepening calls: a single follow-up question

use std::collections::HashMap;

use crate::kg::{KnowledgeGraph, MetaPathCatalog};
use crate::tasks::{PatientRecord, TaskKind, TaskSpec, Visit};

/// Template tags carried on chat calls.
pub mod tags {
    /// Query rewriting (fan-out of the initial query).
    pub const GENERATE: &str = "generate";
    /// Router decision: route + meta-path ids + control.
    pub const DECIDE: &str = "decide";
    /// Parametric-knowledge answer to a sub-query.
    pub const LLM: &str = "llm";
    /// Summarization of retrieved evidence.
    pub const RAG: &str = "rag";
    /// Deepening sub-query generation.
    pub const SUB: &str = "sub";
    /// Final prediction from the original query plus history.
    pub const FINAL: &str = "final";
}

/// Marker the final answer must carry.
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// Human-readable names for EHR codes, resolved from graph nodes.
#[derive(Debug, Clone, Default)]
pub struct CodeNames {
    map: HashMap<String, String>,
}

impl CodeNames {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_kg(kg: &KnowledgeGraph) -> Self {
        Self {
            map: kg
                .nodes
                .iter()
                .map(|n| (n.id.clone(), n.name.clone()))
                .collect(),
        }
    }

    pub fn resolve(&self, code: &str) -> Option<&str> {
        self.map.get(code).map(String::as_str)
    }

    fn render(&self, code: &str) -> String {
        match self.resolve(code) {
            Some(name) => format!("{code} ({name})"),
            None => code.to_string(),
        }
    }
}

fn render_code_list(names: &CodeNames, codes: &[String]) -> String {
    if codes.is_empty() {
        "none recorded".to_string()
    } else {
        codes
            .iter()
            .map(|c| names.render(c))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

fn render_visit(names: &CodeNames, ordinal: usize, visit: &Visit) -> String {
    format!(
        "Visit {ordinal}:\n  diagnoses: {}\n  procedures: {}\n  medications: {}",
        render_code_list(names, &visit.diagnoses),
        render_code_list(names, &visit.procedures),
        render_code_list(names, &visit.medications),
    )
}

/// The answer-format instruction appended to query and final prompts.
pub fn answer_format_instruction(task: &TaskSpec) -> String {
    format!(
        "Answer with exactly one of [{}], wrapped as {}label{}.",
        task.label_space.join(", "),
        ANSWER_OPEN,
        ANSWER_CLOSE
    )
}

/// Visits the model is allowed to see for a task: readmission prediction
/// hides the visit whose arrival is being predicted, the other tasks see
/// the full history (codes only; stay lengths are never rendered).
pub fn observable_visits<'a>(task: &TaskSpec, patient: &'a PatientRecord) -> &'a [Visit] {
    match task.kind {
        TaskKind::Read if patient.visits.len() > 1 => &patient.visits[..patient.visits.len() - 1],
        _ => &patient.visits,
    }
}

/// The initial query: task description, label space, patient history, and
/// the answer-format instruction.
pub fn initial_query(task: &TaskSpec, patient: &PatientRecord, names: &CodeNames) -> String {
    let visits = observable_visits(task, patient)
        .iter()
        .enumerate()
        .map(|(i, v)| render_visit(names, i + 1, v))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        "You are a clinical prediction assistant.\n\
         Task: {}\n\
         Patient {} history:\n{}\n\
         {}",
        task.description,
        patient.patient_id,
        visits,
        answer_format_instruction(task)
    )
}

/// Rewrite fan-out prompt.
pub fn rewrite(q0: &str, k: usize) -> String {
    format!(
        "Rewrite the clinical question below into {k} diverse, self-contained \
         variants that each preserve the original intent. Output exactly one \
         variant per line and nothing else.\n\nQuestion:\n{q0}"
    )
}

/// Router decision prompt: choose the route, optionally pick meta-paths,
/// and decide whether to keep deepening.
pub fn decide(
    sub_query: &str,
    history_text: &str,
    catalog: &MetaPathCatalog,
    max_meta_paths: usize,
) -> String {
    let paths = if catalog.is_empty() {
        "  (no meta-paths available)".to_string()
    } else {
        catalog
            .paths
            .iter()
            .map(|p| format!("  {}: {}", p.index, p.display_triple()))
            .collect::<Vec<_>>()
            .join("\n")
    };
    format!(
        "You are routing a clinical sub-question.\n\
         Sub-question:\n{sub_query}\n\
         Reasoning so far:\n{history}\n\
         Knowledge-graph meta-paths:\n{paths}\n\
         First decide whether your own medical knowledge suffices (LLM) or \
         graph retrieval is needed (RAG). If RAG, pick at most {max_meta_paths} \
         meta-path IDs from the list. Then decide whether the accumulated \
         reasoning already answers the main question (TERMINATE) or another \
         round is needed (CONTINUE).\n\
         Reply on one line: ROUTE: LLM or ROUTE: RAG; IDS: <ids>; CONTROL: \
         TERMINATE or CONTROL: CONTINUE",
        history = blank_to_marker(history_text),
    )
}

/// Parametric-knowledge answer prompt.
pub fn direct_answer(sub_query: &str, history_text: &str) -> String {
    format!(
        "Answer the clinical sub-question below from your own medical \
         knowledge, in at most three sentences.\n\
         Sub-question:\n{sub_query}\n\
         Reasoning so far:\n{history}",
        history = blank_to_marker(history_text),
    )
}

/// Evidence summarization prompt.
pub fn summarize(sub_query: &str, history_text: &str, corpus_text: &str) -> String {
    let evidence = if corpus_text.is_empty() {
        "(no evidence retrieved)"
    } else {
        corpus_text
    };
    format!(
        "Summarize what the retrieved evidence says about the sub-question, \
         staying strictly within the evidence.\n\
         Sub-question:\n{sub_query}\n\
         Reasoning so far:\n{history}\n\
         Retrieved evidence:\n{evidence}",
        history = blank_to_marker(history_text),
    )
}

/// Deepening sub-query prompt.
pub fn deepen(sub_query: &str, history_text: &str) -> String {
    format!(
        "Given the reasoning so far, write one focused follow-up question \
         that closes the most important remaining knowledge gap. Output only \
         the question.\n\
         Current sub-question:\n{sub_query}\n\
         Reasoning so far:\n{history}",
        history = blank_to_marker(history_text),
    )
}

/// Final prediction prompt over the original query and the full history.
pub fn final_prediction(q0: &str, history_text: &str, task: &TaskSpec) -> String {
    format!(
        "{q0}\n\
         Reasoning gathered across iterations:\n{history}\n\
         Now give the final prediction. {answer}",
        history = blank_to_marker(history_text),
        answer = answer_format_instruction(task),
    )
}

fn blank_to_marker(history: &str) -> &str {
    if history.trim().is_empty() {
        "(none yet)"
    } else {
        history
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::ingest_triples;
    use std::io::Cursor;

    fn patient() -> PatientRecord {
        PatientRecord {
            patient_id: "p1".into(),
            visits: vec![
                Visit {
                    encounter_time: 0.0,
                    discharge_time: 2.0,
                    diagnoses: vec!["d1".into(), "d2".into()],
                    procedures: vec![],
                    medications: vec!["m1".into()],
                },
                Visit {
                    encounter_time: 30.0,
                    discharge_time: 31.0,
                    diagnoses: vec!["d9".into()],
                    procedures: vec![],
                    medications: vec![],
                },
            ],
        }
    }

    fn names() -> CodeNames {
        let kg = ingest_triples(Cursor::new(
            "d1\tdisease\tFlu\ttreated_by\tm1\tdrug\tOseltamivir\n\
             d2\tdisease\tPneumonia\ttreated_by\tm1\tdrug\tOseltamivir",
        ))
        .unwrap();
        CodeNames::from_kg(&kg)
    }

    #[test]
    fn initial_query_contains_names_and_format_instruction() {
        let task = TaskSpec::dec();
        let q = initial_query(&task, &patient(), &names());
        assert!(q.contains("Flu"));
        assert!(q.contains("Pneumonia"));
        assert!(q.contains(ANSWER_OPEN));
        assert!(q.contains("yes, no"));
    }

    #[test]
    fn initial_query_is_deterministic() {
        let task = TaskSpec::los();
        let a = initial_query(&task, &patient(), &names());
        let b = initial_query(&task, &patient(), &names());
        assert_eq!(a, b);
    }

    #[test]
    fn los_query_lists_all_ten_labels() {
        let task = TaskSpec::los();
        let q = initial_query(&task, &patient(), &CodeNames::empty());
        for label in &task.label_space {
            assert!(q.contains(label.as_str()), "missing {label}");
        }
    }

    #[test]
    fn readmission_hides_target_visit() {
        let read = TaskSpec::read(15.0);
        let q = initial_query(&read, &patient(), &CodeNames::empty());
        assert!(q.contains("Visit 1"));
        assert!(!q.contains("Visit 2"));
        assert!(!q.contains("d9"));
        let dec = TaskSpec::dec();
        let q = initial_query(&dec, &patient(), &CodeNames::empty());
        assert!(q.contains("Visit 2"));
    }

    #[test]
    fn unresolved_codes_render_bare() {
        let task = TaskSpec::dec();
        let q = initial_query(&task, &patient(), &CodeNames::empty());
        assert!(q.contains("d1; d2"));
    }

    #[test]
    fn decide_prompt_lists_catalog() {
        let kg = ingest_triples(Cursor::new(
            "d1\tdisease\tFlu\ttreated_by\tm1\tdrug\tOseltamivir",
        ))
        .unwrap();
        let catalog = crate::kg::catalog_meta_paths(&kg);
        let p = decide("q?", "", &catalog, 3);
        assert!(p.contains("0: (disease, treated_by, drug)"));
        assert!(p.contains("(none yet)"));
    }
}
