//! The episode state machine: query construction and rewriting, the FIFO
//! sub-query queue, per-step routing (parametric answer vs. partition
//! retrieval), history accumulation, deepening, and the final prediction.
//!
//! One episode is inherently sequential; concurrency lives above this
//! module (episodes share only the immutable graph and indexes). With the
//! scripted mock provider an episode is byte-deterministic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{MetaPathCatalog, MetaPathSelection};
use crate::prompt::{self, tags, CodeNames};
use crate::providers::{
    ChatCall, ChatMessage, ChatOutcome, ChatProvider, EmbeddingProvider, ProviderError,
};
use crate::retriever::{retrieve_subgraph, serialize_corpus, IndexSet, RetrieverError};
use crate::rewards::{
    indicators, reward_all, reward_path, reward_rank, reward_reason, reward_rel, Normalizer,
    ReferenceTrajectories, RewardBreakdown,
};
use crate::tasks::{Label, PatientRecord, TaskSpec};
use crate::trajectory::{
    episode_id, ConfigSnapshot, Control, EpisodeStatus, QueryOrigin, Route, StepRecord,
    TopActionRecord, Trajectory,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("provider: {0}")]
    Provider(#[from] ProviderError),
    #[error("retrieval: {0}")]
    Retrieval(#[from] RetrieverError),
}

/// A sub-query in flight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub origin: QueryOrigin,
}

/// Strict FIFO queue of pending sub-queries: extraction always returns the
/// earliest-enqueued item.
#[derive(Debug, Clone, Default)]
pub struct QueryQueue {
    items: std::collections::VecDeque<Query>,
}

impl QueryQueue {
    pub fn enqueue(&mut self, q: Query) {
        self.items.push_back(q);
    }

    pub fn dequeue(&mut self) -> Option<Query> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// One completed reasoning step: the sub-query, its intermediate answer,
/// and which route produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub query: String,
    pub answer: String,
    pub route: Route,
}

/// Append-only accumulated reasoning history. Its length is the number of
/// completed steps.
#[derive(Debug, Clone, Default)]
pub struct ReasoningHistory {
    entries: Vec<HistoryEntry>,
}

impl ReasoningHistory {
    pub fn push(&mut self, query: String, answer: String, route: Route) {
        self.entries.push(HistoryEntry {
            query,
            answer,
            route,
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    /// Deterministic rendering used in prompts and the ranking reward.
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let route = match e.route {
                    Route::Llm => "llm",
                    Route::Rag => "rag",
                };
                format!(
                    "Step {} [{}]\nSub-question: {}\nIntermediate answer: {}",
                    i + 1,
                    route,
                    e.query,
                    e.answer
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Router state: the sub-query in hand plus everything reasoned so far.
pub struct TopState<'a> {
    pub query: &'a Query,
    pub history: &'a ReasoningHistory,
}

/// Summarizer state: the router state projected down and joined with the
/// serialized retrieved corpus.
pub struct LowState<'a> {
    pub query: &'a Query,
    pub history: &'a ReasoningHistory,
    pub corpus_text: &'a str,
}

/// The router's decision for one step, with the raw call outcome.
#[derive(Debug, Clone)]
pub struct Decision {
    pub route: Route,
    pub selection: Option<MetaPathSelection>,
    pub control: Control,
    pub malformed: bool,
    pub outcome: ChatOutcome,
}

fn call(
    llm: &dyn ChatProvider,
    tag: &'static str,
    step: usize,
    prompt_text: String,
    want_logprobs: bool,
) -> Result<ChatOutcome, AgentError> {
    Ok(llm.chat(&ChatCall {
        template_tag: tag,
        step,
        messages: vec![ChatMessage::user(prompt_text)],
        want_logprobs,
    })?)
}

/// Render the initial query for a task and patient.
pub fn build_query(task: &TaskSpec, patient: &PatientRecord, names: &CodeNames) -> Query {
    Query {
        text: prompt::initial_query(task, patient, names),
        origin: QueryOrigin::Initial,
    }
}

/// Fan the initial query out into `k` rewrites with one chat call. Short
/// output degrades with a warning; unparsable output degrades to the
/// original query alone.
pub fn rewrite_queries(
    q0: &Query,
    k: usize,
    llm: &dyn ChatProvider,
    want_logprobs: bool,
) -> Result<QueryQueue, AgentError> {
    let out = call(
        llm,
        tags::GENERATE,
        0,
        prompt::rewrite(&q0.text, k),
        want_logprobs,
    )?;
    let mut queue = QueryQueue::default();
    for line in out
        .content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .take(k)
    {
        queue.enqueue(Query {
            text: line.to_string(),
            origin: QueryOrigin::Rewrite,
        });
    }
    if queue.is_empty() {
        tracing::warn!("rewrite output unparsable; falling back to the original query");
        queue.enqueue(q0.clone());
    } else if queue.len() < k {
        tracing::warn!(
            got = queue.len(),
            want = k,
            "rewrite produced fewer queries than requested"
        );
    }
    Ok(queue)
}

/// One router call: route, meta-path ids, and control, parsed from marker
/// lines. Missing or unrecognized markers default to `LLM`/`CONTINUE` and
/// flag the step malformed.
pub fn top_decide(
    state: &TopState,
    catalog: &MetaPathCatalog,
    max_meta_paths: usize,
    llm: &dyn ChatProvider,
    step: usize,
    want_logprobs: bool,
) -> Result<Decision, AgentError> {
    let prompt_text = prompt::decide(
        &state.query.text,
        &state.history.render(),
        catalog,
        max_meta_paths,
    );
    let outcome = call(llm, tags::DECIDE, step, prompt_text, want_logprobs)?;
    let (route, selection, control, malformed) =
        parse_decision(&outcome.content, catalog, max_meta_paths);
    Ok(Decision {
        route,
        selection,
        control,
        malformed,
        outcome,
    })
}

fn parse_decision(
    text: &str,
    catalog: &MetaPathCatalog,
    max_meta_paths: usize,
) -> (Route, Option<MetaPathSelection>, Control, bool) {
    let route = match marker_value(text, "ROUTE:").map(|v| v.to_ascii_uppercase()) {
        Some(v) if v.starts_with("LLM") => Some(Route::Llm),
        Some(v) if v.starts_with("RAG") => Some(Route::Rag),
        _ => None,
    };
    let control = match marker_value(text, "CONTROL:").map(|v| v.to_ascii_uppercase()) {
        Some(v) if v.starts_with("TERMINATE") => Some(Control::Terminate),
        Some(v) if v.starts_with("CONTINUE") => Some(Control::Continue),
        _ => None,
    };
    let malformed = route.is_none() || control.is_none();
    let route = route.unwrap_or(Route::Llm);
    let selection = match route {
        Route::Rag => {
            let ids = marker_value(text, "IDS:").unwrap_or_default();
            Some(crate::kg::parse_meta_path_ids(
                &ids,
                catalog,
                max_meta_paths,
            ))
        }
        Route::Llm => None,
    };
    (
        route,
        selection,
        control.unwrap_or(Control::Continue),
        malformed,
    )
}

/// The text following `marker` (case-insensitive), up to the next `;` or
/// line end.
fn marker_value(text: &str, marker: &str) -> Option<String> {
    let lower = text.to_lowercase();
    let pos = lower.find(&marker.to_lowercase())?;
    let rest = &text[pos + marker.len()..];
    let end = rest.find([';', '\n']).unwrap_or(rest.len());
    Some(rest[..end].trim().to_string())
}

/// Parametric-knowledge answer for one sub-query.
pub fn direct_answer(
    state: &TopState,
    llm: &dyn ChatProvider,
    step: usize,
    want_logprobs: bool,
) -> Result<ChatOutcome, AgentError> {
    call(
        llm,
        tags::LLM,
        step,
        prompt::direct_answer(&state.query.text, &state.history.render()),
        want_logprobs,
    )
}

/// Summarize retrieved evidence into a task-relevant intermediate answer.
/// An empty corpus is allowed; the prompt says so explicitly.
pub fn low_summarize(
    state: &LowState,
    llm: &dyn ChatProvider,
    step: usize,
    want_logprobs: bool,
) -> Result<ChatOutcome, AgentError> {
    call(
        llm,
        tags::RAG,
        step,
        prompt::summarize(
            &state.query.text,
            &state.history.render(),
            state.corpus_text,
        ),
        want_logprobs,
    )
}

/// Generate one deepening sub-query; unparsable output enqueues nothing.
pub fn deepen(
    query: &Query,
    history: &ReasoningHistory,
    llm: &dyn ChatProvider,
    step: usize,
    want_logprobs: bool,
) -> Result<(Option<Query>, ChatOutcome), AgentError> {
    let out = call(
        llm,
        tags::SUB,
        step,
        prompt::deepen(&query.text, &history.render()),
        want_logprobs,
    )?;
    let question = out
        .content
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(|l| Query {
            text: l.to_string(),
            origin: QueryOrigin::Deepening,
        });
    if question.is_none() {
        tracing::warn!(step, "deepening output unparsable; nothing enqueued");
    }
    Ok((question, out))
}

/// Final prediction from the original query and the full history.
pub fn finalize(
    q0: &Query,
    history: &ReasoningHistory,
    task: &TaskSpec,
    llm: &dyn ChatProvider,
    step: usize,
    want_logprobs: bool,
) -> Result<(Label, bool, ChatOutcome), AgentError> {
    let out = call(
        llm,
        tags::FINAL,
        step,
        prompt::final_prediction(&q0.text, &history.render(), task),
        want_logprobs,
    )?;
    let (label, ok) = parse_prediction(&out.content, task);
    Ok((label, ok, out))
}

/// Total prediction parser: extract the `<answer>...</answer>` block and
/// match it case-insensitively against the label space. Anything else
/// falls back to the first label with the format flag cleared.
pub fn parse_prediction(text: &str, task: &TaskSpec) -> (Label, bool) {
    let lower = text.to_lowercase();
    let open = prompt::ANSWER_OPEN;
    let close = prompt::ANSWER_CLOSE;
    if let Some(start) = lower.find(open) {
        let content_start = start + open.len();
        if let Some(rel_end) = lower[content_start..].find(close) {
            let content = text[content_start..content_start + rel_end].trim();
            if let Some(label) = task.label_by_value(content) {
                return (label, true);
            }
        }
    }
    (task.fallback_label(), false)
}

/// Everything an episode needs, shared immutably.
pub struct EpisodeInputs<'a> {
    pub task: &'a TaskSpec,
    pub patient: &'a PatientRecord,
    pub gold: Label,
    pub names: &'a CodeNames,
    pub catalog: &'a MetaPathCatalog,
    pub indexes: &'a IndexSet,
    pub refs: &'a ReferenceTrajectories,
    pub llm: &'a dyn ChatProvider,
    pub embedder: &'a dyn EmbeddingProvider,
    pub snapshot: ConfigSnapshot,
    pub want_logprobs: bool,
}

/// Mean of per-call scalars when every call supplied one.
fn combine_scalars(parts: &[Option<f64>]) -> Option<f64> {
    let vals: Option<Vec<f64>> = parts.iter().copied().collect();
    vals.and_then(|v| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    })
}

/// Run one full episode.
///
/// The loop dequeues a sub-query, routes it, appends the intermediate
/// answer to the history, and either terminates or deepens; the iteration
/// cap forces termination, and a drained queue coerces the last recorded
/// step to a forced terminate. Provider or retrieval failures abort with a
/// partial trajectory marked failed rather than propagating.
pub fn run_episode(inputs: &EpisodeInputs) -> Trajectory {
    let snapshot = inputs.snapshot.clone();
    let task = inputs.task;
    let q0 = build_query(task, inputs.patient, inputs.names);
    let id = episode_id(
        snapshot.seed,
        task.kind,
        &inputs.patient.patient_id,
        &snapshot,
    );

    let mut steps: Vec<StepRecord> = Vec::new();
    // Per-step raw call scalars; folded into the records once the terminal
    // step (whose joint action includes the final-answer call) is known.
    let mut lp_parts: Vec<Vec<Option<f64>>> = Vec::new();
    let mut rlp_parts: Vec<Vec<Option<f64>>> = Vec::new();
    let mut history = ReasoningHistory::default();

    let result: Result<(Label, bool, ChatOutcome), AgentError> = (|| {
        let mut queue = rewrite_queries(&q0, snapshot.k, inputs.llm, inputs.want_logprobs)?;
        let mut iteration = 0usize;
        let mut terminated = false;

        while let Some(query) = queue.dequeue() {
            iteration += 1;
            let decision = top_decide(
                &TopState {
                    query: &query,
                    history: &history,
                },
                inputs.catalog,
                snapshot.max_meta_paths,
                inputs.llm,
                iteration,
                inputs.want_logprobs,
            )?;

            let mut lps = vec![decision.outcome.log_prob];
            let mut rlps = vec![decision.outcome.ref_log_prob];
            let value = decision.outcome.value;

            let (answer_outcome, corpus_provenance, corpus_text) = match decision.route {
                Route::Rag => {
                    let selection = decision
                        .selection
                        .as_ref()
                        .expect("rag carries a selection");
                    let corpus = retrieve_subgraph(
                        &query.text,
                        selection,
                        inputs.indexes,
                        snapshot.top_n,
                        inputs.embedder,
                    )?;
                    let corpus_text = serialize_corpus(&corpus);
                    let out = low_summarize(
                        &LowState {
                            query: &query,
                            history: &history,
                            corpus_text: &corpus_text,
                        },
                        inputs.llm,
                        iteration,
                        inputs.want_logprobs,
                    )?;
                    (out, corpus.provenance, corpus_text)
                }
                Route::Llm => {
                    let out = direct_answer(
                        &TopState {
                            query: &query,
                            history: &history,
                        },
                        inputs.llm,
                        iteration,
                        inputs.want_logprobs,
                    )?;
                    (out, Vec::new(), String::new())
                }
            };
            lps.push(answer_outcome.log_prob);
            rlps.push(answer_outcome.ref_log_prob);

            let answer = answer_outcome.content.clone();
            history.push(query.text.clone(), answer.clone(), decision.route);

            let r_path = reward_path(decision.selection.as_ref());
            let r_rel = match decision.route {
                Route::Rag => reward_rel(&answer, &query.text, &corpus_text),
                Route::Llm => 0.0,
            };

            let mut control = decision.control;
            let mut forced = false;
            if control == Control::Continue && iteration >= snapshot.max_iterations {
                control = Control::Terminate;
                forced = true;
            }
            if control == Control::Continue {
                let (next, out) = deepen(
                    &query,
                    &history,
                    inputs.llm,
                    iteration,
                    inputs.want_logprobs,
                )?;
                lps.push(out.log_prob);
                rlps.push(out.ref_log_prob);
                if let Some(q) = next {
                    queue.enqueue(q);
                }
            }

            lp_parts.push(lps);
            rlp_parts.push(rlps);
            steps.push(StepRecord {
                iteration,
                query: query.text,
                query_origin: query.origin,
                top_action: TopActionRecord {
                    route: decision.route,
                    control,
                    forced,
                    malformed: decision.malformed,
                },
                selection: decision.selection,
                corpus_provenance,
                intermediate_answer: answer,
                action_log_prob: None,
                ref_log_prob: None,
                value_estimate: value,
                reward: RewardBreakdown {
                    r_path,
                    r_rel,
                    ..Default::default()
                },
            });

            if control == Control::Terminate {
                terminated = true;
                break;
            }
        }

        // Drained queue without an explicit terminate: the last recorded
        // step becomes the forced terminal step.
        if !terminated {
            if let Some(last) = steps.last_mut() {
                last.top_action.control = Control::Terminate;
                last.top_action.forced = true;
            }
        }

        let final_step = steps.last().map(|s| s.iteration).unwrap_or(0);
        finalize(
            &q0,
            &history,
            task,
            inputs.llm,
            final_step,
            inputs.want_logprobs,
        )
    })();

    let mut trajectory = Trajectory {
        episode_id: id,
        task: task.clone(),
        patient_id: inputs.patient.patient_id.clone(),
        seed: snapshot.seed,
        config: snapshot.clone(),
        initial_query: q0.text,
        steps: Vec::new(),
        final_prediction: None,
        gold: inputs.gold.clone(),
        status: EpisodeStatus::Complete,
        error: None,
    };

    match result {
        Ok((prediction, answer_format_ok, final_outcome)) => {
            let actions_ok = steps.iter().all(|s| !s.top_action.malformed);
            let inds = indicators(&prediction, answer_format_ok, &inputs.gold, actions_ok);
            let r_reason = reward_reason(history.len(), snapshot.expected_reason_len);
            let r_rank = reward_rank(
                &history.render(),
                inputs.refs,
                snapshot.alpha,
                snapshot.rank_mode,
            );
            let last = steps.len().saturating_sub(1);
            for (i, step) in steps.iter_mut().enumerate() {
                if i == last {
                    step.reward.r_reason = r_reason;
                    step.reward.r_orm = f64::from(inds);
                    step.reward.r_rank = r_rank;
                    step.reward.indicators = inds;
                    // The final-answer call is part of the terminating
                    // step's joint action.
                    lp_parts[i].push(final_outcome.log_prob);
                    rlp_parts[i].push(final_outcome.ref_log_prob);
                }
                step.action_log_prob = combine_scalars(&lp_parts[i]);
                step.ref_log_prob = combine_scalars(&rlp_parts[i]);
                step.reward.r_cost = step.reward.r_reason + step.reward.r_path + step.reward.r_rel;
                step.reward.r_all = reward_all(
                    step.reward.r_cost,
                    step.reward.r_orm,
                    step.reward.r_rank,
                    snapshot.eta,
                );
            }
            let mut normalizer = Normalizer::new(snapshot.normalization);
            for step in steps.iter_mut() {
                step.reward.r_all_norm = normalizer.push(step.reward.r_all);
            }
            trajectory.steps = steps;
            trajectory.final_prediction = Some(prediction);
        }
        Err(err) => {
            let mut normalizer = Normalizer::new(snapshot.normalization);
            for (i, step) in steps.iter_mut().enumerate() {
                step.action_log_prob = combine_scalars(&lp_parts[i]);
                step.ref_log_prob = combine_scalars(&rlp_parts[i]);
                step.reward.r_cost = step.reward.r_reason + step.reward.r_path + step.reward.r_rel;
                step.reward.r_all = reward_all(
                    step.reward.r_cost,
                    step.reward.r_orm,
                    step.reward.r_rank,
                    snapshot.eta,
                );
                step.reward.r_all_norm = normalizer.push(step.reward.r_all);
            }
            trajectory.steps = steps;
            trajectory.status = EpisodeStatus::Failed;
            trajectory.error = Some(err.to_string());
        }
    }
    trajectory
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{catalog_meta_paths, ingest_triples, KnowledgeGraph};
    use crate::providers::{MockEmbedder, MockLlm};
    use crate::rewards::{NormalizationMode, RankMode};
    use crate::rl::CriticTarget;
    use crate::tasks::{TaskKind, Visit};
    use std::io::Cursor;

    fn toy_kg() -> KnowledgeGraph {
        let lines = [
            "m1\tdrug\tOseltamivir\tdrug_protein\tg1\tgene/protein\tNA-1",
            "d1\tdisease\tFlu\ttreated_by\tm1\tdrug\tOseltamivir",
        ];
        ingest_triples(Cursor::new(lines.join("\n"))).unwrap()
    }

    fn patient() -> PatientRecord {
        PatientRecord {
            patient_id: "p1".into(),
            visits: vec![Visit {
                encounter_time: 0.0,
                discharge_time: 2.0,
                diagnoses: vec!["d1".into()],
                procedures: vec![],
                medications: vec!["m1".into()],
            }],
        }
    }

    fn snapshot(max_iterations: usize) -> ConfigSnapshot {
        ConfigSnapshot {
            seed: 7,
            provider_mode: "mock".into(),
            k: 3,
            top_n: 1,
            max_iterations,
            max_meta_paths: 3,
            expected_reason_len: 3,
            eta: 5.0,
            alpha: 0.1,
            normalization: NormalizationMode::None,
            rank_mode: RankMode::Literal,
            gamma: 0.99,
            lam: 0.95,
            epsilon: 0.2,
            critic_target: CriticTarget::RewardToGo,
            kappa_days: 15.0,
        }
    }

    struct Fixture {
        kg: KnowledgeGraph,
        catalog: MetaPathCatalog,
        indexes: IndexSet,
        embedder: MockEmbedder,
        names: CodeNames,
        refs: ReferenceTrajectories,
    }

    fn fixture() -> Fixture {
        let kg = toy_kg();
        let catalog = catalog_meta_paths(&kg);
        let embedder = MockEmbedder::new(16, 0);
        let indexes = IndexSet::build_all(&kg, &catalog, &embedder).unwrap();
        let names = CodeNames::from_kg(&kg);
        Fixture {
            kg,
            catalog,
            indexes,
            embedder,
            names,
            refs: ReferenceTrajectories::default(),
        }
    }

    fn run(fx: &Fixture, script: &str, task: TaskSpec, snap: ConfigSnapshot) -> Trajectory {
        let llm = MockLlm::from_script_str(script).unwrap();
        let gold = task
            .label_by_value("yes")
            .unwrap_or_else(|| task.fallback_label());
        let _ = &fx.kg;
        run_episode(&EpisodeInputs {
            task: &task,
            patient: &patient(),
            gold,
            names: &fx.names,
            catalog: &fx.catalog,
            indexes: &fx.indexes,
            refs: &fx.refs,
            llm: &llm,
            embedder: &fx.embedder,
            snapshot: snap,
            want_logprobs: true,
        })
    }

    const TERMINATE_SCRIPT: &str = r#"
{"match": {"template_tag": "generate"}, "response": "q rewrite one", "log_prob": -0.1, "value": 0.0}
{"match": {"template_tag": "decide"}, "response": "ROUTE: LLM; CONTROL: TERMINATE", "log_prob": -0.2, "value": 0.4}
{"match": {"template_tag": "llm"}, "response": "parametric answer", "log_prob": -0.3, "value": 0.0}
{"match": {"template_tag": "final"}, "response": "<answer>yes</answer>", "log_prob": -0.4, "value": 0.0}
"#;

    #[test]
    fn parse_decision_rag_with_ids() {
        let fx = fixture();
        let (route, sel, control, malformed) =
            parse_decision("ROUTE: RAG; IDS: 0; CONTROL: CONTINUE", &fx.catalog, 3);
        assert_eq!(route, Route::Rag);
        assert_eq!(sel.unwrap().correct, vec![0]);
        assert_eq!(control, Control::Continue);
        assert!(!malformed);
    }

    #[test]
    fn parse_decision_llm_terminate() {
        let fx = fixture();
        let (route, sel, control, malformed) =
            parse_decision("ROUTE: LLM; CONTROL: TERMINATE", &fx.catalog, 3);
        assert_eq!(route, Route::Llm);
        assert!(sel.is_none());
        assert_eq!(control, Control::Terminate);
        assert!(!malformed);
    }

    #[test]
    fn parse_decision_empty_is_malformed_default() {
        let fx = fixture();
        let (route, sel, control, malformed) = parse_decision("", &fx.catalog, 3);
        assert_eq!(route, Route::Llm);
        assert!(sel.is_none());
        assert_eq!(control, Control::Continue);
        assert!(malformed);
    }

    #[test]
    fn parse_decision_markers_on_separate_lines() {
        let fx = fixture();
        let text = "thinking...\nROUTE: rag\nIDS: 0, 1, 7\nCONTROL: continue\n";
        let (route, sel, control, malformed) = parse_decision(text, &fx.catalog, 3);
        assert_eq!(route, Route::Rag);
        assert_eq!(control, Control::Continue);
        assert!(!malformed);
        // The toy catalog has two entries; 7 is out of range.
        let sel = sel.unwrap();
        assert_eq!(sel.correct, vec![0, 1]);
        assert_eq!(sel.erroneous, vec!["7".to_string()]);
    }

    #[test]
    fn parse_prediction_variants() {
        let task = TaskSpec::read(15.0);
        let (l, ok) = parse_prediction("<answer>no</answer>", &task);
        assert_eq!(l.value, "no");
        assert!(ok);
        let (l, ok) = parse_prediction("the answer is probably yes", &task);
        assert_eq!(l, task.fallback_label());
        assert!(!ok);
        let mut los_like = TaskSpec::los();
        los_like.label_space.push("8 days".into());
        let (l, ok) = parse_prediction("<answer>8 days</answer>", &los_like);
        assert_eq!(l.value, "8 days");
        assert!(ok);
        let (l, ok) = parse_prediction("<ANSWER>Yes</ANSWER>", &task);
        assert_eq!(l.value, "yes");
        assert!(ok);
    }

    #[test]
    fn rewrite_preserves_fifo_order_and_k() {
        let script = r#"{"match": {"template_tag": "generate"}, "response": "one\ntwo\nthree", "log_prob": 0.0, "value": 0.0}"#;
        let llm = MockLlm::from_script_str(script).unwrap();
        let q0 = Query {
            text: "base".into(),
            origin: QueryOrigin::Initial,
        };
        let mut queue = rewrite_queries(&q0, 3, &llm, true).unwrap();
        assert_eq!(queue.len(), 3);
        assert_eq!(queue.dequeue().unwrap().text, "one");
        assert_eq!(queue.dequeue().unwrap().text, "two");
        assert_eq!(queue.dequeue().unwrap().text, "three");

        let mut queue = rewrite_queries(&q0, 1, &llm, true).unwrap();
        assert_eq!(queue.len(), 1);
        assert_eq!(queue.dequeue().unwrap().text, "one");
    }

    #[test]
    fn rewrite_degrades_on_short_or_empty_output() {
        let short = r#"{"match": {"template_tag": "generate"}, "response": "one\ntwo", "log_prob": 0.0, "value": 0.0}"#;
        let llm = MockLlm::from_script_str(short).unwrap();
        let q0 = Query {
            text: "base".into(),
            origin: QueryOrigin::Initial,
        };
        assert_eq!(rewrite_queries(&q0, 3, &llm, true).unwrap().len(), 2);

        let empty = MockLlm::from_rules(vec![]);
        let mut queue = rewrite_queries(&q0, 3, &empty, true).unwrap();
        assert_eq!(queue.len(), 1);
        let fallback = queue.dequeue().unwrap();
        assert_eq!(fallback.text, "base");
        assert_eq!(fallback.origin, QueryOrigin::Initial);
    }

    #[test]
    fn episode_terminates_immediately_single_llm_step() {
        let fx = fixture();
        let traj = run(&fx, TERMINATE_SCRIPT, TaskSpec::dec(), snapshot(5));
        assert_eq!(traj.status, EpisodeStatus::Complete);
        assert_eq!(traj.steps.len(), 1);
        assert_eq!(traj.steps[0].top_action.route, Route::Llm);
        assert_eq!(traj.steps[0].top_action.control, Control::Terminate);
        assert!(!traj.steps[0].top_action.forced);
        assert_eq!(traj.final_prediction.as_ref().unwrap().value, "yes");
        // decide -0.2, llm -0.3, final -0.4 -> mean -0.3
        assert!((traj.steps[0].action_log_prob.unwrap() - (-0.3)).abs() < 1e-12);
        assert_eq!(traj.steps[0].value_estimate, Some(0.4));
        let ind = traj.steps[0].reward.indicators;
        assert_eq!(
            (ind.answer_correct, ind.answer_format, ind.action_format),
            (1, 1, 1)
        );
    }

    const RAG_THEN_TERMINATE: &str = r#"
{"match": {"template_tag": "generate"}, "response": "q rewrite one", "log_prob": -0.1, "value": 0.0}
{"match": {"template_tag": "decide", "step": 1}, "response": "ROUTE: RAG; IDS: 0; CONTROL: CONTINUE", "log_prob": -0.2, "value": 0.5}
{"match": {"template_tag": "rag"}, "response": "evidence says treated_by oseltamivir", "log_prob": -0.3, "value": 0.0}
{"match": {"template_tag": "sub"}, "response": "what protein does it bind?", "log_prob": -0.1, "value": 0.0}
{"match": {"template_tag": "decide"}, "response": "ROUTE: LLM; CONTROL: TERMINATE", "log_prob": -0.2, "value": 0.1}
{"match": {"template_tag": "llm"}, "response": "neuraminidase", "log_prob": -0.2, "value": 0.0}
{"match": {"template_tag": "final"}, "response": "<answer>no</answer>", "log_prob": -0.1, "value": 0.0}
"#;

    #[test]
    fn episode_rag_then_terminate_records_provenance() {
        let fx = fixture();
        let traj = run(&fx, RAG_THEN_TERMINATE, TaskSpec::dec(), snapshot(5));
        assert_eq!(traj.status, EpisodeStatus::Complete);
        assert_eq!(traj.steps.len(), 2);
        assert_eq!(traj.steps[0].top_action.route, Route::Rag);
        assert!(!traj.steps[0].corpus_provenance.is_empty());
        assert!(traj.steps[0].reward.r_rel > 0.0);
        assert_eq!(traj.steps[0].selection.as_ref().unwrap().correct, vec![0]);
        assert_eq!(traj.steps[1].top_action.route, Route::Llm);
        assert_eq!(traj.steps[1].query, "what protein does it bind?");
        assert_eq!(traj.steps[1].query_origin, QueryOrigin::Deepening);
        // wrong prediction: orm = 0 correct + 1 format + 1 actions = 2
        assert!((traj.steps[1].reward.r_orm - 2.0).abs() < 1e-12);
    }

    const CONTINUE_FOREVER: &str = r#"
{"match": {"template_tag": "generate"}, "response": "r1\nr2\nr3", "log_prob": -0.1, "value": 0.0}
{"match": {"template_tag": "decide"}, "response": "ROUTE: LLM; CONTROL: CONTINUE", "log_prob": -0.2, "value": 0.3}
{"match": {"template_tag": "llm"}, "response": "an answer", "log_prob": -0.3, "value": 0.0}
{"match": {"template_tag": "sub"}, "response": "go deeper", "log_prob": -0.1, "value": 0.0}
{"match": {"template_tag": "final"}, "response": "<answer>yes</answer>", "log_prob": -0.4, "value": 0.0}
"#;

    #[test]
    fn episode_iteration_cap_forces_terminate() {
        let fx = fixture();
        let traj = run(&fx, CONTINUE_FOREVER, TaskSpec::dec(), snapshot(5));
        assert_eq!(traj.steps.len(), 5);
        let last = traj.steps.last().unwrap();
        assert_eq!(last.top_action.control, Control::Terminate);
        assert!(last.top_action.forced);
        for step in &traj.steps[..4] {
            assert_eq!(step.top_action.control, Control::Continue);
        }
        // History length equals completed steps.
        assert_eq!(traj.steps.len(), 5);
    }

    #[test]
    fn episode_fifo_rewrites_drain_before_deepenings() {
        let fx = fixture();
        let traj = run(&fx, CONTINUE_FOREVER, TaskSpec::dec(), snapshot(5));
        assert_eq!(traj.steps[0].query, "r1");
        assert_eq!(traj.steps[1].query, "r2");
        assert_eq!(traj.steps[2].query, "r3");
        assert_eq!(traj.steps[3].query, "go deeper");
        assert_eq!(traj.steps[3].query_origin, QueryOrigin::Deepening);
    }

    #[test]
    fn episode_is_byte_deterministic() {
        let fx = fixture();
        let a = run(&fx, RAG_THEN_TERMINATE, TaskSpec::dec(), snapshot(5));
        let b = run(&fx, RAG_THEN_TERMINATE, TaskSpec::dec(), snapshot(5));
        assert_eq!(a.to_line(), b.to_line());
    }

    #[test]
    fn episode_drained_queue_coerces_last_step() {
        // Continue forever but deepening unparsable: queue drains after the
        // three rewrites and the third step is coerced to terminate.
        let script = r#"
{"match": {"template_tag": "generate"}, "response": "r1\nr2\nr3", "log_prob": -0.1, "value": 0.0}
{"match": {"template_tag": "decide"}, "response": "ROUTE: LLM; CONTROL: CONTINUE", "log_prob": -0.2, "value": 0.3}
{"match": {"template_tag": "llm"}, "response": "an answer", "log_prob": -0.3, "value": 0.0}
{"match": {"template_tag": "sub"}, "response": "", "log_prob": -0.1, "value": 0.0}
{"match": {"template_tag": "final"}, "response": "<answer>yes</answer>", "log_prob": -0.4, "value": 0.0}
"#;
        let fx = fixture();
        let traj = run(&fx, script, TaskSpec::dec(), snapshot(5));
        assert_eq!(traj.status, EpisodeStatus::Complete);
        assert_eq!(traj.steps.len(), 3);
        let last = traj.steps.last().unwrap();
        assert_eq!(last.top_action.control, Control::Terminate);
        assert!(last.top_action.forced);
    }

    #[test]
    fn episode_empty_decide_is_malformed_but_completes() {
        let script = r#"
{"match": {"template_tag": "generate"}, "response": "r1", "log_prob": 0.0, "value": 0.0}
{"match": {"template_tag": "decide"}, "response": "", "log_prob": 0.0, "value": 0.0}
{"match": {"template_tag": "llm"}, "response": "a", "log_prob": 0.0, "value": 0.0}
{"match": {"template_tag": "sub"}, "response": "deeper", "log_prob": 0.0, "value": 0.0}
{"match": {"template_tag": "final"}, "response": "<answer>yes</answer>", "log_prob": 0.0, "value": 0.0}
"#;
        let fx = fixture();
        let traj = run(&fx, script, TaskSpec::dec(), snapshot(2));
        assert_eq!(traj.status, EpisodeStatus::Complete);
        assert!(traj.steps.iter().all(|s| s.top_action.malformed));
        assert!(traj.steps.iter().all(|s| s.top_action.route == Route::Llm));
        // Malformed steps zero the action-format indicator on the terminal step.
        assert_eq!(
            traj.steps.last().unwrap().reward.indicators.action_format,
            0
        );
    }

    #[test]
    fn episode_reward_attribution_and_composition() {
        let fx = fixture();
        let snap = snapshot(5);
        let traj = run(&fx, RAG_THEN_TERMINATE, TaskSpec::dec(), snap.clone());
        let first = &traj.steps[0].reward;
        // Non-terminal step: episode components zero, cost = path + rel.
        assert_eq!(first.r_reason, 0.0);
        assert_eq!(first.r_orm, 0.0);
        assert_eq!(first.r_rank, 0.0);
        assert!((first.r_cost - (first.r_path + first.r_rel)).abs() < 1e-12);
        assert!(
            (first.r_all - (first.r_cost + snap.eta * first.r_orm + first.r_rank)).abs() < 1e-12
        );
        let last = &traj.steps[1].reward;
        assert!((last.r_reason - reward_reason(2, 3)).abs() < 1e-12);
        assert!(
            (last.r_rank - 0.1).abs() < 1e-12,
            "empty refs floor at alpha"
        );
        assert!((last.r_all - (last.r_cost + snap.eta * last.r_orm + last.r_rank)).abs() < 1e-12);
        // normalization none: r_all_norm == r_all
        assert_eq!(last.r_all, last.r_all_norm);
    }

    #[test]
    fn episode_failure_marks_partial_trajectory() {
        // Retrieval against a selection whose partition has no index.
        let kg = toy_kg();
        let catalog = catalog_meta_paths(&kg);
        let embedder = MockEmbedder::new(16, 0);
        let indexes = IndexSet::default(); // nothing built
        let names = CodeNames::from_kg(&kg);
        let script = r#"
{"match": {"template_tag": "generate"}, "response": "r1", "log_prob": 0.0, "value": 0.0}
{"match": {"template_tag": "decide"}, "response": "ROUTE: RAG; IDS: 0; CONTROL: TERMINATE", "log_prob": 0.0, "value": 0.0}
"#;
        let llm = MockLlm::from_script_str(script).unwrap();
        let task = TaskSpec::dec();
        let traj = run_episode(&EpisodeInputs {
            task: &task,
            patient: &patient(),
            gold: task.label_by_value("yes").unwrap(),
            names: &names,
            catalog: &catalog,
            indexes: &indexes,
            refs: &ReferenceTrajectories::default(),
            llm: &llm,
            embedder: &embedder,
            snapshot: snapshot(5),
            want_logprobs: true,
        });
        assert_eq!(traj.status, EpisodeStatus::Failed);
        assert!(traj.final_prediction.is_none());
        assert!(traj.error.as_ref().unwrap().contains("meta-path 0"));
    }

    #[test]
    fn task_kind_stored_in_trajectory() {
        let fx = fixture();
        let traj = run(&fx, TERMINATE_SCRIPT, TaskSpec::dec(), snapshot(5));
        assert_eq!(traj.task.kind, TaskKind::Dec);
        assert_eq!(traj.config.k, 3);
        assert_eq!(traj.config.top_n, 1);
        assert_eq!(traj.config.eta, 5.0);
        assert_eq!(traj.config.expected_reason_len, 3);
        assert_eq!(traj.config.max_meta_paths, 3);
    }
}
