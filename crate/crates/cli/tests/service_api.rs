//! Service API behavior beyond the acceptance criteria: validation errors,
//! unknown ids, failure surfacing, and the catalog endpoint.

mod common;

use common::{engine_config, fixture, FixtureSpec};
use ghar_core::config::EngineConfig;
use ghar_core::engine::Engine;

fn start_service(config: EngineConfig) -> String {
    let engine = Engine::from_config(config).expect("engine builds");
    let state = ghar_cli::service::build_state(engine).expect("state builds");
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .expect("runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
                .await
                .expect("bind");
            tx.send(listener.local_addr().expect("addr")).expect("send");
            axum::serve(listener, ghar_cli::service::router(state))
                .await
                .expect("serve");
        });
    });
    format!("http://{}", rx.recv().expect("addr"))
}

#[test]
fn validation_and_lookup_errors() {
    let fx = fixture(FixtureSpec {
        n_patients: 3,
        ..FixtureSpec::default()
    });
    let base = start_service(engine_config(&fx));
    let client = reqwest::blocking::Client::new();

    // Unknown task value.
    let resp = client
        .post(format!("{base}/v1/episodes"))
        .json(&serde_json::json!({"task": "bogus", "patient_id": "p00000"}))
        .send()
        .unwrap();
    assert_eq!(resp.status(), 400);
    let body: serde_json::Value = resp.json().unwrap();
    assert!(body["error"]["message"].as_str().unwrap().contains("task"));

    // Neither patient nor patient_id.
    let resp = client
        .post(format!("{base}/v1/episodes"))
        .json(&serde_json::json!({"task": "dec"}))
        .send()
        .unwrap();
    assert_eq!(resp.status(), 400);
    let body: serde_json::Value = resp.json().unwrap();
    assert!(body["error"]["message"]
        .as_str()
        .unwrap()
        .contains("patient"));

    // Unknown cohort patient.
    let resp = client
        .post(format!("{base}/v1/episodes"))
        .json(&serde_json::json!({"task": "dec", "patient_id": "nope"}))
        .send()
        .unwrap();
    assert_eq!(resp.status(), 400);

    // Non-JSON body.
    let resp = client
        .post(format!("{base}/v1/episodes"))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .unwrap();
    assert_eq!(resp.status(), 400);

    // Inline DEC without gold or flags names the missing fields.
    let inline = serde_json::json!({
        "task": "dec",
        "patient": {"patient_id": "x1", "visits": [
            {"encounter_time": 0.0, "discharge_time": 1.0, "diagnoses": ["d1"], "procedures": [], "medications": []}
        ]}
    });
    let resp = client
        .post(format!("{base}/v1/episodes"))
        .json(&inline)
        .send()
        .unwrap();
    assert_eq!(resp.status(), 400);
    let body: serde_json::Value = resp.json().unwrap();
    assert!(body["error"]["message"]
        .as_str()
        .unwrap()
        .contains("dec_flags"));

    // Unknown episode id.
    let resp = client
        .get(format!("{base}/v1/episodes/NOSUCHID"))
        .send()
        .unwrap();
    assert_eq!(resp.status(), 404);

    // Catalog endpoint lists indexed triples.
    let catalog: serde_json::Value = client
        .get(format!("{base}/v1/catalog"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let entries = catalog.as_array().unwrap();
    assert!(!entries.is_empty());
    assert!(entries[0]["head_type"].is_string());
}

#[test]
fn inline_patient_with_derived_gold_runs() {
    let fx = fixture(FixtureSpec {
        n_patients: 1,
        ..FixtureSpec::default()
    });
    let base = start_service(engine_config(&fx));
    let client = reqwest::blocking::Client::new();

    // LOS gold derivable from the final visit's stay.
    let inline = serde_json::json!({
        "task": "los",
        "patient": {"patient_id": "inline1", "visits": [
            {"encounter_time": 0.0, "discharge_time": 3.5, "diagnoses": ["d1"], "procedures": ["p1"], "medications": ["m1"]}
        ]}
    });
    let resp = client
        .post(format!("{base}/v1/episodes"))
        .json(&inline)
        .send()
        .unwrap();
    assert_eq!(resp.status(), 200);
    let result: serde_json::Value = resp.json().unwrap();
    assert_eq!(result["status"], "complete");

    let body = client
        .get(format!(
            "{base}/v1/episodes/{}",
            result["episode_id"].as_str().unwrap()
        ))
        .send()
        .unwrap()
        .text()
        .unwrap();
    let t = ghar_core::trajectory::Trajectory::from_line(&body).unwrap();
    assert_eq!(t.gold.value, "3 days");

    // DEC with explicit flags.
    let inline = serde_json::json!({
        "task": "dec",
        "patient": {"patient_id": "inline2", "visits": [
            {"encounter_time": 0.0, "discharge_time": 1.0, "diagnoses": ["d2"], "procedures": [], "medications": []}
        ]},
        "dec_flags": [true]
    });
    let resp = client
        .post(format!("{base}/v1/episodes"))
        .json(&inline)
        .send()
        .unwrap();
    assert_eq!(resp.status(), 200);
}

#[test]
fn failed_episode_returns_bad_gateway_and_is_stored() {
    // Build indexes for partition 0 only, then force a selection of
    // partition 1: retrieval fails and the episode is marked failed.
    let fx = fixture(FixtureSpec {
        n_patients: 1,
        ..FixtureSpec::default()
    });
    let script = fx.dir.path().join("failing.jsonl");
    std::fs::write(
        &script,
        r#"{"match": {"template_tag": "generate"}, "response": "q", "log_prob": 0.0, "value": 0.0}
{"match": {"template_tag": "decide"}, "response": "ROUTE: RAG; IDS: 1; CONTROL: TERMINATE", "log_prob": 0.0, "value": 0.0}
"#,
    )
    .unwrap();
    let index_dir = fx.dir.path().join("partial-index");
    let mut config = engine_config(&fx);
    config.provider.llm.script = Some(script);

    // Materialize only partition 0.
    let engine_full = Engine::from_config({
        let mut c = config.clone();
        c.paths.index_dir = None;
        c
    })
    .unwrap();
    let mut only_first = ghar_core::retriever::IndexSet::default();
    let (i, part) = engine_full
        .indexes
        .iter()
        .next()
        .map(|(i, p)| (*i, p.clone()))
        .unwrap();
    only_first.insert(i, part);
    ghar_core::engine::save_indexes(&index_dir, &only_first).unwrap();
    config.paths.index_dir = Some(index_dir);

    let base = start_service(config);
    let client = reqwest::blocking::Client::new();
    let resp = client
        .post(format!("{base}/v1/episodes"))
        .json(&serde_json::json!({"task": "dec", "patient_id": fx.cohort[0].patient.patient_id}))
        .send()
        .unwrap();
    assert_eq!(resp.status(), 502);
    let result: serde_json::Value = resp.json().unwrap();
    assert_eq!(result["status"], "failed");
    let id = result["episode_id"].as_str().unwrap();

    let body = client
        .get(format!("{base}/v1/episodes/{id}"))
        .send()
        .unwrap()
        .text()
        .unwrap();
    let t = ghar_core::trajectory::Trajectory::from_line(&body).unwrap();
    assert_eq!(t.status, ghar_core::trajectory::EpisodeStatus::Failed);
    assert!(t.error.unwrap().contains("meta-path 1"));
}
