//! Shared fixtures for CLI and service integration tests: a synthetic
//! knowledge graph, a seeded cohort, a mock provider script, and a config
//! file wired to them inside one temp directory.
//!
//! Each integration test binary compiles its own copy, so not every item
//! is used everywhere.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Output;

use ghar_core::config::EngineConfig;
use ghar_core::synth::{gen_kg_tsv, SynthKgSpec};
use ghar_core::tasks::{gen_synthetic_cohort, write_cohort, CohortEntry, CohortSpec};

/// A three-step policy: retrieval with two partitions, then a parametric
/// step, then terminate.
pub const MIXED_SCRIPT: &str = r#"{"match": {"template_tag": "generate"}, "response": "What risks does the record show?\nWhich conditions matter most?\nAny medication signals?", "log_prob": -0.05, "value": 0.0}
{"match": {"template_tag": "decide", "step": 1}, "response": "ROUTE: RAG; IDS: 0, 1; CONTROL: CONTINUE", "log_prob": -0.2, "value": 0.6}
{"match": {"template_tag": "decide", "step": 2}, "response": "ROUTE: LLM; CONTROL: CONTINUE", "log_prob": -0.25, "value": 0.5}
{"match": {"template_tag": "decide"}, "response": "ROUTE: LLM; CONTROL: TERMINATE", "log_prob": -0.3, "value": 0.4}
{"match": {"template_tag": "rag"}, "response": "evidence links the conditions to the treatment relations listed", "log_prob": -0.4, "value": 0.0}
{"match": {"template_tag": "llm"}, "response": "the record pattern suggests moderate risk", "log_prob": -0.35, "value": 0.0}
{"match": {"template_tag": "sub"}, "response": "does any drug target a shared protein?", "log_prob": -0.15, "value": 0.0}
{"match": {"template_tag": "final"}, "response": "<answer>no</answer>", "log_prob": -0.1, "value": 0.2}
"#;

/// A policy that never terminates on its own: the iteration cap must stop it.
pub const CONTINUE_FOREVER_SCRIPT: &str = r#"{"match": {"template_tag": "generate"}, "response": "first angle\nsecond angle\nthird angle", "log_prob": -0.05, "value": 0.0}
{"match": {"template_tag": "decide"}, "response": "ROUTE: LLM; CONTROL: CONTINUE", "log_prob": -0.2, "value": 0.3}
{"match": {"template_tag": "llm"}, "response": "an intermediate answer", "log_prob": -0.3, "value": 0.0}
{"match": {"template_tag": "sub"}, "response": "one level deeper", "log_prob": -0.1, "value": 0.0}
{"match": {"template_tag": "final"}, "response": "<answer>yes</answer>", "log_prob": -0.4, "value": 0.1}
"#;

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config_path: PathBuf,
    pub cohort_path: PathBuf,
    pub kg_path: PathBuf,
    pub cohort: Vec<CohortEntry>,
}

pub struct FixtureSpec<'a> {
    pub script: &'a str,
    pub seed: u64,
    pub n_patients: usize,
    pub dec_prevalence: f64,
    pub cohort_seed: u64,
}

impl Default for FixtureSpec<'_> {
    fn default() -> Self {
        Self {
            script: MIXED_SCRIPT,
            seed: 7,
            n_patients: 100,
            dec_prevalence: 0.1,
            cohort_seed: 7,
        }
    }
}

pub fn fixture(spec: FixtureSpec) -> Fixture {
    let dir = tempfile::tempdir().expect("tempdir");
    let kg_path = dir.path().join("kg.tsv");
    // Vocabulary sizes mirror the cohort generator defaults so every code
    // resolves to a name.
    std::fs::write(
        &kg_path,
        gen_kg_tsv(&SynthKgSpec {
            seed: 5,
            diseases: 40,
            procedures: 20,
            drugs: 30,
            proteins: 10,
        }),
    )
    .expect("write kg");

    let cohort = gen_synthetic_cohort(&CohortSpec {
        seed: spec.cohort_seed,
        n_patients: spec.n_patients,
        dec_prevalence: spec.dec_prevalence,
        ..CohortSpec::default()
    });
    let cohort_path = dir.path().join("cohort.jsonl");
    let file = std::fs::File::create(&cohort_path).expect("create cohort");
    write_cohort(std::io::BufWriter::new(file), &cohort).expect("write cohort");

    let script_path = dir.path().join("script.jsonl");
    std::fs::write(&script_path, spec.script).expect("write script");

    let mut config = EngineConfig {
        seed: spec.seed,
        ..EngineConfig::default()
    };
    config.paths.kg_tsv = Some(kg_path.clone());
    config.paths.cohort = Some(cohort_path.clone());
    config.provider.llm.script = Some(script_path);
    config.provider.embedding.dim = 32;
    let config_path = dir.path().join("config.json");
    std::fs::write(
        &config_path,
        serde_json::to_string_pretty(&config).expect("config serializes"),
    )
    .expect("write config");

    Fixture {
        dir,
        config_path,
        cohort_path,
        kg_path,
        cohort,
    }
}

pub fn engine_config(fx: &Fixture) -> EngineConfig {
    EngineConfig::load(&fx.config_path).expect("fixture config loads")
}

/// Invoke the compiled `ghar` binary.
pub fn ghar(config: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_ghar"));
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args);
    cmd.output().expect("ghar binary runs")
}

pub fn assert_success(out: &Output, context: &str) {
    assert!(
        out.status.success(),
        "{context} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}
