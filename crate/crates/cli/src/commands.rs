//! Subcommand implementations. Every command validates its inputs, is
//! idempotent for identical inputs and seed, and reports failures as one
//! JSON error object on stderr with a nonzero exit code.

use std::io::Write;
use std::path::{Path, PathBuf};

use ghar_core::config::EngineConfig;
use ghar_core::engine::{embedder_from_config, save_indexes, Engine};
use ghar_core::kg::{catalog_meta_paths, ingest_triples, MetaPathCatalog};
use ghar_core::retriever::IndexSet;
use ghar_core::rl::{score_trajectory, RlConfig};
use ghar_core::synth::{gen_kg_tsv, SynthKgSpec};
use ghar_core::tasks::{
    assign_split, gen_synthetic_cohort, metrics, read_cohort, write_cohort, CohortEntry,
    CohortSpec, Label, Split, TaskKind,
};
use ghar_core::trajectory::{read_trajectories, EpisodeStatus, Trajectory};

use crate::cli::{
    EvalArgs, GenCohortArgs, GenKgArgs, IndexArgs, IngestArgs, ReplayArgs, RunArgs, ScoreArgs,
};
use crate::CliError;

fn write_or_stdout(path: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(p, contents)?;
        }
        None => println!("{contents}"),
    }
    Ok(())
}

pub fn gen_kg(args: &GenKgArgs) -> Result<(), CliError> {
    let spec = SynthKgSpec {
        seed: args.seed,
        diseases: args.diseases,
        procedures: args.procedures,
        drugs: args.drugs,
        proteins: args.proteins,
    };
    std::fs::write(&args.out, gen_kg_tsv(&spec))?;
    println!(
        "{}",
        serde_json::json!({"out": args.out, "nodes": spec.node_count()})
    );
    Ok(())
}

pub fn gen_cohort(args: &GenCohortArgs) -> Result<(), CliError> {
    let spec = CohortSpec {
        seed: args.seed,
        n_patients: args.patients,
        dec_prevalence: args.dec_prevalence,
        readmit_rate: args.readmit_rate,
        ..CohortSpec::default()
    };
    let cohort = gen_synthetic_cohort(&spec);
    let file = std::fs::File::create(&args.out)?;
    write_cohort(std::io::BufWriter::new(file), &cohort)?;
    println!(
        "{}",
        serde_json::json!({"out": args.out, "patients": cohort.len()})
    );
    Ok(())
}

fn kg_path(config: &EngineConfig, flag: Option<&PathBuf>) -> Result<PathBuf, CliError> {
    flag.cloned()
        .or_else(|| config.paths.kg_tsv.clone())
        .ok_or_else(|| CliError::User("no knowledge graph: pass --kg or set paths.kg_tsv".into()))
}

pub fn ingest(config: &EngineConfig, args: &IngestArgs) -> Result<(), CliError> {
    let path = kg_path(config, args.kg.as_ref())?;
    let file = std::fs::File::open(&path)
        .map_err(|e| CliError::User(format!("cannot open {}: {e}", path.display())))?;
    let kg = ingest_triples(std::io::BufReader::new(file))?;
    let catalog = catalog_meta_paths(&kg);
    let catalog_out = args
        .catalog_out
        .clone()
        .or_else(|| config.paths.catalog_json.clone());
    write_or_stdout(catalog_out.as_deref(), &catalog.to_json())?;
    let summary = serde_json::json!({
        "kg": path,
        "nodes": kg.node_count(),
        "edges": kg.edge_count(),
        "node_types": kg.node_types.len(),
        "edge_types": kg.edge_types.len(),
        "meta_paths": catalog.count(),
    });
    eprintln!("{summary}");
    Ok(())
}

/// Resolve one `--meta-path` argument: a catalog index or a
/// `head,relation,tail` triple.
fn resolve_meta_path(catalog: &MetaPathCatalog, spec: &str) -> Result<usize, CliError> {
    if let Ok(index) = spec.trim().parse::<usize>() {
        if index < catalog.count() {
            return Ok(index);
        }
        return Err(CliError::User(format!(
            "unknown meta-path '{spec}': catalog has {} entries",
            catalog.count()
        )));
    }
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if parts.len() == 3 {
        if let Some(index) = catalog.find_triple(parts[0], parts[1], parts[2]) {
            return Ok(index);
        }
    }
    Err(CliError::User(format!("unknown meta-path '{spec}'")))
}

pub fn index(config: &EngineConfig, args: &IndexArgs) -> Result<(), CliError> {
    let path = kg_path(config, args.kg.as_ref())?;
    let index_dir = args
        .index_dir
        .clone()
        .or_else(|| config.paths.index_dir.clone())
        .ok_or_else(|| {
            CliError::User("no output directory: pass --index-dir or set paths.index_dir".into())
        })?;
    let file = std::fs::File::open(&path)
        .map_err(|e| CliError::User(format!("cannot open {}: {e}", path.display())))?;
    let kg = ingest_triples(std::io::BufReader::new(file))?;
    let catalog = catalog_meta_paths(&kg);
    let targets: Vec<usize> = if args.meta_paths.is_empty() {
        (0..catalog.count()).collect()
    } else {
        args.meta_paths
            .iter()
            .map(|s| resolve_meta_path(&catalog, s))
            .collect::<Result<_, _>>()?
    };
    let embedder = embedder_from_config(config)?;
    let set = IndexSet::build_some(&kg, &catalog, &targets, embedder.as_ref())
        .map_err(|e| CliError::Internal(e.to_string()))?;
    save_indexes(&index_dir, &set)?;
    println!(
        "{}",
        serde_json::json!({"index_dir": index_dir, "partitions": targets.len()})
    );
    Ok(())
}

fn parse_split(s: &str) -> Result<Option<Split>, CliError> {
    match s {
        "all" => Ok(None),
        "train" => Ok(Some(Split::Train)),
        "val" => Ok(Some(Split::Val)),
        "test" => Ok(Some(Split::Test)),
        other => Err(CliError::User(format!(
            "unknown split '{other}' (expected all|train|val|test)"
        ))),
    }
}

pub fn run(config: &EngineConfig, args: &RunArgs) -> Result<(), CliError> {
    let mut config = config.clone();
    if let Some(c) = &args.cohort {
        config.paths.cohort = Some(c.clone());
    }
    if let Some(o) = &args.out {
        config.paths.trajectories = Some(o.clone());
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let cohort_path = config
        .paths
        .cohort
        .clone()
        .ok_or_else(|| CliError::User("no cohort: pass --cohort or set paths.cohort".into()))?;
    let out_path = config.paths.trajectories.clone().ok_or_else(|| {
        CliError::User("no output file: pass --out or set paths.trajectories".into())
    })?;
    let split = parse_split(&args.split)?;

    let cohort = read_cohort(&cohort_path)?;
    let engine = Engine::from_config(config.clone())?;

    let mut selected: Vec<&CohortEntry> = cohort
        .iter()
        .filter(|e| {
            split.is_none_or(|s| assign_split(&e.patient.patient_id, config.tasks.split) == s)
        })
        .filter(|e| {
            let ok = args.task != TaskKind::Read || e.gold.read.is_some();
            if !ok {
                tracing::warn!(patient = %e.patient.patient_id, "skipping: no readmission label");
            }
            ok
        })
        .collect();
    if let Some(limit) = args.limit {
        selected.truncate(limit);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.concurrency)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let trajectories: Vec<Trajectory> = pool.install(|| {
        use rayon::prelude::*;
        selected
            .par_iter()
            .map(|entry| {
                engine
                    .run_for_entry(args.task, entry, None)
                    .expect("gold presence pre-checked")
            })
            .collect()
    });

    let failed = trajectories
        .iter()
        .filter(|t| t.status == EpisodeStatus::Failed)
        .count();
    let file = std::fs::File::create(&out_path)?;
    let mut writer = std::io::BufWriter::new(file);
    for t in &trajectories {
        writer.write_all(t.to_line().as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    println!(
        "{}",
        serde_json::json!({
            "out": out_path,
            "task": args.task.as_str(),
            "episodes": trajectories.len(),
            "failed": failed,
            "seed": config.seed,
        })
    );
    Ok(())
}

/// Parse `--patients`: a comma list, or `@path` naming a file with one
/// patient id per line.
fn patient_filter(spec: &str) -> Result<std::collections::HashSet<String>, CliError> {
    if let Some(path) = spec.strip_prefix('@') {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::User(format!("cannot read patient list {path}: {e}")))?;
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect())
    } else {
        Ok(spec
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect())
    }
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut trajectories = read_trajectories(&args.trajectories)?;
    if let Some(spec) = &args.patients {
        let keep = patient_filter(spec)?;
        trajectories.retain(|t| keep.contains(&t.patient_id));
    }
    if trajectories.is_empty() {
        return Err(CliError::User(
            "trajectory file contains no episodes".into(),
        ));
    }
    let task = trajectories[0].task.clone();
    let mut preds: Vec<Label> = Vec::new();
    let mut golds: Vec<Label> = Vec::new();
    let mut failed = 0usize;
    for t in &trajectories {
        if t.task.kind != task.kind {
            return Err(CliError::User(format!(
                "mixed tasks in trajectory file: {} and {}",
                task.kind.as_str(),
                t.task.kind.as_str()
            )));
        }
        match (&t.final_prediction, t.status) {
            (Some(p), EpisodeStatus::Complete) => {
                preds.push(p.clone());
                golds.push(t.gold.clone());
            }
            _ => failed += 1,
        }
    }
    if failed > 0 {
        tracing::warn!(failed, "excluding failed episodes from metrics");
    }
    let report = metrics(&preds, &golds, &task)?;
    write_or_stdout(
        args.out.as_deref(),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(())
}

pub fn score(args: &ScoreArgs) -> Result<(), CliError> {
    let trajectories = read_trajectories(&args.trajectories)?;
    let mut lines = Vec::with_capacity(trajectories.len());
    for t in &trajectories {
        let override_cfg = args.critic_target.map(|ct| RlConfig {
            gamma: t.config.gamma,
            lam: t.config.lam,
            epsilon: t.config.epsilon,
            critic_target: ct.into(),
        });
        let line = score_trajectory(t, override_cfg.as_ref())?;
        lines.push(serde_json::to_string(&line).expect("score line serializes"));
    }
    write_or_stdout(args.out.as_deref(), &lines.join("\n"))?;
    Ok(())
}

pub fn replay(args: &ReplayArgs) -> Result<(), CliError> {
    let trajectories = read_trajectories(&args.trajectories)?;
    let t: &Trajectory = match (&args.episode, args.index) {
        (Some(id), _) => trajectories
            .iter()
            .find(|t| &t.episode_id == id)
            .ok_or_else(|| CliError::User(format!("no episode '{id}' in file")))?,
        (None, Some(i)) => trajectories
            .get(i)
            .ok_or_else(|| CliError::User(format!("index {i} out of range")))?,
        (None, None) => trajectories
            .first()
            .ok_or_else(|| CliError::User("trajectory file contains no episodes".into()))?,
    };
    print!("{}", render_replay(t));
    Ok(())
}

/// Human-oriented rendering of one episode.
pub fn render_replay(t: &Trajectory) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "episode   {}", t.episode_id);
    let _ = writeln!(
        out,
        "task      {}  patient {}  seed {}",
        t.task.kind.as_str(),
        t.patient_id,
        t.seed
    );
    let _ = writeln!(
        out,
        "status    {}",
        match t.status {
            EpisodeStatus::Complete => "complete",
            EpisodeStatus::Failed => "failed",
        }
    );
    if let Some(err) = &t.error {
        let _ = writeln!(out, "error     {err}");
    }
    let _ = writeln!(
        out,
        "config    K={} N={} I={} max_meta_paths={} L={} eta={} alpha={}",
        t.config.k,
        t.config.top_n,
        t.config.max_iterations,
        t.config.max_meta_paths,
        t.config.expected_reason_len,
        t.config.eta,
        t.config.alpha
    );
    let _ = writeln!(out, "\ninitial query\n-------------\n{}", t.initial_query);
    for s in &t.steps {
        let route = match s.top_action.route {
            ghar_core::trajectory::Route::Llm => "llm",
            ghar_core::trajectory::Route::Rag => "rag",
        };
        let control = match s.top_action.control {
            ghar_core::trajectory::Control::Continue => "continue",
            ghar_core::trajectory::Control::Terminate => "terminate",
        };
        let _ = writeln!(
            out,
            "\nstep {} [{route}] -> {control}{}{}",
            s.iteration,
            if s.top_action.forced { " (forced)" } else { "" },
            if s.top_action.malformed {
                " (malformed)"
            } else {
                ""
            },
        );
        let _ = writeln!(out, "  sub-query: {}", s.query);
        if let Some(sel) = &s.selection {
            let _ = writeln!(
                out,
                "  selection: correct={:?} erroneous={:?} repeated={:?}",
                sel.correct, sel.erroneous, sel.repeated
            );
        }
        for p in &s.corpus_provenance {
            let kind = match p.kind {
                ghar_core::retriever::ItemKind::Node => "node",
                ghar_core::retriever::ItemKind::Edge => "edge",
            };
            let _ = writeln!(
                out,
                "  evidence [{kind} mp={} sim={:.4}] {}",
                p.meta_path, p.similarity, p.key
            );
        }
        let _ = writeln!(out, "  answer: {}", s.intermediate_answer);
        let r = &s.reward;
        let _ = writeln!(
            out,
            "  reward: reason={:.4} path={:.4} rel={:.4} cost={:.4} orm={:.1} rank={:.4} all={:.4} norm={:.4}",
            r.r_reason, r.r_path, r.r_rel, r.r_cost, r.r_orm, r.r_rank, r.r_all, r.r_all_norm
        );
        if let (Some(alp), Some(v)) = (s.action_log_prob, s.value_estimate) {
            let _ = writeln!(out, "  logprob={alp:.4} value={v:.4}");
        }
    }
    let _ = writeln!(
        out,
        "\nprediction {}   gold {}",
        t.final_prediction
            .as_ref()
            .map(|l| l.value.as_str())
            .unwrap_or("(none)"),
        t.gold.value
    );
    out
}
