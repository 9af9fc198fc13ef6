use std::io::Write as _;
use std::path::{Path, PathBuf};

use rcf::config::RunConfig;
use rcf::corpus::{read_bundle, write_bundle, Corpus};
use rcf::eval::{CandidateMode, EvalOptions, Split};
use rcf::experiment;
use rcf::explain::{aggregate_alpha, explain_user};
use rcf::gradcheck::{self, GradcheckConfig};
use rcf::model::Scorer;
use rcf::params::{checkpoint_id, decode_checkpoint, encode_checkpoint, CheckpointMeta, ParamStore};
use rcf::synthetic::{generate, SyntheticConfig};
use rcf::{RcfError, Result};
use serde_json::json;

use crate::{AblateArgs, EvalArgs, ExplainArgs, GradcheckArgs, PrepareArgs, SweepArgs, TrainArgs};

pub const BUNDLE_FILE: &str = "corpus.bin";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train.ndjson";
pub const CONFIG_FILE: &str = "run.cfg";

fn write_file(path: &Path, body: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| RcfError::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| RcfError::io(path, e))
}

/// Writes to `out`, or to stdout when absent.
fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, body.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes()).map_err(|e| RcfError::io("<stdout>", e))
        }
    }
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json values serialise") + "\n"
}

fn load_corpus(path: Option<&Path>) -> Result<Corpus> {
    let path = path.ok_or_else(|| RcfError::Config("no corpus given (use --corpus or `corpus =` in --config)".into()))?;
    read_bundle(path)
}

fn resolve(run: &crate::RunArgs) -> Result<RunConfig> {
    RunConfig::resolve(run.config.as_deref(), &run.overrides())
}

fn candidates(text: &str, corpus: &Corpus) -> Result<CandidateMode> {
    match text {
        "auto" => Ok(CandidateMode::default_for(corpus.n_items())),
        other => other.parse(),
    }
}

fn seeds_or_default(seeds: &[u64], run: &RunConfig) -> Vec<u64> {
    if seeds.is_empty() {
        vec![run.train.seed]
    } else {
        seeds.to_vec()
    }
}

pub fn prepare(a: PrepareArgs) -> Result<i32> {
    std::fs::create_dir_all(&a.out).map_err(|e| RcfError::io(&a.out, e))?;
    let (corpus, source) = if a.synthetic {
        let mut cfg = SyntheticConfig { seed: a.synthetic_seed, ..Default::default() };
        cfg.users = a.users.unwrap_or(cfg.users);
        cfg.items = a.items.unwrap_or(cfg.items);
        cfg.groups = a.groups.unwrap_or(cfg.groups);
        let data = generate(&cfg)?;
        data.write(&a.out)?;
        (data.corpus()?, json!({ "synthetic": cfg }))
    } else {
        let interactions = a.interactions.as_deref().expect("required unless synthetic");
        let corpus = Corpus::load(interactions, a.relations.as_deref(), a.timestamps, a.split_seed)?;
        let source = json!({
            "interactions": interactions.display().to_string(),
            "relations": a.relations.as_ref().map(|p| p.display().to_string()),
            "timestamps": a.timestamps,
            "splitSeed": a.split_seed,
        });
        (corpus, source)
    };
    write_bundle(&corpus, &a.out.join(BUNDLE_FILE))?;
    corpus.write_vocab_sidecars(&a.out)?;
    let summary = corpus.summary();
    write_file(&a.out.join("summary.json"), pretty(&json!({ "source": source, "summary": summary })).as_bytes())?;
    println!(
        "users {}  items {}  interactions {}  types {}  values {}  triplets {}",
        summary.users, summary.items, summary.interactions, summary.types, summary.values, summary.triplets
    );
    Ok(0)
}

pub fn train(a: TrainArgs) -> Result<i32> {
    let run = resolve(&a.run)?;
    let corpus = load_corpus(run.corpus.as_deref())?;
    let outcome = experiment::train(&corpus, &run, |e, _| {
        let mut line = format!("epoch {:>3}", e.epoch);
        if let Some(l) = e.mean_loss {
            line += &format!("  loss {l:.5}");
        }
        if let (Some(n), Some(h)) = (e.valid_ndcg10, e.valid_hr10) {
            line += &format!("  valid NDCG@10 {n:.4}  HR@10 {h:.4}");
        }
        if e.best {
            line += "  *";
        }
        println!("{line}");
        Ok(())
    })?;
    let meta = CheckpointMeta {
        dims: *outcome.store.dims(),
        seed: run.train.seed,
        epoch: outcome.best_epoch,
        config_hash: run.hash(),
        config: run.to_json(),
    };
    let bytes = encode_checkpoint(&outcome.store, &meta)?;
    write_file(&a.out.join(CHECKPOINT_FILE), &bytes)?;
    write_file(&a.out.join(LOG_FILE), outcome.log.to_ndjson().as_bytes())?;
    write_file(&a.out.join(CONFIG_FILE), run.to_text().as_bytes())?;
    println!("best epoch {} of {}; checkpoint {}", outcome.best_epoch, outcome.epochs_run, checkpoint_id(&bytes));
    Ok(0)
}

/// Checkpoint, its run configuration, the corpus it applies to and its id.
fn load_model(checkpoint: &Path, corpus: Option<&PathBuf>) -> Result<(ParamStore<f32>, RunConfig, Corpus, String)> {
    let bytes = std::fs::read(checkpoint).map_err(|e| RcfError::io(checkpoint, e))?;
    let (store, meta) = decode_checkpoint(&bytes, None)?;
    let mut run = RunConfig::from_json(&meta.config)?;
    if let Some(p) = corpus {
        run.corpus = Some(p.clone());
    }
    let corpus = load_corpus(run.corpus.as_deref())?;
    let dims = run.model.dims(corpus.n_users(), corpus.n_items(), corpus.n_types(), corpus.n_values());
    ParamStore::<f32>::zeros(dims).check_same_shapes(&store)?;
    Ok((store, run, corpus, checkpoint_id(&bytes)))
}

pub fn eval(a: EvalArgs) -> Result<i32> {
    let (store, run, corpus, id) = load_model(&a.checkpoint, a.corpus.as_ref())?;
    let opts = EvalOptions {
        split: a.split.parse::<Split>()?,
        mode: candidates(&a.candidates, &corpus)?,
        seed: a.seed.unwrap_or(run.train.seed),
    };
    let report = experiment::evaluate_store(&corpus, &store, &run, opts, Some(id))?;
    emit(a.out.as_deref(), &report.to_json())?;
    if a.out.is_some() {
        for (k, v) in &report.summary.0 {
            println!("{k:<8} {v:.4}");
        }
    }
    Ok(0)
}

pub fn ablate(a: AblateArgs) -> Result<i32> {
    let run = resolve(&a.run)?;
    let corpus = load_corpus(run.corpus.as_deref())?;
    let mode = candidates(&a.candidates, &corpus)?;
    let seeds = seeds_or_default(&a.seeds, &run);
    let table = experiment::ablate(&corpus, &run, &seeds, mode)?;
    print!("{}", table.render());
    if let Some(out) = &a.out {
        let rows: Vec<_> = table
            .rows
            .iter()
            .map(|r| {
                let [h, m, n] = table.deltas(r);
                json!({ "label": r.label, "HR@10": r.hr10, "MRR@10": r.mrr10, "NDCG@10": r.ndcg10,
                        "decHR@10": h, "decMRR@10": m, "decNDCG@10": n })
            })
            .collect();
        let body = json!({ "config": run.to_json(), "seeds": seeds, "mode": mode, "split": "test", "rows": rows });
        emit(Some(out), &pretty(&body))?;
    }
    Ok(0)
}

pub fn sweep_gamma(a: SweepArgs) -> Result<i32> {
    let run = resolve(&a.run)?;
    let corpus = load_corpus(run.corpus.as_deref())?;
    let mode = candidates(&a.candidates, &corpus)?;
    let seeds = seeds_or_default(&a.seeds, &run);
    for &g in &a.gammas {
        if !(g >= 0.0 && g.is_finite()) {
            return Err(RcfError::Config(format!("gamma must be a finite value >= 0, got {g}")));
        }
    }
    let points = experiment::sweep_gamma(&corpus, &run, &a.gammas, &seeds, mode)?;
    println!("gamma\tMRR@10\tNDCG@10");
    for p in &points {
        println!("{}\t{:.4}\t{:.4}", p.gamma, p.mrr10, p.ndcg10);
    }
    if let Some(out) = &a.out {
        let body = json!({ "config": run.to_json(), "seeds": seeds, "mode": mode, "split": "test", "points": points });
        emit(Some(out), &pretty(&body))?;
    }
    Ok(0)
}

pub fn explain(a: ExplainArgs) -> Result<i32> {
    let (store, run, corpus, id) = load_model(&a.checkpoint, a.corpus.as_ref())?;
    let scorer = Scorer::new(&store, &corpus, &run.model)?;
    let body = if a.aggregate {
        json!({ "config": run.to_json(), "checkpoint": id, "aggregate": aggregate_alpha(&scorer)? })
    } else {
        let user = a.user.as_deref().expect("required unless aggregate");
        let records = explain_user(&scorer, user, a.top_k, a.top_m)?;
        if a.out.is_some() {
            for r in &records {
                println!("{}", r.sentence);
            }
        }
        json!({ "config": run.to_json(), "checkpoint": id, "records": records })
    };
    emit(a.out.as_deref(), &pretty(&body))?;
    Ok(0)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<i32> {
    let cfg = GradcheckConfig {
        seed: a.seed,
        n_users: a.users,
        n_items: a.items,
        n_types: a.types,
        n_values: a.values,
        d: a.embedding_dim,
        f: a.attention_factor,
        hidden: a.embedding_dim,
        ..Default::default()
    };
    let report = gradcheck::run(&cfg, a.corrupt.as_deref())?;
    print!("{}", report.render());
    if report.passed {
        Ok(0)
    } else {
        let failed: Vec<&str> = report.failures().map(|c| c.component.as_str()).collect();
        eprintln!("gradient check failed: {}", failed.join(", "));
        Ok(3)
    }
}
