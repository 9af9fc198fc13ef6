//! `rcf`: prepare corpora, train, evaluate, run ablation grids and γ sweeps,
//! explain recommendations and self-check gradients.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "rcf", version, about = "Relational collaborative filtering")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a corpus bundle, vocabulary sidecars and a summary.
    Prepare(PrepareArgs),
    /// Train a model and write its checkpoint and log.
    Train(TrainArgs),
    /// Rank held-out items with a checkpoint.
    Eval(EvalArgs),
    /// Train and compare the seven ablation configurations.
    Ablate(AblateArgs),
    /// Train and evaluate once per relational-loss weight.
    SweepGamma(SweepArgs),
    /// Attention read-outs for a user's top recommendations.
    Explain(ExplainArgs),
    /// Finite-difference check of every gradient.
    Gradcheck(GradcheckArgs),
}

/// Settings shared by every training command; they override `--config`.
#[derive(Args, Debug, Clone, Default)]
struct RunArgs {
    /// Flat `key = value` run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus bundle written by `prepare`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    attention_factor: Option<usize>,
    #[arg(long)]
    mlp_hidden: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// full, single, type-only or value-only.
    #[arg(long)]
    mode: Option<String>,
    /// none, avg1, avg2 or avg-both.
    #[arg(long)]
    attn_override: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<bool>,
    /// Validation candidates: auto, all-items or sampled-N.
    #[arg(long)]
    eval_candidates: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        put("corpus", self.corpus.as_ref().map(|p| p.display().to_string()));
        put("embedding_dim", self.embedding_dim.map(|v| v.to_string()));
        put("attention_factor", self.attention_factor.map(|v| v.to_string()));
        put("mlp_hidden", self.mlp_hidden.map(|v| v.to_string()));
        put("rho", self.rho.map(|v| v.to_string()));
        put("gamma", self.gamma.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("dropout", self.dropout.map(|v| v.to_string()));
        put("mode", self.mode.clone());
        put("attn_override", self.attn_override.clone());
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("eval_every", self.eval_every.map(|v| v.to_string()));
        put("patience", self.patience.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("deterministic", self.deterministic.map(|v| v.to_string()));
        put("eval_candidates", self.eval_candidates.clone());
        out
    }
}

#[derive(Args)]
struct PrepareArgs {
    /// `user \t item [\t timestamp]` file.
    #[arg(long, required_unless_present = "synthetic")]
    interactions: Option<PathBuf>,
    /// `itemA \t itemB \t type \t value` file.
    #[arg(long, conflicts_with = "synthetic")]
    relations: Option<PathBuf>,
    /// Interactions carry a third timestamp column.
    #[arg(long)]
    timestamps: bool,
    /// Seed of the random holdout when there are no timestamps.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Generate a planted-preference corpus instead of reading files.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 7)]
    synthetic_seed: u64,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Directory for `model.ckpt`, `train.ndjson` and `run.cfg`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Overrides the corpus recorded in the checkpoint.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// valid or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// auto, all-items or sampled-N.
    #[arg(long, default_value = "auto")]
    candidates: String,
    /// Candidate sampling seed; defaults to the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated seeds; rows are means over them.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long, default_value = "auto")]
    candidates: String,
    /// JSON file with the rows and the resolved configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.001,0.01,0.1")]
    gammas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long, default_value = "auto")]
    candidates: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// User label; required unless `--aggregate`.
    #[arg(long, required_unless_present = "aggregate")]
    user: Option<String>,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Second-level entries kept per recommendation.
    #[arg(long, default_value_t = 5)]
    top_m: usize,
    /// Mean first-level weight per type over all users.
    #[arg(long)]
    aggregate: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    users: usize,
    #[arg(long, default_value_t = 10)]
    items: usize,
    #[arg(long, default_value_t = 3)]
    types: usize,
    #[arg(long, default_value_t = 5)]
    values: usize,
    #[arg(long, default_value_t = 8)]
    embedding_dim: usize,
    #[arg(long, default_value_t = 4)]
    attention_factor: usize,
    /// Scales one component's analytic gradient (harness self-test).
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose { "info" } else { "warn" }))
        .init();
    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::SweepGamma(a) => commands::sweep_gamma(a),
        Command::Explain(a) => commands::explain(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
