//! Train-then-evaluate runs, the ablation grid and γ sweeps.
//!
//! Runs are independent: each owns its parameter store and derives every
//! random stream from its own seed, so grids run in parallel without
//! changing any number.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::corpus::Corpus;
use crate::error::Result;
use crate::eval::{evaluate, AblationRow, AblationTable, CandidateMode, EvalOptions, RankingReport, Split};
use crate::model::{AttnOverride, Scorer};
use crate::params::ParamStore;
use crate::trainer::{EpochEvent, TrainOutcome, Trainer};

/// The seven ablation configurations as `(label, mode, override)`; the first is the reference.
pub const ABLATIONS: [(&str, &str, AttnOverride); 7] = [
    ("full", "full", AttnOverride::None),
    ("single", "single", AttnOverride::None),
    ("type-only", "type-only", AttnOverride::None),
    ("value-only", "value-only", AttnOverride::None),
    ("avg1", "full", AttnOverride::Avg1),
    ("avg2", "full", AttnOverride::Avg2),
    ("avg-both", "full", AttnOverride::AvgBoth),
];

pub struct RunOutput {
    pub outcome: TrainOutcome<f32>,
    pub report: RankingReport,
}

pub fn train(
    corpus: &Corpus,
    run: &RunConfig,
    hook: impl FnMut(EpochEvent, &ParamStore<f32>) -> Result<()>,
) -> Result<TrainOutcome<f32>> {
    run.validate()?;
    Trainer::<f32>::new(corpus, &run.model, &run.train)?.train(hook)
}

pub fn evaluate_store(
    corpus: &Corpus,
    store: &ParamStore<f32>,
    run: &RunConfig,
    opts: EvalOptions,
    checkpoint: Option<String>,
) -> Result<RankingReport> {
    let scorer = Scorer::new(store, corpus, &run.model)?;
    evaluate(&scorer, opts, run.to_json(), checkpoint)
}

/// Trains, then ranks the test holdout with the run seed.
pub fn train_and_evaluate(corpus: &Corpus, run: &RunConfig, mode: CandidateMode) -> Result<RunOutput> {
    let outcome = train(corpus, run, |_, _| Ok(()))?;
    let opts = EvalOptions { split: Split::Test, mode, seed: run.train.seed };
    let report = evaluate_store(corpus, &outcome.store, run, opts, None)?;
    Ok(RunOutput { outcome, report })
}

fn mean_row(label: &str, reports: &[RankingReport]) -> AblationRow {
    let n = reports.len().max(1) as f64;
    let mean = |key: &str| reports.iter().map(|r| r.metric(key)).sum::<f64>() / n;
    AblationRow { label: label.to_string(), hr10: mean("HR@10"), mrr10: mean("MRR@10"), ndcg10: mean("NDCG@10") }
}

/// Test reports of `run` under each seed.
pub fn reports_over_seeds(corpus: &Corpus, run: &RunConfig, seeds: &[u64], mode: CandidateMode) -> Result<Vec<RankingReport>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut r = run.clone();
            r.train.seed = seed;
            train_and_evaluate(corpus, &r, mode).map(|o| o.report)
        })
        .collect()
}

/// One row per ablation configuration, each the mean over `seeds`.
pub fn ablate(corpus: &Corpus, base: &RunConfig, seeds: &[u64], mode: CandidateMode) -> Result<AblationTable> {
    let rows = ABLATIONS
        .par_iter()
        .map(|&(label, m, o)| {
            let mut run = base.clone();
            run.model.mode = m.to_string();
            run.model.attn_override = o;
            reports_over_seeds(corpus, &run, seeds, mode).map(|reports| mean_row(label, &reports))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaPoint {
    pub gamma: f64,
    pub hr10: f64,
    pub mrr10: f64,
    pub ndcg10: f64,
}

/// One point per γ, each the mean over `seeds`.
pub fn sweep_gamma(corpus: &Corpus, base: &RunConfig, gammas: &[f64], seeds: &[u64], mode: CandidateMode) -> Result<Vec<GammaPoint>> {
    gammas
        .par_iter()
        .map(|&gamma| {
            let mut run = base.clone();
            run.train.gamma = gamma;
            let row = mean_row("", &reports_over_seeds(corpus, &run, seeds, mode)?);
            Ok(GammaPoint { gamma, hr10: row.hr10, mrr10: row.mrr10, ndcg10: row.ndcg10 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (Corpus, RunConfig) {
        let mut inter = String::new();
        for u in 0..12 {
            for k in 0..6 {
                inter.push_str(&format!("u{u}\ti{}\n", (u * 3 + k * 5) % 20));
            }
        }
        let mut rel = String::new();
        for i in 0..20 {
            rel.push_str(&format!("i{i}\ti{}\tgenre\tg{}\n", (i + 4) % 20, i % 4));
        }
        let c = Corpus::from_tsv(&inter, Some(&rel), false, 1).unwrap();
        let mut run = RunConfig::default();
        for (k, v) in [("embedding_dim", "8"), ("attention_factor", "4"), ("mlp_hidden", "8"), ("epochs", "2"), ("batch_size", "16")] {
            run.set(k, v).unwrap();
        }
        (c, run)
    }

    #[test]
    fn ablation_has_seven_rows_led_by_full() {
        let (c, run) = tiny();
        let t = ablate(&c, &run, &[1], CandidateMode::AllItems).unwrap();
        assert_eq!(t.rows.len(), 7);
        assert_eq!(t.reference().unwrap().label, "full");
        assert_eq!(t.deltas(&t.rows[0]), [0.0; 3]);
    }

    #[test]
    fn sweep_keeps_gamma_order_and_is_deterministic() {
        let (c, run) = tiny();
        let a = sweep_gamma(&c, &run, &[0.0, 0.01], &[3], CandidateMode::AllItems).unwrap();
        let b = sweep_gamma(&c, &run, &[0.0, 0.01], &[3], CandidateMode::AllItems).unwrap();
        assert_eq!(a.iter().map(|p| p.gamma).collect::<Vec<_>>(), vec![0.0, 0.01]);
        assert_eq!(a, b);
    }
}
