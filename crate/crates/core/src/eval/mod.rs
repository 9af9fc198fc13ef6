//! Leave-one-out ranking evaluation.

mod table;

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

pub use table::{relative_delta, AblationRow, AblationTable};

use crate::corpus::Corpus;
use crate::error::{RcfError, Result};
use crate::model::Scorer;
use crate::real::Real;

/// Cut-offs reported for every metric.
pub const KS: [usize; 3] = [5, 10, 20];
/// Default number of sampled negatives.
pub const SAMPLED_NEGATIVES: usize = 999;
/// Corpora with more items than this default to sampled candidates.
pub const ALL_ITEMS_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = RcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(RcfError::Config(format!("unknown split `{other}` (expected valid or test)"))),
        }
    }
}

/// How the items ranked against the held-out item are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateMode {
    /// Every item outside the user's training set.
    AllItems,
    /// `n` items the user never interacted with, sampled without replacement.
    Sampled(usize),
}

impl CandidateMode {
    pub fn default_for(n_items: usize) -> Self {
        if n_items <= ALL_ITEMS_LIMIT {
            CandidateMode::AllItems
        } else {
            CandidateMode::Sampled(SAMPLED_NEGATIVES)
        }
    }
}

impl fmt::Display for CandidateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CandidateMode::AllItems => f.write_str("all-items"),
            CandidateMode::Sampled(n) => write!(f, "sampled-{n}"),
        }
    }
}

impl FromStr for CandidateMode {
    type Err = RcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "all-items" => Ok(CandidateMode::AllItems),
            "sampled" => Ok(CandidateMode::Sampled(SAMPLED_NEGATIVES)),
            _ => s
                .strip_prefix("sampled-")
                .and_then(|n| n.parse().ok())
                .filter(|&n: &usize| n > 0)
                .map(CandidateMode::Sampled)
                .ok_or_else(|| {
                    RcfError::Config(format!("unknown candidate mode `{s}` (expected all-items, sampled or sampled-N)"))
                }),
        }
    }
}

impl Serialize for CandidateMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Candidate random stream for one user: independent of evaluation order.
fn user_rng(seed: u64, user: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user as u64);
    rng
}

/// Candidate list for `user`; the held-out item comes first.
pub fn build_candidates(corpus: &Corpus, user: u32, split: Split, mode: CandidateMode, rng: &mut ChaCha8Rng) -> Result<Vec<u32>> {
    let s = corpus.split(user);
    let held = match split {
        Split::Valid => s.valid,
        Split::Test => s.test,
    };
    match mode {
        CandidateMode::AllItems => {
            let mut c = Vec::with_capacity(corpus.n_items() - s.train.len());
            c.push(held);
            c.extend((0..corpus.n_items() as u32).filter(|&i| i != held && !s.contains_train(i)));
            Ok(c)
        }
        CandidateMode::Sampled(n) => {
            let pool: Vec<u32> = (0..corpus.n_items() as u32).filter(|&i| !s.interacted(i)).collect();
            if pool.len() < n {
                return Err(RcfError::Data(format!(
                    "user `{}` has only {} non-interacted items, {} negatives requested",
                    corpus.users.label(user),
                    pool.len(),
                    n
                )));
            }
            let mut c = Vec::with_capacity(n + 1);
            c.push(held);
            c.extend(sample(rng, pool.len(), n).iter().map(|k| pool[k]));
            Ok(c)
        }
    }
}

/// Pessimistic rank of `held_score` among `others`: ties count against it.
pub fn rank_heldout(held_score: f64, others: impl IntoIterator<Item = f64>) -> usize {
    1 + others.into_iter().filter(|&s| s >= held_score).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub hr: f64,
    pub mrr: f64,
    pub ndcg: f64,
}

pub fn metrics_at_k(rank: usize, k: usize) -> Metrics {
    assert!(rank >= 1 && k >= 1, "rank and k start at 1");
    if rank <= k {
        Metrics {
            hr: 1.0,
            mrr: 1.0 / rank as f64,
            ndcg: 1.0 / (rank as f64 + 1.0).log2(),
        }
    } else {
        Metrics { hr: 0.0, mrr: 0.0, ndcg: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserRank {
    pub user: String,
    pub item: String,
    pub rank: usize,
    pub candidates: usize,
}

/// Metric means keyed `HR@5`, `MRR@5`, `NDCG@5`, `HR@10`, ... in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary(pub Vec<(String, f64)>);

impl Summary {
    fn from_ranks(ranks: &[usize]) -> Self {
        let n = ranks.len().max(1) as f64;
        let mut out = Vec::new();
        for k in KS {
            let (mut hr, mut mrr, mut ndcg) = (0.0, 0.0, 0.0);
            for &r in ranks {
                let m = metrics_at_k(r, k);
                hr += m.hr;
                mrr += m.mrr;
                ndcg += m.ndcg;
            }
            out.push((format!("HR@{k}"), hr / n));
            out.push((format!("MRR@{k}"), mrr / n));
            out.push((format!("NDCG@{k}"), ndcg / n));
        }
        Summary(out)
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.0.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }
}

impl Serialize for Summary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RankingReport {
    pub config: serde_json::Value,
    pub seed: u64,
    pub mode: CandidateMode,
    pub split: Split,
    pub checkpoint: Option<String>,
    pub per_user: Vec<UserRank>,
    pub summary: Summary,
}

impl RankingReport {
    pub fn metric(&self, key: &str) -> f64 {
        self.summary.get(key).unwrap_or_else(|| panic!("unknown metric {key}"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }
}

/// Evaluation settings.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub split: Split,
    pub mode: CandidateMode,
    pub seed: u64,
}

/// Evaluation thread cap from `RCF_THREADS`, if set.
pub fn thread_cap() -> Option<usize> {
    std::env::var("RCF_THREADS").ok()?.trim().parse().ok().filter(|&n: &usize| n > 0)
}

/// Ranks every user's held-out item using `score(user, candidates)`.
///
/// Users run in parallel (capped by `RCF_THREADS`); results are aggregated
/// in user order.
pub fn evaluate_with<F>(corpus: &Corpus, opts: EvalOptions, score: F) -> Result<(Vec<UserRank>, Summary)>
where
    F: Fn(u32, &[u32]) -> Vec<f64> + Sync,
{
    let run = || {
        (0..corpus.n_users() as u32)
            .into_par_iter()
            .map(|u| {
                let mut rng = user_rng(opts.seed, u);
                let cands = build_candidates(corpus, u, opts.split, opts.mode, &mut rng)?;
                let scores = score(u, &cands);
                if scores.iter().any(|s| !s.is_finite()) {
                    return Err(RcfError::Numerical(format!(
                        "non-finite score for user `{}`",
                        corpus.users.label(u)
                    )));
                }
                let rank = rank_heldout(scores[0], scores[1..].iter().copied());
                Ok(UserRank {
                    user: corpus.users.label(u).to_string(),
                    item: corpus.items.label(cands[0]).to_string(),
                    rank,
                    candidates: cands.len(),
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    let per_user = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| RcfError::Config(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    let ranks: Vec<usize> = per_user.iter().map(|r| r.rank).collect();
    Ok((per_user, Summary::from_ranks(&ranks)))
}

/// Full report for a trained model.
pub fn evaluate<T: Real>(scorer: &Scorer<'_, T>, opts: EvalOptions, config: serde_json::Value, checkpoint: Option<String>) -> Result<RankingReport> {
    let (per_user, summary) = evaluate_with(scorer.corpus(), opts, |u, c| scorer.score_many(u, c))?;
    Ok(RankingReport {
        config,
        seed: opts.seed,
        mode: opts.mode,
        split: opts.split,
        checkpoint,
        per_user,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n_users: usize, n_items: usize) -> Corpus {
        let mut s = String::new();
        for u in 0..n_users {
            for k in 0..3 + u % 4 {
                s.push_str(&format!("u{u}\ti{}\n", (u * 7 + k * 3) % n_items));
            }
        }
        // make sure every item id exists
        for i in 0..n_items {
            s.push_str(&format!("filler{}\ti{i}\n", i % 4));
        }
        Corpus::from_tsv(&s, None, false, 1).unwrap()
    }

    #[test]
    fn metric_examples() {
        assert_eq!(metrics_at_k(1, 10), Metrics { hr: 1.0, mrr: 1.0, ndcg: 1.0 });
        let m = metrics_at_k(4, 10);
        assert_eq!((m.hr, m.mrr), (1.0, 0.25));
        assert!((m.ndcg - 1.0 / 5f64.log2()).abs() < 1e-12);
        assert_eq!(metrics_at_k(11, 10), Metrics { hr: 0.0, mrr: 0.0, ndcg: 0.0 });
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_heldout(5.0, [1.0, 2.0, 3.0]), 1);
        assert_eq!(rank_heldout(0.0, vec![0.0; 999]), 1000);
        assert_eq!(rank_heldout(2.0, [3.0, 2.0, 1.0]), 3);
    }

    #[test]
    fn candidates_all_items() {
        let c = corpus(10, 20);
        let mut rng = user_rng(0, 0);
        for u in 0..c.n_users() as u32 {
            let cands = build_candidates(&c, u, Split::Test, CandidateMode::AllItems, &mut rng).unwrap();
            assert_eq!(cands.len(), c.n_items() - c.train_items(u).len());
            assert_eq!(cands.iter().filter(|&&i| i == c.split(u).test).count(), 1);
            assert!(cands.iter().all(|&i| !c.split(u).contains_train(i)));
        }
    }

    #[test]
    fn sampled_candidates_avoid_interactions() {
        let c = corpus(10, 40);
        for u in 0..c.n_users() as u32 {
            let mut rng = user_rng(3, u);
            let cands = build_candidates(&c, u, Split::Valid, CandidateMode::Sampled(20), &mut rng).unwrap();
            assert_eq!(cands.len(), 21);
            assert_eq!(cands[0], c.split(u).valid);
            let mut rest = cands[1..].to_vec();
            assert!(rest.iter().all(|&i| !c.split(u).interacted(i)));
            rest.sort_unstable();
            rest.dedup();
            assert_eq!(rest.len(), 20);
        }
        let mut rng = user_rng(3, 0);
        assert!(build_candidates(&c, 0, Split::Test, CandidateMode::Sampled(1000), &mut rng).is_err());
    }

    #[test]
    fn zero_model_hits_tie_floor() {
        let c = corpus(12, 30);
        let opts = EvalOptions { split: Split::Test, mode: CandidateMode::Sampled(20), seed: 7 };
        let (ranks, summary) = evaluate_with(&c, opts, |_, cands| vec![0.0; cands.len()]).unwrap();
        assert!(ranks.iter().all(|r| r.rank == 21));
        assert!(summary.0.iter().all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn oracle_model_is_perfect() {
        let c = corpus(12, 30);
        let opts = EvalOptions { split: Split::Test, mode: CandidateMode::AllItems, seed: 7 };
        let (_, summary) = evaluate_with(&c, opts, |u, cands| {
            cands.iter().map(|&i| if i == c.split(u).test { 1e300 } else { 0.0 }).collect()
        })
        .unwrap();
        assert!(summary.0.iter().all(|(_, v)| *v == 1.0));
    }

    #[test]
    fn summary_key_order() {
        let s = Summary::from_ranks(&[1, 3]);
        let keys: Vec<&str> = s.0.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys[..4], ["HR@5", "MRR@5", "NDCG@5", "HR@10"]);
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.starts_with("{\"HR@5\":1.0,\"MRR@5\":"));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("sampled-999".parse::<CandidateMode>().unwrap(), CandidateMode::Sampled(999));
        assert_eq!("all-items".parse::<CandidateMode>().unwrap(), CandidateMode::AllItems);
        assert!("sampled-0".parse::<CandidateMode>().is_err());
        assert_eq!(CandidateMode::default_for(1682), CandidateMode::AllItems);
        assert_eq!(CandidateMode::default_for(20_000), CandidateMode::Sampled(999));
    }
}
