//! Attention read-outs for recommendations.

use serde::Serialize;

use crate::corpus::{LATENT_TYPE, LATENT_VALUE};
use crate::error::{RcfError, Result};
use crate::model::Scorer;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeWeight {
    pub rtype: String,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionEntry {
    pub history_item: String,
    pub rtype: String,
    pub value: String,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplanationRecord {
    pub user: String,
    pub item: String,
    pub score: f64,
    /// `α(u, t)` for every type; empty when the mode has no first level.
    pub alpha: Vec<TypeWeight>,
    /// Strongest second-level entries, by β descending.
    pub entries: Vec<AttentionEntry>,
    pub sentence: String,
}

fn user_id<T: Real>(scorer: &Scorer<'_, T>, user: &str) -> Result<u32> {
    scorer
        .corpus()
        .users
        .get(user)
        .ok_or_else(|| RcfError::Data(format!("unknown user `{user}`")))
}

/// Fills the fixed sentence template from the strongest entry.
pub fn sentence(item: &str, top: Option<&AttentionEntry>) -> String {
    match top {
        Some(e) if e.value.is_empty() => format!(
            "{item} is recommended to you because people who chose {} also chose it.",
            e.history_item
        ),
        Some(e) => format!(
            "{item} is recommended to you because it shares the {} {} with {}, which you chose before.",
            e.rtype, e.value, e.history_item
        ),
        None => format!("{item} is recommended to you because of your overall taste."),
    }
}

/// Attention read-out for one user and item.
pub fn explain_item<T: Real>(scorer: &Scorer<'_, T>, user: u32, item: u32, top_m: usize) -> ExplanationRecord {
    let corpus = scorer.corpus();
    let rel = &corpus.relations;
    let p = scorer.predict(user, item);
    let alpha = p
        .first_level
        .iter()
        .enumerate()
        .map(|(t, &a)| TypeWeight { rtype: rel.types().label(t as u32).to_string(), alpha: a })
        .collect();
    let mut entries: Vec<AttentionEntry> = p
        .second_level
        .iter()
        .flat_map(|g| {
            g.entries.iter().map(move |&(j, v, beta)| AttentionEntry {
                history_item: corpus.items.label(j).to_string(),
                rtype: if g.slot == LATENT_TYPE { String::new() } else { rel.types().label(g.slot).to_string() },
                value: if v == LATENT_VALUE { String::new() } else { rel.values().label(v).to_string() },
                beta,
            })
        })
        .collect();
    entries.sort_by(|a, b| b.beta.total_cmp(&a.beta).then_with(|| a.history_item.cmp(&b.history_item)));
    entries.truncate(top_m);
    let item_label = corpus.items.label(item).to_string();
    ExplanationRecord {
        user: corpus.users.label(user).to_string(),
        sentence: sentence(&item_label, entries.first()),
        item: item_label,
        score: p.score,
        alpha,
        entries,
    }
}

/// Explanations for the user's `top_k` highest-scored items outside the training history.
pub fn explain_user<T: Real>(scorer: &Scorer<'_, T>, user: &str, top_k: usize, top_m: usize) -> Result<Vec<ExplanationRecord>> {
    let u = user_id(scorer, user)?;
    let corpus = scorer.corpus();
    let mut seen = vec![false; corpus.n_items()];
    for &i in corpus.train_items(u) {
        seen[i as usize] = true;
    }
    let candidates: Vec<u32> = (0..corpus.n_items() as u32).filter(|&i| !seen[i as usize]).collect();
    let scores = scorer.score_many(u, &candidates);
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(top_k)
        .map(|k| explain_item(scorer, u, candidates[k], top_m))
        .collect())
}

/// Mean `α(u, t)` over all users, one row per type.
pub fn aggregate_alpha<T: Real>(scorer: &Scorer<'_, T>) -> Result<Vec<TypeWeight>> {
    if !scorer.config().encoder()?.uses_first_level() {
        return Err(RcfError::Config(format!(
            "mode `{}` has no first-level attention to aggregate",
            scorer.config().mode
        )));
    }
    let corpus = scorer.corpus();
    let mut sum = vec![0.0; corpus.n_types()];
    for u in 0..corpus.n_users() as u32 {
        for (s, a) in sum.iter_mut().zip(scorer.first_level(u)) {
            *s += a;
        }
    }
    let n = corpus.n_users().max(1) as f64;
    Ok(sum
        .into_iter()
        .enumerate()
        .map(|(t, s)| TypeWeight { rtype: corpus.relations.types().label(t as u32).to_string(), alpha: s / n })
        .collect())
}
