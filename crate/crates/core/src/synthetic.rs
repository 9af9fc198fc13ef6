//! Synthetic corpus with planted relational preferences.
//!
//! Items carry values under a few relation types; two items are related by
//! `<t, v>` whenever both carry `v` under `t`. Users fall into groups, and each
//! group draws most of its interactions from the items carrying one planted
//! `(type, value)`. The planted pairs are returned as ground truth.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{RcfError, Result};

/// One relation type of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpec {
    pub label: String,
    /// Number of distinct values.
    pub values: usize,
    /// Values carried by every item.
    pub per_item: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub users: usize,
    pub items: usize,
    pub types: Vec<TypeSpec>,
    pub groups: usize,
    /// Inclusive range of interactions per user.
    pub min_interactions: usize,
    pub max_interactions: usize,
    /// Probability that an interaction comes from the planted item set.
    pub planted_share: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            users: 200,
            items: 300,
            types: vec![
                TypeSpec { label: "genre".into(), values: 12, per_item: 1 },
                TypeSpec { label: "director".into(), values: 12, per_item: 1 },
                TypeSpec { label: "actor".into(), values: 12, per_item: 1 },
            ],
            groups: 36,
            min_interactions: 8,
            max_interactions: 14,
            planted_share: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedGroup {
    pub group: usize,
    pub rtype: String,
    pub value: String,
    /// User labels in the group.
    pub users: Vec<String>,
    /// Number of items carrying the planted value.
    pub planted_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SyntheticConfig,
    pub groups: Vec<PlantedGroup>,
}

impl GroundTruth {
    /// Planted `(type, value)` labels of the group containing `user`.
    pub fn planted_for(&self, user: &str) -> Option<&PlantedGroup> {
        self.groups.iter().find(|g| g.users.iter().any(|u| u == user))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    /// `user \t item \t timestamp` lines.
    pub interactions: String,
    /// `itemA \t itemB \t type \t value` lines.
    pub relations: String,
    pub truth: GroundTruth,
}

impl SyntheticData {
    pub fn corpus(&self) -> Result<Corpus> {
        Corpus::from_tsv(&self.interactions, Some(&self.relations), true, self.truth.config.seed)
    }

    /// Writes `interactions.tsv`, `relations.tsv` and `ground_truth.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| RcfError::io(dir, e))?;
        let put = |name: &str, body: &str| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| RcfError::io(&p, e))
        };
        put("interactions.tsv", &self.interactions)?;
        put("relations.tsv", &self.relations)?;
        put(
            "ground_truth.json",
            &(serde_json::to_string_pretty(&self.truth).expect("ground truth serialises") + "\n"),
        )
    }
}

fn item_label(i: usize) -> String {
    format!("item{i:04}")
}

fn user_label(u: usize) -> String {
    format!("user{u:04}")
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.users == 0 || cfg.items < 4 || cfg.types.is_empty() || cfg.groups == 0 {
        return Err(RcfError::Config("synthetic corpus needs users, >= 4 items, a relation type and a group".into()));
    }
    if cfg.min_interactions < 3 || cfg.min_interactions > cfg.max_interactions || cfg.max_interactions >= cfg.items {
        return Err(RcfError::Config("interactions per user must satisfy 3 <= min <= max < items".into()));
    }
    if !(0.0..=1.0).contains(&cfg.planted_share) {
        return Err(RcfError::Config("planted share must lie in [0, 1]".into()));
    }
    for t in &cfg.types {
        if t.values == 0 || t.per_item == 0 || t.per_item > t.values {
            return Err(RcfError::Config(format!("type `{}` needs 1 <= per_item <= values", t.label)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // carried[t][i] = sorted values of item i under type t
    let carried: Vec<Vec<Vec<usize>>> = cfg
        .types
        .iter()
        .map(|t| {
            (0..cfg.items)
                .map(|_| {
                    let mut v: Vec<usize> = sample(&mut rng, t.values, t.per_item).into_vec();
                    v.sort_unstable();
                    v
                })
                .collect()
        })
        .collect();
    let holders = |t: usize, v: usize| -> Vec<usize> { (0..cfg.items).filter(|&i| carried[t][i].contains(&v)).collect() };

    let mut relations = String::new();
    for (t, spec) in cfg.types.iter().enumerate() {
        for v in 0..spec.values {
            let h = holders(t, v);
            for (k, &a) in h.iter().enumerate() {
                for &b in &h[k + 1..] {
                    let _ = writeln!(relations, "{}\t{}\t{}\t{}_{}", item_label(a), item_label(b), spec.label, spec.label, v);
                }
            }
        }
    }

    // group g plants type g mod |T| and a distinct value of that type
    let mut used: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut planted = Vec::with_capacity(cfg.groups);
    for g in 0..cfg.groups {
        let t = g % cfg.types.len();
        let spec = &cfg.types[t];
        let free: Vec<usize> = (0..spec.values).filter(|&v| !used.contains(&(t, v))).collect();
        let v = if free.is_empty() { rng.random_range(0..spec.values) } else { free[rng.random_range(0..free.len())] };
        used.insert((t, v));
        planted.push((t, v, holders(t, v)));
    }

    let mut interactions = String::new();
    let mut members: Vec<Vec<String>> = vec![Vec::new(); cfg.groups];
    let mut clock: u64 = 1_000_000;
    for u in 0..cfg.users {
        let g = u % cfg.groups;
        members[g].push(user_label(u));
        let (_, _, pool) = &planted[g];
        let n = rng.random_range(cfg.min_interactions..=cfg.max_interactions);
        let mut chosen: BTreeSet<usize> = BTreeSet::new();
        let mut order = Vec::with_capacity(n);
        while order.len() < n {
            let from_pool = !pool.is_empty() && rng.random::<f64>() < cfg.planted_share;
            let i = if from_pool { pool[rng.random_range(0..pool.len())] } else { rng.random_range(0..cfg.items) };
            if chosen.len() + 1 >= cfg.items || chosen.insert(i) {
                order.push(i);
            }
        }
        for i in order {
            clock += rng.random_range(1..1000);
            let _ = writeln!(interactions, "{}\t{}\t{}", user_label(u), item_label(i), clock);
        }
    }

    let groups = planted
        .iter()
        .zip(members)
        .enumerate()
        .map(|(g, ((t, v, pool), users))| PlantedGroup {
            group: g,
            rtype: cfg.types[*t].label.clone(),
            value: format!("{}_{}", cfg.types[*t].label, v),
            users,
            planted_items: pool.len(),
        })
        .collect();
    Ok(SyntheticData {
        interactions,
        relations,
        truth: GroundTruth { config: cfg.clone(), groups },
    })
}
