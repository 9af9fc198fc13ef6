use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::Vocab;
use crate::error::{RcfError, Result};

/// Minimum number of distinct items a user needs to survive filtering: one
/// validation item, one test item and at least one training item.
pub const MIN_USER_ITEMS: usize = 3;

/// Leave-one-out split of one user's interactions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    /// Training items, sorted by item index.
    pub train: Vec<u32>,
    pub valid: u32,
    pub test: u32,
}

impl UserSplit {
    pub fn contains_train(&self, item: u32) -> bool {
        self.train.binary_search(&item).is_ok()
    }

    /// True for any item the user interacted with (train or held out).
    pub fn interacted(&self, item: u32) -> bool {
        item == self.valid || item == self.test || self.contains_train(item)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionSet {
    pub users: Vec<UserSplit>,
    pub has_timestamps: bool,
}

impl InteractionSet {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn train_items(&self, user: u32) -> &[u32] {
        &self.users[user as usize].train
    }

    pub fn n_train(&self) -> usize {
        self.users.iter().map(|u| u.train.len()).sum()
    }

    /// Total interactions including both holdouts.
    pub fn n_interactions(&self) -> usize {
        self.n_train() + 2 * self.users.len()
    }
}

/// Output of interaction ingestion.
#[derive(Debug, Clone)]
pub struct IngestedInteractions {
    pub users: Vocab,
    pub items: Vocab,
    pub set: InteractionSet,
    pub dropped_users: usize,
    pub duplicate_lines: usize,
}

struct RawUser {
    label: String,
    // (item label, timestamp), first-seen order, duplicates collapsed
    items: Vec<(String, Option<i64>)>,
    seen: HashMap<String, usize>,
}

pub fn ingest_interactions(
    path: &Path,
    has_timestamps: bool,
    split_seed: u64,
) -> Result<IngestedInteractions> {
    let file = std::fs::File::open(path).map_err(|e| RcfError::io(path, e))?;
    parse_interactions(std::io::BufReader::new(file), path, has_timestamps, split_seed)
}

/// Parses `user \t item [\t timestamp]` lines and builds the leave-one-out split.
///
/// Without timestamps the two held-out items are drawn at random with a
/// generator seeded by `split_seed`.
pub fn parse_interactions<R: BufRead>(
    reader: R,
    path: &Path,
    has_timestamps: bool,
    split_seed: u64,
) -> Result<IngestedInteractions> {
    let mut raw: Vec<RawUser> = Vec::new();
    let mut user_pos: HashMap<String, usize> = HashMap::new();
    let mut duplicate_lines = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RcfError::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| RcfError::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let (user, item, ts) = match (fields.len(), has_timestamps) {
            (2, false) => (fields[0], fields[1], None),
            (3, _) => {
                let ts = fields[2].trim().parse::<i64>().map_err(|_| {
                    parse_err(format!("invalid timestamp `{}`", fields[2]))
                })?;
                (fields[0], fields[1], has_timestamps.then_some(ts))
            }
            (2, true) => return Err(parse_err("missing timestamp column".into())),
            (n, _) => return Err(parse_err(format!("expected 2 or 3 tab-separated fields, found {n}"))),
        };
        if user.is_empty() || item.is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }

        let upos = *user_pos.entry(user.to_owned()).or_insert_with(|| {
            raw.push(RawUser {
                label: user.to_owned(),
                items: Vec::new(),
                seen: HashMap::new(),
            });
            raw.len() - 1
        });
        let ru = &mut raw[upos];
        match ru.seen.get(item) {
            Some(&p) => {
                duplicate_lines += 1;
                if let (Some(new), Some(old)) = (ts, ru.items[p].1) {
                    if new < old {
                        ru.items[p].1 = Some(new);
                    }
                }
            }
            None => {
                ru.seen.insert(item.to_owned(), ru.items.len());
                ru.items.push((item.to_owned(), ts));
            }
        }
    }

    if raw.is_empty() {
        return Err(RcfError::NoInteractions);
    }

    let before = raw.len();
    raw.retain(|u| u.items.len() >= MIN_USER_ITEMS);
    let dropped_users = before - raw.len();
    if dropped_users > 0 {
        log::warn!(
            "{}: dropped {dropped_users} users with fewer than {MIN_USER_ITEMS} distinct items",
            path.display()
        );
    }
    if raw.is_empty() {
        return Err(RcfError::Data(format!(
            "{}: no user has at least {MIN_USER_ITEMS} distinct items",
            path.display()
        )));
    }

    let mut users = Vocab::new();
    let mut items = Vocab::new();
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    let mut splits = Vec::with_capacity(raw.len());
    for ru in &raw {
        users.intern(&ru.label);
        let idx: Vec<u32> = ru.items.iter().map(|(it, _)| items.intern(it)).collect();

        // positions (into ru.items) of the validation and test interactions
        let (valid_pos, test_pos) = if has_timestamps {
            let mut order: Vec<usize> = (0..idx.len()).collect();
            // stable: equal timestamps keep file order
            order.sort_by_key(|&p| ru.items[p].1.expect("timestamp present"));
            (order[order.len() - 2], order[order.len() - 1])
        } else {
            let picked = index::sample(&mut rng, idx.len(), 2);
            (picked.index(0), picked.index(1))
        };
        let mut train: Vec<u32> = idx
            .iter()
            .enumerate()
            .filter(|&(p, _)| p != valid_pos && p != test_pos)
            .map(|(_, &it)| it)
            .collect();
        train.sort_unstable();
        splits.push(UserSplit {
            train,
            valid: idx[valid_pos],
            test: idx[test_pos],
        });
    }

    Ok(IngestedInteractions {
        users,
        items,
        set: InteractionSet {
            users: splits,
            has_timestamps,
        },
        dropped_users,
        duplicate_lines,
    })
}
