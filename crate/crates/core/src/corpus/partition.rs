use super::relations::{RelationIndex, LATENT_TYPE, LATENT_VALUE};

/// One history entry inside a type bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct BucketEntry {
    pub item: u32,
    pub value: u32,
}

/// A user's history split by the relation type each item shares with a target.
///
/// `buckets[t]` lists `(item, value)` entries for type `t`; bucket 0 holds the
/// items that share no explicit relation with the target (paired with the
/// latent value). An item related to the target under several values appears
/// once per value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryPartition {
    pub buckets: Vec<Vec<BucketEntry>>,
}

impl HistoryPartition {
    pub fn n_types(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.iter().all(Vec::is_empty)
    }

    pub fn n_entries(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }
}

/// Partitions `history` (sorted by item index) relative to `target`.
///
/// The target itself is excluded. Entries within a bucket are ordered by item
/// index, then value index.
pub fn partition_history(relations: &RelationIndex, history: &[u32], target: u32) -> HistoryPartition {
    debug_assert!(history.windows(2).all(|w| w[0] < w[1]), "history must be sorted and unique");
    let mut buckets = vec![Vec::new(); relations.n_types()];
    for &j in history {
        if j == target {
            continue;
        }
        let links = relations.links_between(target, j);
        if links.is_empty() {
            buckets[LATENT_TYPE as usize].push(BucketEntry {
                item: j,
                value: LATENT_VALUE,
            });
        } else {
            // links are sorted by (type, value), so per-bucket order is by value
            for l in links {
                buckets[l.rtype as usize].push(BucketEntry {
                    item: j,
                    value: l.value,
                });
            }
        }
    }
    HistoryPartition { buckets }
}
