//! History encoders: how a partitioned history is grouped for attention.
//!
//! The full model attends over every relation type (first level) and over the
//! `(item, value)` entries of each type bucket (second level). The ablations
//! regroup the same history differently; each is registered under a name and
//! selected through [`RcfConfig::mode`](super::RcfConfig).

use std::sync::Arc;

use crate::corpus::{BucketEntry, HistoryPartition, LATENT_TYPE, LATENT_VALUE};
use crate::registry::{Named, Registry};

/// One second-level attention group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    /// Relation type whose second-level network scores this group.
    pub network: u32,
    /// First-level weight index applied to this group's profile.
    pub slot: u32,
    /// Whether value embeddings enter the second-level scores.
    pub use_value: bool,
    pub entries: Vec<BucketEntry>,
}

/// Grouping of one (user, target) history for the attention layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionLayout {
    /// Whether group profiles are weighted by a first-level softmax over types.
    pub first_level: bool,
    pub groups: Vec<Group>,
}

pub trait HistoryEncoder: Named + Send + Sync {
    fn uses_first_level(&self) -> bool;
    fn layout(&self, partition: HistoryPartition) -> AttentionLayout;
}

/// Two-level attention over type buckets with value-aware second level.
pub struct Full;

/// One bucket holding every history item once, scored by the latent-type
/// network without value input; no first level.
pub struct Single;

/// Type buckets and first level kept, value input dropped from the second level.
pub struct TypeOnly;

/// No type buckets: one flat group of all `(item, value)` entries scored with
/// value input by the latent-type network; no first level.
pub struct ValueOnly;

impl Named for Full {
    fn name(&self) -> &'static str {
        "full"
    }
}

impl Named for Single {
    fn name(&self) -> &'static str {
        "single"
    }
}

impl Named for TypeOnly {
    fn name(&self) -> &'static str {
        "type-only"
    }
}

impl Named for ValueOnly {
    fn name(&self) -> &'static str {
        "value-only"
    }
}

fn per_type(partition: HistoryPartition, use_value: bool) -> AttentionLayout {
    AttentionLayout {
        first_level: true,
        groups: partition
            .buckets
            .into_iter()
            .enumerate()
            .map(|(t, entries)| Group {
                network: t as u32,
                slot: t as u32,
                use_value,
                entries,
            })
            .collect(),
    }
}

impl HistoryEncoder for Full {
    fn uses_first_level(&self) -> bool {
        true
    }

    fn layout(&self, partition: HistoryPartition) -> AttentionLayout {
        per_type(partition, true)
    }
}

impl HistoryEncoder for TypeOnly {
    fn uses_first_level(&self) -> bool {
        true
    }

    fn layout(&self, partition: HistoryPartition) -> AttentionLayout {
        per_type(partition, false)
    }
}

impl HistoryEncoder for Single {
    fn uses_first_level(&self) -> bool {
        false
    }

    fn layout(&self, partition: HistoryPartition) -> AttentionLayout {
        let mut items: Vec<u32> = partition.buckets.iter().flatten().map(|e| e.item).collect();
        items.sort_unstable();
        items.dedup();
        AttentionLayout {
            first_level: false,
            groups: vec![Group {
                network: LATENT_TYPE,
                slot: LATENT_TYPE,
                use_value: false,
                entries: items
                    .into_iter()
                    .map(|item| BucketEntry {
                        item,
                        value: LATENT_VALUE,
                    })
                    .collect(),
            }],
        }
    }
}

impl HistoryEncoder for ValueOnly {
    fn uses_first_level(&self) -> bool {
        false
    }

    fn layout(&self, partition: HistoryPartition) -> AttentionLayout {
        let mut entries: Vec<BucketEntry> = partition.buckets.into_iter().flatten().collect();
        entries.sort_unstable();
        AttentionLayout {
            first_level: false,
            groups: vec![Group {
                network: LATENT_TYPE,
                slot: LATENT_TYPE,
                use_value: true,
                entries,
            }],
        }
    }
}

/// Registry with the four built-in encoders.
pub fn encoder_registry() -> Registry<dyn HistoryEncoder> {
    let mut r: Registry<dyn HistoryEncoder> = Registry::new();
    r.register(Arc::new(Full));
    r.register(Arc::new(Single));
    r.register(Arc::new(TypeOnly));
    r.register(Arc::new(ValueOnly));
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn partition() -> HistoryPartition {
        HistoryPartition {
            buckets: vec![
                vec![BucketEntry { item: 4, value: 0 }],
                vec![BucketEntry { item: 1, value: 2 }, BucketEntry { item: 1, value: 3 }],
                vec![BucketEntry { item: 1, value: 5 }, BucketEntry { item: 2, value: 6 }],
            ],
        }
    }

    #[test]
    fn registry_has_all_modes() {
        assert_eq!(encoder_registry().names(), vec!["full", "single", "type-only", "value-only"]);
    }

    #[test]
    fn full_keeps_buckets() {
        let l = Full.layout(partition());
        assert!(l.first_level);
        assert_eq!(l.groups.len(), 3);
        assert!(l.groups.iter().all(|g| g.use_value));
        assert_eq!(l.groups[1].entries.len(), 2);
    }

    #[test]
    fn single_deduplicates_items() {
        let l = Single.layout(partition());
        assert!(!l.first_level);
        assert_eq!(l.groups.len(), 1);
        let items: Vec<u32> = l.groups[0].entries.iter().map(|e| e.item).collect();
        assert_eq!(items, vec![1, 2, 4]);
        assert!(!l.groups[0].use_value);
    }

    #[test]
    fn value_only_flattens_entries() {
        let l = ValueOnly.layout(partition());
        assert_eq!(l.groups.len(), 1);
        assert_eq!(l.groups[0].entries.len(), 5);
        assert!(l.groups[0].use_value);
    }

    #[test]
    fn type_only_drops_values() {
        let l = TypeOnly.layout(partition());
        assert!(l.first_level);
        assert!(l.groups.iter().all(|g| !g.use_value));
    }
}
