use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use super::vocab::Vocab;
use crate::error::{RcfError, Result};

/// Index of the latent relation type (collaborative similarity).
pub const LATENT_TYPE: u32 = 0;
/// Index of the latent relation value.
pub const LATENT_VALUE: u32 = 0;

pub const LATENT_TYPE_LABEL: &str = "<latent>";
pub const LATENT_VALUE_LABEL: &str = "<latent>";

/// One undirected relation `<rtype, value>` between two items, stored once
/// with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub a: u32,
    pub b: u32,
    pub rtype: u32,
    pub value: u32,
}

/// A directed view of a triplet from one endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Link {
    pub other: u32,
    pub rtype: u32,
    pub value: u32,
}

/// Symmetric item-item relation index.
///
/// Types and values carry a reserved latent entry at index 0 which never
/// appears in the triplet list.
#[derive(Debug, Clone)]
pub struct RelationIndex {
    types: Vocab,
    values: Vocab,
    triplets: Vec<Triplet>,
    // per item, links sorted by (other, rtype, value)
    adjacency: Vec<Vec<Link>>,
    // number of tails per (head, rtype, value)
    fanout: HashMap<(u32, u32, u32), u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationIngestStats {
    pub unknown_item_lines: usize,
    pub self_relation_lines: usize,
    pub duplicate_lines: usize,
}

impl RelationIndex {
    /// An index holding only the latent relation.
    pub fn latent_only(n_items: usize) -> Self {
        Self::build(
            n_items,
            Vocab::from_labels([LATENT_TYPE_LABEL]).expect("single label"),
            Vocab::from_labels([LATENT_VALUE_LABEL]).expect("single label"),
            Vec::new(),
        )
        .expect("empty index is valid")
    }

    /// Builds the index from vocabularies (latent entries at index 0) and a
    /// triplet list. Triplets are normalised to `a < b` and deduplicated.
    pub fn build(
        n_items: usize,
        types: Vocab,
        values: Vocab,
        triplets: Vec<Triplet>,
    ) -> Result<Self> {
        if types.is_empty() || types.label(LATENT_TYPE) != LATENT_TYPE_LABEL {
            return Err(RcfError::Data("type vocabulary must start with the latent type".into()));
        }
        if values.is_empty() || values.label(LATENT_VALUE) != LATENT_VALUE_LABEL {
            return Err(RcfError::Data("value vocabulary must start with the latent value".into()));
        }
        let mut seen = HashSet::with_capacity(triplets.len());
        let mut kept = Vec::with_capacity(triplets.len());
        for t in triplets {
            if t.a == t.b {
                return Err(RcfError::Data(format!("self relation on item {}", t.a)));
            }
            if t.rtype == LATENT_TYPE || t.value == LATENT_VALUE {
                return Err(RcfError::Data("latent relation cannot be stored as data".into()));
            }
            if t.a as usize >= n_items || t.b as usize >= n_items {
                return Err(RcfError::Data(format!("relation item out of range: {t:?}")));
            }
            if t.rtype as usize >= types.len() || t.value as usize >= values.len() {
                return Err(RcfError::Data(format!("relation label out of range: {t:?}")));
            }
            let norm = Triplet {
                a: t.a.min(t.b),
                b: t.a.max(t.b),
                ..t
            };
            if seen.insert(norm) {
                kept.push(norm);
            }
        }

        let mut adjacency: Vec<Vec<Link>> = vec![Vec::new(); n_items];
        let mut fanout: HashMap<(u32, u32, u32), u32> = HashMap::new();
        for t in &kept {
            adjacency[t.a as usize].push(Link {
                other: t.b,
                rtype: t.rtype,
                value: t.value,
            });
            adjacency[t.b as usize].push(Link {
                other: t.a,
                rtype: t.rtype,
                value: t.value,
            });
            *fanout.entry((t.a, t.rtype, t.value)).or_default() += 1;
            *fanout.entry((t.b, t.rtype, t.value)).or_default() += 1;
        }
        for links in &mut adjacency {
            links.sort_unstable();
        }

        Ok(Self {
            types,
            values,
            triplets: kept,
            adjacency,
            fanout,
        })
    }

    pub fn types(&self) -> &Vocab {
        &self.types
    }

    pub fn values(&self) -> &Vocab {
        &self.values
    }

    /// Number of relation types including the latent one.
    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    /// Number of relation values including the latent one.
    pub fn n_values(&self) -> usize {
        self.values.len()
    }

    pub fn n_items(&self) -> usize {
        self.adjacency.len()
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    /// All links of `item`, sorted by (other, type, value).
    pub fn links(&self, item: u32) -> &[Link] {
        &self.adjacency[item as usize]
    }

    /// Links between `item` and `other`, sorted by (type, value).
    pub fn links_between(&self, item: u32, other: u32) -> &[Link] {
        let links = self.links(item);
        let lo = links.partition_point(|l| l.other < other);
        let hi = links.partition_point(|l| l.other <= other);
        &links[lo..hi]
    }

    pub fn has_relation(&self, a: u32, b: u32, rtype: u32, value: u32) -> bool {
        self.links(a)
            .binary_search(&Link {
                other: b,
                rtype,
                value,
            })
            .is_ok()
    }

    /// Items related to `item` under `rtype`, each with its set of values.
    pub fn related_by_type(&self, item: u32, rtype: u32) -> BTreeMap<u32, Vec<u32>> {
        let mut out: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for l in self.links(item).iter().filter(|l| l.rtype == rtype) {
            out.entry(l.other).or_default().push(l.value);
        }
        out
    }

    /// Number of tails `j` with `I_<rtype,value>(head, j) = 1`.
    pub fn fanout(&self, head: u32, rtype: u32, value: u32) -> u32 {
        self.fanout.get(&(head, rtype, value)).copied().unwrap_or(0)
    }

    /// Whether at least one oriented positive admits a negative tail.
    pub fn has_sparse_positive(&self) -> bool {
        let n = self.n_items() as u32;
        self.triplets.iter().any(|t| {
            self.fanout(t.a, t.rtype, t.value) + 1 < n || self.fanout(t.b, t.rtype, t.value) + 1 < n
        })
    }
}

pub fn ingest_relations(path: &Path, items: &Vocab) -> Result<(RelationIndex, RelationIngestStats)> {
    let file = std::fs::File::open(path).map_err(|e| RcfError::io(path, e))?;
    parse_relations(std::io::BufReader::new(file), path, items)
}

/// Parses `itemA \t itemB \t type \t value` lines.
///
/// Lines naming unknown items are skipped and self relations are rejected;
/// both are counted and reported as warnings.
pub fn parse_relations<R: BufRead>(
    reader: R,
    path: &Path,
    items: &Vocab,
) -> Result<(RelationIndex, RelationIngestStats)> {
    let mut types = Vocab::from_labels([LATENT_TYPE_LABEL])?;
    let mut values = Vocab::from_labels([LATENT_VALUE_LABEL])?;
    let mut stats = RelationIngestStats::default();
    let mut seen: HashSet<Triplet> = HashSet::new();
    let mut triplets = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RcfError::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 || fields.iter().any(|f| f.is_empty()) {
            return Err(RcfError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("expected 4 non-empty tab-separated fields, found {}", fields.len()),
            });
        }
        if fields[2] == LATENT_TYPE_LABEL || fields[3] == LATENT_VALUE_LABEL {
            return Err(RcfError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("label `{LATENT_TYPE_LABEL}` is reserved"),
            });
        }
        let (Some(a), Some(b)) = (items.get(fields[0]), items.get(fields[1])) else {
            stats.unknown_item_lines += 1;
            continue;
        };
        if a == b {
            stats.self_relation_lines += 1;
            continue;
        }
        let rtype = types.intern(fields[2]);
        let value = values.intern(fields[3]);
        let t = Triplet {
            a: a.min(b),
            b: a.max(b),
            rtype,
            value,
        };
        if seen.insert(t) {
            triplets.push(t);
        } else {
            stats.duplicate_lines += 1;
        }
    }

    if stats.unknown_item_lines > 0 {
        log::warn!(
            "{}: skipped {} relation lines naming unknown items",
            path.display(),
            stats.unknown_item_lines
        );
    }
    if stats.self_relation_lines > 0 {
        log::warn!(
            "{}: rejected {} self-relation lines",
            path.display(),
            stats.self_relation_lines
        );
    }

    let index = RelationIndex::build(items.len(), types, values, triplets)?;
    Ok((index, stats))
}
