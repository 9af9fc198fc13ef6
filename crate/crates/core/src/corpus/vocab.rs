use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{RcfError, Result};

/// Bijection between external string ids and dense indices, assigned in
/// first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    index: HashMap<String, u32>,
    labels: Vec<String>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::new();
        for label in labels {
            let label = label.into();
            if vocab.get(&label).is_some() {
                return Err(RcfError::Data(format!("duplicate vocabulary label `{label}`")));
            }
            vocab.intern(&label);
        }
        Ok(vocab)
    }

    /// Returns the index of `label`, assigning the next free index if unseen.
    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&idx) = self.index.get(label) {
            return idx;
        }
        let idx = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), idx);
        idx
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, idx: u32) -> &str {
        &self.labels[idx as usize]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Writes `index \t label` lines.
    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (i, label) in self.labels.iter().enumerate() {
            writeln!(out, "{i}\t{label}").expect("write to Vec");
        }
        std::fs::write(path, out).map_err(|e| RcfError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_seen_order_and_bijection() {
        let mut v = Vocab::new();
        assert_eq!(v.intern("b"), 0);
        assert_eq!(v.intern("a"), 1);
        assert_eq!(v.intern("b"), 0);
        assert_eq!(v.len(), 2);
        for i in 0..v.len() as u32 {
            assert_eq!(v.get(v.label(i)), Some(i));
        }
    }

    #[test]
    fn from_labels_rejects_duplicates() {
        assert!(Vocab::from_labels(["x", "y", "x"]).is_err());
        let v = Vocab::from_labels(["x", "y"]).unwrap();
        assert_eq!(v.get("y"), Some(1));
    }
}
