//! Comparison tables for ablation runs.

use serde::Serialize;

/// `(value − base) / base`, or 0 when `base` is 0.
pub fn relative_delta(value: f64, base: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        (value - base) / base
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub hr10: f64,
    pub mrr10: f64,
    pub ndcg10: f64,
}

/// Rows with deltas relative to the first (reference) row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn reference(&self) -> Option<&AblationRow> {
        self.rows.first()
    }

    /// Relative change of HR@10, MRR@10 and NDCG@10 against the reference row.
    pub fn deltas(&self, row: &AblationRow) -> [f64; 3] {
        let base = self.reference().expect("non-empty table");
        [
            relative_delta(row.hr10, base.hr10),
            relative_delta(row.mrr10, base.mrr10),
            relative_delta(row.ndcg10, base.ndcg10),
        ]
    }

    /// Plain-text table; deltas are signed percentages.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<16} {:>8} {:>8} {:>8} {:>9} {:>9} {:>9}\n",
            "config", "HR@10", "MRR@10", "NDCG@10", "Dec HR", "Dec MRR", "Dec NDCG"
        );
        for row in &self.rows {
            let [h, m, n] = self.deltas(row);
            out.push_str(&format!(
                "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>+8.1}% {:>+8.1}% {:>+8.1}%\n",
                row.label,
                row.hr10,
                row.mrr10,
                row.ndcg10,
                100.0 * h,
                100.0 * m,
                100.0 * n
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deltas_are_signed_percentages() {
        let t = AblationTable {
            rows: vec![
                AblationRow { label: "full".into(), hr10: 0.2, mrr10: 0.1, ndcg10: 0.1 },
                AblationRow { label: "avg-both".into(), hr10: 0.15, mrr10: 0.11, ndcg10: 0.1 },
            ],
        };
        let d = t.deltas(&t.rows[1]);
        assert!((d[0] + 0.25).abs() < 1e-12);
        assert!((d[1] - 0.1).abs() < 1e-12);
        let text = t.render();
        assert!(text.contains("-25.0%"), "{text}");
        assert!(text.contains("+10.0%"), "{text}");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn zero_base() {
        assert_eq!(relative_delta(0.3, 0.0), 0.0);
    }
}
