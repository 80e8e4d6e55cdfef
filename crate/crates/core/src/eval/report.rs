use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    Incorrect,
    /// A prediction was present but no answer could be read from it.
    Unparseable,
    /// No prediction for the item.
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemVerdict {
    pub item_id: String,
    pub outcome: Outcome,
    /// Credit in [0, 1] towards the accuracy-style aggregate.
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<String>,
    /// Metric-specific auxiliary value, such as the IoU behind a REC verdict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl ItemVerdict {
    pub fn new(item_id: impl Into<String>, outcome: Outcome) -> Self {
        ItemVerdict {
            item_id: item_id.into(),
            score: if outcome == Outcome::Correct { 1.0 } else { 0.0 },
            outcome,
            predicted: None,
            expected: None,
            value: None,
        }
    }

    pub fn binary(item_id: impl Into<String>, correct: bool) -> Self {
        Self::new(item_id, if correct { Outcome::Correct } else { Outcome::Incorrect })
    }

    pub fn predicted(mut self, p: impl Into<String>) -> Self {
        self.predicted = Some(p.into());
        self
    }

    pub fn expected(mut self, e: impl Into<String>) -> Self {
        self.expected = Some(e.into());
        self
    }

    pub fn value(mut self, v: f64) -> Self {
        self.value = Some(v);
        self
    }

    pub fn with_score(mut self, s: f64) -> Self {
        self.score = s;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailures {
    pub count: usize,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub n_items: usize,
    pub aggregates: BTreeMap<String, f64>,
    pub per_item: Vec<ItemVerdict>,
    pub parse_failures: ParseFailures,
    pub missing: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Collects parse failures and missing ids from the verdicts.
    pub fn from_verdicts(metric: impl Into<String>, per_item: Vec<ItemVerdict>) -> Self {
        let mut parse_failures = ParseFailures::default();
        let mut missing = Vec::new();
        for v in &per_item {
            match v.outcome {
                Outcome::Unparseable => {
                    parse_failures.count += 1;
                    parse_failures.ids.push(v.item_id.clone());
                }
                Outcome::Missing => missing.push(v.item_id.clone()),
                _ => {}
            }
        }
        EvalReport {
            metric: metric.into(),
            n_items: per_item.len(),
            aggregates: BTreeMap::new(),
            per_item,
            parse_failures,
            missing,
            warnings: Vec::new(),
        }
    }

    pub fn with_aggregate(mut self, name: &str, value: f64) -> Self {
        self.aggregates.insert(name.to_string(), value);
        self
    }

    pub fn with_warnings(mut self, warnings: Vec<String>) -> Self {
        self.warnings.extend(warnings);
        self
    }

    /// Mean per-item score as a percentage. Zero for an empty report.
    pub fn mean_score_percent(&self) -> f64 {
        if self.per_item.is_empty() {
            return 0.0;
        }
        100.0 * self.per_item.iter().map(|v| v.score).sum::<f64>() / self.per_item.len() as f64
    }

    pub fn count(&self, outcome: Outcome) -> usize {
        self.per_item.iter().filter(|v| v.outcome == outcome).count()
    }

    pub fn aggregate(&self, name: &str) -> Option<f64> {
        self.aggregates.get(name).copied()
    }

    /// Aligned text table: one row per aggregate, then item accounting.
    pub fn table(&self) -> String {
        let mut rows: Vec<(String, String)> = self
            .aggregates
            .iter()
            .map(|(k, v)| (k.clone(), format!("{v:.2}")))
            .collect();
        rows.push(("items".into(), self.n_items.to_string()));
        rows.push(("unparseable".into(), self.parse_failures.count.to_string()));
        rows.push(("missing".into(), self.missing.len().to_string()));
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0).max(self.metric.len());
        let vwidth = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$} | {:>vwidth$}", self.metric, "value");
        let _ = writeln!(out, "{}-+-{}", "-".repeat(width), "-".repeat(vwidth));
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$} | {v:>vwidth$}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accounting_and_table() {
        let verdicts = vec![
            ItemVerdict::binary("a", true),
            ItemVerdict::new("b", Outcome::Unparseable),
            ItemVerdict::new("c", Outcome::Missing),
            ItemVerdict::binary("d", false),
        ];
        let r = EvalReport::from_verdicts("rec", verdicts);
        assert_eq!(r.n_items, 4);
        assert_eq!(r.parse_failures.ids, ["b"]);
        assert_eq!(r.missing, ["c"]);
        assert_eq!(r.mean_score_percent(), 25.0);
        let r = r.with_aggregate("accuracy", 25.0);
        let t = r.table();
        assert!(t.contains("accuracy    | 25.00"));
        assert!(t.lines().all(|l| l.contains('|') || l.contains('+')));
    }
}
