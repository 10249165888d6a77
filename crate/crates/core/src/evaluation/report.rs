use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::metrics::Prf;

/// One table row, values in percent rounded to two decimals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant_name: String,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

fn pct(v: f64) -> f64 {
    (v * 10000.0).round() / 100.0
}

impl ReportRow {
    pub fn from_prf(name: impl Into<String>, p: &Prf) -> Self {
        Self {
            variant_name: name.into(),
            recall: pct(p.recall),
            precision: pct(p.precision),
            f1: pct(p.f1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus_id: String,
    pub checkpoint_hash: String,
    pub threshold: f64,
    /// OSD rows: recall, precision and F1 columns.
    pub rows: Vec<ReportRow>,
    #[serde(default)]
    pub vad_rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table: Method, Recall, Precision, F1.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "corpus {}  checkpoint {}  threshold {:.2}\n",
            self.corpus_id, self.checkpoint_hash, self.threshold
        );
        s.push_str(&render(&self.rows));
        if !self.vad_rows.is_empty() {
            s.push_str("\nVAD\n");
            s.push_str(&render(&self.vad_rows));
        }
        s
    }
}

fn render(rows: &[ReportRow]) -> String {
    let w = rows.iter().map(|r| r.variant_name.len()).max().unwrap_or(0).max("Method".len());
    let mut s = String::new();
    let _ = writeln!(s, "{:<w$}  {:>7}  {:>9}  {:>7}", "Method", "Recall", "Precision", "F1");
    for r in rows {
        let _ = writeln!(s, "{:<w$}  {:>7.2}  {:>9.2}  {:>7.2}", r.variant_name, r.recall, r.precision, r.f1);
    }
    s
}

/// Progressive and unified rows followed by their difference.
pub fn delta_table(progressive: &ReportRow, unified: &ReportRow) -> String {
    let delta = ReportRow {
        variant_name: "delta (p - u)".into(),
        recall: progressive.recall - unified.recall,
        precision: progressive.precision - unified.precision,
        f1: progressive.f1 - unified.f1,
    };
    render(&[progressive.clone(), unified.clone(), delta])
}
