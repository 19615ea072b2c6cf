use std::fmt::Write as _;

use kgfuse::ingest::Dataset;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

/// Test metrics of several variants trained from one seed on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub title: String,
    pub first_column: String,
    /// Render every row after the first with its change relative to the first.
    pub show_deltas: bool,
    pub seed: u64,
    pub test_records: usize,
    /// SHA-256 prefix of the newline-joined test record ids.
    pub test_record_hash: String,
    pub rows: Vec<ComparisonRow>,
}

pub fn record_id_hash(dataset: &Dataset) -> String {
    let mut hasher = Sha256::new();
    for r in &dataset.records {
        hasher.update(r.id.as_bytes());
        hasher.update(b"\n");
    }
    hasher
        .finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `(↓ 0.65)` when `value` is below `reference`, `(↑ 0.05)` when above.
pub fn format_delta(reference: f64, value: f64) -> String {
    let arrow = if value > reference { '↑' } else { '↓' };
    format!("({arrow} {:.2})", (reference - value).abs())
}

fn cell(v: f64) -> String {
    format!("{v:.4}")
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,weighted_f1,accuracy\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{}",
                r.name,
                cell(r.weighted_f1),
                cell(r.accuracy)
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let reference = self.rows.first().map(|r| (r.weighted_f1, r.accuracy));
        let body: Vec<[String; 3]> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut f1 = cell(r.weighted_f1);
                let mut acc = cell(r.accuracy);
                if let (true, Some((rf, ra)), true) = (self.show_deltas, reference, i > 0) {
                    f1 = format!("{f1} {}", format_delta(rf, r.weighted_f1));
                    acc = format!("{acc} {}", format_delta(ra, r.accuracy));
                }
                [r.name.clone(), f1, acc]
            })
            .collect();
        let header = [self.first_column.clone(), "w-F1".into(), "Acc".into()];
        let width = |c: usize| {
            body.iter()
                .map(|row| row[c].chars().count())
                .chain([header[c].chars().count()])
                .max()
                .unwrap_or(0)
        };
        let widths = [width(0), width(1), width(2)];
        let line = |row: &[String; 3]| {
            let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w - s.chars().count()));
            format!(
                "{} | {} | {}",
                pad(&row[0], widths[0]),
                pad(&row[1], widths[1]),
                pad(&row[2], widths[2])
            )
            .trim_end()
            .to_string()
        };
        let mut out = format!("{}\n", self.title);
        let _ = writeln!(out, "{}", line(&header));
        let _ = writeln!(
            out,
            "{}-+-{}-+-{}",
            "-".repeat(widths[0]),
            "-".repeat(widths[1]),
            "-".repeat(widths[2])
        );
        for row in &body {
            let _ = writeln!(out, "{}", line(row));
        }
        let _ = writeln!(
            out,
            "seed {}, {} test records, id hash {}",
            self.seed, self.test_records, self.test_record_hash
        );
        out
    }
}
