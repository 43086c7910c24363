//! Metric records, written as JSON Lines plus a CSV summary.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One evaluation point. `loss`, `rank_loss` and `kl_loss` are measured on a
/// fixed probe batch with fixed noise; `train_loss` is the mean objective of
/// the training batches since the previous record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub loss: f64,
    pub rank_loss: f64,
    /// Unweighted cross-level regularizer; absent when a level is dropped.
    pub kl_loss: Option<f64>,
    pub train_loss: Option<f64>,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub recall_at_50: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
    pub config_hash: String,
}

pub const CSV_HEADER: [&str; 11] = [
    "step",
    "loss",
    "rank_loss",
    "kl_loss",
    "train_loss",
    "recall_at_1",
    "recall_at_5",
    "recall_at_10",
    "recall_at_50",
    "wall_time_ms",
    "config_hash",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRecord {
    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            self.loss.to_string(),
            self.rank_loss.to_string(),
            opt(self.kl_loss),
            opt(self.train_loss),
            self.recall_at_1.to_string(),
            self.recall_at_5.to_string(),
            self.recall_at_10.to_string(),
            self.recall_at_50.to_string(),
            opt(self.wall_time_ms),
            self.config_hash.clone(),
        ]
    }
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[MetricsRecord]) -> Result<()> {
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<MetricsRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// CSV table of `records` with an optional leading column (for sweeps).
pub fn write_csv<W: Write>(w: W, lead: Option<(&str, &[String])>, records: &[MetricsRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = Vec::new();
    if let Some((name, _)) = lead {
        header.push(name);
    }
    header.extend(CSV_HEADER);
    out.write_record(&header).map_err(std::io::Error::from)?;
    for (i, r) in records.iter().enumerate() {
        let mut row = Vec::new();
        if let Some((_, values)) = lead {
            row.push(values[i].clone());
        }
        row.extend(r.csv_fields());
        out.write_record(&row).map_err(std::io::Error::from)?;
    }
    out.flush()?;
    Ok(())
}
