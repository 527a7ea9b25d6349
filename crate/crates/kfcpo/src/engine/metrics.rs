//! Per-epoch metrics: CSV emission and the export subcommand backend.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "epoch,return_mean,return_std,cost_ep_mean,cost_ep_std,w_r,w_c,\
conflict_frac,rollbacks,kl_mean,nu_mean,fisher_refreshes,seconds";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub cost_ep_mean: f64,
    pub cost_ep_std: f64,
    pub w_r: f64,
    pub w_c: f64,
    pub conflict_frac: f64,
    pub rollbacks: usize,
    /// Mean KL over committed minibatch updates (0 if none committed).
    pub kl_mean: f64,
    pub nu_mean: f64,
    pub fisher_refreshes: usize,
    pub seconds: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.6},{:.6},{},{:.3}",
            self.epoch,
            self.return_mean,
            self.return_std,
            self.cost_ep_mean,
            self.cost_ep_std,
            self.w_r,
            self.w_c,
            self.conflict_frac,
            self.rollbacks,
            self.kl_mean,
            self.nu_mean,
            self.fisher_refreshes,
            self.seconds,
        )
    }

    fn from_csv_row(line: &str, lineno: usize) -> Result<EpochMetrics> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(Error::Config(format!(
                "metrics line {lineno}: expected 13 fields, got {}",
                fields.len()
            )));
        }
        let f = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|_| {
                Error::Config(format!(
                    "metrics line {lineno}, field {}: \"{}\" is not a number",
                    i + 1,
                    fields[i]
                ))
            })
        };
        let n = |i: usize| -> Result<usize> {
            fields[i].parse().map_err(|_| {
                Error::Config(format!(
                    "metrics line {lineno}, field {}: \"{}\" is not an integer",
                    i + 1,
                    fields[i]
                ))
            })
        };
        Ok(EpochMetrics {
            epoch: n(0)?,
            return_mean: f(1)?,
            return_std: f(2)?,
            cost_ep_mean: f(3)?,
            cost_ep_std: f(4)?,
            w_r: f(5)?,
            w_c: f(6)?,
            conflict_frac: f(7)?,
            rollbacks: n(8)?,
            kl_mean: f(9)?,
            nu_mean: f(10)?,
            fisher_refreshes: n(11)?,
            seconds: f(12)?,
        })
    }
}

/// Parses a metrics CSV (header + rows) back into records.
pub fn read_csv(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Config(format!(
                "unrecognized metrics header: \"{header}\""
            )))
        }
        None => return Err(Error::Config("metrics file is empty".into())),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| EpochMetrics::from_csv_row(l, i + 1))
        .collect()
}

/// Re-renders parsed metrics in the requested format. `csv` round-trips the
/// canonical layout; `json` emits an array of per-epoch objects.
pub fn render(records: &[EpochMetrics], format: &str) -> Result<String> {
    match format {
        "csv" => {
            let mut out = String::from(CSV_HEADER);
            for r in records {
                out.push('\n');
                out.push_str(&r.csv_row());
            }
            out.push('\n');
            Ok(out)
        }
        "json" => {
            let mut out = serde_json::to_string_pretty(records)?;
            out.push('\n');
            Ok(out)
        }
        other => Err(Error::Config(format!(
            "export format must be csv or json, got \"{other}\""
        ))),
    }
}
