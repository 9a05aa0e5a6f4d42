//! Result rows, CSV/JSON serialization and median summaries.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{ErrStats, SetError};
use crate::error::Result;

pub const HEADER: [&str; 13] = [
    "scenario",
    "estimator",
    "depth",
    "delta",
    "snr",
    "trials",
    "seed",
    "error_rate",
    "worst_class_error",
    "std_err",
    "set_errors",
    "uninformed_rate",
    "wall_time_s",
];

/// One measurement. Tree scenarios aggregate `trials` roots into a row;
/// graph scenarios emit one row per repetition with `trials = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub estimator: String,
    pub depth: usize,
    pub delta: f64,
    pub snr: f64,
    pub trials: usize,
    pub seed: u64,
    pub error_rate: f64,
    pub worst_class_error: f64,
    /// Binomial standard error of `error_rate` over the evaluated nodes.
    pub std_err: f64,
    /// `S|T=rate` entries separated by `;`, members of a set joined by `+`.
    pub set_errors: String,
    pub uninformed_rate: f64,
    pub wall_time_s: f64,
}

impl ResultRow {
    pub fn stats_fields(stats: &ErrStats) -> (f64, f64, f64, String) {
        let n = stats.evaluated as f64;
        let p = stats.overall;
        (
            p,
            stats.worst_class,
            (p * (1.0 - p) / n).sqrt(),
            format_set_errors(&stats.set_errors),
        )
    }

    /// The row with the wall-time column blanked, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

fn join(set: &[usize]) -> String {
    set.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("+")
}

pub fn format_set_errors(errors: &[SetError]) -> String {
    errors
        .iter()
        .map(|e| format!("{}|{}={}", join(&e.s), join(&e.t), fmt6(e.rate)))
        .collect::<Vec<_>>()
        .join(";")
}

/// Six significant digits, shortest round-trip rendering of that value.
pub fn fmt6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    rounded.to_string()
}

/// Writes the rows as CSV with the fixed header, and a JSON mirror next to
/// it (same stem, `.json`) when `json` is set.
pub fn write_results(path: impl AsRef<Path>, rows: &[ResultRow], json: bool) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(HEADER)?;
    for r in rows {
        wtr.write_record([
            r.scenario.clone(),
            r.estimator.clone(),
            r.depth.to_string(),
            fmt6(r.delta),
            fmt6(r.snr),
            r.trials.to_string(),
            r.seed.to_string(),
            fmt6(r.error_rate),
            fmt6(r.worst_class_error),
            fmt6(r.std_err),
            r.set_errors.clone(),
            fmt6(r.uninformed_rate),
            fmt6(r.wall_time_s),
        ])?;
    }
    wtr.flush()?;
    if json {
        let file = std::fs::File::create(path.with_extension("json"))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), rows)?;
    }
    Ok(())
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Into::into)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub scenario: String,
    pub estimator: String,
    pub depth: usize,
    pub delta: f64,
    pub runs: usize,
    pub median_error: f64,
    pub median_uninformed: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Medians over repetitions, grouped by scenario, estimator, delta and
/// depth; ordered by delta descending, then estimator and depth.
pub fn median_table(rows: &[ResultRow]) -> Vec<MedianRow> {
    type Key = (String, String, u64, usize);
    let mut groups: BTreeMap<Key, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        // negated bits sort positive deltas in descending order
        let key = (
            r.scenario.clone(),
            r.estimator.clone(),
            u64::MAX - r.delta.to_bits(),
            r.depth,
        );
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| MedianRow {
            scenario: g[0].scenario.clone(),
            estimator: g[0].estimator.clone(),
            depth: g[0].depth,
            delta: g[0].delta,
            runs: g.len(),
            median_error: median(g.iter().map(|r| r.error_rate).collect()),
            median_uninformed: median(g.iter().map(|r| r.uninformed_rate).collect()),
        })
        .collect()
}
