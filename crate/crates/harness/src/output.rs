//! Result tables and the run manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{HarnessError, Result};

/// Metric name used for a fit that failed.
pub const FAILED: &str = "failed";

/// One value of one metric for one method, setting and replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub k: Option<usize>,
    pub n: usize,
    pub s1: Option<usize>,
    pub s2: Option<usize>,
    pub p: usize,
    pub h: Option<f64>,
    pub t0: Option<usize>,
    pub method: String,
    pub replication: usize,
    /// Seed that regenerates this replication on its own.
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    /// Wall-clock time of the fit; kept out of `results.csv` so that
    /// reruns compare byte for byte.
    #[serde(skip)]
    pub seconds: f64,
}

impl MetricsRow {
    pub fn is_failure(&self) -> bool {
        self.metric == FAILED
    }

    /// Identifies the setting and method, ignoring the metric.
    fn group_key(&self) -> String {
        format!(
            "{}|{:?}|{}|{:?}|{:?}|{}|{:?}|{:?}|{}",
            self.experiment, self.k, self.n, self.s1, self.s2, self.p, self.h, self.t0, self.method
        )
    }
}

/// Mean of a metric over the successful replications of one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub k: Option<usize>,
    pub n: usize,
    pub s1: Option<usize>,
    pub s2: Option<usize>,
    pub p: usize,
    pub h: Option<f64>,
    pub t0: Option<usize>,
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub count: usize,
    pub failures: usize,
}

/// Per-cell means in first-appearance order. Failure rows count toward
/// `failures` of every metric of the same cell and method.
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut acc: BTreeMap<(String, String), SummaryRow> = BTreeMap::new();
    let mut failures: BTreeMap<String, usize> = BTreeMap::new();
    for row in rows {
        let group = row.group_key();
        if row.is_failure() {
            *failures.entry(group).or_default() += 1;
            continue;
        }
        let key = (group, row.metric.clone());
        let entry = acc.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            SummaryRow {
                experiment: row.experiment.clone(),
                k: row.k,
                n: row.n,
                s1: row.s1,
                s2: row.s2,
                p: row.p,
                h: row.h,
                t0: row.t0,
                method: row.method.clone(),
                metric: row.metric.clone(),
                mean: 0.0,
                count: 0,
                failures: 0,
            }
        });
        entry.mean += row.value;
        entry.count += 1;
    }
    order
        .into_iter()
        .map(|key| {
            let mut s = acc.remove(&key).expect("key recorded on insert");
            s.mean /= s.count as f64;
            s.failures = failures.get(&key.0).copied().unwrap_or(0);
            s
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => HarnessError::data(path, format!("{other:?}")),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| HarnessError::data(path, e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

/// Total fit seconds per method, in sorted order.
pub fn method_seconds(rows: &[MetricsRow]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for r in rows {
        *out.entry(r.method.clone()).or_insert(0.0) += r.seconds;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, rep: usize, metric: &str, value: f64) -> MetricsRow {
        MetricsRow {
            experiment: "sim1".into(),
            k: Some(5),
            n: 10,
            s1: Some(3),
            s2: Some(3),
            p: 1,
            h: Some(0.5),
            t0: Some(100),
            method: method.into(),
            replication: rep,
            seed: 7,
            metric: metric.into(),
            value,
            seconds: 1.5,
        }
    }

    #[test]
    fn summary_skips_failures_in_means() {
        let rows = vec![
            row("TL", 0, "rmse", 1.0),
            row("TL", 1, "rmse", 3.0),
            row("VAR", 0, "rmse", 5.0),
            row("VAR", 1, FAILED, 1.0),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(
            (s[0].method.as_str(), s[0].mean, s[0].count, s[0].failures),
            ("TL", 2.0, 2, 0)
        );
        assert_eq!((s[1].mean, s[1].count, s[1].failures), (5.0, 1, 1));
        assert_eq!(method_seconds(&rows)["VAR"], 3.0);
    }

    #[test]
    fn csv_layout_has_no_timing_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mut r = row("TL", 0, "rmse", 0.25);
        r.k = None;
        write_csv(&path, &[r]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "experiment,k,n,s1,s2,p,h,t0,method,replication,seed,metric,value"
        );
        assert_eq!(
            lines.next().unwrap(),
            "sim1,,10,3,3,1,0.5,100,TL,0,7,rmse,0.25"
        );
    }
}
