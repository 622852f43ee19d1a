//! CSV ingestion and the stationarity transforms applied before fitting.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tlvar::var::Panel;
use tlvar::Matrix;

use crate::error::{HarnessError, Result};

/// A panel together with the time labels of its columns.
#[derive(Debug, Clone)]
pub struct LabelledPanel {
    pub panel: Panel,
    pub times: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "na" | "." | "null")
}

/// Reads a wide CSV: header row, time labels in the first column, one column
/// per variable. Rows with a missing cell before the first complete row or
/// after the last complete row are trimmed; a gap in between is an error.
pub fn read_csv(reader: impl Read, name: &str, origin: &Path) -> Result<LabelledPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| HarnessError::data(origin, format!("cannot read header: {e}")))?
        .clone();
    if headers.len() < 2 {
        return Err(HarnessError::data(
            origin,
            "need a time column and at least one variable",
        ));
    }
    let variables: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut times = Vec::new();
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record =
            record.map_err(|e| HarnessError::data(origin, format!("row {}: {e}", line + 2)))?;
        times.push(record.get(0).unwrap_or_default().to_string());
        let mut row = Vec::with_capacity(variables.len());
        for (j, cell) in record.iter().skip(1).enumerate() {
            if is_missing(cell) {
                row.push(None);
                continue;
            }
            let value: f64 = cell.parse().map_err(|_| {
                HarnessError::data(
                    origin,
                    format!(
                        "row {}, variable '{}': '{cell}' is not numeric",
                        line + 2,
                        variables[j]
                    ),
                )
            })?;
            row.push(Some(value));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(HarnessError::data(origin, "no data rows"));
    }
    let complete = |r: &Vec<Option<f64>>| r.iter().all(Option::is_some);
    let first = rows
        .iter()
        .position(complete)
        .ok_or_else(|| HarnessError::data(origin, "no row has every variable observed"))?;
    let last = rows
        .iter()
        .rposition(complete)
        .expect("a complete row exists");
    for (i, row) in rows.iter().enumerate().take(last + 1).skip(first) {
        if let Some(j) = row.iter().position(Option::is_none) {
            return Err(HarnessError::data(
                origin,
                format!(
                    "interior missing value for '{}' at '{}'",
                    variables[j], times[i]
                ),
            ));
        }
    }
    let len = last + 1 - first;
    let series = Matrix::from_fn(variables.len(), len, |i, t| {
        rows[first + t][i].expect("checked complete")
    });
    let panel = Panel::new(name, series)
        .with_variables(variables)
        .map_err(|e| HarnessError::data(origin, e.to_string()))?;
    Ok(LabelledPanel {
        panel,
        times: times[first..=last].to_vec(),
    })
}

/// [`read_csv`] on a file; the task id is the file stem.
pub fn load_csv(path: &Path) -> Result<LabelledPanel> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("series");
    read_csv(file, name, path)
}

/// Per-variable stationarity transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum TransformCode {
    FirstDiff = 1,
    SecondDiff = 2,
    LogFirstDiff = 3,
    LogSecondDiff = 4,
}

impl TryFrom<u8> for TransformCode {
    type Error = String;

    fn try_from(code: u8) -> std::result::Result<Self, String> {
        match code {
            1 => Ok(TransformCode::FirstDiff),
            2 => Ok(TransformCode::SecondDiff),
            3 => Ok(TransformCode::LogFirstDiff),
            4 => Ok(TransformCode::LogSecondDiff),
            other => Err(format!("transform code must be 1-4, got {other}")),
        }
    }
}

impl From<TransformCode> for u8 {
    fn from(code: TransformCode) -> u8 {
        code as u8
    }
}

impl TransformCode {
    pub fn order(self) -> usize {
        match self {
            TransformCode::FirstDiff | TransformCode::LogFirstDiff => 1,
            TransformCode::SecondDiff | TransformCode::LogSecondDiff => 2,
        }
    }

    pub fn uses_log(self) -> bool {
        matches!(
            self,
            TransformCode::LogFirstDiff | TransformCode::LogSecondDiff
        )
    }

    /// The transformed series, `order()` values shorter than `x`.
    pub fn apply(self, x: &[f64]) -> Vec<f64> {
        let base: Vec<f64> = if self.uses_log() {
            x.iter().map(|v| v.ln()).collect()
        } else {
            x.to_vec()
        };
        let mut out = base;
        for _ in 0..self.order() {
            out = out.windows(2).map(|w| w[1] - w[0]).collect();
        }
        out
    }

    /// Level implied by a transformed value and the preceding levels
    /// (most recent last).
    pub fn to_level(self, value: f64, previous: &[f64]) -> Option<f64> {
        let k = previous.len();
        if k < self.order() {
            return None;
        }
        let f = |v: f64| if self.uses_log() { v.ln() } else { v };
        let y = match self.order() {
            1 => f(previous[k - 1]) + value,
            _ => 2.0 * f(previous[k - 1]) - f(previous[k - 2]) + value,
        };
        Some(if self.uses_log() { y.exp() } else { y })
    }
}

/// What [`preprocess`] did, for mapping forecasts back to levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformMeta {
    pub codes: Option<Vec<TransformCode>>,
    /// Leading observations lost to differencing.
    pub dropped: usize,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl TransformMeta {
    /// Undoes the standardization of one value of variable `i`.
    pub fn destandardize(&self, i: usize, value: f64) -> f64 {
        value * self.sds[i] + self.means[i]
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub panel: Panel,
    pub meta: TransformMeta,
}

/// Applies per-variable transforms (aligned on the shortest result) and
/// optionally standardizes every row to sample mean 0 and variance 1. An
/// all-constant row standardizes to zeros.
pub fn preprocess(
    raw: &Panel,
    codes: Option<&[TransformCode]>,
    standardize: bool,
) -> Result<Preprocessed> {
    let n = raw.dim();
    let name = |i: usize| {
        raw.variables
            .get(i)
            .cloned()
            .unwrap_or_else(|| format!("#{}", i + 1))
    };
    let (mut series, dropped) = match codes {
        None => (raw.series.clone(), 0),
        Some(codes) => {
            if codes.len() != n {
                return Err(HarnessError::Transform(format!(
                    "'{}' has {n} variables but {} transform codes",
                    raw.task_id,
                    codes.len()
                )));
            }
            let drop = codes.iter().map(|c| c.order()).max().unwrap_or(0);
            if raw.len() <= drop + 1 {
                return Err(HarnessError::Transform(format!(
                    "'{}' is too short for differencing of order {drop}",
                    raw.task_id
                )));
            }
            let len = raw.len() - drop;
            let mut out = Matrix::zeros(n, len);
            for (i, code) in codes.iter().enumerate() {
                let row: Vec<f64> = raw.series.row(i).iter().copied().collect();
                if code.uses_log() && row.iter().any(|v| *v <= 0.0) {
                    return Err(HarnessError::Transform(format!(
                        "variable '{}' of '{}' has non-positive values under a log transform",
                        name(i),
                        raw.task_id
                    )));
                }
                let t = code.apply(&row);
                let skip = t.len() - len;
                for (j, v) in t[skip..].iter().enumerate() {
                    out[(i, j)] = *v;
                }
            }
            (out, drop)
        }
    };
    let len = series.ncols();
    let mut means = vec![0.0; n];
    let mut sds = vec![1.0; n];
    if standardize {
        if len < 2 {
            return Err(HarnessError::Transform(format!(
                "'{}' needs at least two observations to standardize",
                raw.task_id
            )));
        }
        for i in 0..n {
            let row: Vec<f64> = series.row(i).iter().copied().collect();
            let mean = row.iter().sum::<f64>() / len as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (len - 1) as f64;
            let sd = var.sqrt();
            means[i] = mean;
            // Variance guard: a constant row maps to zeros.
            let scale = if sd > f64::EPSILON * mean.abs().max(1.0) {
                sd
            } else {
                0.0
            };
            sds[i] = scale;
            for t in 0..len {
                series[(i, t)] = if scale > 0.0 {
                    (series[(i, t)] - mean) / scale
                } else {
                    0.0
                };
            }
        }
    }
    let panel = Panel::new(raw.task_id.clone(), series)
        .with_variables(raw.variables.clone())
        .map_err(|e| HarnessError::Transform(e.to_string()))?;
    Ok(Preprocessed {
        panel,
        meta: TransformMeta {
            codes: codes.map(<[TransformCode]>::to_vec),
            dropped,
            means,
            sds,
        },
    })
}
