use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{RawDataset, Target, TaskKind};
use crate::{Error, Result};

/// Columns with more than this fraction of missing values are removed
/// instead of rejecting the rows that lack them.
const MAX_MISSING_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropReason {
    Categorical,
    Missing,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: DropReason,
}

fn is_missing(field: &str) -> bool {
    matches!(
        field.trim(),
        "" | "?" | "NA" | "na" | "N/A" | "NaN" | "nan" | "null" | "NULL"
    )
}

fn sniff_delimiter(header: &str) -> u8 {
    if header.contains(',') {
        b','
    } else if header.contains('\t') {
        b'\t'
    } else if header.contains(';') {
        b';'
    } else {
        b','
    }
}

/// Reads a delimited file with a header row into a numeric [`RawDataset`].
///
/// Non-numeric feature columns are dropped as categorical. A column missing
/// in more than half of the rows is dropped; any other row with a missing
/// feature or target value is rejected.
pub fn load_motherset(path: &Path, target_column: &str, task_kind: TaskKind) -> Result<RawDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header_line = text.lines().next().ok_or_else(|| Error::Parse("empty file".into()))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(sniff_delimiter(header_line))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim_matches(|c| c == '"' || c == '\'').to_string())
        .collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::MissingColumn(target_column.to_string()))?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse(format!(
                "row {} has {} fields, header has {}",
                rows.len() + 2,
                record.len(),
                headers.len()
            )));
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }

    let mut dropped = Vec::new();
    let mut feature_cols = Vec::new();
    for (j, name) in headers.iter().enumerate() {
        if j == target_idx {
            continue;
        }
        let missing = rows.iter().filter(|r| is_missing(&r[j])).count();
        if missing as f64 > MAX_MISSING_FRACTION * rows.len() as f64 {
            dropped.push(DroppedColumn {
                name: name.clone(),
                reason: DropReason::Missing,
            });
            continue;
        }
        let numeric = rows
            .iter()
            .filter(|r| !is_missing(&r[j]))
            .all(|r| r[j].parse::<f64>().map(f64::is_finite).unwrap_or(false));
        if numeric {
            feature_cols.push(j);
        } else {
            dropped.push(DroppedColumn {
                name: name.clone(),
                reason: DropReason::Categorical,
            });
        }
    }
    if feature_cols.is_empty() {
        return Err(Error::NoFeatures);
    }

    let mut values = Vec::new();
    let mut classes = Vec::new();
    let mut responses = Vec::new();
    let mut rejected = 0;
    for row in &rows {
        let target = &row[target_idx];
        if is_missing(target) || feature_cols.iter().any(|&j| is_missing(&row[j])) {
            rejected += 1;
            continue;
        }
        match task_kind {
            TaskKind::Regression => {
                let v: f64 = target.parse().map_err(|_| {
                    Error::Parse(format!("non-numeric regression response `{target}`"))
                })?;
                responses.push(v);
            }
            _ => classes.push(target.clone()),
        }
        values.extend(feature_cols.iter().map(|&j| row[j].parse::<f64>().unwrap()));
    }
    let n = values.len() / feature_cols.len();
    if n == 0 {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let features = DMatrix::from_row_slice(n, feature_cols.len(), &values);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(RawDataset {
        name,
        feature_names: feature_cols.iter().map(|&j| headers[j].clone()).collect(),
        features,
        target: match task_kind {
            TaskKind::Regression => Target::Response(responses),
            _ => Target::Classes(classes),
        },
        task_kind,
        dropped_columns: dropped,
        rows_rejected: rejected,
    })
}
