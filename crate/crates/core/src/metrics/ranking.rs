//! Cross-model ranking by the mean of min-max normalized metric columns.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Higher,
    Lower,
}

impl Orientation {
    /// Default orientation of the usual saliency metric names.
    pub fn for_metric(name: &str) -> Orientation {
        let n = name.to_ascii_lowercase();
        if n.starts_with("kl") || n.starts_with("emd") {
            Orientation::Lower
        } else {
            Orientation::Higher
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub orientation: Orientation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub model: String,
    pub values: Vec<f64>,
}

/// Models by metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
}

/// A ranked row: the model, its raw values and its normalized average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedRow {
    pub model: String,
    pub values: Vec<f64>,
    pub average: f64,
}

impl ComparisonTable {
    pub fn validate(&self) -> Result<()> {
        if self.rows.len() < 2 {
            return Err(Error::InvalidArgument {
                op: "normalized_average",
                detail: format!("{} rows; at least two are needed", self.rows.len()),
            });
        }
        if self.columns.is_empty() {
            return Err(Error::InvalidArgument {
                op: "normalized_average",
                detail: "no metric columns".into(),
            });
        }
        for r in &self.rows {
            if r.values.len() != self.columns.len() {
                return Err(Error::InvalidArgument {
                    op: "normalized_average",
                    detail: format!("{} has {} values for {} columns", r.model, r.values.len(), self.columns.len()),
                });
            }
            if let Some(v) = r.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("{}: value {v}", r.model)));
            }
        }
        Ok(())
    }

    /// Rows sorted by descending average; ties keep table order.
    pub fn ranked(&self) -> Result<Vec<RankedRow>> {
        let avg = normalized_average(self)?;
        let mut out: Vec<RankedRow> = self
            .rows
            .iter()
            .zip(avg)
            .map(|(r, average)| RankedRow {
                model: r.model.clone(),
                values: r.values.clone(),
                average,
            })
            .collect();
        out.sort_by(|a, b| b.average.total_cmp(&a.average));
        Ok(out)
    }
}

/// Per column `(v - min) / (max - min)`, negated for lower-is-better
/// columns, then the mean across columns for every row. A constant column
/// contributes zero to every row.
pub fn normalized_average(table: &ComparisonTable) -> Result<Vec<f64>> {
    table.validate()?;
    let k = table.columns.len();
    let mut sums = alloc::vec![0.0; table.rows.len()];
    for (c, col) in table.columns.iter().enumerate() {
        let (lo, hi) = table
            .rows
            .iter()
            .map(|r| r.values[c])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi == lo {
            log::warn!("column {} is constant; it normalizes to 0 for every row", col.name);
            continue;
        }
        let sign = match col.orientation {
            Orientation::Higher => 1.0,
            Orientation::Lower => -1.0,
        };
        for (s, r) in sums.iter_mut().zip(&table.rows) {
            *s += sign * (r.values[c] - lo) / (hi - lo);
        }
    }
    Ok(sums.into_iter().map(|s| s / k as f64).collect())
}
