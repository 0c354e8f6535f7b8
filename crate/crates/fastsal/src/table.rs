//! Comparison tables as CSV: a header `model,<metric>...`, then a row
//! `orientation,<higher|lower>...`, then one row per model.

use std::io::{Read, Write};

use fastsal_core::metrics::{Column, ComparisonTable, Orientation, RankedRow, Row};

use crate::error::{Error, Result};

pub const AVERAGE: &str = "Average";

fn orientation(s: &str) -> Option<Orientation> {
    match s.trim().to_ascii_lowercase().as_str() {
        "higher" | "high" | "max" | "+" => Some(Orientation::Higher),
        "lower" | "low" | "min" | "-" => Some(Orientation::Lower),
        _ => None,
    }
}

fn label(o: Orientation) -> &'static str {
    match o {
        Orientation::Higher => "higher",
        Orientation::Lower => "lower",
    }
}

/// Parses a table. A trailing `Average` column, as written by
/// [`write_ranked`], is ignored so outputs can be read back.
pub fn read_table(src: impl Read) -> Result<ComparisonTable> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(src);
    let mut records = rd.records();
    let header = records.next().ok_or_else(|| Error::Data("empty table".into()))??;
    let mut names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if names.last().is_some_and(|n| n.eq_ignore_ascii_case(AVERAGE)) {
        names.pop();
    }
    let keep = names.len();
    let orient = records
        .next()
        .transpose()?
        .filter(|r| r.get(0).is_some_and(|c| c.eq_ignore_ascii_case("orientation")))
        .ok_or_else(|| Error::Data("missing orientation row after the header (orientation,higher,lower,...)".into()))?;
    let mut columns = Vec::with_capacity(keep);
    for (k, name) in names.iter().enumerate() {
        let cell = orient.get(k + 1).unwrap_or("");
        let o = orientation(cell)
            .ok_or_else(|| Error::Data(format!("column {name}: orientation {cell:?} is not higher or lower")))?;
        columns.push(Column {
            name: name.clone(),
            orientation: o,
        });
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec?;
        let model = rec.get(0).unwrap_or("").to_string();
        let values = (1..=keep)
            .map(|k| {
                let cell = rec.get(k).unwrap_or("");
                cell.parse::<f64>()
                    .map_err(|_| Error::Data(format!("{model}: value {cell:?} in column {} is not a number", names[k - 1])))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(Row { model, values });
    }
    let table = ComparisonTable { columns, rows };
    table.validate()?;
    Ok(table)
}

/// Writes the ranked rows with their Average column.
pub fn write_ranked(dst: impl Write, table: &ComparisonTable, ranked: &[RankedRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(dst);
    let mut header = vec!["model".to_string()];
    header.extend(table.columns.iter().map(|c| c.name.clone()));
    header.push(AVERAGE.into());
    wr.write_record(&header)?;
    let mut orient = vec!["orientation".to_string()];
    orient.extend(table.columns.iter().map(|c| label(c.orientation).to_string()));
    orient.push("higher".into());
    wr.write_record(&orient)?;
    for r in ranked {
        let mut rec = vec![r.model.clone()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        rec.push(format!("{:.6}", r.average));
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(|e| Error::Data(format!("writing table: {e}")))
}
