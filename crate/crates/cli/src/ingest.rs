//! CSV ingestion: a header of asset ids, one ISO-dated row per period,
//! prices converted to simple returns. Rows with missing cells are dropped
//! and counted; malformed cells are hard errors naming row and column.

use std::path::Path;

use anyhow::{bail, Context};
use chrono::NaiveDate;

use deepindex_core::indexing::ReturnsPanel;
use deepindex_core::numerics::Matrix;

pub use crate::config::CsvKind;

#[derive(Debug, Clone, Default)]
pub struct IngestStats {
    pub rows_read: usize,
    pub rows_dropped: usize,
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

/// Reads a panel CSV. The date column is located by name; every other
/// column is an asset. Dates must be ISO-8601 and strictly increasing
/// after row drops.
pub fn ingest_csv(
    path: &Path,
    date_column: &str,
    kind: CsvKind,
) -> anyhow::Result<(ReturnsPanel, IngestStats)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;

    let headers = reader.headers()?.clone();
    let date_idx = headers
        .iter()
        .position(|h| h == date_column)
        .with_context(|| format!("no '{date_column}' column in {}", path.display()))?;
    let assets: Vec<String> =
        headers.iter().enumerate().filter(|(i, _)| *i != date_idx).map(|(_, h)| h.to_string()).collect();
    if assets.is_empty() {
        bail!("{} has no asset columns", path.display());
    }

    let mut stats = IngestStats::default();
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        stats.rows_read += 1;
        let row_no = line + 2; // 1-based, after the header
        if record.len() != headers.len() {
            bail!("row {row_no}: {} cells, header has {}", record.len(), headers.len());
        }
        if record.iter().any(is_missing) {
            stats.rows_dropped += 1;
            continue;
        }
        let date_cell = &record[date_idx];
        let date = NaiveDate::parse_from_str(date_cell, "%Y-%m-%d")
            .with_context(|| format!("row {row_no}: bad date '{date_cell}'"))?;
        if let Some(last) = dates.last() {
            if date == *last {
                bail!("duplicate date {date} at row {row_no}");
            }
            if date < *last {
                bail!("dates not increasing: {date} after {last} at row {row_no}");
            }
        }
        let mut values = Vec::with_capacity(assets.len());
        for (i, cell) in record.iter().enumerate() {
            if i == date_idx {
                continue;
            }
            let column = &headers[i];
            let v: f64 = cell
                .parse()
                .with_context(|| format!("row {row_no}, column '{column}': bad value '{cell}'"))?;
            if !v.is_finite() {
                bail!("row {row_no}, column '{column}': non-finite value");
            }
            values.push(v);
        }
        dates.push(date);
        rows.push(values);
    }

    if rows.len() < 2 {
        bail!("{} has {} usable rows, need at least 2", path.display(), rows.len());
    }

    let panel = match kind {
        CsvKind::Returns => {
            let t = rows.len();
            let data: Vec<f64> = rows.into_iter().flatten().collect();
            ReturnsPanel::new(dates, assets, Matrix::from_vec(t, data.len() / t, data)?, None)?
        }
        CsvKind::Prices => {
            for (i, row) in rows.iter().enumerate() {
                for (j, &p) in row.iter().enumerate() {
                    if p <= 0.0 {
                        bail!(
                            "row {}, column '{}': price {p} must be positive",
                            i + 2,
                            assets[j]
                        );
                    }
                }
            }
            let t = rows.len() - 1;
            let n = assets.len();
            let mut returns = Matrix::zeros(t, n);
            let mut prices = Matrix::zeros(t, n);
            for i in 0..t {
                for j in 0..n {
                    returns.set(i, j, rows[i + 1][j] / rows[i][j] - 1.0);
                    prices.set(i, j, rows[i + 1][j]);
                }
            }
            ReturnsPanel::new(dates[1..].to_vec(), assets, returns, Some(prices))?
        }
    };
    Ok((panel, stats))
}
