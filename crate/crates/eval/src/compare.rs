//! Side-by-side comparison of reports, one column per analyzer.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::report::region_label;
use crate::{EvalError, Report, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub region: String,
    pub values: Vec<f64>,
    /// Columns holding the lowest value. Ties are all marked.
    pub best: Vec<usize>,
}

impl ComparisonRow {
    pub fn label(&self) -> String {
        region_label(&self.region)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub columns: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Lines up reports that cover the same regions. Rows follow the first
/// report's order.
pub fn compare(reports: &[Report]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewReports(reports.len()));
    }
    let regions: Vec<&str> = reports[0].rows.iter().map(|r| r.region.as_str()).collect();
    let expected = sorted(regions.clone());
    for report in reports {
        let found = sorted(report.rows.iter().map(|r| r.region.as_str()).collect());
        if found != expected {
            return Err(EvalError::RegionMismatch {
                analyzer: report.analyzer_id.clone(),
                expected: expected.join(", "),
                found: found.join(", "),
            });
        }
    }

    let rows = regions
        .iter()
        .map(|&region| {
            let values: Vec<f64> = reports.iter().map(|r| r.nme(region).expect("region sets checked")).collect();
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let best = (0..values.len()).filter(|&i| values[i] == min).collect();
            ComparisonRow { region: region.to_string(), values, best }
        })
        .collect();
    Ok(Comparison { columns: reports.iter().map(|r| r.analyzer_id.clone()).collect(), rows })
}

impl Comparison {
    /// Aligned text table. The best value in each row carries a `*`.
    pub fn render(&self, decimals: usize) -> String {
        let labels: Vec<String> = self.rows.iter().map(ComparisonRow::label).collect();
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|row| {
                row.values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| format!("{v:.decimals$}{}", if row.best.contains(&i) { "*" } else { " " }))
                    .collect()
            })
            .collect();
        let first = labels.iter().map(String::len).max().unwrap_or(0);
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| cells.iter().map(|row| row[i].len()).max().unwrap_or(0).max(c.len() + 1))
            .collect();

        let mut out = String::new();
        let _ = write!(out, "{:first$}", "");
        for (c, w) in self.columns.iter().zip(&widths) {
            // Headers right-align with the digits, not the marker column.
            let _ = write!(out, "  {c:>w$}", w = w - 1);
            out.push(' ');
        }
        out.push('\n');
        for (label, row) in labels.iter().zip(&cells) {
            let _ = write!(out, "{label:<first$}");
            for (cell, w) in row.iter().zip(&widths) {
                let _ = write!(out, "  {cell:>w$}");
            }
            out.push('\n');
        }
        out
    }
}

fn sorted(mut v: Vec<&str>) -> Vec<&str> {
    v.sort_unstable();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RegionScore;

    fn report(id: &str, rows: &[(&str, f64)]) -> Report {
        Report {
            analyzer_id: id.into(),
            frames: None,
            rows: rows.iter().map(|(r, v)| RegionScore { region: r.to_string(), nme: *v }).collect(),
        }
    }

    #[test]
    fn ties_mark_every_best_column() {
        let c = compare(&[report("a", &[("all", 1.0)]), report("b", &[("all", 1.0)])]).unwrap();
        assert_eq!(c.rows[0].best, vec![0, 1]);
    }

    #[test]
    fn renders_aligned() {
        let c = compare(&[report("alpha", &[("all", 1.5), ("chin", 2.0)]), report("b", &[("chin", 1.0), ("all", 10.25)])])
            .unwrap();
        assert_eq!(c.render(2), "          alpha       b \nNME_68     1.50*  10.25 \nNME_chin   2.00    1.00*\n");
    }
}
