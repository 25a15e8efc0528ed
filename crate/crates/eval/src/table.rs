use std::fmt::Write as _;

use jobshop_core::Size;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub size: Size,
    pub method: String,
    pub mean_makespan: f64,
    /// Relative to the best mean on the same size.
    pub gap_pct: f64,
    pub n_instances: usize,
    pub n_scenarios: usize,
    pub seed: u64,
    /// Instances where the exact solver hit its time limit.
    pub timeouts: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub rows: Vec<ResultRow>,
}

pub const CSV_HEADER: &str = "size,method,mean_makespan,gap_pct,n_instances,n_scenarios,seed";

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.size, r.method, r.mean_makespan, r.gap_pct, r.n_instances, r.n_scenarios, r.seed
            )
            .unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "paired_scenarios": true,
            "rows": self.rows,
        }))
        .unwrap()
    }

    /// Aligned columns for the terminal.
    pub fn to_text(&self) -> String {
        let header = ["size", "method", "mean", "gap %", "instances", "scenarios"];
        let cells: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                let method = if r.timeouts > 0 {
                    format!("{} ({} timeouts)", r.method, r.timeouts)
                } else {
                    r.method.clone()
                };
                [
                    r.size.to_string(),
                    method,
                    format!("{:.2}", r.mean_makespan),
                    format!("{:.2}", r.gap_pct),
                    r.n_instances.to_string(),
                    r.n_scenarios.to_string(),
                ]
            })
            .collect();
        let mut width = header.map(str::len);
        for row in &cells {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: [&str; 6]| {
            let parts: Vec<String> = row
                .iter()
                .zip(width)
                .enumerate()
                .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            writeln!(out, "{}", parts.join("  ").trim_end()).unwrap();
        };
        line(&mut out, header);
        for row in &cells {
            line(&mut out, [&row[0], &row[1], &row[2], &row[3], &row[4], &row[5]].map(String::as_str));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Table {
        Table {
            rows: vec![
                ResultRow {
                    size: Size::new(6, 6),
                    method: "policy".into(),
                    mean_makespan: 521.0,
                    gap_pct: 7.42,
                    n_instances: 100,
                    n_scenarios: 1,
                    seed: 7,
                    timeouts: 0,
                },
                ResultRow {
                    size: Size::new(6, 6),
                    method: "exact".into(),
                    mean_makespan: 485.0,
                    gap_pct: 0.0,
                    n_instances: 100,
                    n_scenarios: 1,
                    seed: 7,
                    timeouts: 2,
                },
            ],
        }
    }

    #[test]
    fn csv_schema() {
        let csv = table().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "6x6,policy,521,7.42,100,1,7");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn json_round_trip() {
        let v: serde_json::Value = serde_json::from_str(&table().to_json()).unwrap();
        assert_eq!(v["paired_scenarios"], true);
        let rows: Vec<ResultRow> = serde_json::from_value(v["rows"].clone()).unwrap();
        assert_eq!(rows, table().rows);
    }

    #[test]
    fn text_is_aligned() {
        let text = table().to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].contains("exact (2 timeouts)"));
        let col = |l: &str| l.find("100").unwrap();
        assert_eq!(col(lines[1]), col(lines[2]));
    }
}
