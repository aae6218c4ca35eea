//! Side-by-side view of several per-user reports (`analyze`, `simulate` or
//! `allocate` output in JSON).

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::output::Report;
use crate::scenario::read_json;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    #[serde(rename = "U_bps")]
    pub rate_bps: f64,
    pub outage: f64,
    pub drop: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub id: String,
    /// One entry per report, in argument order.
    pub values: Vec<Metrics>,
    /// Each later report minus the first.
    pub deltas: Vec<Metrics>,
    /// Relative playout-rate difference of each later report to the first.
    pub rel_rate_deltas: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub max_abs_delta_rate_bps: f64,
    pub max_abs_rel_delta_rate: f64,
    pub max_abs_delta_outage: f64,
    pub max_abs_delta_drop: f64,
}

#[derive(Debug, Serialize)]
pub struct CompareReport {
    pub kind: &'static str,
    pub reports: Vec<String>,
    pub kinds: Vec<String>,
    pub rows: Vec<CompareRow>,
    pub summary: Summary,
}

impl Report for CompareReport {
    fn write_csv(&self, w: &mut csv::Writer<Vec<u8>>) -> CliResult<()> {
        let err = |e: csv::Error| CliError::Output(e.to_string());
        let n = self.reports.len();
        let mut header = vec!["id".to_string()];
        for k in 1..=n {
            header.extend(["U_bps", "outage", "drop"].map(|m| format!("{m}_{k}")));
        }
        for k in 2..=n {
            header.extend(
                ["delta_U_bps", "rel_delta_U", "delta_outage", "delta_drop"].map(|m| format!("{m}_{k}")),
            );
        }
        w.write_record(&header).map_err(err)?;
        for row in &self.rows {
            let mut rec = vec![row.id.clone()];
            for v in &row.values {
                rec.extend([v.rate_bps, v.outage, v.drop].map(|x| x.to_string()));
            }
            for (d, rel) in row.deltas.iter().zip(&row.rel_rate_deltas) {
                rec.extend([d.rate_bps, *rel, d.outage, d.drop].map(|x| x.to_string()));
            }
            w.write_record(&rec).map_err(err)?;
        }
        Ok(())
    }
}

fn schema(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Schema(format!("{}: {msg}", path.display()))
}

/// Per-user metrics of one report, in file order.
fn read_report(path: &Path) -> CliResult<(String, Vec<(String, Metrics)>)> {
    let doc: Value = read_json(path)?;
    let kind = doc
        .get("kind")
        .and_then(Value::as_str)
        .filter(|k| matches!(*k, "analyze" | "simulate" | "allocate"))
        .ok_or_else(|| schema(path, "not an analyze, simulate or allocate report"))?
        .to_string();
    let users = doc
        .get("users")
        .and_then(Value::as_array)
        .ok_or_else(|| schema(path, "missing users array"))?;
    let mut out = Vec::with_capacity(users.len());
    for (i, u) in users.iter().enumerate() {
        let id = u
            .get("id")
            .and_then(Value::as_str)
            .ok_or_else(|| schema(path, format!("user {i} has no id")))?;
        let num = |key: &str| {
            u.get(key)
                .and_then(Value::as_f64)
                .ok_or_else(|| schema(path, format!("user {id} has no numeric {key}")))
        };
        out.push((
            id.to_string(),
            Metrics {
                rate_bps: num("U_bps")?,
                outage: num("outage")?,
                drop: num("drop")?,
            },
        ));
    }
    Ok((kind, out))
}

pub fn compare(paths: &[impl AsRef<Path>]) -> CliResult<CompareReport> {
    if paths.len() < 2 {
        return Err(CliError::Schema("compare needs at least two reports".into()));
    }
    let mut kinds = Vec::new();
    let mut tables = Vec::new();
    for p in paths {
        let (kind, table) = read_report(p.as_ref())?;
        kinds.push(kind);
        tables.push(table);
    }
    let first = &tables[0];
    for (p, t) in paths.iter().zip(&tables).skip(1) {
        let same = t.len() == first.len() && t.iter().zip(first).all(|(a, b)| a.0 == b.0);
        if !same {
            return Err(schema(p.as_ref(), "user ids differ from the first report"));
        }
    }
    let mut summary = Summary {
        max_abs_delta_rate_bps: 0.0,
        max_abs_rel_delta_rate: 0.0,
        max_abs_delta_outage: 0.0,
        max_abs_delta_drop: 0.0,
    };
    let rows = first
        .iter()
        .enumerate()
        .map(|(i, (id, base))| {
            let values: Vec<Metrics> = tables.iter().map(|t| t[i].1).collect();
            let deltas: Vec<Metrics> = values[1..]
                .iter()
                .map(|v| Metrics {
                    rate_bps: v.rate_bps - base.rate_bps,
                    outage: v.outage - base.outage,
                    drop: v.drop - base.drop,
                })
                .collect();
            let rel_rate_deltas: Vec<f64> = deltas
                .iter()
                .map(|d| if base.rate_bps != 0.0 { d.rate_bps / base.rate_bps } else { 0.0 })
                .collect();
            for (d, rel) in deltas.iter().zip(&rel_rate_deltas) {
                summary.max_abs_delta_rate_bps = summary.max_abs_delta_rate_bps.max(d.rate_bps.abs());
                summary.max_abs_rel_delta_rate = summary.max_abs_rel_delta_rate.max(rel.abs());
                summary.max_abs_delta_outage = summary.max_abs_delta_outage.max(d.outage.abs());
                summary.max_abs_delta_drop = summary.max_abs_delta_drop.max(d.drop.abs());
            }
            CompareRow {
                id: id.clone(),
                values,
                deltas,
                rel_rate_deltas,
            }
        })
        .collect();
    Ok(CompareReport {
        kind: "compare",
        reports: paths.iter().map(|p| p.as_ref().display().to_string()).collect(),
        kinds,
        rows,
        summary,
    })
}
