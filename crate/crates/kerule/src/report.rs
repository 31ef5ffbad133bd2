//! Plot-ready CSV files and the summary JSON.
//!
//! | file | columns |
//! |---|---|
//! | `rmse.csv` | method, task, dataset, trajectories, steps, rmse |
//! | `ztest.csv` | method_a, method_b, n, mean_delta, std_delta, z, p |
//! | `quantiles.csv` | method, q, squared_error |
//! | `ood.csv` | trained_on, then one ratio column per test scenario |
//! | `sweep.csv` | method, samples, rmse |
//! | `best_so_far.csv` | cycle, global_best |
//!
//! `z-test` rows compare per-trajectory MSE of `method_a` minus
//! `method_b`. Numbers use the shortest round-trip decimal form.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kerule_core::evaluate::{OodMatrix, SweepRow, ZTestResult};
use kerule_core::filters::Task;
use serde::Serialize;

use crate::error::Result;
use crate::files;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmseRow {
    pub method: String,
    pub task: Task,
    pub dataset: String,
    pub trajectories: usize,
    pub steps: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZRow {
    pub method_a: String,
    pub method_b: String,
    pub n: usize,
    pub mean_delta: f64,
    pub std_delta: f64,
    pub z: f64,
    pub p: f64,
}

impl ZRow {
    pub fn new(a: &str, b: &str, z: &ZTestResult) -> Self {
        ZRow { method_a: a.into(), method_b: b.into(), n: z.n, mean_delta: z.mean_delta, std_delta: z.std_delta, z: z.z, p: z.p }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rmse: Vec<RmseRow>,
    pub ztests: Vec<ZRow>,
    /// `(method, q, value)`.
    pub quantiles: Vec<(String, f64, f64)>,
    pub ood: Option<OodMatrix>,
    pub sweep: Vec<SweepRow>,
    pub best_so_far: Vec<(usize, f64)>,
}

#[derive(Serialize)]
struct SweepJson<'a> {
    method: &'a str,
    samples: usize,
    rmse: f64,
}

#[derive(Serialize)]
struct OodJson<'a> {
    trained_on: &'a [String],
    tested_on: &'a [String],
    ratios: &'a [Vec<f64>],
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    rmse: &'a [RmseRow],
    ztests: &'a [ZRow],
    #[serde(skip_serializing_if = "Option::is_none")]
    ood: Option<OodJson<'a>>,
    sweep: Vec<SweepJson<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_best: Option<f64>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn task_label(t: Task) -> &'static str {
    match t {
        Task::Se => "se",
        Task::Nsp => "nsp",
    }
}

/// Writes every non-empty table plus `summary.json`; returns the paths.
pub fn emit_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        files::write_string(&p, &body)?;
        written.push(p);
        Ok(())
    };

    let mut s = String::from("method,task,dataset,trajectories,steps,rmse\n");
    for r in &report.rmse {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            csv_field(&r.method),
            task_label(r.task),
            csv_field(&r.dataset),
            r.trajectories,
            r.steps,
            r.rmse
        );
    }
    put("rmse.csv", s)?;

    if !report.ztests.is_empty() {
        let mut s = String::from("method_a,method_b,n,mean_delta,std_delta,z,p\n");
        for z in &report.ztests {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                csv_field(&z.method_a),
                csv_field(&z.method_b),
                z.n,
                z.mean_delta,
                z.std_delta,
                z.z,
                z.p
            );
        }
        put("ztest.csv", s)?;
    }
    if !report.quantiles.is_empty() {
        let mut s = String::from("method,q,squared_error\n");
        for (m, q, v) in &report.quantiles {
            let _ = writeln!(s, "{},{q},{v}", csv_field(m));
        }
        put("quantiles.csv", s)?;
    }
    if let Some(ood) = &report.ood {
        let mut s = String::from("trained_on");
        for c in &ood.cols {
            let _ = write!(s, ",{}", csv_field(c));
        }
        s.push('\n');
        for (name, row) in ood.rows.iter().zip(&ood.ratios) {
            s.push_str(&csv_field(name));
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        put("ood.csv", s)?;
    }
    if !report.sweep.is_empty() {
        let mut s = String::from("method,samples,rmse\n");
        for r in &report.sweep {
            let _ = writeln!(s, "{},{},{}", csv_field(&r.method), r.samples, r.rmse);
        }
        put("sweep.csv", s)?;
    }
    if !report.best_so_far.is_empty() {
        let mut s = String::from("cycle,global_best\n");
        for (c, v) in &report.best_so_far {
            let _ = writeln!(s, "{c},{v}");
        }
        put("best_so_far.csv", s)?;
    }

    let summary = Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        rmse: &report.rmse,
        ztests: &report.ztests,
        ood: report.ood.as_ref().map(|o| OodJson { trained_on: &o.rows, tested_on: &o.cols, ratios: &o.ratios }),
        sweep: report.sweep.iter().map(|r| SweepJson { method: &r.method, samples: r.samples, rmse: r.rmse }).collect(),
        final_best: report.best_so_far.last().map(|b| b.1),
    };
    let p = dir.join("summary.json");
    files::write_json(&summary, &p)?;
    written.push(p);
    Ok(written)
}
