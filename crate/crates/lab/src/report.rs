//! Running plans and writing their reports.

use std::fs;
use std::io::{self, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::experiments::{ClassificationRecord, ExperimentOutput, MatrixRecord};
use crate::plan::{ExperimentPlan, OutputFormat};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub name: String,
    pub kind: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub matrices: Vec<MatrixRecord>,
    #[serde(skip)]
    pub classifications: Vec<ClassificationRecord>,
}

/// Wall time is the only field that varies between identical runs; it
/// is serialized last.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub version: String,
    pub plan: Value,
    pub experiments: Vec<ExperimentRecord>,
    pub wall_time_seconds: f64,
}

impl Report {
    pub fn failures(&self) -> usize {
        self.experiments.iter().filter(|e| e.status == Status::Error).count()
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report values are serializable");
        text.push('\n');
        text
    }

    pub fn get(&self, name: &str) -> Option<&ExperimentRecord> {
        self.experiments.iter().find(|e| e.name == name)
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

/// Runs every experiment, concurrently, and assembles results in
/// declaration order. A failing experiment becomes an error record.
pub fn run_plan(plan: &ExperimentPlan) -> Report {
    let start = Instant::now();
    let experiments = plan
        .experiments
        .par_iter()
        .map(|e| {
            let outcome = catch_unwind(AssertUnwindSafe(|| e.prepared.run(&plan.context)));
            let (result, error) = match outcome {
                Ok(Ok(out)) => (Some(out), None),
                Ok(Err(err)) => (None, Some(err.to_string())),
                Err(payload) => (None, Some(format!("panicked: {}", panic_message(payload.as_ref())))),
            };
            let ExperimentOutput {
                result,
                matrices,
                classifications,
            } = result.unwrap_or_default();
            ExperimentRecord {
                name: e.name.clone(),
                kind: e.kind.to_string(),
                status: if error.is_none() { Status::Ok } else { Status::Error },
                result: error.is_none().then_some(result),
                error,
                matrices,
                classifications,
            }
        })
        .collect();
    Report {
        schema_version: SCHEMA_VERSION,
        version: env!("CARGO_PKG_VERSION").to_string(),
        plan: plan.echo(),
        experiments,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    }
}

fn table_path(dir: &Path, name: &str, table: &str, what: &str) -> PathBuf {
    if table.is_empty() {
        dir.join(format!("{name}.{what}.csv"))
    } else {
        dir.join(format!("{name}.{table}.{what}.csv"))
    }
}

/// Distinct table keys in first-appearance order.
fn tables<'a>(keys: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for k in keys {
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

pub fn write_matrices_csv<W: Write>(records: &[&MatrixRecord], out: &mut W) -> io::Result<()> {
    writeln!(out, "lag,a,b,value")?;
    for r in records {
        for (a, row) in r.rows.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                writeln!(out, "{},{},{},{}", r.lag, r.labels[a], r.labels[b], v)?;
            }
        }
    }
    Ok(())
}

pub fn write_classifications_csv<W: Write>(records: &[&ClassificationRecord], out: &mut W) -> io::Result<()> {
    writeln!(out, "lag,coeff_index,coeff,theta,residual")?;
    for r in records {
        for (i, c) in &r.coefficients {
            writeln!(out, "{},{},{},{},{}", r.lag, i, c, r.theta, r.residual)?;
        }
    }
    Ok(())
}

/// Writes `report.json` and/or one CSV per matrix and classification table.
/// Returns the paths written.
pub fn emit_report(report: &Report, dir: &Path, format: OutputFormat) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if format.json() {
        let path = dir.join("report.json");
        fs::write(&path, report.to_json())?;
        written.push(path);
    }
    if format.csv() {
        for e in &report.experiments {
            for table in tables(e.matrices.iter().map(|m| m.table.as_str())) {
                let rows: Vec<&MatrixRecord> = e.matrices.iter().filter(|m| m.table == table).collect();
                let path = table_path(dir, &e.name, table, "matrices");
                let mut file = io::BufWriter::new(fs::File::create(&path)?);
                write_matrices_csv(&rows, &mut file)?;
                file.flush()?;
                written.push(path);
            }
            for table in tables(e.classifications.iter().map(|c| c.table.as_str())) {
                let rows: Vec<&ClassificationRecord> =
                    e.classifications.iter().filter(|c| c.table == table).collect();
                let path = table_path(dir, &e.name, table, "classifications");
                let mut file = io::BufWriter::new(fs::File::create(&path)?);
                write_classifications_csv(&rows, &mut file)?;
                file.flush()?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_shortest_round_trip_floats() {
        let rec = MatrixRecord {
            table: String::new(),
            lag: "-3".into(),
            labels: vec!["0".into(), "*".into()],
            rows: vec![vec![0.1, 1.0 / 3.0], vec![0.0, 2.5e-17]],
        };
        let mut buf = Vec::new();
        write_matrices_csv(&[&rec], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "lag,a,b,value");
        assert_eq!(lines[1], "-3,0,0,0.1");
        assert_eq!(lines[2], "-3,0,*,0.3333333333333333");
        assert_eq!(lines[4], "-3,*,*,0.000000000000000025");
        for line in &lines[1..] {
            let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert!(rec.rows.iter().flatten().any(|x| *x == v));
        }
    }

    #[test]
    fn table_keys_keep_order() {
        assert_eq!(tables(["J9", "J9", "J7", "J9"].into_iter()), vec!["J9", "J7"]);
    }
}
