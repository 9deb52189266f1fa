//! CSV and JSON output.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value reloads bit-exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::objective::ObjectiveBreakdown;
use crate::optimize::{SweepResult, TrainingTrace};
use crate::ssm::TruthRun;
use crate::{Error, Matrix, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().from_writer(BufWriter::new(File::create(path)?)))
}

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = writer(path)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Config(format!("{}: bad number {s:?}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Config(format!("{}: ragged matrix rows", path.display())));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, |r| r.len());
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// One row per step: index, state components, observation components (empty at step 0).
pub fn write_truth_csv(path: &Path, truth: &TruthRun) -> Result<()> {
    let mut w = writer(path)?;
    let d = truth.states.first().map_or(0, |v| v.len());
    let p = truth.observations.first().map_or(0, |v| v.len());
    let mut header = vec!["step".to_string()];
    header.extend((0..d).map(|i| format!("v{i}")));
    header.extend((0..p).map(|i| format!("y{i}")));
    w.write_record(&header)?;
    for (j, v) in truth.states.iter().enumerate() {
        let mut rec = vec![j.to_string()];
        rec.extend(v.iter().map(|x| fmt_f64(*x)));
        match j.checked_sub(1).and_then(|k| truth.observations.get(k)) {
            Some(y) => rec.extend(y.iter().map(|x| fmt_f64(*x))),
            None => rec.extend(std::iter::repeat_n(String::new(), p)),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, trace: &TrainingTrace) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["iteration", "objective", "theta_norm", "gain_error", "kl_to_reference", "rmse"])?;
    for r in &trace.records {
        w.write_record([
            r.iteration.to_string(),
            fmt_f64(r.objective),
            fmt_f64(r.theta_norm),
            fmt_opt(r.diagnostics.gain_error),
            fmt_opt(r.diagnostics.kl_to_reference),
            fmt_opt(r.diagnostics.rmse),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_breakdown_csv(path: &Path, b: &ObjectiveBreakdown) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["step", "kl", "nll"])?;
    for (j, c) in b.per_step.iter().enumerate() {
        w.write_record([(j + 1).to_string(), fmt_f64(c.kl), fmt_f64(c.nll)])?;
    }
    w.flush()?;
    Ok(())
}

/// Cost matrix with λ down the rows and ℓ across the columns.
pub fn write_sweep_csv(path: &Path, s: &SweepResult) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["lambda\\ell".to_string()];
    header.extend(s.ells.iter().map(|v| fmt_f64(*v)));
    w.write_record(&header)?;
    for (lam, row) in s.lambdas.iter().zip(&s.costs) {
        let mut rec = vec![fmt_f64(*lam)];
        rec.extend(row.iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Hex SHA-256 of a value's JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
