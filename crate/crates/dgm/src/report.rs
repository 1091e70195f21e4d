//! CSV and JSON emission: training histories, value surfaces, and
//! candidate-vs-reference error reports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! re-running a command with the same inputs produces byte-identical files.

use crate::error::{DgmError, Result};
use serde::Serialize;
use std::io::Write;
use std::path::Path;

use crate::training::HistoryRow;

/// `iteration,l1,l2,l3,l4,total,wall_ms` per training step.
pub fn write_history_csv(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let mut out = String::from("iteration,l1,l2,l3,l4,total,wall_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iteration, r.l1, r.l2, r.l3, r.l4, r.total, r.wall_ms
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// One evaluated grid point: values of every unknown, optional control and
/// extrapolation flag.
#[derive(Debug, Clone)]
pub struct SurfaceRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub control: Option<f64>,
    pub extrapolated: Option<bool>,
}

/// `t,x0[,x1...],value[,value1...][,control][,extrapolated]`.
pub fn write_surface_csv(path: &Path, rows: &[SurfaceRow]) -> Result<()> {
    let first = rows
        .first()
        .ok_or_else(|| DgmError::InvalidArgument("empty surface".to_string()))?;
    let mut header = String::from("t");
    for i in 0..first.x.len() {
        header.push_str(&format!(",x{i}"));
    }
    header.push_str(",value");
    for i in 1..first.values.len() {
        header.push_str(&format!(",value{i}"));
    }
    if first.control.is_some() {
        header.push_str(",control");
    }
    if first.extrapolated.is_some() {
        header.push_str(",extrapolated");
    }
    header.push('\n');
    let mut out = header;
    for r in rows {
        out.push_str(&format!("{}", r.t));
        for x in &r.x {
            out.push_str(&format!(",{x}"));
        }
        for v in &r.values {
            out.push_str(&format!(",{v}"));
        }
        if let Some(c) = r.control {
            out.push_str(&format!(",{c}"));
        }
        if let Some(e) = r.extrapolated {
            out.push_str(&format!(",{}", if e { 1 } else { 0 }));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a surface CSV back, returning `(t, x..., first value)` per row.
pub fn read_surface_csv(path: &Path) -> Result<Vec<(f64, Vec<f64>, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| DgmError::InvalidArgument("empty surface file".to_string()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let n_x = cols.iter().filter(|c| c.starts_with('x')).count();
    let value_idx = cols
        .iter()
        .position(|c| *c == "value")
        .ok_or_else(|| DgmError::InvalidArgument("surface file lacks a value column".to_string()))?;
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < value_idx + 1 {
            return Err(DgmError::InvalidArgument(format!(
                "surface row {} has {} fields, expected at least {}",
                lineno + 2,
                fields.len(),
                value_idx + 1
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| DgmError::InvalidArgument(format!("bad number `{s}`")))
        };
        let t = parse(fields[0])?;
        let x = fields[1..1 + n_x].iter().map(|s| parse(s)).collect::<Result<_>>()?;
        let v = parse(fields[value_idx])?;
        out.push((t, x, v));
    }
    Ok(out)
}

/// Per-point comparison against a reference surface.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    /// `(t, x, candidate, reference, abs_err, rel_err)` per grid point.
    pub rows: Vec<(f64, Vec<f64>, f64, f64, f64, f64)>,
    /// `(t, max, mean, rmse)` per time slice.
    pub slices: Vec<(f64, f64, f64, f64)>,
    pub mae: f64,
    pub rmse: f64,
    pub max_err: f64,
}

impl ErrorReport {
    /// Builds the report; the relative-error denominator is floored at
    /// `1e-8 ×` the reference value scale so it stays finite where the
    /// reference crosses zero.
    pub fn build(points: &[(f64, Vec<f64>, f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(DgmError::InvalidArgument("empty comparison".to_string()));
        }
        let scale = points
            .iter()
            .map(|(_, _, _, r)| r.abs())
            .fold(0.0f64, f64::max);
        let floor = (1e-8 * scale).max(f64::MIN_POSITIVE);
        let mut rows = Vec::with_capacity(points.len());
        for (t, x, cand, reference) in points {
            let abs = (cand - reference).abs();
            let rel = abs / reference.abs().max(floor);
            rows.push((*t, x.clone(), *cand, *reference, abs, rel));
        }
        let mut slices: Vec<(f64, f64, f64, f64)> = Vec::new();
        let mut i = 0;
        while i < rows.len() {
            let t = rows[i].0;
            let mut j = i;
            let (mut mx, mut sum, mut sum_sq, mut n) = (0.0f64, 0.0f64, 0.0f64, 0usize);
            while j < rows.len() && rows[j].0 == t {
                let e = rows[j].4;
                mx = mx.max(e);
                sum += e;
                sum_sq += e * e;
                n += 1;
                j += 1;
            }
            slices.push((t, mx, sum / n as f64, (sum_sq / n as f64).sqrt()));
            i = j;
        }
        let n = rows.len() as f64;
        let mae = rows.iter().map(|r| r.4).sum::<f64>() / n;
        let rmse = (rows.iter().map(|r| r.4 * r.4).sum::<f64>() / n).sqrt();
        let max_err = rows.iter().map(|r| r.4).fold(0.0f64, f64::max);
        Ok(ErrorReport {
            rows,
            slices,
            mae,
            rmse,
            max_err,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n_x = self.rows[0].1.len();
        let mut header = String::from("t");
        for i in 0..n_x {
            header.push_str(&format!(",x{i}"));
        }
        header.push_str(",candidate,reference,abs_err,rel_err\n");
        let mut out = header;
        for (t, x, c, r, a, rel) in &self.rows {
            out.push_str(&format!("{t}"));
            for xi in x {
                out.push_str(&format!(",{xi}"));
            }
            out.push_str(&format!(",{c},{r},{a},{rel}\n"));
        }
        write_atomic(path, out.as_bytes())
    }

    pub fn write_slices_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("t,max_err,mean_err,rmse\n");
        for (t, mx, mean, rmse) in &self.slices {
            out.push_str(&format!("{t},{mx},{mean},{rmse}\n"));
        }
        write_atomic(path, out.as_bytes())
    }
}

/// The summary emitted next to every comparison.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub problem: String,
    pub seed: u64,
    pub iterations: u64,
    pub mae: f64,
    pub rmse: f64,
    pub max_err: f64,
    pub wall_ms: f64,
}

pub fn write_summary_json(path: &Path, summary: &Summary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| DgmError::InvalidArgument(format!("summary serialization: {e}")))?;
    write_atomic(path, format!("{text}\n").as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}
