//! Deterministic CSV and markdown report emission: parameter tables, dice
//! tables, timing bars, and square Wilcoxon p-value matrices.

use super::BenchReport;
use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::InvalidArgument(format!(
                "unknown report format {other} (use csv or markdown)"
            ))),
        }
    }
}

/// Architecture rows: params plus reference/delta columns.
pub struct ParamsRow {
    pub architecture: String,
    pub preset: String,
    pub params: usize,
    pub reference_m: Option<f64>,
}

pub fn write_params_table(rows: &[ParamsRow], format: ReportFormat, path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("empty report set".into()));
    }
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("architecture,preset,params,params_m,reference_m,delta_pct\n");
            for r in rows {
                let m = r.params as f64 / 1e6;
                match r.reference_m {
                    Some(rf) => out.push_str(&format!(
                        "{},{},{},{:.4},{:.2},{:.2}\n",
                        r.architecture,
                        r.preset,
                        r.params,
                        m,
                        rf,
                        (m - rf) / rf * 100.0
                    )),
                    None => out.push_str(&format!(
                        "{},{},{},{:.4},,\n",
                        r.architecture, r.preset, r.params, m
                    )),
                }
            }
        }
        ReportFormat::Markdown => {
            out.push_str("| architecture | preset | params (M) | reference (M) | delta |\n");
            out.push_str("|---|---|---:|---:|---:|\n");
            for r in rows {
                let m = r.params as f64 / 1e6;
                match r.reference_m {
                    Some(rf) => out.push_str(&format!(
                        "| {} | {} | {:.2} | {:.2} | {:+.1}% |\n",
                        r.architecture,
                        r.preset,
                        m,
                        rf,
                        (m - rf) / rf * 100.0
                    )),
                    None => out.push_str(&format!(
                        "| {} | {} | {:.2} | - | - |\n",
                        r.architecture, r.preset, m
                    )),
                }
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Per-case dice rows for one run (one architecture).
pub fn write_dice_cases(architecture: &str, dice: &[f64], path: &Path) -> Result<()> {
    if dice.is_empty() {
        return Err(Error::InvalidArgument("empty report set".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["architecture", "case", "dice"])
        .map_err(csv_err)?;
    for (i, d) in dice.iter().enumerate() {
        w.write_record([architecture, &i.to_string(), &format!("{d:.6}")])
            .map_err(csv_err)?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Read a per-case dice CSV back (architecture name, values in case order).
pub fn read_dice_cases(path: &Path) -> Result<(String, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut arch = String::new();
    let mut rows: Vec<(usize, f64)> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 3 {
            return Err(Error::DataValidation(format!(
                "{}: dice case rows need 3 fields",
                path.display()
            )));
        }
        arch = rec[0].to_string();
        let case: usize = rec[1]
            .parse()
            .map_err(|_| Error::DataValidation(format!("bad case index {}", &rec[1])))?;
        let dice: f64 = rec[2]
            .parse()
            .map_err(|_| Error::DataValidation(format!("bad dice value {}", &rec[2])))?;
        rows.push((case, dice));
    }
    if rows.is_empty() {
        return Err(Error::DataValidation(format!(
            "{}: no dice rows",
            path.display()
        )));
    }
    rows.sort_by_key(|(c, _)| *c);
    Ok((arch, rows.into_iter().map(|(_, d)| d).collect()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::DataValidation(format!("csv: {e}"))
}

/// Timing rows in a Fig-3-style flat CSV.
pub fn write_timing_table(reports: &[BenchReport], path: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("empty report set".into()));
    }
    let mut out = String::new();
    out.push_str(
        "architecture,preset,params,forward_ms_median,forward_ms_q1,forward_ms_q3,\
         step_ms_median,step_ms_q1,step_ms_q3,reps,warmup,threads,dtype\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{},{},{},{}\n",
            r.architecture,
            r.preset,
            r.param_count,
            r.forward_ms.median,
            r.forward_ms.q1,
            r.forward_ms.q3,
            r.train_step_ms.median,
            r.train_step_ms.q1,
            r.train_step_ms.q3,
            r.reps,
            r.warmup,
            r.threads,
            r.dtype
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Square pairwise p-value matrix with a fixed row/column order.
pub fn write_pvalue_matrix(
    names: &[String],
    matrix: &[Vec<Option<f64>>],
    format: ReportFormat,
    path: &Path,
) -> Result<()> {
    if names.is_empty() {
        return Err(Error::InvalidArgument("empty report set".into()));
    }
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("architecture");
            for n in names {
                out.push(',');
                out.push_str(n);
            }
            out.push('\n');
            for (i, n) in names.iter().enumerate() {
                out.push_str(n);
                for j in 0..names.len() {
                    out.push(',');
                    match matrix[i][j] {
                        Some(p) => out.push_str(&format!("{p:.6}")),
                        None => out.push('-'),
                    }
                }
                out.push('\n');
            }
        }
        ReportFormat::Markdown => {
            out.push_str("| |");
            for n in names {
                out.push_str(&format!(" {n} |"));
            }
            out.push_str("\n|---|");
            out.push_str(&"---|".repeat(names.len()));
            out.push('\n');
            for (i, n) in names.iter().enumerate() {
                out.push_str(&format!("| {n} |"));
                for j in 0..names.len() {
                    match matrix[i][j] {
                        Some(p) => out.push_str(&format!(" {p:.4} |")),
                        None => out.push_str(" - |"),
                    }
                }
                out.push('\n');
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
