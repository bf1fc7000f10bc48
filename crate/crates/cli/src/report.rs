//! Report records and writers. Machine-readable outputs carry full-precision
//! values; the stdout rendering rounds to 3 decimals. Column names and order
//! are fixed so repeated runs produce byte-identical files.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use dtrq::sim::{PredictiveReport, SimReport};

use crate::config::OutputFormat;
use crate::CliError;

/// One row of an estimation-simulation report.
#[derive(Debug, Clone, Serialize)]
pub struct SimRecord {
    pub method: String,
    pub parameter: String,
    pub bias: f64,
    pub se: f64,
    pub rmse: f64,
    /// Coverage of the 95% percentile interval, in percent; empty without a
    /// bootstrap.
    pub cr: Option<f64>,
}

/// One row of a predictive-simulation report.
#[derive(Debug, Clone, Serialize)]
pub struct PredictiveRecord {
    pub method: String,
    pub metric: String,
    pub value: f64,
}

/// One row of a sensitivity-analysis report.
#[derive(Debug, Clone, Serialize)]
pub struct SensitivityRecord {
    pub method: String,
    pub gamma10: f64,
    pub gamma01: f64,
    pub parameter: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Rendered decision rule for one fitted regime.
#[derive(Debug, Clone, Serialize)]
pub struct RuleRecord {
    pub method: String,
    pub gamma10: Option<f64>,
    pub gamma01: Option<f64>,
    pub rule: String,
}

pub fn sim_records(report: &SimReport) -> Vec<SimRecord> {
    let mut out = Vec::new();
    for ms in &report.methods {
        for p in &ms.summary.parameters {
            out.push(SimRecord {
                method: ms.method.label().to_string(),
                parameter: p.name.clone(),
                bias: p.bias,
                se: p.se,
                rmse: p.rmse,
                cr: p.coverage.map(|c| c * 100.0),
            });
        }
    }
    out
}

pub fn predictive_records(report: &PredictiveReport) -> Vec<PredictiveRecord> {
    let mut out = Vec::new();
    for ms in &report.methods {
        for (name, value) in dtrq::qlearn::PredictionMetrics::FIELDS
            .iter()
            .zip(ms.metrics.values())
        {
            out.push(PredictiveRecord {
                method: ms.method.label().to_string(),
                metric: name.to_string(),
                value,
            });
        }
    }
    out
}

fn write_csv_records<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(e.to_string()))?;
    for r in records {
        w.serialize(r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, document: &T) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, document)
        .map_err(|e| CliError::Data(e.to_string()))?;
    f.write_all(b"\n")?;
    Ok(())
}

#[derive(Serialize)]
struct SimDocument<'a> {
    scenario: &'a str,
    records: &'a [SimRecord],
}

pub fn write_sim_report(
    path: &Path,
    format: OutputFormat,
    scenario: &str,
    records: &[SimRecord],
) -> Result<(), CliError> {
    match format {
        OutputFormat::Csv => write_csv_records(path, records),
        OutputFormat::Json => write_json(path, &SimDocument { scenario, records }),
    }
}

#[derive(Serialize)]
struct PredictiveDocument<'a> {
    scenario: &'a str,
    records: &'a [PredictiveRecord],
}

pub fn write_predictive_report(
    path: &Path,
    format: OutputFormat,
    records: &[PredictiveRecord],
) -> Result<(), CliError> {
    match format {
        OutputFormat::Csv => write_csv_records(path, records),
        OutputFormat::Json => {
            write_json(path, &PredictiveDocument { scenario: "predictive", records })
        }
    }
}

#[derive(Serialize)]
struct SensitivityDocument<'a> {
    records: &'a [SensitivityRecord],
    rules: &'a [RuleRecord],
}

pub fn write_sensitivity_report(
    path: &Path,
    format: OutputFormat,
    records: &[SensitivityRecord],
    rules: &[RuleRecord],
) -> Result<(), CliError> {
    match format {
        OutputFormat::Csv => write_csv_records(path, records),
        OutputFormat::Json => write_json(path, &SensitivityDocument { records, rules }),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:10.1}"),
        None => format!("{:>10}", "-"),
    }
}

/// Fixed-width rendering of an estimation report.
pub fn print_sim_table(records: &[SimRecord]) {
    println!(
        "{:<18} {:<10} {:>10} {:>10} {:>10} {:>10}",
        "method", "parameter", "bias", "se", "rmse", "cr%"
    );
    for r in records {
        println!(
            "{:<18} {:<10} {:>10.3} {:>10.3} {:>10.3} {}",
            r.method,
            r.parameter,
            r.bias,
            r.se,
            r.rmse,
            fmt_opt(r.cr)
        );
    }
}

/// Fixed-width rendering of a predictive report.
pub fn print_predictive_table(records: &[PredictiveRecord]) {
    println!("{:<18} {:<26} {:>10}", "method", "metric", "value%");
    for r in records {
        println!("{:<18} {:<26} {:>10.3}", r.method, r.metric, r.value * 100.0);
    }
}

/// Fixed-width rendering of a sensitivity report.
pub fn print_sensitivity_table(records: &[SensitivityRecord]) {
    println!(
        "{:<16} {:>8} {:>8} {:<22} {:>10} {:>9} {:>9} {:>9}",
        "method", "gamma10", "gamma01", "parameter", "estimate", "se", "ci_low", "ci_high"
    );
    for r in records {
        println!(
            "{:<16} {:>8.3} {:>8.3} {:<22} {:>10.3} {:>9.3} {:>9.3} {:>9.3}",
            r.method, r.gamma10, r.gamma01, r.parameter, r.estimate, r.se, r.ci_low, r.ci_high
        );
    }
}

/// Renders a decision rule like `a_opt = 1 if -0.148 + 0.130*diabetes > 0`.
pub fn render_rule(psi: &[f64], blip_names: &[String]) -> String {
    let mut expr = String::new();
    for (i, (coef, name)) in psi.iter().zip(blip_names).enumerate() {
        if i == 0 {
            if name == "intercept" {
                expr.push_str(&format!("{coef:.3}"));
            } else {
                expr.push_str(&format!("{coef:.3}*{name}"));
            }
        } else {
            let sign = if *coef < 0.0 { '-' } else { '+' };
            let mag = coef.abs();
            if name == "intercept" {
                expr.push_str(&format!(" {sign} {mag:.3}"));
            } else {
                expr.push_str(&format!(" {sign} {mag:.3}*{name}"));
            }
        }
    }
    format!("a_opt = 1 if {expr} > 0, else -1")
}
