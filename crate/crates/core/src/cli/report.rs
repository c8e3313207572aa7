use std::io::Write;
use std::path::Path;

use super::experiment::{AnalyticRow, RunRow, ValidationRow};
use super::CliError;

pub const CSV_HEADER: [&str; 12] = [
    "policy",
    "param_name",
    "param_value",
    "seed",
    "requests",
    "hits",
    "cost_per_request",
    "compute_d",
    "storage_d",
    "transmission_d",
    "trace_checksum",
    "cost_std",
];

fn output_error(e: impl std::fmt::Display) -> CliError {
    CliError::Output(e.to_string())
}

fn opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

pub fn emit_csv<W: Write>(rows: &[RunRow], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(output_error)?;
    for r in rows {
        w.write_record([
            r.policy.to_string(),
            r.param_name.to_string(),
            opt(r.param_value),
            r.seed
                .map_or_else(|| "summary".to_string(), |s| s.to_string()),
            r.requests.to_string(),
            r.hits.to_string(),
            r.cost_per_request.to_string(),
            r.compute_dollars.to_string(),
            r.storage_dollars.to_string(),
            r.transmission_dollars.to_string(),
            r.trace_checksum.clone(),
            opt(r.cost_std),
        ])
        .map_err(output_error)?;
    }
    w.flush().map_err(output_error)
}

pub fn emit_validation_csv<W: Write>(rows: &[ValidationRow], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "policy",
        "param_name",
        "param_value",
        "lambda",
        "seeds",
        "simulated_mean",
        "simulated_std",
        "analytic",
        "rel_error",
    ])
    .map_err(output_error)?;
    for r in rows {
        w.write_record([
            r.policy.to_string(),
            r.param_name.to_string(),
            opt(r.param_value),
            r.lambda.to_string(),
            r.seeds.to_string(),
            r.simulated_mean.to_string(),
            r.simulated_std.to_string(),
            r.analytic.to_string(),
            r.rel_error.to_string(),
        ])
        .map_err(output_error)?;
    }
    w.flush().map_err(output_error)
}

pub fn emit_analytic_csv<W: Write>(rows: &[AnalyticRow], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "kind",
        "lambda",
        "ttl",
        "global_ttl_cost",
        "individual_ttl_cost",
        "lower_bound_cost",
    ])
    .map_err(output_error)?;
    for r in rows {
        w.write_record([
            r.kind.to_string(),
            r.lambda.to_string(),
            r.ttl.to_string(),
            r.global_ttl.to_string(),
            r.individual_ttl.to_string(),
            r.lower_bound.to_string(),
        ])
        .map_err(output_error)?;
    }
    w.flush().map_err(output_error)
}

/// Renders into memory first so an unwritable path never leaves a partial
/// file behind; `None` writes to stdout.
pub fn write_output(
    path: Option<&Path>,
    render: impl FnOnce(&mut Vec<u8>) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    render(&mut buf)?;
    match path {
        Some(p) => {
            std::fs::write(p, &buf).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))
        }
        None => std::io::stdout().write_all(&buf).map_err(output_error),
    }
}
