//! Report writers: the full report as JSON, a flat per-size CSV and a
//! plot-ready CSV. Floats use a fixed 17-significant-digit format so identical
//! runs give byte-identical files.

use std::io::Write;
use std::path::Path;

use galerkin_bounds::certify::{BoundReport, SweepRecord, EXACTNESS_TOL};
use galerkin_bounds::solver::SolveStatus;

pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// A missing bound is an infinite one (infeasible or unsolved size).
fn bound(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_else(|| "inf".into())
}

/// Per-row diagnostics, `;`-separated; `ok` when there is nothing to report.
pub fn row_flags(r: &SweepRecord) -> String {
    let mut out: Vec<&str> = Vec::new();
    match r.upper_status {
        Some(SolveStatus::Infeasible) => out.push("upper_infeasible"),
        Some(SolveStatus::MaxIter) => out.push("upper_max_iter"),
        _ => {}
    }
    match r.lower_status {
        Some(SolveStatus::Infeasible) => out.push("lower_infeasible"),
        Some(SolveStatus::MaxIter) => out.push("lower_max_iter"),
        _ => {}
    }
    if r.cauchy_ok == Some(false) {
        out.push("cauchy");
    }
    if let (Some(res), Some(n)) = (r.dyn_residual, r.eta_norm) {
        if res > EXACTNESS_TOL * (1.0 + n) {
            out.push("dynamics");
        }
    }
    if let (Some(res), Some(n)) = (r.adjoint_residual, r.eta_p_norm) {
        if res > EXACTNESS_TOL * (1.0 + n) {
            out.push("adjoint");
        }
    }
    if let (Some(g), Some(j)) = (r.lower_duality_gap, r.lower_cost) {
        if g.abs() > EXACTNESS_TOL * (1.0 + j.abs()) {
            out.push("duality");
        }
    }
    if r.error.is_some() {
        out.push("error");
    }
    if out.is_empty() {
        "ok".into()
    } else {
        out.join(";")
    }
}

pub fn write_json(report: &BoundReport, path: &Path) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")
}

pub fn write_report_csv<W: Write>(report: &BoundReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "s",
        "J_s",
        "Jtilde_s",
        "gap",
        "dyn_residual",
        "duality_gap",
        "cauchy_lhs",
        "cauchy_rhs",
        "flags",
    ])?;
    for r in &report.records {
        w.write_record([
            r.s.to_string(),
            bound(r.upper_cost),
            bound(r.lower_cost),
            opt(r.gap),
            opt(r.dyn_residual),
            opt(r.lower_duality_gap),
            opt(r.cauchy_lhs),
            opt(r.cauchy_rhs),
            row_flags(r),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: size, both bounds, and the reference value with its band.
pub fn write_plot_csv<W: Write>(report: &BoundReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["s", "upper", "lower", "reference", "reference_lo", "reference_hi"])?;
    let reference = report.oracle.as_ref();
    for r in &report.records {
        w.write_record([
            r.s.to_string(),
            opt(r.upper_cost),
            opt(r.lower_cost),
            opt(reference.map(|o| o.value)),
            opt(reference.map(|o| o.value - o.band)),
            opt(reference.map(|o| o.value + o.band)),
        ])?;
    }
    w.flush()?;
    Ok(())
}
