//! Read-only summary of a run directory. Inspect never writes: it reports
//! what the diagnostics log and the snapshot files say, including gaps.

use std::path::Path;

use willmore::io::{read_diagnostics_log, snapshot_paths, DiagnosticsRow};

use crate::LabError;

#[derive(Debug)]
pub struct InspectReport {
    pub rows: Vec<DiagnosticsRow>,
    /// Snapshot indices whose mesh or field file is missing on disk.
    pub missing: Vec<usize>,
}

pub fn inspect_dir(dir: &Path) -> Result<InspectReport, LabError> {
    if !dir.is_dir() {
        return Err(LabError::Validation(format!("not a run directory: '{}'", dir.display())));
    }
    let rows = read_diagnostics_log(dir)?;
    let mut missing = Vec::new();
    for index in 0..rows.len() {
        let (obj, fields) = snapshot_paths(dir, index);
        if !obj.is_file() || !fields.is_file() {
            missing.push(index);
        }
    }
    Ok(InspectReport { rows, missing })
}

/// Render the summary the binary prints.
pub fn summarize(report: &InspectReport, dir: &Path) -> String {
    let rows = &report.rows;
    let mut out = format!("{}: {} snapshot(s)\n", dir.display(), rows.len());
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        out.push_str(&format!("t range        {:.6e} .. {:.6e}\n", first.t, last.t));
        out.push_str(&format!("energy         {:.6e} .. {:.6e}\n", first.energy, last.energy));
        let fold = |f: fn(&DiagnosticsRow) -> f64, init: f64, pick: fn(f64, f64) -> f64| {
            rows.iter().map(f).fold(init, pick)
        };
        out.push_str(&format!(
            "eta max        {:.6e}\n",
            fold(|r| r.eta, f64::NEG_INFINITY, f64::max)
        ));
        out.push_str(&format!(
            "rho_of_t min   {:.6e}\n",
            fold(|r| r.rho_of_t, f64::INFINITY, f64::min)
        ));
        out.push_str(&format!(
            "cover slack    {:.6e} (min)\n",
            fold(|r| r.covering_slack, f64::INFINITY, f64::min)
        ));
        out.push_str(&format!(
            "max|A| sup     {:.6e}\n",
            fold(|r| r.max_abs_a, f64::NEG_INFINITY, f64::max)
        ));
        out.push_str(&format!(
            "quality min    {:.6e}\n",
            fold(|r| r.min_quality, f64::INFINITY, f64::min)
        ));
        let hs_violations = rows.iter().filter(|r| !r.hs_ok).count();
        out.push_str(&format!("sobolev breaks {hs_violations}\n"));
    }
    if !report.missing.is_empty() {
        out.push_str(&format!("missing snapshot files for indices {:?}\n", report.missing));
    }
    out
}
