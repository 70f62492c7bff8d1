//! Config-driven flow runs: step the surface, and at snapshot cadence write
//! the mesh, the vertex fields, and one diagnostics row.

use std::path::{Path, PathBuf};

use willmore::ambient::AmbientSpace;
use willmore::diagnostics::{concentration, covering_check, hoffman_spruck_check, rho_of_t};
use willmore::flow::{self, FlowState, RunSummary, StepControl};
use willmore::io::{
    write_config_echo, write_snapshot, DiagnosticsControls, DiagnosticsRow, FlowControls,
    RunConfig,
};
use willmore::mesh::quality_report;

use crate::LabError;

/// Slack applied to the Sobolev inequality when judging a snapshot: discrete
/// gradients undershoot total variation near coarse features, and the check
/// should only trip on constant-level bugs.
pub const SOBOLEV_SLACK: f64 = 0.05;

/// Everything a completed run leaves behind, beyond the files on disk.
#[derive(Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub rows: Vec<DiagnosticsRow>,
    pub outdir: PathBuf,
}

pub fn step_control(flow: &FlowControls) -> StepControl {
    StepControl {
        c_cfl: flow.c_cfl,
        max_dt: flow.max_dt,
        curvature_cap: flow.curvature_cap,
        min_angle_deg: flow.min_angle_deg,
        max_rejects: flow.max_rejects as u32,
        length_scale: flow.length_scale,
        ..StepControl::default()
    }
}

/// Diagnostics row for one snapshot. `eta` and `area_conc_max` are the
/// concentration suprema at the area scale `sigma0`; `covering_slack` is the
/// tightest slack over the configured radii; `hs_ok` records whether the
/// Sobolev inequality held (with slack) or its hypotheses were void.
pub fn snapshot_row(
    state: &FlowState,
    amb: &AmbientSpace,
    diag: &DiagnosticsControls,
) -> Result<DiagnosticsRow, LabError> {
    let shape = &state.shape;
    let im = &state.immersion;

    let conc = concentration(shape, im, amb, diag.sigma0, None)?;
    let radii = diag.radii();
    let rho = rho_of_t(shape, im, amb, &radii, diag.epsilon0)?;

    let mut slack = f64::INFINITY;
    for &rho in &diag.rho_list {
        let report = covering_check(shape, im, amb, rho)?;
        slack = slack.min(report.slack);
    }

    let ones = vec![1.0; im.vertex_count()];
    let hs = hoffman_spruck_check(shape, im, amb, &ones)?;
    let hs_ok = !hs.conditions_ok || hs.lhs <= hs.rhs * (1.0 + SOBOLEV_SLACK);

    Ok(DiagnosticsRow {
        t: state.t,
        dt: state.dt_last,
        energy: state.energy,
        eta: conc.eta,
        rho_of_t: rho,
        area_conc_max: conc.area_max,
        hs_ok,
        covering_slack: slack,
        max_abs_a: shape.max_abs_a,
        min_quality: quality_report(&shape.induced).min_angle_deg,
    })
}

/// Run the configured flow, writing snapshots every `snapshot_every` accepted
/// steps plus the initial and final states. A horizon of zero records exactly
/// the initial snapshot.
pub fn execute_run(cfg: &RunConfig, outdir: &Path) -> Result<RunOutcome, LabError> {
    let amb = cfg.ambient_space()?;
    let im = cfg.initial_mesh(&amb)?;
    let initial = FlowState::new(im, &amb)?;
    let ctl = step_control(&cfg.flow);

    std::fs::create_dir_all(outdir)
        .map_err(|e| LabError::Runtime(format!("cannot create '{}': {e}", outdir.display())))?;
    write_config_echo(cfg, outdir)?;

    let mut rows = Vec::new();
    let mut write_error: Option<LabError> = None;
    let mut last_written_step = initial.step_index;
    rows.push(record_snapshot(&initial, &amb, &cfg.diagnostics, outdir)?);

    let every = cfg.flow.snapshot_every.max(1) as u64;
    let (final_state, summary) = flow::run(initial, &amb, &ctl, cfg.flow.horizon, |state, _| {
        if write_error.is_some() || state.step_index % every != 0 {
            return;
        }
        match record_snapshot(state, &amb, &cfg.diagnostics, outdir) {
            Ok(row) => {
                last_written_step = state.step_index;
                rows.push(row);
            }
            Err(e) => write_error = Some(e),
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    if final_state.step_index != last_written_step {
        rows.push(record_snapshot(&final_state, &amb, &cfg.diagnostics, outdir)?);
    }
    Ok(RunOutcome { summary, rows, outdir: outdir.to_path_buf() })
}

/// Compute one diagnostics row and persist it with its snapshot files.
pub fn record_snapshot(
    state: &FlowState,
    amb: &AmbientSpace,
    diag: &DiagnosticsControls,
    outdir: &Path,
) -> Result<DiagnosticsRow, LabError> {
    let row = snapshot_row(state, amb, diag)?;
    write_snapshot(state, amb, &row, outdir)?;
    Ok(row)
}

/// One human-readable line per run, printed by the binary.
pub fn summarize(outcome: &RunOutcome) -> String {
    let s = &outcome.summary;
    format!(
        "{} after {} step(s), t = {:.6e}, energy = {:.6e}, max|A| = {:.3e}, {} snapshot(s) in {}",
        s.termination,
        s.steps,
        s.final_t,
        s.final_energy,
        s.max_abs_a,
        outcome.rows.len(),
        outcome.outdir.display()
    )
}
