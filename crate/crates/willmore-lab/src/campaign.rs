//! Lifespan campaigns: flow a family of dumbbell surfaces to termination,
//! record how long each survives against its initial concentration radius,
//! and fit the resulting power law.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use willmore::diagnostics::{lifespan_fit, rho_of_t, LifespanFit};
use willmore::flow::{self, FlowState, Termination};
use willmore::io::{dumbbell, RunConfig};

use crate::driver::step_control;
use crate::LabError;

/// One campaign experiment: a neck width, its initial concentration radius,
/// and the measured termination.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub neck_width: f64,
    pub rho0: f64,
    pub t_hat: f64,
    pub termination: Termination,
    pub steps: u64,
}

#[derive(Debug)]
pub struct CampaignReport {
    pub experiments: Vec<Experiment>,
    /// Calibrated so every experiment satisfies `t_hat >= rho0^4 / c_hat`.
    pub c_hat: f64,
    /// Present once at least four experiments admit a log-log fit.
    pub fit: Option<LifespanFit>,
}

/// Run every experiment of the configured campaign and write `lifespan.csv`
/// plus a `lifespan_fit.txt` report into `outdir`. Experiments run
/// independently; results are ordered by their index in the width list.
pub fn run_campaign(cfg: &RunConfig, outdir: &Path) -> Result<CampaignReport, LabError> {
    let Some(campaign) = &cfg.campaign else {
        return Err(LabError::Validation(
            "config has no [campaign] section; 'lifespan' needs 'neck_widths'".into(),
        ));
    };
    let amb = cfg.ambient_space()?;
    std::fs::create_dir_all(outdir)
        .map_err(|e| LabError::Runtime(format!("cannot create '{}': {e}", outdir.display())))?;

    let experiments: Vec<Experiment> = campaign
        .neck_widths
        .par_iter()
        .map(|&width| -> Result<Experiment, LabError> {
            let im = dumbbell(width, campaign.level)?;
            let state = FlowState::new(im, &amb)?;
            let radii = cfg.diagnostics.radii();
            let rho0 = rho_of_t(
                &state.shape,
                &state.immersion,
                &amb,
                &radii,
                cfg.diagnostics.epsilon0,
            )?;
            let ctl = step_control(&cfg.flow);
            let (_, summary) = flow::run(state, &amb, &ctl, cfg.flow.horizon, |_, _| {});
            Ok(Experiment {
                neck_width: width,
                rho0,
                t_hat: summary.final_t,
                termination: summary.termination,
                steps: summary.steps,
            })
        })
        .collect::<Result<_, _>>()?;

    let c_hat = experiments
        .iter()
        .filter(|e| e.t_hat > 0.0)
        .map(|e| e.rho0.powi(4) / e.t_hat)
        .fold(0.0f64, f64::max);

    let samples: Vec<(f64, f64)> = experiments
        .iter()
        .filter(|e| e.rho0 > 0.0 && e.t_hat > 0.0)
        .map(|e| (e.rho0, e.t_hat))
        .collect();
    let fit = if samples.len() >= 4 { Some(lifespan_fit(&samples)?) } else { None };

    write_reports(&experiments, c_hat, fit.as_ref(), outdir)?;
    Ok(CampaignReport { experiments, c_hat, fit })
}

fn write_reports(
    experiments: &[Experiment],
    c_hat: f64,
    fit: Option<&LifespanFit>,
    outdir: &Path,
) -> Result<(), LabError> {
    let io_err = |e: std::io::Error| LabError::Runtime(format!("cannot write campaign report: {e}"));

    let mut csv = std::fs::File::create(outdir.join("lifespan.csv")).map_err(io_err)?;
    writeln!(csv, "rho0,t_hat,termination").map_err(io_err)?;
    for e in experiments {
        writeln!(csv, "{:.16e},{:.16e},{}", e.rho0, e.t_hat, e.termination).map_err(io_err)?;
    }
    csv.sync_all().map_err(io_err)?;

    let mut report = std::fs::File::create(outdir.join("lifespan_fit.txt")).map_err(io_err)?;
    writeln!(report, "experiments = {}", experiments.len()).map_err(io_err)?;
    writeln!(report, "c_hat = {c_hat:.6e}").map_err(io_err)?;
    match fit {
        Some(f) => {
            writeln!(report, "slope = {:.6}", f.slope).map_err(io_err)?;
            writeln!(report, "intercept = {:.6}", f.intercept).map_err(io_err)?;
            writeln!(report, "r_squared = {:.6}", f.r_squared).map_err(io_err)?;
        }
        None => writeln!(report, "fit = unavailable (need 4 positive samples)").map_err(io_err)?,
    }
    report.sync_all().map_err(io_err)?;
    Ok(())
}

/// Table the binary prints after a campaign.
pub fn summarize(report: &CampaignReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>12} {:>14} {:>8}  {}\n",
        "neck_width", "rho0", "t_hat", "steps", "termination"
    ));
    for e in &report.experiments {
        out.push_str(&format!(
            "{:<12.4} {:>12.5e} {:>14.6e} {:>8}  {}\n",
            e.neck_width, e.rho0, e.t_hat, e.steps, e.termination
        ));
    }
    out.push_str(&format!("c_hat = {:.6e}\n", report.c_hat));
    match &report.fit {
        Some(f) => out.push_str(&format!(
            "log-log fit: slope = {:.4}, intercept = {:.4}, r^2 = {:.4}\n",
            f.slope, f.intercept, f.r_squared
        )),
        None => out.push_str("log-log fit: unavailable (need 4 positive samples)\n"),
    }
    out
}
