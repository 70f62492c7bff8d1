//! Explicit gradient descent of the bending energy.
//!
//! Each step moves every vertex along its unit normal with speed given by
//! the fourth-order operator from [`crate::shape`], then recomputes the
//! geometry from scratch. Steps that raise the energy beyond a slack, break
//! mesh quality, or push vertices out of the ambient chart are rejected and
//! retried with half the step size. Connectivity never changes; when the
//! mesh degrades past the thresholds the trajectory stops instead of
//! remeshing.

use nalgebra::Vector3;
use thiserror::Error;

use crate::ambient::{AmbientError, AmbientSpace};
use crate::mesh::{quality_report, Immersion, MeshError};
use crate::shape::{ShapeError, ShapeState};

/// Why a trial step was rejected.
#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    /// Energy rose by more than the allowed slack.
    EnergyIncrease { rise: f64 },
    /// Minimum triangle angle fell below the control threshold.
    QualityFloor { min_angle_deg: f64 },
    /// A vertex left the ambient chart.
    OutOfChart,
    /// Geometry reconstruction failed on the trial mesh.
    BadGeometry(String),
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::EnergyIncrease { rise } => {
                write!(f, "energy rose by {rise:.3e}")
            }
            RejectReason::QualityFloor { min_angle_deg } => {
                write!(f, "minimum triangle angle fell to {min_angle_deg:.3} degrees")
            }
            RejectReason::OutOfChart => write!(f, "a vertex left the ambient chart"),
            RejectReason::BadGeometry(msg) => write!(f, "geometry failed: {msg}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("step at t = {t:.6e} rejected {rejects} times; last reason: {last}")]
    StepFailure {
        t: f64,
        rejects: u32,
        last: RejectReason,
    },
    #[error("surface pressed against the chart boundary at t = {t:.6e}")]
    OutOfChart { t: f64 },
}

/// Step-size and rejection policy. `length_scale` nondimensionalizes the
/// curvature in both the step-size law and the curvature cap.
#[derive(Debug, Clone)]
pub struct StepControl {
    /// Constant in the fourth-order step-size law.
    pub c_cfl: f64,
    /// Hard upper bound on the step size.
    pub max_dt: f64,
    /// Relative slack allowed in the energy monotonicity test.
    pub energy_slack: f64,
    /// Trajectory stops once `max |A| * length_scale` exceeds this.
    pub curvature_cap: f64,
    /// Trial steps whose minimum triangle angle falls below this are
    /// rejected; a state already below it aborts the trajectory.
    pub min_angle_deg: f64,
    /// Rejections allowed within one step before giving up.
    pub max_rejects: u32,
    pub length_scale: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            c_cfl: 0.05,
            max_dt: 1e-3,
            energy_slack: 1e-8,
            curvature_cap: 1e3,
            min_angle_deg: 5.0,
            max_rejects: 20,
            length_scale: 1.0,
        }
    }
}

/// One configuration along a trajectory, with its reconstructed geometry.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub immersion: Immersion,
    pub shape: ShapeState,
    pub t: f64,
    /// Step size of the move that produced this state; 0 for an initial state.
    pub dt_last: f64,
    pub energy: f64,
    pub step_index: u64,
}

impl FlowState {
    /// Reconstructs geometry for an immersion and wraps it as a trajectory
    /// start. Flow time is taken from the immersion.
    pub fn new(immersion: Immersion, amb: &AmbientSpace) -> Result<FlowState, ShapeError> {
        let shape = ShapeState::compute(&immersion, amb)?;
        let energy = shape.energy;
        let t = immersion.t;
        Ok(FlowState {
            immersion,
            shape,
            t,
            dt_last: 0.0,
            energy,
            step_index: 0,
        })
    }
}

/// Fourth-order step-size law: `c_cfl * h_min^4 / max(1, (|A| l)^4)`,
/// clipped at `max_dt`. The quartic power matches the order of the spatial
/// operator; the curvature factor shortens steps where the surface bends at
/// scales the mesh barely resolves.
pub fn cfl_dt(h_min: f64, max_abs_a: f64, ctl: &StepControl) -> f64 {
    let bend = (max_abs_a * ctl.length_scale).powi(4).max(1.0);
    (ctl.c_cfl * h_min.powi(4) / bend).min(ctl.max_dt)
}

/// Step size the control law proposes for this state.
pub fn propose_dt(state: &FlowState, ctl: &StepControl) -> f64 {
    cfl_dt(state.shape.induced.h_min, state.shape.max_abs_a, ctl)
}

/// The quadrature of the squared normal speed over the surface; the energy
/// dissipation rate is half this value.
pub fn willmore_flux(shape: &ShapeState) -> f64 {
    shape
        .w
        .iter()
        .zip(&shape.lap.dual_area)
        .map(|(w, da)| w * w * da)
        .sum()
}

/// One forward-Euler trial at a fixed step size. Never mutates the input.
fn trial_step(
    state: &FlowState,
    amb: &AmbientSpace,
    ctl: &StepControl,
    dt: f64,
) -> Result<FlowState, RejectReason> {
    let verts = state.immersion.vertices();
    let mut new_pos: Vec<Vector3<f64>> = Vec::with_capacity(verts.len());
    for (v, p) in verts.iter().enumerate() {
        let q = p + dt * state.shape.w[v] * state.shape.nu[v];
        if !(q.x.is_finite() && q.y.is_finite() && q.z.is_finite()) {
            return Err(RejectReason::BadGeometry(format!(
                "vertex {v} moved to a non-finite position"
            )));
        }
        new_pos.push(q);
    }
    let mut im = state.immersion.with_positions(new_pos);
    im.t = state.t + dt;
    if im.validate_in_chart(amb).is_err() {
        return Err(RejectReason::OutOfChart);
    }
    let shape = match ShapeState::compute(&im, amb) {
        Ok(s) => s,
        Err(ShapeError::Ambient(AmbientError::OutOfChart { .. }))
        | Err(ShapeError::Mesh(MeshError::Ambient(AmbientError::OutOfChart { .. }))) => {
            return Err(RejectReason::OutOfChart)
        }
        Err(e) => return Err(RejectReason::BadGeometry(e.to_string())),
    };
    let rise = shape.energy - state.energy;
    if rise > ctl.energy_slack * (1.0 + state.energy.abs()) {
        return Err(RejectReason::EnergyIncrease { rise });
    }
    let quality = quality_report(&shape.induced);
    if quality.min_angle_deg < ctl.min_angle_deg {
        return Err(RejectReason::QualityFloor {
            min_angle_deg: quality.min_angle_deg,
        });
    }
    let energy = shape.energy;
    Ok(FlowState {
        immersion: im,
        shape,
        t: state.t + dt,
        dt_last: dt,
        energy,
        step_index: state.step_index + 1,
    })
}

/// One accepted step, with the number of rejections it took. The proposed
/// step size is clipped at `dt_limit` (pass infinity for no clip); each
/// rejection halves it. A zero step size is legal and reproduces the state
/// with only the step index advanced.
pub fn step_limited(
    state: &FlowState,
    amb: &AmbientSpace,
    ctl: &StepControl,
    dt_limit: f64,
) -> Result<(FlowState, u32), FlowError> {
    let mut dt = propose_dt(state, ctl).min(dt_limit);
    let mut rejects = 0u32;
    loop {
        match trial_step(state, amb, ctl, dt) {
            Ok(next) => return Ok((next, rejects)),
            Err(reason) => {
                rejects += 1;
                if rejects > ctl.max_rejects {
                    return Err(match reason {
                        RejectReason::OutOfChart => FlowError::OutOfChart { t: state.t },
                        last => FlowError::StepFailure {
                            t: state.t,
                            rejects,
                            last,
                        },
                    });
                }
                dt *= 0.5;
            }
        }
    }
}

/// One accepted step at the control law's proposed size.
pub fn step(
    state: &FlowState,
    amb: &AmbientSpace,
    ctl: &StepControl,
) -> Result<FlowState, FlowError> {
    step_limited(state, amb, ctl, f64::INFINITY).map(|(s, _)| s)
}

/// Why a trajectory ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Reached the requested time horizon.
    Horizon,
    /// A step exhausted its rejection budget.
    StepFailure,
    /// Mesh quality of an accepted state fell below the threshold.
    QualityAbort,
    /// Curvature of an accepted state exceeded the cap; the recorded final
    /// time estimates the blow-up time.
    CurvatureCap,
    /// The surface pressed against the chart boundary.
    OutOfChart,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Termination::Horizon => "horizon",
            Termination::StepFailure => "step-failure",
            Termination::QualityAbort => "quality-abort",
            Termination::CurvatureCap => "curvature-cap",
            Termination::OutOfChart => "out-of-chart",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub termination: Termination,
    pub steps: u64,
    pub rejects: u64,
    pub final_t: f64,
    pub final_energy: f64,
    pub max_abs_a: f64,
}

/// Advances the flow until the horizon or a stopping event, invoking the
/// observer after every accepted step with the new state and the number of
/// rejections that step took. The final step is shortened to land exactly
/// on the horizon. Returns the last state together with a summary; step
/// failures and chart exits are reported as terminations, not errors.
pub fn run(
    initial: FlowState,
    amb: &AmbientSpace,
    ctl: &StepControl,
    horizon: f64,
    mut observer: impl FnMut(&FlowState, u32),
) -> (FlowState, RunSummary) {
    assert!(horizon >= 0.0, "horizon must be nonnegative");
    let mut state = initial;
    let mut steps = 0u64;
    let mut rejects = 0u64;
    let cap = ctl.curvature_cap / ctl.length_scale;

    let termination = loop {
        if state.shape.max_abs_a > cap {
            break Termination::CurvatureCap;
        }
        if quality_report(&state.shape.induced).min_angle_deg < ctl.min_angle_deg {
            break Termination::QualityAbort;
        }
        let remaining = horizon - state.t;
        if remaining <= horizon * 1e-12 {
            break Termination::Horizon;
        }
        match step_limited(&state, amb, ctl, remaining) {
            Ok((next, r)) => {
                steps += 1;
                rejects += r as u64;
                state = next;
                observer(&state, r);
            }
            Err(FlowError::OutOfChart { .. }) => break Termination::OutOfChart,
            Err(FlowError::StepFailure { .. }) => break Termination::StepFailure,
        }
    };

    let summary = RunSummary {
        termination,
        steps,
        rejects,
        final_t: state.t,
        final_energy: state.energy,
        max_abs_a: state.shape.max_abs_a,
    };
    (state, summary)
}
