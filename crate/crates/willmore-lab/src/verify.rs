//! Verification suites behind `willmore-lab verify`: short, deterministic
//! checks of the discrete operators against their continuum behavior, printed
//! as one table row each.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use willmore::ambient::AmbientSpace;
use willmore::diagnostics::{
    covering_check, cutoff_max_gradient, evolution_fd_check, hoffman_spruck_check,
    multiplicative_sobolev_check, CutoffFunction,
};
use willmore::flow::{self, FlowState, StepControl};
use willmore::io::{dumbbell, ellipsoid, geodesic_sphere, icosphere, torus};
use willmore::shape::{
    cross_derivatives, derivative_tier, gauss_codazzi_residuals, l2_norm, simons_residual,
    ShapeState,
};

use crate::LabError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Identities,
    Evolution,
    Sobolev,
    All,
}

impl std::str::FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Suite, String> {
        match s {
            "identities" => Ok(Suite::Identities),
            "evolution" => Ok(Suite::Evolution),
            "sobolev" => Ok(Suite::Sobolev),
            "all" => Ok(Suite::All),
            other => Err(format!(
                "unknown suite '{other}'; known: identities, evolution, sobolev, all"
            )),
        }
    }
}

/// One table row: a measured value against its pinned bound.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub bound: f64,
    /// True when the check requires `value <= bound`, false for `>=`.
    pub upper: bool,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &'static str, value: f64, bound: f64) -> Check {
        Check { name, value, bound, upper: true, pass: value <= bound }
    }

    fn at_least(name: &'static str, value: f64, bound: f64) -> Check {
        Check { name, value, bound, upper: false, pass: value >= bound }
    }
}

/// Render the table the binary prints; one line per check plus a header.
pub fn render_table(checks: &[Check]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<34} {:>13} {:>16}  {}\n", "check", "value", "bound", "result"));
    for c in checks {
        let rel = if c.upper { "<=" } else { ">=" };
        let verdict = if c.pass { "pass" } else { "FAIL" };
        out.push_str(&format!(
            "{:<34} {:>13.5e} {} {:>13.5e}  {}\n",
            c.name, c.value, rel, c.bound, verdict
        ));
    }
    out
}

/// Least-squares slope of ln(y) against ln(x).
fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

pub fn run_suite(suite: Suite) -> Result<Vec<Check>, LabError> {
    match suite {
        Suite::Identities => identities(),
        Suite::Evolution => evolution(),
        Suite::Sobolev => sobolev(),
        Suite::All => {
            let mut checks = identities()?;
            checks.extend(evolution()?);
            checks.extend(sobolev()?);
            Ok(checks)
        }
    }
}

/// Stationarity of round spheres and the curvature identities on an
/// ellipsoid refinement ladder.
fn identities() -> Result<Vec<Check>, LabError> {
    let amb = AmbientSpace::euclidean();
    let mut checks = Vec::new();

    let mut speed = Vec::new();
    let mut energy_l4 = 0.0;
    for level in 3u32..=5 {
        let im = icosphere(level)?;
        let state = ShapeState::compute(&im, &amb)?;
        speed.push((state.induced.h_max, state.sup_w()));
        if level == 4 {
            energy_l4 = state.willmore_energy();
        }
    }
    checks.push(Check::at_least("sphere-speed-order", log_log_slope(&speed), 0.8));
    let four_pi = 4.0 * std::f64::consts::PI;
    checks.push(Check::at_most("sphere-energy-level-4", (energy_l4 / four_pi - 1.0).abs(), 0.02));

    let mut gauss = Vec::new();
    let mut codazzi = Vec::new();
    let mut simons = Vec::new();
    for level in 1u32..=3 {
        let im = ellipsoid(1.3, 1.0, 0.7, level)?;
        let state = ShapeState::compute(&im, &amb)?;
        let cross = cross_derivatives(&state, &im, &amb)?;
        let res = gauss_codazzi_residuals(&state, &cross, &im, &amb)?;
        let sim = simons_residual(&state, &cross, &im, &amb)?;
        let h = state.induced.h_max;
        let total = state.induced.total_area;
        gauss.push((h, l2_norm(&res.gauss, &state.lap.dual_area, total)));
        codazzi.push((h, l2_norm(&res.codazzi, &state.lap.dual_area, total)));
        simons.push((h, l2_norm(&sim, &state.lap.dual_area, total)));
    }
    checks.push(Check::at_least("gauss-residual-order", log_log_slope(&gauss), 0.5));
    checks.push(Check::at_least("codazzi-residual-order", log_log_slope(&codazzi), 0.5));
    checks.push(Check::at_least("simons-residual-order", log_log_slope(&simons), 0.5));
    let contraction = [&gauss, &codazzi, &simons]
        .iter()
        .flat_map(|series| series.windows(2).map(|w| w[1].1 / w[0].1))
        .fold(0.0f64, f64::max);
    checks.push(Check::at_most("residual-contraction", contraction, 1.0));

    let hyp = AmbientSpace::hyperbolic(-1.0)?;
    let im = geodesic_sphere(&hyp, &Vector3::zeros(), 1.0, 3)?;
    let state = ShapeState::compute(&im, &hyp)?;
    // W = -4 coth r on a geodesic sphere of radius r in H^3
    let exact = -4.0 / f64::tanh(1.0);
    let worst =
        state.w.iter().map(|w| (w / exact - 1.0).abs()).fold(0.0f64, f64::max);
    checks.push(Check::at_most("hyperbolic-sphere-speed", worst, 0.05));

    Ok(checks)
}

/// Equal forced steps of size `dt` from `initial`, bypassing the step
/// controller so the window spacing is exact.
pub fn forced_window(
    initial: &FlowState,
    amb: &AmbientSpace,
    dt: f64,
) -> Result<[FlowState; 3], LabError> {
    let ctl = StepControl {
        c_cfl: 1e12,
        max_dt: dt,
        max_rejects: 0,
        energy_slack: 1e9,
        min_angle_deg: 0.0,
        ..StepControl::default()
    };
    let s1 = flow::step(initial, amb, &ctl)
        .map_err(|e| LabError::Runtime(format!("window step failed: {e}")))?;
    let s2 = flow::step(&s1, amb, &ctl)
        .map_err(|e| LabError::Runtime(format!("window step failed: {e}")))?;
    Ok([initial.clone(), s1, s2])
}

/// Finite-difference residuals of the evolution identities on a shrinking
/// hyperbolic geodesic sphere, plus radial-ODE tracking.
fn evolution() -> Result<Vec<Check>, LabError> {
    let amb = AmbientSpace::hyperbolic(-1.0)?;
    let im = geodesic_sphere(&amb, &Vector3::zeros(), 1.0, 3)?;
    let initial = FlowState::new(im, &amb)?;
    let mut checks = Vec::new();

    // The central difference over a forward-Euler window carries an O(dt)
    // defect, so the residuals scale linearly in dt until the spatial floor.
    let mut area = Vec::new();
    let mut metric = Vec::new();
    for k in 0..4 {
        let dt = 2.5e-3 / f64::powi(2.0, k);
        let window = forced_window(&initial, &amb, dt)?;
        let report = evolution_fd_check(&window, &amb)?;
        area.push((dt, report.area.rel_l2()));
        metric.push((dt, report.metric.rel_l2()));
    }
    checks.push(Check::at_least("area-identity-dt-order", log_log_slope(&area), 1.0));
    checks.push(Check::at_least("metric-identity-dt-order", log_log_slope(&metric), 1.0));

    // Second-form and normal residuals sit on spatial floors; measure them
    // at a dt small enough that time truncation is negligible.
    let window = forced_window(&initial, &amb, 1e-6)?;
    let report = evolution_fd_check(&window, &amb)?;
    checks.push(Check::at_most("second-form-residual", report.second_form.rel_l2(), 0.15));
    checks.push(Check::at_most("normal-residual", report.normal.l2, 0.5));

    // Radial ODE r' = -4 coth r, integrated to a few percent radius loss.
    let level = 2u32;
    let horizon = 6e-3;
    let im = geodesic_sphere(&amb, &Vector3::zeros(), 1.0, level)?;
    let state = FlowState::new(im, &amb)?;
    let ctl = StepControl::default();
    let (final_state, summary) = flow::run(state, &amb, &ctl, horizon, |_, _| {});
    if summary.termination != flow::Termination::Horizon {
        return Err(LabError::Runtime(format!(
            "ODE tracking run ended early: {}",
            summary.termination
        )));
    }
    let exact = integrate_radius(1.0, final_state.t);
    let center = Vector3::zeros();
    let mean_r = final_state
        .immersion
        .vertices()
        .iter()
        .map(|p| amb.geodesic_distance(&center, p))
        .sum::<Result<f64, _>>()?
        / final_state.immersion.vertex_count() as f64;
    checks.push(Check::at_most("radial-ode-tracking", (mean_r / exact - 1.0).abs(), 0.05));

    Ok(checks)
}

/// RK4 integration of r' = -4 coth r from radius `r0` over time `t`.
fn integrate_radius(r0: f64, t: f64) -> f64 {
    let f = |r: f64| -4.0 / f64::tanh(r);
    let n = 4096;
    let dt = t / n as f64;
    let mut r = r0;
    for _ in 0..n {
        let k1 = f(r);
        let k2 = f(r + 0.5 * dt * k1);
        let k3 = f(r + 0.5 * dt * k2);
        let k4 = f(r + dt * k3);
        r += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    r
}

/// Random nonnegative test function built from a few plane-wave squares.
fn random_field(rng: &mut ChaCha8Rng, im: &willmore::mesh::Immersion) -> Vec<f64> {
    let k = Vector3::new(
        rng.gen_range(-3.0..3.0),
        rng.gen_range(-3.0..3.0),
        rng.gen_range(-3.0..3.0),
    );
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let floor: f64 = rng.gen_range(0.0..0.5);
    im.vertices()
        .iter()
        .map(|p| {
            let s = (k.dot(p) + phase).sin();
            s * s + floor
        })
        .collect()
}

/// Sobolev inequality on a small corpus, cutoff bounds, and the scaling of
/// the multiplicative remainder.
fn sobolev() -> Result<Vec<Check>, LabError> {
    let euclid = AmbientSpace::euclidean();
    let hyp = AmbientSpace::hyperbolic(-1.0)?;
    let mut checks = Vec::new();

    let states: Vec<(willmore::mesh::Immersion, &AmbientSpace)> = vec![
        (icosphere(3)?, &euclid),
        (ellipsoid(1.4, 1.0, 0.8, 3)?, &euclid),
        (torus(2.0, 0.7, 32, 16)?, &euclid),
        (dumbbell(0.3, 2)?, &euclid),
        (geodesic_sphere(&hyp, &Vector3::zeros(), 1.0, 2)?, &hyp),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_ratio = 0.0f64;
    let mut conditions_checked = 0u32;
    for (im, amb) in &states {
        let state = ShapeState::compute(im, amb)?;
        for _ in 0..4 {
            let u = random_field(&mut rng, im);
            let report = hoffman_spruck_check(&state, im, amb, &u)?;
            if report.conditions_ok {
                conditions_checked += 1;
                worst_ratio = worst_ratio.max(report.ratio);
            }
        }
    }
    if conditions_checked == 0 {
        return Err(LabError::Runtime("no corpus state had valid hypotheses".into()));
    }
    checks.push(Check::at_most(
        "hoffman-spruck-worst-ratio",
        worst_ratio,
        1.0 + crate::driver::SOBOLEV_SLACK,
    ));

    let mut min_slack = f64::INFINITY;
    for (im, amb) in &states[..2] {
        let state = ShapeState::compute(im, amb)?;
        let report = covering_check(&state, im, amb, 0.5)?;
        min_slack = min_slack.min(report.slack);
    }
    checks.push(Check::at_least("covering-slack", min_slack, 1.0));

    // Center on the surface so the transition annulus crosses the mesh.
    let im = icosphere(4)?;
    let state = ShapeState::compute(&im, &euclid)?;
    let center = im.vertices()[0];
    let mut worst = 0.0f64;
    let mut weakest = f64::INFINITY;
    for rho in [0.5, 1.0] {
        let cutoff = CutoffFunction::new(&im, &euclid, &center, rho)?;
        let h = state.induced.h_max;
        let budget = 4.0 / rho * (1.0 + 2.0 * h / rho);
        let grad = cutoff_max_gradient(&cutoff, &im, &state.induced);
        worst = worst.max(grad / budget);
        weakest = weakest.min(grad * rho);
    }
    checks.push(Check::at_most("cutoff-gradient-budget", worst, 1.0));
    checks.push(Check::at_least("cutoff-gradient-active", weakest, 1.0));

    // Saturated cutoffs differ only in radius, so the remainder term must
    // scale exactly like rho^-4: ratio 16 between rho 3 and rho 6.
    let tier = derivative_tier(&state);
    let wide = CutoffFunction::new(&im, &euclid, &Vector3::zeros(), 6.0)?;
    let narrow = CutoffFunction::new(&im, &euclid, &Vector3::zeros(), 3.0)?;
    let wide_report = multiplicative_sobolev_check(&state, &tier, &wide, 4.0);
    let narrow_report = multiplicative_sobolev_check(&state, &tier, &narrow, 4.0);
    let ratio = narrow_report.second_term / wide_report.second_term;
    checks.push(Check::at_most("remainder-radius-scaling", (ratio / 16.0 - 1.0).abs(), 1e-9));

    Ok(checks)
}
