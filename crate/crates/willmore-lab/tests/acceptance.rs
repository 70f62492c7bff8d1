//! Acceptance gate: one test per criterion, each printing a single verdict
//! line. Tolerances are pinned here and are not configurable; a failing
//! criterion stays red until the underlying behavior is fixed.

use std::sync::OnceLock;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use willmore::ambient::AmbientSpace;
use willmore::diagnostics::{
    covering_check, cutoff_max_gradient, evolution_fd_check, hoffman_spruck_check_with_constant,
    sobolev_constant, CutoffFunction,
};
use willmore::flow::{self, willmore_flux, FlowState, StepControl, Termination};
use willmore::io::{dumbbell, ellipsoid, geodesic_sphere, icosphere, torus};
use willmore::shape::{
    cross_derivatives, gauss_codazzi_residuals, l2_norm, simons_residual, ShapeState,
};
use willmore_lab::verify::forced_window;

// ---------------------------------------------------------------------------
// helpers

fn verdict(criterion: &str, pass: bool, detail: &str) {
    let mark = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {criterion}: {mark} - {detail}");
    assert!(pass, "acceptance {criterion}: {mark} - {detail}");
}

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

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) }
}

// ---------------------------------------------------------------------------
// shared trajectories: the two long runs feed criteria 2, 4, and 6

/// Per accepted step of an energy run: step size, energy decrement, and the
/// squared-speed quadrature before the step.
struct EnergyStep {
    dt: f64,
    delta_e: f64,
    flux_pre: f64,
}

struct SharedRuns {
    /// 200 accepted steps from the level-4 ellipsoid, default step control.
    energy_steps: Vec<EnergyStep>,
    /// Same trajectory with c_cfl halved.
    energy_steps_refined: Vec<EnergyStep>,
    /// Hyperbolic geodesic-sphere run: final state plus the ODE radius.
    ode_final: FlowState,
    ode_exact_radius: f64,
    /// Snapshots collected across both runs for the covering criterion.
    covering_states: Vec<(FlowState, &'static str)>,
}

fn energy_run(c_cfl: f64, snapshots: Option<&mut Vec<(FlowState, &'static str)>>) -> Vec<EnergyStep> {
    let amb = AmbientSpace::euclidean();
    let im = ellipsoid(1.5, 1.0, 1.0, 4).expect("ellipsoid");
    let mut state = FlowState::new(im, &amb).expect("initial state");
    let ctl = StepControl { c_cfl, ..StepControl::default() };
    let mut steps = Vec::with_capacity(200);
    let mut keep = snapshots;
    for k in 0..200 {
        let flux_pre = willmore_flux(&state.shape);
        let energy_pre = state.energy;
        let next = flow::step(&state, &amb, &ctl).expect("energy run step");
        steps.push(EnergyStep {
            dt: next.dt_last,
            delta_e: next.energy - energy_pre,
            flux_pre,
        });
        state = next;
        if let Some(list) = keep.as_deref_mut() {
            if (k + 1) % 40 == 0 {
                list.push((state.clone(), "ellipsoid-energy-run"));
            }
        }
    }
    steps
}

fn shared_runs() -> &'static SharedRuns {
    static RUNS: OnceLock<SharedRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut covering_states = Vec::new();

        let energy_steps = energy_run(0.05, Some(&mut covering_states));
        let energy_steps_refined = energy_run(0.025, None);

        // 10% radius loss: r' = -4 coth r from r = 1 reaches 0.9 by t = 0.0204.
        let amb = AmbientSpace::hyperbolic(-1.0).expect("ambient");
        let horizon = 0.0204;
        let im = geodesic_sphere(&amb, &Vector3::zeros(), 1.0, 4).expect("sphere");
        let state = FlowState::new(im, &amb).expect("initial state");
        let ctl = StepControl { length_scale: 0.25, ..StepControl::default() };
        let mut count = 0u64;
        let (ode_final, summary) = flow::run(state, &amb, &ctl, horizon, |s, _| {
            count += 1;
            if count % 4000 == 0 {
                covering_states.push((s.clone(), "hyperbolic-sphere-run"));
            }
        });
        assert_eq!(
            summary.termination,
            Termination::Horizon,
            "sphere run ended early after {} steps at t = {:.3e}",
            summary.steps,
            summary.final_t
        );
        covering_states.push((ode_final.clone(), "hyperbolic-sphere-run"));

        SharedRuns {
            energy_steps,
            energy_steps_refined,
            ode_final,
            ode_exact_radius: integrate_radius(1.0, horizon),
            covering_states,
        }
    })
}

/// RK4 integration of r' = -4 coth r.
fn integrate_radius(r0: f64, t: f64) -> f64 {
    let f = |r: f64| -4.0 / f64::tanh(r);
    let n = 1 << 14;
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

// ---------------------------------------------------------------------------
// criteria

#[test]
fn criterion_01_spheres_are_discretely_stationary() {
    let amb = AmbientSpace::euclidean();
    let mut speeds = Vec::new();
    let mut energy_l4 = 0.0;
    for level in 3u32..=5 {
        let im = icosphere(level).expect("icosphere");
        let state = ShapeState::compute(&im, &amb).expect("shape");
        speeds.push((state.induced.h_max, state.sup_w()));
        if level == 4 {
            energy_l4 = state.willmore_energy();
        }
    }
    let order = log_log_slope(&speeds);
    let decreasing = speeds.windows(2).all(|w| w[1].1 < w[0].1);
    let defect = (energy_l4 / (4.0 * std::f64::consts::PI) - 1.0).abs();
    verdict(
        "01 stationary-spheres",
        order >= 0.8 && decreasing && defect <= 0.02,
        &format!(
            "max|W| order {order:.3} (need >= 0.8, decreasing: {decreasing}), level-4 energy defect {defect:.3e} (need <= 0.02)"
        ),
    );
}

#[test]
fn criterion_02_energy_decrement_matches_the_flux() {
    // Verbatim dissipation identity dW/dt = -flux, flux = integral of |W|^2.
    // The discrete gradient-flow update dissipates at half that quadrature,
    // so this criterion measures ~0.5 and stays red; the half-flux residual
    // printed alongside is the truncation-limited counterpart.
    let runs = shared_runs();
    let ratios = |steps: &[EnergyStep]| -> (f64, f64) {
        let mut verbatim: Vec<f64> = steps
            .iter()
            .map(|s| (s.delta_e / s.dt + s.flux_pre).abs() / s.flux_pre)
            .collect();
        let mut half: Vec<f64> = steps
            .iter()
            .map(|s| (s.delta_e / s.dt + 0.5 * s.flux_pre).abs() / (0.5 * s.flux_pre))
            .collect();
        (median(&mut verbatim), median(&mut half))
    };
    let (med, med_half) = ratios(&runs.energy_steps);
    let (med_refined, med_half_refined) = ratios(&runs.energy_steps_refined);
    let halves = med_refined <= 0.6 * med;
    verdict(
        "02 energy-dissipation-identity",
        med <= 0.1 && halves,
        &format!(
            "median |dE/dt + flux|/flux = {med:.3} (need <= 0.1), refined {med_refined:.3} (need <= {:.3}); half-flux residual medians {med_half:.3} -> {med_half_refined:.3}",
            0.6 * med
        ),
    );
}

#[test]
fn criterion_03_evolution_identities_converge_in_dt() {
    let amb = AmbientSpace::hyperbolic(-1.0).expect("ambient");
    let im = geodesic_sphere(&amb, &Vector3::zeros(), 1.0, 3).expect("sphere");
    let initial = FlowState::new(im, &amb).expect("initial state");
    let mut area = Vec::new();
    let mut metric = Vec::new();
    for k in 0..4 {
        let dt = 2.5e-3 / f64::powi(2.0, k);
        let window = forced_window(&initial, &amb, dt).expect("window");
        let report = evolution_fd_check(&window, &amb).expect("fd check");
        area.push((dt, report.area.rel_l2()));
        metric.push((dt, report.metric.rel_l2()));
    }
    let area_slope = log_log_slope(&area);
    let metric_slope = log_log_slope(&metric);
    verdict(
        "03 evolution-identities",
        area_slope >= 1.0 && metric_slope >= 1.0,
        &format!("dt-slopes: area {area_slope:.3}, metric {metric_slope:.3} (need >= 1)"),
    );
}

#[test]
fn criterion_04_geodesic_sphere_tracks_the_radial_ode() {
    let runs = shared_runs();
    let amb = AmbientSpace::hyperbolic(-1.0).expect("ambient");
    let center = Vector3::zeros();
    let state = &runs.ode_final;
    let mean_r = state
        .immersion
        .vertices()
        .iter()
        .map(|p| amb.geodesic_distance(&center, p).expect("distance"))
        .sum::<f64>()
        / state.immersion.vertex_count() as f64;
    let rel = (mean_r / runs.ode_exact_radius - 1.0).abs();
    verdict(
        "04 radial-ode-tracking",
        rel <= 0.02,
        &format!(
            "radius {mean_r:.5} vs ODE {:.5} at t = {:.4e}: relative error {rel:.3e} (need <= 0.02)",
            runs.ode_exact_radius, state.t
        ),
    );
}

/// Corpus shared by criterion 5: spheres, ellipsoids, tori, dumbbells, flow
/// snapshots, and hyperbolic geodesic spheres.
fn sobolev_corpus() -> Vec<(willmore::mesh::Immersion, AmbientSpace)> {
    let euclid = AmbientSpace::euclidean();
    let hyp = AmbientSpace::hyperbolic(-1.0).expect("ambient");
    let mut corpus: Vec<(willmore::mesh::Immersion, AmbientSpace)> = Vec::new();
    for level in 2u32..=4 {
        corpus.push((icosphere(level).expect("icosphere"), euclid.clone()));
    }
    let base = icosphere(3).expect("icosphere");
    for scale in [0.5, 2.0] {
        corpus.push((base.map_vertices(|p| scale * p), euclid.clone()));
    }
    corpus.push((ellipsoid(1.5, 1.0, 1.0, 3).expect("ellipsoid"), euclid.clone()));
    corpus.push((ellipsoid(1.3, 1.0, 0.7, 3).expect("ellipsoid"), euclid.clone()));
    corpus.push((ellipsoid(2.0, 1.0, 1.0, 2).expect("ellipsoid"), euclid.clone()));
    corpus.push((ellipsoid(1.2, 0.9, 0.8, 4).expect("ellipsoid"), euclid.clone()));
    corpus.push((torus(2.0, 0.7, 32, 16).expect("torus"), euclid.clone()));
    corpus.push((torus(2.0, 1.0, 24, 12).expect("torus"), euclid.clone()));
    corpus.push((torus(3.0, 0.8, 32, 16).expect("torus"), euclid.clone()));
    for width in [0.4, 0.3, 0.2, 0.15] {
        corpus.push((dumbbell(width, 2).expect("dumbbell"), euclid.clone()));
    }
    corpus.push((geodesic_sphere(&hyp, &Vector3::zeros(), 0.7, 2).expect("sphere"), hyp.clone()));
    corpus.push((geodesic_sphere(&hyp, &Vector3::zeros(), 1.2, 3).expect("sphere"), hyp.clone()));

    // Snapshots along a short flow, so the corpus sees non-generator shapes.
    let im = ellipsoid(1.4, 1.0, 0.9, 2).expect("ellipsoid");
    let mut state = FlowState::new(im, &euclid).expect("initial state");
    let ctl = StepControl::default();
    for k in 1..=40 {
        state = flow::step(&state, &euclid, &ctl).expect("flow step");
        if k % 10 == 0 {
            corpus.push((state.immersion.clone(), euclid.clone()));
        }
    }
    corpus
}

#[test]
fn criterion_05_sobolev_inequality_and_constant_sensitivity() {
    // Clause 1: with slack 0.05, the inequality never fails when conditions
    // hold. Clause 2: corrupting the constant to half must produce at least
    // one failure. The corpus saturates the bound at roughly a third, so
    // clause 2 measures that gap and stays red.
    const TAU_S: f64 = 0.05;
    let corpus = sobolev_corpus();
    assert!(corpus.len() >= 20, "corpus has only {} states", corpus.len());

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut checks = 0u32;
    let mut violations = 0u32;
    let mut corrupted_failures = 0u32;
    let mut sup_ratio = 0.0f64;
    for (im, amb) in &corpus {
        let state = ShapeState::compute(im, amb).expect("shape");
        for _ in 0..10 {
            let k = Vector3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let floor: f64 = rng.gen_range(0.0..0.5);
            let u: Vec<f64> = im
                .vertices()
                .iter()
                .map(|p| {
                    let s = (k.dot(p) + phase).sin();
                    s * s + floor
                })
                .collect();

            let report =
                hoffman_spruck_check_with_constant(&state, im, amb, &u, sobolev_constant())
                    .expect("sobolev check");
            if !report.conditions_ok {
                continue;
            }
            checks += 1;
            sup_ratio = sup_ratio.max(report.ratio);
            if report.lhs > report.rhs * (1.0 + TAU_S) {
                violations += 1;
            }
            let corrupted =
                hoffman_spruck_check_with_constant(&state, im, amb, &u, sobolev_constant() / 2.0)
                    .expect("sobolev check");
            if corrupted.lhs > corrupted.rhs * (1.0 + TAU_S) {
                corrupted_failures += 1;
            }
        }
    }
    verdict(
        "05 sobolev-constant",
        checks >= 200 && violations == 0 && corrupted_failures >= 1,
        &format!(
            "{checks} checks, {violations} violations (need 0), halved-constant failures {corrupted_failures} (need >= 1); sup ratio {sup_ratio:.3}, detection needs > {:.3}",
            (1.0 + TAU_S) / 2.0
        ),
    );
}

#[test]
fn criterion_06_covering_bound_along_trajectories() {
    let runs = shared_runs();
    let mut states: Vec<(&FlowState, &str)> =
        runs.covering_states.iter().map(|(s, tag)| (s, *tag)).collect();
    let amb_e = AmbientSpace::euclidean();
    let amb_h = AmbientSpace::hyperbolic(-1.0).expect("ambient");
    let dumbbells: Vec<FlowState> = [0.4, 0.3, 0.2, 0.15]
        .iter()
        .map(|&w| {
            FlowState::new(dumbbell(w, 3).expect("dumbbell"), &amb_e).expect("initial state")
        })
        .collect();
    for s in &dumbbells {
        states.push((s, "dumbbell-campaign-initial"));
    }

    let mut checked = 0u32;
    let mut failures = 0u32;
    let mut min_slack = f64::INFINITY;
    for (state, tag) in states {
        let amb = if tag == "hyperbolic-sphere-run" { &amb_h } else { &amb_e };
        let report =
            covering_check(&state.shape, &state.immersion, amb, 0.5).expect("covering check");
        checked += 1;
        min_slack = min_slack.min(report.slack);
        if !report.ok {
            failures += 1;
        }
    }
    verdict(
        "06 covering-bound",
        checked >= 15 && failures == 0,
        &format!("{checked} snapshots, {failures} violations (need 0), min slack {min_slack:.2}"),
    );
}

#[test]
fn criterion_07_curvature_identities_converge_under_refinement() {
    let amb = AmbientSpace::euclidean();
    let mut gauss = Vec::new();
    let mut codazzi = Vec::new();
    let mut simons = Vec::new();
    for level in 1u32..=3 {
        let im = ellipsoid(1.3, 1.0, 0.7, level).expect("ellipsoid");
        let state = ShapeState::compute(&im, &amb).expect("shape");
        let cross = cross_derivatives(&state, &im, &amb).expect("derivatives");
        let res = gauss_codazzi_residuals(&state, &cross, &im, &amb).expect("residuals");
        let sim = simons_residual(&state, &cross, &im, &amb).expect("residuals");
        let h = state.induced.h_max;
        let total = state.induced.total_area;
        gauss.push((h, l2_norm(&res.gauss, &state.lap.dual_area, total)));
        codazzi.push((h, l2_norm(&res.codazzi, &state.lap.dual_area, total)));
        simons.push((h, l2_norm(&sim, &state.lap.dual_area, total)));
    }
    let monotone = [&gauss, &codazzi, &simons]
        .iter()
        .all(|series| series.windows(2).all(|w| w[1].1 < w[0].1));
    let orders =
        [log_log_slope(&gauss), log_log_slope(&codazzi), log_log_slope(&simons)];
    let min_order = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    verdict(
        "07 curvature-identities",
        monotone && min_order >= 0.5,
        &format!(
            "monotone: {monotone}; orders gauss {:.2}, codazzi {:.2}, simons {:.2} (need >= 0.5)",
            orders[0], orders[1], orders[2]
        ),
    );
}

#[test]
fn criterion_09_cutoff_gradients_respect_the_discrete_budget() {
    let amb = AmbientSpace::euclidean();
    let im = icosphere(4).expect("icosphere");
    let state = ShapeState::compute(&im, &amb).expect("shape");
    let h = state.induced.h_max;
    let mut checked = 0u32;
    let mut violations = 0u32;
    let mut worst = 0.0f64;
    for rho in [0.5, 1.0] {
        let budget = 4.0 / rho * (1.0 + 2.0 * h / rho);
        for center in im.vertices().iter().step_by(50) {
            let cutoff = CutoffFunction::new(&im, &amb, center, rho).expect("cutoff");
            let grad = cutoff_max_gradient(&cutoff, &im, &state.induced);
            checked += 1;
            worst = worst.max(grad / budget);
            if grad > budget {
                violations += 1;
            }
        }
    }
    verdict(
        "09 cutoff-gradient-budget",
        violations == 0 && checked >= 100,
        &format!("{checked} cutoffs, {violations} violations (need 0), worst fill {worst:.3}"),
    );
}

#[test]
fn criterion_10_determinism_and_equivariance() {
    // Bitwise repeatability through the binary, equivariance through the
    // library: rotating the initial mesh must rotate the whole trajectory.
    let dir = tempfile::tempdir().expect("tempdir");
    let mut logs = Vec::new();
    for name in ["a", "b"] {
        let outdir = dir.path().join(name);
        let cfg_path = dir.path().join(format!("{name}.cfg"));
        std::fs::write(
            &cfg_path,
            format!(
                "[ambient]\nkind = euclidean\n\n[mesh]\ngenerator = icosphere\nlevel = 2\n\n\
                 [flow]\nhorizon = 2.5e-3\nsnapshot_every = 3\n\n[output]\ndir = {}\n",
                outdir.display()
            ),
        )
        .expect("write config");
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_willmore-lab"))
            .args(["run", "--config", cfg_path.to_str().expect("utf8 path")])
            .output()
            .expect("run binary");
        assert_eq!(
            out.status.code(),
            Some(0),
            "run failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        logs.push(std::fs::read(outdir.join("diagnostics.csv")).expect("read log"));
    }
    let bitwise = logs[0] == logs[1];

    let amb = AmbientSpace::euclidean();
    let rot = Rotation3::from_axis_angle(
        &Unit::new_normalize(Vector3::new(1.0, 2.0, 3.0)),
        0.7,
    );
    let base = icosphere(2).expect("icosphere");
    let rotated = base.map_vertices(|p| rot * p);
    let ctl = StepControl::default();
    let mut state_a = FlowState::new(base, &amb).expect("initial state");
    let mut state_b = FlowState::new(rotated, &amb).expect("initial state");
    for _ in 0..10 {
        state_a = flow::step(&state_a, &amb, &ctl).expect("step");
        state_b = flow::step(&state_b, &amb, &ctl).expect("step");
    }
    let drift = state_a
        .immersion
        .vertices()
        .iter()
        .zip(state_b.immersion.vertices())
        .map(|(p, q)| (rot * p - q).norm())
        .fold(0.0f64, f64::max);

    verdict(
        "10 determinism-equivariance",
        bitwise && drift <= 1e-8,
        &format!("bitwise diagnostics: {bitwise}; rotation drift after 10 steps {drift:.3e} (need <= 1e-8)"),
    );
}
