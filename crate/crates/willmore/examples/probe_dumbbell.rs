//! Scratch probe: dumbbell geometry statistics, concentration profiles, and
//! short-flow behavior across neck widths. Not part of the crate surface.

use std::io::Write;

use willmore::ambient::AmbientSpace;
use willmore::diagnostics::{concentration_profile, rho_of_t};
use willmore::flow::{self, FlowState, StepControl};
use willmore::io::dumbbell;
use willmore::mesh::quality_report;
use willmore::shape::ShapeState;

fn main() {
    let amb = AmbientSpace::euclidean();
    let radii: Vec<f64> = (1..=20).map(|i| 0.05 * i as f64).collect();
    let out = std::io::stdout();

    for &w in &[0.4, 0.3, 0.2, 0.15] {
        let im = dumbbell(w, 3).unwrap();
        let state = ShapeState::compute(&im, &amb).unwrap();
        let total: f64 = state
            .a_sq
            .iter()
            .zip(&state.lap.dual_area)
            .map(|(a, da)| a * da)
            .sum();
        let q = quality_report(&state.induced);
        println!(
            "w={w}: verts={} h_min={:.4e} h_max={:.4e} max|A|={:.3} energy={:.4} total_a2={:.4} min_angle={:.2}",
            im.vertex_count(),
            state.induced.h_min,
            state.induced.h_max,
            state.max_abs_a,
            state.energy,
            total,
            q.min_angle_deg
        );
        let eta = concentration_profile(&state, &im, &amb, &radii).unwrap();
        let line: Vec<String> = radii
            .iter()
            .zip(&eta)
            .map(|(r, e)| format!("{r:.2}:{e:.3}"))
            .collect();
        println!("  eta profile: {}", line.join(" "));
        for eps in [2.0, 4.0, 8.0, 16.0, 24.0] {
            let rho = rho_of_t(&state, &im, &amb, &radii, eps).unwrap();
            print!("  rho0(eps={eps})={rho:.2}");
        }
        println!();

        for l in [1.0, 0.25, 0.1] {
            let ctl = StepControl { length_scale: l, ..StepControl::default() };
            let dt = flow::propose_dt(&FlowState::new(im.clone(), &amb).unwrap(), &ctl);
            print!("  l={l}: dt_cfl={dt:.3e}");
        }
        println!();
        out.lock().flush().unwrap();
    }

    // Short flows: fixed step budget instead of a horizon, to see dt growth,
    // rejection behavior, and curvature trend per width.
    for &w in &[0.4, 0.15] {
        let im = dumbbell(w, 3).unwrap();
        let mut state = FlowState::new(im, &amb).unwrap();
        let ctl = StepControl { length_scale: 0.25, ..StepControl::default() };
        let t0 = std::time::Instant::now();
        let mut rejects = 0u64;
        let mut failed = String::new();
        for k in 0..2000u32 {
            match flow::step_limited(&state, &amb, &ctl, f64::INFINITY) {
                Ok((next, r)) => {
                    rejects += r as u64;
                    state = next;
                }
                Err(e) => {
                    failed = format!(" FAILED at step {k}: {e}");
                    break;
                }
            }
            if k % 500 == 0 {
                let q = quality_report(&state.shape.induced);
                println!(
                    "  w={w} step {k}: t={:.3e} dt={:.3e} maxA={:.3} energy={:.4} min_angle={:.2}",
                    state.t, state.dt_last, state.shape.max_abs_a, state.energy, q.min_angle_deg
                );
                out.lock().flush().unwrap();
            }
        }
        println!(
            "flow w={w}: t={:.3e} dt_last={:.3e} maxA={:.3} energy={:.4} rejects={rejects} wall={:.1?}{failed}",
            state.t,
            state.dt_last,
            state.shape.max_abs_a,
            state.energy,
            t0.elapsed()
        );
        out.lock().flush().unwrap();
    }
}
