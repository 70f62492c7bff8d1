use nalgebra::Vector3;
use willmore::ambient::AmbientSpace;
use willmore::diagnostics::evolution_fd_check;
use willmore::flow::{self, FlowState, StepControl};
use willmore::io::geodesic_sphere;

fn main() {
    let amb = AmbientSpace::hyperbolic(-1.0).unwrap();
    for level in [1u32, 2, 3] {
        let im = geodesic_sphere(&amb, &Vector3::zeros(), 1.0, level).unwrap();
        println!("== level {level}  ({} verts)", im.vertex_count());
        for exp in 0..10 {
            let dt = 4e-2 / 2f64.powi(exp);
            let ctl = StepControl {
                c_cfl: 1e12,
                max_dt: dt,
                max_rejects: 0,
                energy_slack: 1e9,
                min_angle_deg: 0.0,
                ..StepControl::default()
            };
            let s0 = FlowState::new(im.clone(), &amb).unwrap();
            let s1 = match flow::step(&s0, &amb, &ctl) {
                Ok(s) => s,
                Err(e) => {
                    println!("  dt {dt:.3e}: step1 failed: {e}");
                    continue;
                }
            };
            let s2 = match flow::step(&s1, &amb, &ctl) {
                Ok(s) => s,
                Err(e) => {
                    println!("  dt {dt:.3e}: step2 failed: {e}");
                    continue;
                }
            };
            match evolution_fd_check(&[s0, s1, s2], &amb) {
                Ok(rep) => println!(
                    "  dt {dt:.3e}: area {:.4e}  metric {:.4e}  second {:.4e}  normal(abs) {:.4e}",
                    rep.area.rel_l2(),
                    rep.metric.rel_l2(),
                    rep.second_form.rel_l2(),
                    rep.normal.l2
                ),
                Err(e) => println!("  dt {dt:.3e}: check failed: {e}"),
            }
        }
    }
}
