use willmore::ambient::AmbientSpace;
use willmore::flow::{run, FlowState, StepControl};
use willmore::io;

fn main() {
    let amb = AmbientSpace::euclidean();
    for (level, radius) in [(4u32, 4.0f64), (5, 8.0)] {
        let im = io::icosphere(level).unwrap().map_vertices(|p| radius * p);
        let state = FlowState::new(im, &amb).unwrap();
        let e0 = state.energy;
        let ctl = StepControl { c_cfl: 0.0125, ..StepControl::default() };
        let t0 = std::time::Instant::now();
        let (fs, summary) = run(state, &amb, &ctl, 0.01, |_, _| {});
        println!(
            "level {level} radius {radius}: steps={} rejects={} drift={:+.3e} ({:.1}s)",
            summary.steps, summary.rejects, fs.energy - e0, t0.elapsed().as_secs_f64()
        );
    }
}
