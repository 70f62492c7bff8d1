use nalgebra::Vector3;
use willmore::ambient::AmbientSpace;
use willmore::io::{ellipsoid, geodesic_sphere, icosphere};
use willmore::shape::{
    cross_derivatives, gauss_codazzi_residuals, l2_norm, simons_residual, ShapeState,
};

fn main() {
    let amb = AmbientSpace::euclidean();
    println!("== Euclidean icosphere ==");
    for level in 2..=5 {
        let im = icosphere(level).unwrap();
        let st = ShapeState::compute(&im, &amb).unwrap();
        let max_h_err = st
            .h
            .iter()
            .fold(0.0f64, |m, h| m.max((h - 2.0).abs()));
        let l2_w = l2_norm(&st.w, &st.lap.dual_area, st.induced.total_area);
        println!(
            "level {level}: supW {:.4e}  l2W {:.4e}  maxHerr {:.4e}  Eerr {:.4e}  h {:.4}",
            st.sup_w(),
            l2_w,
            max_h_err,
            (st.energy - 4.0 * std::f64::consts::PI).abs() / (4.0 * std::f64::consts::PI),
            st.induced.h_max,
        );
    }

    let hyp = AmbientSpace::hyperbolic(-1.0).unwrap();
    let r = 0.7f64;
    let h_exact = 2.0 / r.tanh();
    let w_exact = -2.0 * h_exact;
    println!("== H3 geodesic sphere r=0.7, H*={h_exact:.6}, W*={w_exact:.6} ==");
    for level in 2..=4 {
        let im = geodesic_sphere(&hyp, &Vector3::zeros(), r, level).unwrap();
        let st = ShapeState::compute(&im, &hyp).unwrap();
        let max_h_err = st
            .h
            .iter()
            .fold(0.0f64, |m, h| m.max((h - h_exact).abs()));
        let max_w_err = st
            .w
            .iter()
            .fold(0.0f64, |m, w| m.max((w - w_exact).abs()));
        let mean_w: f64 = st.w.iter().sum::<f64>() / st.w.len() as f64;
        println!(
            "level {level}: maxHerr {:.4e}  maxWerr {:.4e}  meanW {:.6}",
            max_h_err, max_w_err, mean_w
        );
    }

    println!("== Euclidean ellipsoid (1, 0.8, 0.6) residuals ==");
    for level in 1..=4 {
        let im = ellipsoid(1.0, 0.8, 0.6, level).unwrap();
        let st = ShapeState::compute(&im, &amb).unwrap();
        let cross = cross_derivatives(&st, &im, &amb).unwrap();
        let simons = simons_residual(&st, &cross, &im, &amb).unwrap();
        let gc = gauss_codazzi_residuals(&st, &cross, &im, &amb).unwrap();
        let area = st.induced.total_area;
        println!(
            "level {level}: simons {:.4e}  gauss {:.4e}  codazzi {:.4e}  energy {:.8}",
            l2_norm(&simons, &st.lap.dual_area, area),
            l2_norm(&gc.gauss, &st.lap.dual_area, area),
            l2_norm(&gc.codazzi, &st.lap.dual_area, area),
            st.energy
        );
    }

    println!("== H3 sphere family for flow sign check ==");
    for r in [0.5f64, 1.0, 1.5] {
        let im = geodesic_sphere(&hyp, &Vector3::zeros(), r, 3).unwrap();
        let st = ShapeState::compute(&im, &hyp).unwrap();
        let mean_w: f64 = st.w.iter().sum::<f64>() / st.w.len() as f64;
        println!(
            "r {r}: meanW {:.6}  expected {:.6}  energy {:.6}  (4pi cosh^2 = {:.6})",
            mean_w,
            -4.0 / r.tanh(),
            st.energy,
            4.0 * std::f64::consts::PI * r.cosh().powi(2)
        );
    }
}
