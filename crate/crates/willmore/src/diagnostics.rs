//! Monitored functionals and hypothesis checks for flow runs.
//!
//! Everything here is read-only instrumentation: localized curvature
//! concentration and its covering comparison, the Sobolev inequality with
//! explicit constant together with its multiplicative consequence, central
//! finite-difference checks of the evolution identities, and the power-law
//! fit of measured lifespans. Nothing in this module feeds back into the
//! stepping loop.

use crate::ambient::{AmbientError, AmbientSpace};
use crate::flow::FlowState;
use crate::mesh::{Immersion, InducedMetric};
use crate::shape::{self, DerivativeTier, ShapeError, ShapeState};
use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("test function is negative at vertex {vertex}: {value}")]
    NonNegativityViolated { vertex: usize, value: f64 },
    #[error("evolution window states do not share one mesh connectivity")]
    ConnectivityChanged,
    #[error("evolution window needs two equal forward steps, got {dt1:.6e} and {dt2:.6e}")]
    UnevenWindow { dt1: f64, dt2: f64 },
    #[error("need at least {need} samples, got {have}")]
    InsufficientData { have: usize, need: usize },
    #[error("sample {index} is not positive: radius {rho}, time {time}")]
    NonPositiveSample { index: usize, rho: f64, time: f64 },
    #[error("all samples share one radius; the power-law fit is undetermined")]
    DegenerateSamples,
    #[error(transparent)]
    Ambient(#[from] AmbientError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Radial cutoff profile: identically 1 on `[0, 1/2]`, quintic descent to 0
/// at 1, identically 0 beyond. C^2 across the junctions with
/// `sup |profile'| = 3.75` and `sup |profile''| < 23.1`, so the per-radius
/// gradient budget `4 / rho` quoted by [`CutoffFunction::gradient_bound`]
/// covers the profile with slack.
pub fn cutoff_profile(x: f64) -> f64 {
    if x <= 0.5 {
        1.0
    } else if x >= 1.0 {
        0.0
    } else {
        let s = 2.0 * (x - 0.5);
        (1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)).clamp(0.0, 1.0)
    }
}

/// Derivative of [`cutoff_profile`] in the profile variable.
pub fn cutoff_profile_slope(x: f64) -> f64 {
    if x <= 0.5 || x >= 1.0 {
        0.0
    } else {
        let s = 2.0 * (x - 0.5);
        -2.0 * 30.0 * s * s * (1.0 - s) * (1.0 - s)
    }
}

/// Vertex samples of `gamma = profile(d(f(v), center) / radius)` together
/// with the distances that produced them.
#[derive(Debug, Clone)]
pub struct CutoffFunction {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub values: Vec<f64>,
    pub distances: Vec<f64>,
}

impl CutoffFunction {
    pub fn new(
        im: &Immersion,
        amb: &AmbientSpace,
        center: &Vector3<f64>,
        radius: f64,
    ) -> Result<CutoffFunction, AmbientError> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(AmbientError::InvalidParameter(format!(
                "cutoff radius must be positive, got {radius}"
            )));
        }
        if radius >= amb.inj_radius() {
            return Err(AmbientError::RadiusExceedsInjectivity {
                radius,
                inj: amb.inj_radius(),
            });
        }
        let mut values = Vec::with_capacity(im.vertex_count());
        let mut distances = Vec::with_capacity(im.vertex_count());
        for p in im.vertices() {
            let d = amb.geodesic_distance(center, p)?;
            distances.push(d);
            values.push(cutoff_profile(d / radius));
        }
        Ok(CutoffFunction { center: *center, radius, values, distances })
    }

    /// Lipschitz budget `c_gamma = 4 / radius` for the induced surface
    /// gradient; the profile realizes at most `3.75 / radius`.
    pub fn gradient_bound(&self) -> f64 {
        4.0 / self.radius
    }

    /// Area of the triangles meeting the open support of `gamma`.
    pub fn support_area(&self, im: &Immersion, induced: &InducedMetric) -> f64 {
        support_area(im, induced, &self.values)
    }
}

/// Largest discrete surface gradient of the cutoff over all triangles.
pub fn cutoff_max_gradient(cutoff: &CutoffFunction, im: &Immersion, induced: &InducedMetric) -> f64 {
    triangle_grad_sq(im, induced, &cutoff.values)
        .into_iter()
        .fold(0.0f64, |m, g| m.max(g.sqrt()))
}

/// Largest surface Hessian norm of the cutoff against the pointwise budget
/// `c_gamma (c_gamma + |A|)`.
#[derive(Debug, Clone, Copy)]
pub struct CutoffHessianReport {
    pub max_norm: f64,
    /// Largest ratio of Hessian norm to its local budget.
    pub max_ratio: f64,
}

pub fn cutoff_hessian_report(
    state: &ShapeState,
    im: &Immersion,
    amb: &AmbientSpace,
    cutoff: &CutoffFunction,
) -> Result<CutoffHessianReport, DiagnosticsError> {
    let sd = shape::scalar_derivatives(state, im, amb, &cutoff.values)?;
    let cg = cutoff.gradient_bound();
    let mut max_norm = 0.0f64;
    let mut max_ratio = 0.0f64;
    for v in 0..im.vertex_count() {
        let ginv = inv2(&state.metric[v]);
        let norm = tensor_norm_sq(&ginv, &sd.hess[v]).max(0.0).sqrt();
        let budget = cg * (cg + state.a_sq[v].max(0.0).sqrt());
        max_norm = max_norm.max(norm);
        max_ratio = max_ratio.max(norm / budget);
    }
    Ok(CutoffHessianReport { max_norm, max_ratio })
}

/// Area of the triangles with at least one corner where `field > 0`.
pub fn support_area(im: &Immersion, induced: &InducedMetric, field: &[f64]) -> f64 {
    let mut area = 0.0;
    for (t, tri) in im.triangles().iter().enumerate() {
        if tri.iter().any(|&v| field[v] > 0.0) {
            area += induced.tri_area[t];
        }
    }
    area
}

/// Squared intrinsic gradient of a vertex field on each triangle: with edge
/// differences `du` and Gram matrix `G`, the piecewise-linear interpolant has
/// `|grad u|^2 = du^T G^{-1} du`.
pub fn triangle_grad_sq(im: &Immersion, induced: &InducedMetric, field: &[f64]) -> Vec<f64> {
    im.triangles()
        .iter()
        .enumerate()
        .map(|(t, tri)| {
            let du = Vector2::new(field[tri[1]] - field[tri[0]], field[tri[2]] - field[tri[0]]);
            let g = &induced.tri_metric[t];
            let c = inv2(g) * du;
            du.dot(&c).max(0.0)
        })
        .collect()
}

/// `integral |grad u| dmu` over the piecewise-linear interpolant.
pub fn gradient_integral(im: &Immersion, induced: &InducedMetric, field: &[f64]) -> f64 {
    triangle_grad_sq(im, induced, field)
        .into_iter()
        .zip(&induced.tri_area)
        .map(|(g, a)| g.sqrt() * a)
        .sum()
}

/// Curvature and area mass of one ball, plus the smoothed curvature mass
/// weighted by the fourth power of the cutoff profile.
#[derive(Debug, Clone, Copy)]
pub struct CenterMass {
    pub center: Vector3<f64>,
    pub curvature: f64,
    pub area: f64,
    pub curvature_smooth: f64,
}

/// Concentration scan of `integral_{B_rho} |A|^2 dmu` over candidate
/// centers. `eta` is the largest sharp-indicator curvature mass; the
/// smoothed masses are reported alongside, never used for the maximum.
#[derive(Debug, Clone)]
pub struct ConcentrationReport {
    pub t: f64,
    pub radius: f64,
    pub eta: f64,
    pub best: Vector3<f64>,
    pub area_max: f64,
    pub table: Vec<CenterMass>,
}

fn ball_masses(
    state: &ShapeState,
    im: &Immersion,
    amb: &AmbientSpace,
    center: &Vector3<f64>,
    radius: f64,
    inclusive: bool,
) -> Result<CenterMass, AmbientError> {
    let cap = if inclusive { radius * (1.0 + 1e-12) } else { radius };
    let mut curvature = 0.0;
    let mut area = 0.0;
    let mut smooth = 0.0;
    for (v, p) in im.vertices().iter().enumerate() {
        let d = amb.geodesic_distance(center, p)?;
        let mass = state.a_sq[v] * state.lap.dual_area[v];
        let inside = if inclusive { d <= cap } else { d < cap };
        if inside {
            curvature += mass;
            area += state.lap.dual_area[v];
        }
        let w = cutoff_profile(d / radius);
        smooth += mass * w * w * w * w;
    }
    Ok(CenterMass { center: *center, curvature, area, curvature_smooth: smooth })
}

/// Scan curvature concentration at one radius. `centers` defaults to the
/// vertex images followed by one local grid refinement pass around the best
/// vertex; explicit centers are evaluated verbatim.
pub fn concentration(
    state: &ShapeState,
    im: &Immersion,
    amb: &AmbientSpace,
    radius: f64,
    centers: Option<&[Vector3<f64>]>,
) -> Result<ConcentrationReport, AmbientError> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(AmbientError::InvalidParameter(format!(
            "concentration radius must be positive, got {radius}"
        )));
    }
    let mut table = match centers {
        Some(cs) => cs
            .par_iter()
            .map(|c| ball_masses(state, im, amb, c, radius, false))
            .collect::<Result<Vec<_>, _>>()?,
        None => im
            .vertices()
            .par_iter()
            .map(|c| ball_masses(state, im, amb, c, radius, false))
            .collect::<Result<Vec<_>, _>>()?,
    };
    if centers.is_none() {
        let best = table
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.curvature.total_cmp(&b.1.curvature))
            .map(|(_, e)| e.center)
            .unwrap_or_else(Vector3::zeros);
        let spacing = 0.5 * state.induced.h_min / amb.conformal_factor(&best)?;
        let mut extra = Vec::new();
        for i in -1i32..=1 {
            for j in -1i32..=1 {
                for k in -1i32..=1 {
                    if i == 0 && j == 0 && k == 0 {
                        continue;
                    }
                    let c = best
                        + spacing * Vector3::new(f64::from(i), f64::from(j), f64::from(k));
                    if amb.contains(&c) {
                        extra.push(c);
                    }
                }
            }
        }
        let refined = extra
            .par_iter()
            .map(|c| ball_masses(state, im, amb, c, radius, false))
            .collect::<Result<Vec<_>, _>>()?;
        table.extend(refined);
    }
    let best = table
        .iter()
        .max_by(|a, b| a.curvature.total_cmp(&b.curvature))
        .expect("at least one center");
    let eta = best.curvature;
    let best = best.center;
    let area_max = table.iter().map(|e| e.area).fold(0.0f64, f64::max);
    Ok(ConcentrationReport { t: im.t, radius, eta, best, area_max, table })
}

/// Curvature concentration `eta(rho)` over an ascending radius grid, with
/// vertex images as centers. One distance pass per center serves the whole
/// grid.
pub fn concentration_profile(
    state: &ShapeState,
    im: &Immersion,
    amb: &AmbientSpace,
    radii: &[f64],
) -> Result<Vec<f64>, AmbientError> {
    assert!(
        radii.windows(2).all(|w| w[0] < w[1]) && radii.first().is_none_or(|r| *r > 0.0),
        "radius grid must be positive and ascending"
    );
    let n = radii.len();
    let eta = im
        .vertices()
        .par_iter()
        .map(|center| {
            let mut bins = vec![0.0f64; n];
            for (v, p) in im.vertices().iter().enumerate() {
                let d = amb.geodesic_distance(center, p)?;
                let idx = radii.partition_point(|r| *r <= d);
                if idx < n {
                    bins[idx] += state.a_sq[v] * state.lap.dual_area[v];
                }
            }
            let mut acc = 0.0;
            for b in bins.iter_mut() {
                acc += *b;
                *b = acc;
            }
            Ok(bins)
        })
        .try_reduce(
            || vec![0.0f64; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x = x.max(*y);
                }
                Ok(a)
            },
        )?;
    Ok(eta)
}

/// Largest grid radius whose concentration stays at or below `epsilon0`;
/// 0 when even the smallest radius concentrates more than that.
pub fn rho_of_t(
    state: &ShapeState,
    im: &Immersion,
    amb: &AmbientSpace,
    radii: &[f64],
    epsilon0: f64,
) -> Result<f64, AmbientError> {
    let eta = concentration_profile(state, im, amb, radii)?;
    let mut best = 0.0;
    for (r, e) in radii.iter().zip(&eta) {
        if *e <= epsilon0 {
            best = *r;
        }
    }
    Ok(best)
}

/// Comparison of the full-ball concentration against the half-ball supremum
/// scaled by the ambient covering multiplicity. The bound is a counting
/// argument, so `ok` can only fail through floating-point noise.
#[derive(Debug, Clone)]
pub struct CoveringReport {
    pub radius: f64,
    pub eta: f64,
    pub covering_count: u32,
    pub half_radius_sup: f64,
    pub bound: f64,
    pub slack: f64,
    pub ok: bool,
}

pub fn covering_check(
    state: &ShapeState,
    im: &Immersion,
    amb: &AmbientSpace,
    radius: f64,
) -> Result<CoveringReport, AmbientError> {
    let conc = concentration(state, im, amb, radius, None)?;
    let count = amb.covering_constant(radius)?;
    let mut centers = amb.covering_centers(&conc.best, radius)?;
    centers.extend(im.vertices().iter().copied());
    let half_radius_sup = centers
        .par_iter()
        .map(|c| ball_masses(state, im, amb, c, 0.5 * radius, true).map(|m| m.curvature))
        .try_reduce(|| 0.0f64, |a, b| Ok(a.max(b)))?;
    let bound = f64::from(count) * half_radius_sup;
    let slack = if conc.eta > 0.0 { bound / conc.eta } else { f64::INFINITY };
    let ok = conc.eta <= bound * (1.0 + 1e-12);
    Ok(CoveringReport {
        radius,
        eta: conc.eta,
        covering_count: count,
        half_radius_sup,
        bound,
        slack,
        ok,
    })
}

/// Constant of the curved-ambient Sobolev inequality
/// `(integral u^2)^{1/2} <= (9 sqrt(pi) / 2) integral |grad u| + |u| |H|`.
pub fn sobolev_constant() -> f64 {
    4.5 * std::f64::consts::PI.sqrt()
}

/// One evaluation of the Sobolev inequality on a nonnegative vertex field.
///
/// `conditions_ok` records whether the curvature and injectivity-radius
/// hypotheses hold for the support of `u`: the ambient Ricci supremum must
/// not exceed `8 pi / (9 |support|)`, and the injectivity radius must cover
/// a support-dependent radius. Only under those conditions is `ok` a
/// theorem; the inequality is still evaluated and reported otherwise.
#[derive(Debug, Clone)]
pub struct SobolevReport {
    pub lhs: f64,
    pub gradient_integral: f64,
    pub curvature_integral: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub ok: bool,
    pub conditions_ok: bool,
    pub support_area: f64,
    pub ricci_sup: f64,
    pub constant: f64,
}

pub fn hoffman_spruck_check(
    state: &ShapeState,
    im: &Immersion,
    amb: &AmbientSpace,
    u: &[f64],
) -> Result<SobolevReport, DiagnosticsError> {
    hoffman_spruck_check_with_constant(state, im, amb, u, sobolev_constant())
}

/// Same check with the leading constant replaced; used to probe whether the
/// corpus would detect a smaller constant.
pub fn hoffman_spruck_check_with_constant(
    state: &ShapeState,
    im: &Immersion,
    amb: &AmbientSpace,
    u: &[f64],
    constant: f64,
) -> Result<SobolevReport, DiagnosticsError> {
    assert_eq!(u.len(), im.vertex_count(), "field length must match the mesh");
    for (v, &val) in u.iter().enumerate() {
        if val < 0.0 {
            return Err(DiagnosticsError::NonNegativityViolated { vertex: v, value: val });
        }
    }
    let mut sq = 0.0;
    let mut curv = 0.0;
    for v in 0..u.len() {
        let da = state.lap.dual_area[v];
        sq += u[v] * u[v] * da;
        curv += u[v] * state.h[v].abs() * da;
    }
    let lhs = sq.max(0.0).sqrt();
    let grad = gradient_integral(im, &state.induced, u);
    let rhs = constant * (grad + curv);
    let ratio = if rhs > 0.0 { lhs / rhs } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
    let ok = lhs <= rhs * (1.0 + 1e-12);

    let area_pos = support_area(im, &state.induced, u);
    let ricci_sup = amb.sect_sup();
    let conditions_ok = if area_pos <= 0.0 {
        true
    } else {
        let curv_ok = 9.0 * ricci_sup * area_pos <= 8.0 * std::f64::consts::PI * (1.0 + 1e-12);
        let inj_needed = if ricci_sup > 0.0 {
            let arg = 9.0 * ricci_sup * area_pos / (4.0 * std::f64::consts::PI);
            if arg > 1.0 {
                f64::INFINITY
            } else {
                arg.sqrt().asin() / (2.0 * ricci_sup.sqrt())
            }
        } else {
            0.75 * (area_pos / std::f64::consts::PI).sqrt()
        };
        curv_ok && amb.inj_radius() >= inj_needed
    };
    Ok(SobolevReport {
        lhs,
        gradient_integral: grad,
        curvature_integral: curv,
        rhs,
        ratio,
        ok,
        conditions_ok,
        support_area: area_pos,
        ricci_sup,
        constant,
    })
}

/// Terms of the multiplicative curvature estimate
/// `integral (|grad A|^2 |A|^2 + |A|^6) gamma^s <=
///  c * m * integral (|grad_(2) A|^2 + |A|^6) gamma^s + c c_gamma^4 m^2`
/// with `m = integral_{gamma > 0} |A|^2`. `empirical_c` is the smallest
/// constant making the combined bound an equality.
#[derive(Debug, Clone, Copy)]
pub struct MultiplicativeSobolevReport {
    pub lhs: f64,
    pub first_term: f64,
    pub second_term: f64,
    pub curvature_mass: f64,
    pub empirical_c: f64,
    pub exponent: f64,
}

pub fn multiplicative_sobolev_check(
    state: &ShapeState,
    tier: &DerivativeTier,
    cutoff: &CutoffFunction,
    s: f64,
) -> MultiplicativeSobolevReport {
    assert!(s >= 4.0, "cutoff exponent must be at least 4, got {s}");
    let n = state.vertex_count();
    let mut lhs = 0.0;
    let mut second_order = 0.0;
    let mut mass = 0.0;
    for v in 0..n {
        let da = state.lap.dual_area[v];
        let g = cutoff.values[v];
        let gs = g.powf(s);
        let a2 = state.a_sq[v];
        let a6 = a2 * a2 * a2;
        lhs += (tier.grad_a_sq[v] * a2 + a6) * gs * da;
        second_order += (tier.second_a_sq[v] + a6) * gs * da;
        if g > 0.0 {
            mass += a2 * da;
        }
    }
    let first_term = mass * second_order;
    let second_term = cutoff.gradient_bound().powi(4) * mass * mass;
    let denom = first_term + second_term;
    let empirical_c = if denom > 0.0 {
        lhs / denom
    } else if lhs > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    MultiplicativeSobolevReport {
        lhs,
        first_term,
        second_term,
        curvature_mass: mass,
        empirical_c,
        exponent: s,
    }
}

/// Absolute and reference norms of one evolution-identity residual field.
/// The relative accessors divide by the corresponding right-hand-side norm.
#[derive(Debug, Clone, Copy)]
pub struct ResidualNorms {
    pub l2: f64,
    pub max: f64,
    pub rhs_l2: f64,
    pub rhs_max: f64,
}

impl ResidualNorms {
    pub fn rel_l2(&self) -> f64 {
        self.l2 / self.rhs_l2.max(f64::MIN_POSITIVE)
    }

    pub fn rel_max(&self) -> f64 {
        self.max / self.rhs_max.max(f64::MIN_POSITIVE)
    }
}

/// Central finite-difference residuals of the evolution identities over a
/// three-state window with equal steps: area measure against `H W dmu`,
/// triangle Gram matrices against `2 W A`, unit normal against the negative
/// surface gradient of the speed, and the second fundamental form against
/// its full reaction-diffusion right-hand side.
#[derive(Debug, Clone, Copy)]
pub struct EvolutionReport {
    pub dt: f64,
    pub area: ResidualNorms,
    pub metric: ResidualNorms,
    pub normal: ResidualNorms,
    pub second_form: ResidualNorms,
}

fn tri_a_edge(state: &ShapeState, im: &Immersion, t: usize) -> Matrix2<f64> {
    let tri = im.triangles()[t];
    let vs = im.vertices();
    let u1 = vs[tri[1]] - vs[tri[0]];
    let u2 = vs[tri[2]] - vs[tri[0]];
    let mut m = Matrix2::zeros();
    for &c in &tri {
        m[(0, 0)] += state.a_form(c, &u1, &u1);
        m[(0, 1)] += state.a_form(c, &u1, &u2);
        m[(1, 1)] += state.a_form(c, &u2, &u2);
    }
    m /= 3.0;
    m[(1, 0)] = m[(0, 1)];
    m
}

pub fn evolution_fd_check(
    window: &[FlowState],
    amb: &AmbientSpace,
) -> Result<EvolutionReport, DiagnosticsError> {
    if window.len() != 3 {
        return Err(DiagnosticsError::InsufficientData { have: window.len(), need: 3 });
    }
    let (s0, s1, s2) = (&window[0], &window[1], &window[2]);
    let same_mesh = s0.immersion.vertex_count() == s1.immersion.vertex_count()
        && s1.immersion.vertex_count() == s2.immersion.vertex_count()
        && s0.immersion.triangles() == s1.immersion.triangles()
        && s1.immersion.triangles() == s2.immersion.triangles();
    if !same_mesh {
        return Err(DiagnosticsError::ConnectivityChanged);
    }
    let dt1 = s1.t - s0.t;
    let dt2 = s2.t - s1.t;
    if !(dt1 > 0.0 && dt2 > 0.0) || (dt1 - dt2).abs() > 1e-9 * dt1.max(dt2) {
        return Err(DiagnosticsError::UnevenWindow { dt1, dt2 });
    }
    let dt = 0.5 * (dt1 + dt2);

    let im = &s1.immersion;
    let mid = &s1.shape;
    let nt = im.triangle_count();
    let nv = im.vertex_count();
    let total = mid.induced.total_area;

    let a_edge: Vec<[Matrix2<f64>; 3]> = (0..nt)
        .map(|t| {
            [
                tri_a_edge(&s0.shape, &s0.immersion, t),
                tri_a_edge(mid, im, t),
                tri_a_edge(&s2.shape, &s2.immersion, t),
            ]
        })
        .collect();
    let sd = shape::scalar_derivatives(mid, im, amb, &mid.w)?;

    let mut area = Accum::new();
    let mut metric = Accum::new();
    let mut second = Accum::new();
    for t in 0..nt {
        let tri = im.triangles()[t];
        let weight = mid.induced.tri_area[t] / total;
        let w_bar = tri.iter().map(|&c| mid.w[c]).sum::<f64>() / 3.0;
        let h_bar = tri.iter().map(|&c| mid.h[c]).sum::<f64>() / 3.0;

        let a0 = s0.shape.induced.tri_area[t];
        let a2 = s2.shape.induced.tri_area[t];
        let a1 = mid.induced.tri_area[t];
        let lhs_rate = (a2 - a0) / (2.0 * dt * a1);
        let rhs_rate = h_bar * w_bar;
        area.add_scalar(lhs_rate - rhs_rate, rhs_rate, weight);

        let g1 = mid.induced.tri_metric[t];
        let g1inv = inv2(&g1);
        let fd_g = (s2.shape.induced.tri_metric[t] - s0.shape.induced.tri_metric[t]) / (2.0 * dt);
        let rhs_g = 2.0 * w_bar * a_edge[t][1];
        metric.add_tensor(&g1inv, &(fd_g - rhs_g), &rhs_g, weight);

        let vs = im.vertices();
        let u1 = vs[tri[1]] - vs[tri[0]];
        let u2 = vs[tri[2]] - vs[tri[0]];
        let mut hess = Matrix2::zeros();
        let mut nu_bar = Vector3::zeros();
        for &c in &tri {
            let c1 = mid.graph_components(c, &u1);
            let c2 = mid.graph_components(c, &u2);
            let h = &sd.hess[c];
            hess[(0, 0)] += (c1.transpose() * h * c1)[(0, 0)];
            hess[(0, 1)] += (c1.transpose() * h * c2)[(0, 0)];
            hess[(1, 1)] += (c2.transpose() * h * c2)[(0, 0)];
            nu_bar += mid.nu[c];
        }
        hess /= 3.0;
        hess[(1, 0)] = hess[(0, 1)];
        nu_bar /= 3.0;
        let bary = (vs[tri[0]] + vs[tri[1]] + vs[tri[2]]) / 3.0;
        let riem = amb.riemann(&bary)?;
        // eval's pair convention gives R(nu, X, nu, X) = -kappa |X|^2 on a
        // space form of curvature kappa, the negative of the sectional-sign
        // quadratic in the component evolution; hence the plus sign here.
        let rterm = Matrix2::new(
            riem.eval(&nu_bar, &u1, &nu_bar, &u1),
            riem.eval(&nu_bar, &u1, &nu_bar, &u2),
            riem.eval(&nu_bar, &u2, &nu_bar, &u1),
            riem.eval(&nu_bar, &u2, &nu_bar, &u2),
        );
        let a1m = a_edge[t][1];
        let rhs_a = -hess + w_bar * (a1m * g1inv * a1m) + w_bar * rterm;
        let fd_a = (a_edge[t][2] - a_edge[t][0]) / (2.0 * dt);
        second.add_tensor(&g1inv, &(fd_a - rhs_a), &rhs_a, weight);
    }

    let mut normal = Accum::new();
    for v in 0..nv {
        let p = im.vertices()[v];
        let lambda = amb.conformal_factor(&p)?;
        let f = &mid.frames[v];
        let jet = &mid.jets[v];
        let t0 = (f.e1 + jet.grad[0] * f.nu_axis) / f.lambda;
        let t1 = (f.e2 + jet.grad[1] * f.nu_axis) / f.lambda;
        let comp = inv2(&mid.metric[v]) * sd.grad[v];
        let grad_w = comp[0] * t0 + comp[1] * t1;

        let gamma = amb.christoffel(&p)?;
        let vel = mid.w[v] * mid.nu[v];
        let nu1 = mid.nu[v];
        let transport = Vector3::new(
            vel.dot(&(gamma[0] * nu1)),
            vel.dot(&(gamma[1] * nu1)),
            vel.dot(&(gamma[2] * nu1)),
        );
        let fd = (s2.shape.nu[v] - s0.shape.nu[v]) / (2.0 * dt) + transport;
        let resid = fd + grad_w;
        let weight = mid.lap.dual_area[v] / total;
        normal.add_scalar(lambda * resid.norm(), lambda * grad_w.norm(), weight);
    }

    Ok(EvolutionReport {
        dt,
        area: area.finish(),
        metric: metric.finish(),
        normal: normal.finish(),
        second_form: second.finish(),
    })
}

struct Accum {
    sq: f64,
    max: f64,
    rhs_sq: f64,
    rhs_max: f64,
}

impl Accum {
    fn new() -> Accum {
        Accum { sq: 0.0, max: 0.0, rhs_sq: 0.0, rhs_max: 0.0 }
    }

    fn add_scalar(&mut self, resid: f64, rhs: f64, weight: f64) {
        self.sq += weight * resid * resid;
        self.max = self.max.max(resid.abs());
        self.rhs_sq += weight * rhs * rhs;
        self.rhs_max = self.rhs_max.max(rhs.abs());
    }

    fn add_tensor(&mut self, ginv: &Matrix2<f64>, resid: &Matrix2<f64>, rhs: &Matrix2<f64>, weight: f64) {
        let r = tensor_norm_sq(ginv, resid).max(0.0).sqrt();
        let s = tensor_norm_sq(ginv, rhs).max(0.0).sqrt();
        self.add_scalar(r, s, weight);
    }

    fn finish(self) -> ResidualNorms {
        ResidualNorms {
            l2: self.sq.max(0.0).sqrt(),
            max: self.max,
            rhs_l2: self.rhs_sq.max(0.0).sqrt(),
            rhs_max: self.rhs_max,
        }
    }
}

/// Least-squares power law through lifespan measurements.
#[derive(Debug, Clone, Copy)]
pub struct LifespanFit {
    /// Exponent of the fitted `T = exp(intercept) * rho^slope`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fit `log T` against `log rho` by ordinary least squares over
/// `(rho, T)` samples.
pub fn lifespan_fit(samples: &[(f64, f64)]) -> Result<LifespanFit, DiagnosticsError> {
    if samples.len() < 4 {
        return Err(DiagnosticsError::InsufficientData { have: samples.len(), need: 4 });
    }
    for (i, &(rho, time)) in samples.iter().enumerate() {
        if !(rho > 0.0 && time > 0.0) || !rho.is_finite() || !time.is_finite() {
            return Err(DiagnosticsError::NonPositiveSample { index: i, rho, time });
        }
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    if sxx <= f64::EPSILON * n * xbar.abs().max(1.0) {
        return Err(DiagnosticsError::DegenerateSamples);
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let sst: f64 = ys.iter().map(|y| (y - ybar) * (y - ybar)).sum();
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let fit = intercept + slope * x;
            (y - fit) * (y - fit)
        })
        .sum();
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else if ssr <= 1e-300 { 1.0 } else { 0.0 };
    Ok(LifespanFit { slope, intercept, r_squared })
}

fn inv2(g: &Matrix2<f64>) -> Matrix2<f64> {
    let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
    Matrix2::new(g[(1, 1)], -g[(0, 1)], -g[(1, 0)], g[(0, 0)]) / det
}

fn tensor_norm_sq(ginv: &Matrix2<f64>, m: &Matrix2<f64>) -> f64 {
    (ginv * m * ginv * m).trace()
}
