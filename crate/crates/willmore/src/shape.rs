//! Pointwise extrinsic geometry: second fundamental form, mean curvature,
//! the Willmore operator, and the curvature identities used as checks.
//!
//! Everything is built on one primitive. At each vertex the two-ring is
//! mapped into geodesic normal coordinates and a weighted least-squares
//! polynomial graph is fitted over the tangent plane (degree 4, falling back
//! to 3 and then 2 when the stencil cannot support it). Because the ambient
//! Christoffel symbols vanish at the origin of normal coordinates, the flat
//! graph formulas for `g`, `A` and their derivatives are exact at the fit
//! center, so curvature and its first two covariant derivatives all come
//! from one jet per vertex and no tensor transport between vertices is
//! needed. Transporting fitted tensors would cost an order of accuracy in
//! second derivatives; differentiating the jet does not.
//!
//! Sign convention: normals are exterior and the round unit sphere has
//! `H = +2`, so `A(u, u) > 0` for a convex surface seen from outside.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::ambient::{AmbientError, AmbientSpace};
use crate::mesh::{
    angle_defect_curvature, vertex_normals, Immersion, InducedMetric, Laplacian, MeshError,
};

/// Condition cap for the (column-normalized) jet design matrix. A fit whose
/// condition number exceeds this falls back to the next lower degree.
pub const FIT_CONDITION_CAP: f64 = 1e8;

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error(
        "jet fit at vertex {vertex} is rank deficient \
         ({rows} usable rows, best condition {condition:.2e})"
    )]
    RankDeficientFit {
        vertex: usize,
        rows: usize,
        condition: f64,
    },
    #[error("non-finite geometry at vertex {vertex}")]
    NonFinite { vertex: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Ambient(#[from] AmbientError),
}

/// Orthonormal frame of the normal-coordinate space at a vertex. `e1`, `e2`
/// span the fitted tangent plane, `nu_axis = e1 x e2` is the height axis of
/// the graph. A chart vector `u` at the vertex has normal coordinates
/// `lambda * u`.
#[derive(Debug, Clone)]
pub struct VertexFrame {
    pub lambda: f64,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub nu_axis: Vector3<f64>,
}

/// Height-function jet at the origin of a vertex frame: derivatives of the
/// graph `zeta = w(xi)`, not monomial coefficients. `third[k]` and
/// `fourth[k]` hold the derivative with `k` indices equal to the second
/// coordinate; entries beyond `degree` are zero.
#[derive(Debug, Clone)]
pub struct SurfaceJet {
    pub grad: Vector2<f64>,
    pub hess: Matrix2<f64>,
    pub third: [f64; 4],
    pub fourth: [f64; 5],
    pub degree: u8,
}

impl SurfaceJet {
    fn w3(&self, a: usize, b: usize, c: usize) -> f64 {
        self.third[a + b + c]
    }

    fn w4(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.fourth[a + b + c + d]
    }
}

/// Curvature of an immersion at every vertex, plus the mesh operators the
/// flow needs alongside it. Tensor components (`metric`, `a`, `a0`) are in
/// the graph basis of the vertex frame; scalars and `nu` are basis-free.
#[derive(Debug, Clone)]
pub struct ShapeState {
    pub frames: Vec<VertexFrame>,
    pub jets: Vec<SurfaceJet>,
    /// Induced metric at the vertex in the graph basis, `I + dw dw^T`.
    pub metric: Vec<Matrix2<f64>>,
    /// Second fundamental form in the graph basis.
    pub a: Vec<Matrix2<f64>>,
    /// Trace-free part `A - (H/2) g`.
    pub a0: Vec<Matrix2<f64>>,
    pub h: Vec<f64>,
    pub a_sq: Vec<f64>,
    pub a0_sq: Vec<f64>,
    /// Exterior unit normal (chart components, unit ambient length).
    pub nu: Vec<Vector3<f64>>,
    /// Ambient Ricci curvature evaluated on `nu` twice.
    pub ricci_nu: Vec<f64>,
    /// Cotan Laplacian applied to the mean curvature field.
    pub laplace_h: Vec<f64>,
    /// Willmore operator `laplace_h + h a0_sq + h ricci_nu`.
    pub w: Vec<f64>,
    pub energy: f64,
    pub max_abs_a: f64,
    pub induced: InducedMetric,
    pub lap: Laplacian,
}

struct VertexFit {
    frame: VertexFrame,
    jet: SurfaceJet,
}

fn pick_tangent_frame(nu_axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let mut k = 0;
    for i in 1..3 {
        if nu_axis[i].abs() < nu_axis[k].abs() {
            k = i;
        }
    }
    let mut e1 = Vector3::zeros();
    e1[k] = 1.0;
    e1 -= nu_axis * nu_axis[k];
    let e1 = e1.normalize();
    let e2 = nu_axis.cross(&e1);
    (e1, e2)
}

/// Design row for the scaled graph model, without the constant term: the
/// vertex itself lies on the surface, so the fit interpolates the origin.
/// Lower-degree models use a prefix of these columns.
fn design_row(x: f64, y: f64) -> [f64; 14] {
    [
        x,
        y,
        0.5 * x * x,
        x * y,
        0.5 * y * y,
        x * x * x / 6.0,
        0.5 * x * x * y,
        0.5 * x * y * y,
        y * y * y / 6.0,
        x * x * x * x / 24.0,
        x * x * x * y / 6.0,
        0.25 * x * x * y * y,
        x * y * y * y / 6.0,
        y * y * y * y / 24.0,
    ]
}

fn columns_for(degree: usize) -> usize {
    match degree {
        2 => 5,
        3 => 9,
        _ => 14,
    }
}

/// Maximum number of fit columns (the quartic model).
const MAX_COLS: usize = 14;

/// Cholesky factorization of a diagonally rescaled normal matrix. The fits
/// run once per vertex per flow step, so this stays on the stack. The pivot
/// ratio of the rescaled factor estimates the design's condition number
/// (normal-matrix eigenvalues are squared singular values).
struct SmallCholesky {
    l: [[f64; MAX_COLS]; MAX_COLS],
    scale: [f64; MAX_COLS],
    n: usize,
    cond: f64,
}

impl SmallCholesky {
    fn new(m: &[[f64; MAX_COLS]; MAX_COLS], n: usize) -> Option<SmallCholesky> {
        let mut scale = [0.0f64; MAX_COLS];
        for j in 0..n {
            let d = m[j][j];
            if !(d.is_finite() && d > 0.0) {
                return None;
            }
            scale[j] = d.sqrt();
        }
        let mut l = [[0.0f64; MAX_COLS]; MAX_COLS];
        let mut piv_min = f64::INFINITY;
        let mut piv_max = 0.0f64;
        for i in 0..n {
            for j in 0..=i {
                let mut sum = m[i][j] / (scale[i] * scale[j]);
                for k in 0..j {
                    sum -= l[i][k] * l[j][k];
                }
                if i == j {
                    if !(sum.is_finite() && sum > 0.0) {
                        return None;
                    }
                    l[i][i] = sum.sqrt();
                    piv_min = piv_min.min(l[i][i]);
                    piv_max = piv_max.max(l[i][i]);
                } else {
                    l[i][j] = sum / l[j][j];
                }
            }
        }
        Some(SmallCholesky {
            l,
            scale,
            n,
            cond: piv_max / piv_min,
        })
    }

    fn solve(&self, b: &[f64; MAX_COLS]) -> [f64; MAX_COLS] {
        let n = self.n;
        let mut y = [0.0f64; MAX_COLS];
        for i in 0..n {
            let mut sum = b[i] / self.scale[i];
            for k in 0..i {
                sum -= self.l[i][k] * y[k];
            }
            y[i] = sum / self.l[i][i];
        }
        let mut x = [0.0f64; MAX_COLS];
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in i + 1..n {
                sum -= self.l[k][i] * x[k];
            }
            x[i] = sum / self.l[i][i];
        }
        for i in 0..n {
            x[i] /= self.scale[i];
        }
        x
    }
}

/// Accumulated normal equations of the weighted fit. Lower-degree models
/// use a column prefix of the quartic design, so their normal matrices are
/// leading blocks of this one and one accumulation serves every fallback.
struct NormalEquations {
    m: [[f64; MAX_COLS]; MAX_COLS],
    b: [[f64; MAX_COLS]; 4],
    rows: usize,
}

impl NormalEquations {
    fn new() -> NormalEquations {
        NormalEquations {
            m: [[0.0; MAX_COLS]; MAX_COLS],
            b: [[0.0; MAX_COLS]; 4],
            rows: 0,
        }
    }

    fn add_row(&mut self, row: &[f64; MAX_COLS], rhs: &[f64], weight: f64) {
        for i in 0..MAX_COLS {
            let wi = weight * row[i];
            for j in 0..=i {
                self.m[i][j] += wi * row[j];
            }
            for (f, &r) in rhs.iter().enumerate() {
                self.b[f][i] += wi * r;
            }
        }
        self.rows += 1;
    }

    fn symmetrized(&self) -> [[f64; MAX_COLS]; MAX_COLS] {
        let mut m = self.m;
        for i in 0..MAX_COLS {
            for j in i + 1..MAX_COLS {
                m[i][j] = m[j][i];
            }
        }
        m
    }
}

fn fit_vertex(
    im: &Immersion,
    amb: &AmbientSpace,
    normals: &[Vector3<f64>],
    v: usize,
) -> Result<VertexFit, ShapeError> {
    let p = im.vertices()[v];
    let lambda = amb.conformal_factor(&p)?;
    let gamma = amb.christoffel(&p)?;
    let nu_axis = (normals[v] * lambda).normalize();
    let (e1, e2) = pick_tangent_frame(&nu_axis);

    let ring = im.two_ring(v);
    let mut coords = Vec::with_capacity(ring.len());
    for &q in &ring {
        let delta = im.vertices()[q] - p;
        let corr = Vector3::new(
            delta.dot(&(gamma[0] * delta)),
            delta.dot(&(gamma[1] * delta)),
            delta.dot(&(gamma[2] * delta)),
        );
        let y = lambda * (delta + 0.5 * corr);
        let r = y.norm();
        if !(r.is_finite() && r > 0.0) {
            return Err(ShapeError::NonFinite { vertex: v });
        }
        coords.push((y.dot(&e1), y.dot(&e2), y.dot(&nu_axis), r));
    }
    let scale = coords.iter().map(|c| c.3).sum::<f64>() / coords.len() as f64;

    let mut normal = NormalEquations::new();
    for &(xi1, xi2, zeta, r) in &coords {
        let row = design_row(xi1 / scale, xi2 / scale);
        normal.add_row(&row, &[zeta / scale], scale / r);
    }
    let m = normal.symmetrized();

    let mut best_cond = f64::INFINITY;
    for degree in [4usize, 3, 2] {
        let cols = columns_for(degree);
        if normal.rows < cols {
            continue;
        }
        if let Some(chol) = SmallCholesky::new(&m, cols) {
            best_cond = best_cond.min(chol.cond);
            if chol.cond > FIT_CONDITION_CAP {
                continue;
            }
            let beta = chol.solve(&normal.b[0]);
            let jet = unscale_jet(&beta, scale, degree);
            if !jet_is_finite(&jet) {
                return Err(ShapeError::NonFinite { vertex: v });
            }
            return Ok(VertexFit {
                frame: VertexFrame {
                    lambda,
                    e1,
                    e2,
                    nu_axis,
                },
                jet,
            });
        }
    }
    Err(ShapeError::RankDeficientFit {
        vertex: v,
        rows: normal.rows,
        condition: best_cond,
    })
}

fn unscale_jet(beta: &[f64; MAX_COLS], s: f64, degree: usize) -> SurfaceJet {
    let mut jet = SurfaceJet {
        grad: Vector2::new(beta[0], beta[1]),
        hess: Matrix2::new(beta[2], beta[3], beta[3], beta[4]) / s,
        third: [0.0; 4],
        fourth: [0.0; 5],
        degree: degree as u8,
    };
    if degree >= 3 {
        let s2 = s * s;
        for k in 0..4 {
            jet.third[k] = beta[5 + k] / s2;
        }
    }
    if degree >= 4 {
        let s3 = s * s * s;
        for k in 0..5 {
            jet.fourth[k] = beta[9 + k] / s3;
        }
    }
    jet
}

fn jet_is_finite(jet: &SurfaceJet) -> bool {
    jet.grad.iter().all(|x| x.is_finite())
        && jet.hess.iter().all(|x| x.is_finite())
        && jet.third.iter().all(|x| x.is_finite())
        && jet.fourth.iter().all(|x| x.is_finite())
}

/// Exact inverse of `I + u u^T`.
fn rank_one_inverse(u: &Vector2<f64>) -> Matrix2<f64> {
    Matrix2::identity() - u * u.transpose() / (1.0 + u.norm_squared())
}

struct CoreGeometry {
    g: Matrix2<f64>,
    ginv: Matrix2<f64>,
    a: Matrix2<f64>,
    h: f64,
    a_sq: f64,
    a0: Matrix2<f64>,
    a0_sq: f64,
}

fn core_geometry(jet: &SurfaceJet) -> CoreGeometry {
    let grad = jet.grad;
    let den = (1.0 + grad.norm_squared()).sqrt();
    let g = Matrix2::identity() + grad * grad.transpose();
    let ginv = rank_one_inverse(&grad);
    let a = -jet.hess / den;
    let h = (ginv * a).trace();
    let a0 = a - 0.5 * h * g;
    let a_sq = (ginv * a * ginv * a).trace();
    let a0_sq = (ginv * a0 * ginv * a0).trace();
    CoreGeometry {
        g,
        ginv,
        a,
        h,
        a_sq,
        a0,
        a0_sq,
    }
}

impl ShapeState {
    pub fn compute(im: &Immersion, amb: &AmbientSpace) -> Result<ShapeState, ShapeError> {
        let induced = InducedMetric::compute(im, amb)?;
        let lap = Laplacian::build(im, &induced);
        let normals = vertex_normals(im, amb)?;
        let n = im.vertex_count();

        let fits: Vec<Result<VertexFit, ShapeError>> = (0..n)
            .into_par_iter()
            .map(|v| fit_vertex(im, amb, &normals, v))
            .collect();

        let mut frames = Vec::with_capacity(n);
        let mut jets = Vec::with_capacity(n);
        let mut metric = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut a0 = Vec::with_capacity(n);
        let mut h = Vec::with_capacity(n);
        let mut a_sq = Vec::with_capacity(n);
        let mut a0_sq = Vec::with_capacity(n);
        let mut nu = Vec::with_capacity(n);
        let mut max_abs_a = 0.0f64;
        for (v, fit) in fits.into_iter().enumerate() {
            let fit = fit?;
            let core = core_geometry(&fit.jet);
            if !(core.h.is_finite() && core.a_sq.is_finite()) {
                return Err(ShapeError::NonFinite { vertex: v });
            }
            let den = (1.0 + fit.jet.grad.norm_squared()).sqrt();
            let n_y = (-fit.jet.grad[0] * fit.frame.e1 - fit.jet.grad[1] * fit.frame.e2
                + fit.frame.nu_axis)
                / den;
            let nu_chart = n_y / (fit.frame.lambda * n_y.norm());
            max_abs_a = max_abs_a.max(core.a_sq.max(0.0).sqrt());
            frames.push(fit.frame);
            jets.push(fit.jet);
            metric.push(core.g);
            a.push(core.a);
            a0.push(core.a0);
            h.push(core.h);
            a_sq.push(core.a_sq);
            a0_sq.push(core.a0_sq);
            nu.push(nu_chart);
        }

        let mut ricci_nu = Vec::with_capacity(n);
        for v in 0..n {
            ricci_nu.push(amb.ricci_quadratic(&im.vertices()[v], &nu[v])?);
        }
        let laplace_h = lap.apply(&h);
        let mut w = Vec::with_capacity(n);
        for v in 0..n {
            let val = laplace_h[v] + h[v] * a0_sq[v] + h[v] * ricci_nu[v];
            if !val.is_finite() {
                return Err(ShapeError::NonFinite { vertex: v });
            }
            w.push(val);
        }

        let mut energy = 0.0;
        for v in 0..n {
            energy += 0.25 * h[v] * h[v] * lap.dual_area[v];
        }

        Ok(ShapeState {
            frames,
            jets,
            metric,
            a,
            a0,
            h,
            a_sq,
            a0_sq,
            nu,
            ricci_nu,
            laplace_h,
            w,
            energy,
            max_abs_a,
            induced,
            lap,
        })
    }

    pub fn willmore_energy(&self) -> f64 {
        self.energy
    }

    pub fn vertex_count(&self) -> usize {
        self.h.len()
    }

    pub fn sup_w(&self) -> f64 {
        self.w.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Graph-basis components of the tangential part of a chart vector at
    /// vertex `v` (the normal component drops out).
    pub fn graph_components(&self, v: usize, u: &Vector3<f64>) -> Vector2<f64> {
        let f = &self.frames[v];
        let jet = &self.jets[v];
        let den = (1.0 + jet.grad.norm_squared()).sqrt();
        // Basis columns in (e1, e2, nu_axis) coordinates.
        let basis = Matrix3::new(
            1.0,
            0.0,
            -jet.grad[0] / den,
            0.0,
            1.0,
            -jet.grad[1] / den,
            jet.grad[0],
            jet.grad[1],
            1.0 / den,
        );
        let y = f.lambda * u;
        let in_frame = Vector3::new(y.dot(&f.e1), y.dot(&f.e2), y.dot(&f.nu_axis));
        let c = basis.lu().solve(&in_frame).unwrap_or_else(Vector3::zeros);
        Vector2::new(c[0], c[1])
    }

    /// Evaluate the second fundamental form on two chart vectors at vertex
    /// `v` by decomposing them in the graph basis.
    pub fn a_form(&self, v: usize, u1: &Vector3<f64>, u2: &Vector3<f64>) -> f64 {
        let c1 = self.graph_components(v, u1);
        let c2 = self.graph_components(v, u2);
        (c1.transpose() * self.a[v] * c2)[(0, 0)]
    }
}

/// First and second covariant derivatives of `A` and the covariant Hessian
/// of `H`, all differentiated from the per-vertex jets. Entries at vertices
/// whose fit fell back below degree 4 are marked `low_order`: their second
/// derivatives are not consistent.
pub struct DerivativeTier {
    pub grad_a: Vec<[Matrix2<f64>; 2]>,
    pub grad_a_sq: Vec<f64>,
    pub second_a: Vec<[[Matrix2<f64>; 2]; 2]>,
    pub second_a_sq: Vec<f64>,
    pub delta_a: Vec<Matrix2<f64>>,
    pub grad_h: Vec<Vector2<f64>>,
    pub hess_h: Vec<Matrix2<f64>>,
    pub low_order: Vec<bool>,
}

struct JetDerivs {
    grad_a: [Matrix2<f64>; 2],
    second_a: [[Matrix2<f64>; 2]; 2],
    delta_a: Matrix2<f64>,
    grad_h: Vector2<f64>,
    hess_h: Matrix2<f64>,
    grad_a_sq: f64,
    second_a_sq: f64,
}

/// Christoffel symbols of the graph metric at the jet origin,
/// `Gamma^k_ab = g^{kl} w_l w_ab`, and their first derivatives. The symbols
/// themselves are O(|dw|) small at the fit center but their derivatives are
/// O(|A|^2) and enter second covariant derivatives at leading order.
struct Connection {
    gamma: [[[f64; 2]; 2]; 2],       // [k][a][b]
    dgamma: [[[[f64; 2]; 2]; 2]; 2], // [d][k][a][b]
}

fn graph_connection(
    jet: &SurfaceJet,
    ginv: &Matrix2<f64>,
    dginv: &[Matrix2<f64>; 2],
) -> Connection {
    let w1 = jet.grad;
    let w2 = jet.hess;
    let u = ginv * w1;
    let mut gamma = [[[0.0f64; 2]; 2]; 2];
    for k in 0..2 {
        for a_ in 0..2 {
            for b in 0..2 {
                gamma[k][a_][b] = u[k] * w2[(a_, b)];
            }
        }
    }
    let mut dgamma = [[[[0.0f64; 2]; 2]; 2]; 2];
    for d in 0..2 {
        let du = dginv[d] * w1 + ginv * Vector2::new(w2[(0, d)], w2[(1, d)]);
        for k in 0..2 {
            for a_ in 0..2 {
                for b in 0..2 {
                    dgamma[d][k][a_][b] = du[k] * w2[(a_, b)] + u[k] * jet.w3(a_, b, d);
                }
            }
        }
    }
    Connection { gamma, dgamma }
}

/// Metric derivative of the graph metric `g = I + dw dw^T` at the origin.
fn metric_first_derivatives(jet: &SurfaceJet, ginv: &Matrix2<f64>) -> [Matrix2<f64>; 2] {
    let w1 = jet.grad;
    let w2 = jet.hess;
    let mut dg = [Matrix2::zeros(); 2];
    for c in 0..2 {
        for m in 0..2 {
            for n in 0..2 {
                dg[c][(m, n)] = w2[(m, c)] * w1[n] + w1[m] * w2[(n, c)];
            }
        }
    }
    [-ginv * dg[0] * ginv, -ginv * dg[1] * ginv]
}

/// Differentiates the graph formulas `g = I + dw dw^T`, `A = -Hess w / den`
/// at the origin of the jet. These derivatives are algebraically consistent
/// with the Gauss and Codazzi structure of a graph, so they are the right
/// source for derivative norms but cannot serve as identity residuals; see
/// `cross_derivatives` for the independent route.
fn jet_derivatives(jet: &SurfaceJet, core: &CoreGeometry) -> JetDerivs {
    let w1 = jet.grad;
    let w2 = jet.hess;
    let den2 = 1.0 + w1.norm_squared();
    let den = den2.sqrt();
    let ginv = core.ginv;
    let a = core.a;

    // s_c = sum_e w_e w_ec and its derivative.
    let s = w2 * w1;
    let mut ds = Matrix2::zeros();
    for c in 0..2 {
        for d in 0..2 {
            let mut acc = 0.0;
            for e in 0..2 {
                acc += w2[(e, d)] * w2[(e, c)] + w1[e] * jet.w3(e, c, d);
            }
            ds[(c, d)] = acc;
        }
    }

    // Partial derivatives of A.
    let mut da = [Matrix2::zeros(); 2];
    for c in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                da[c][(i, j)] =
                    -jet.w3(i, j, c) / den + w2[(i, j)] * s[c] / (den2 * den);
            }
        }
    }
    let mut dda = [[Matrix2::zeros(); 2]; 2];
    for c in 0..2 {
        for d in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    dda[c][d][(i, j)] = -jet.w4(i, j, c, d) / den
                        + (jet.w3(i, j, c) * s[d]
                            + jet.w3(i, j, d) * s[c]
                            + w2[(i, j)] * ds[(c, d)])
                            / (den2 * den)
                        - 3.0 * w2[(i, j)] * s[c] * s[d] / (den2 * den2 * den);
                }
            }
        }
    }

    // Metric derivatives.
    let mut dg = [Matrix2::zeros(); 2];
    for c in 0..2 {
        for m in 0..2 {
            for n in 0..2 {
                dg[c][(m, n)] = w2[(m, c)] * w1[n] + w1[m] * w2[(n, c)];
            }
        }
    }
    let mut ddg = [[Matrix2::zeros(); 2]; 2];
    for c in 0..2 {
        for d in 0..2 {
            for m in 0..2 {
                for n in 0..2 {
                    ddg[c][d][(m, n)] = jet.w3(m, c, d) * w1[n]
                        + w2[(m, c)] * w2[(n, d)]
                        + w2[(m, d)] * w2[(n, c)]
                        + w1[m] * jet.w3(n, c, d);
                }
            }
        }
    }
    let dginv = [-ginv * dg[0] * ginv, -ginv * dg[1] * ginv];
    let mut ddginv = [[Matrix2::zeros(); 2]; 2];
    for c in 0..2 {
        for d in 0..2 {
            ddginv[c][d] = -(dginv[d] * dg[c] * ginv
                + ginv * ddg[c][d] * ginv
                + ginv * dg[c] * dginv[d]);
        }
    }

    let conn = graph_connection(jet, &ginv, &dginv);
    let gamma = |k: usize, a_: usize, b: usize| conn.gamma[k][a_][b];
    let dgamma_full = conn.dgamma;

    // First covariant derivative of A.
    let mut cov_a = [Matrix2::zeros(); 2];
    for c in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                let mut val = da[c][(i, j)];
                for e in 0..2 {
                    val -= gamma(e, c, i) * a[(e, j)] + gamma(e, c, j) * a[(i, e)];
                }
                cov_a[c][(i, j)] = val;
            }
        }
    }

    // Second covariant derivative of A.
    let mut cov2_a = [[Matrix2::zeros(); 2]; 2];
    for c in 0..2 {
        for d in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    // d_c of (nabla_d A)_ij.
                    let mut val = dda[c][d][(i, j)];
                    for e in 0..2 {
                        val -= dgamma_full[c][e][d][i] * a[(e, j)]
                            + gamma(e, d, i) * da[c][(e, j)]
                            + dgamma_full[c][e][d][j] * a[(i, e)]
                            + gamma(e, d, j) * da[c][(i, e)];
                    }
                    // Connection acting on the free indices of nabla A.
                    for e in 0..2 {
                        val -= gamma(e, c, d) * cov_a[e][(i, j)]
                            + gamma(e, c, i) * cov_a[d][(e, j)]
                            + gamma(e, c, j) * cov_a[d][(i, e)];
                    }
                    cov2_a[c][d][(i, j)] = val;
                }
            }
        }
    }
    let mut delta_a = Matrix2::zeros();
    for c in 0..2 {
        for d in 0..2 {
            delta_a += ginv[(c, d)] * cov2_a[c][d];
        }
    }

    // Mean curvature field H(x) = g^{ab}(x) A_ab(x).
    let mut dh = Vector2::zeros();
    for c in 0..2 {
        dh[c] = (dginv[c] * a + ginv * da[c]).trace();
    }
    let mut ddh = Matrix2::zeros();
    for c in 0..2 {
        for d in 0..2 {
            let m = ddginv[c][d] * a + dginv[c] * da[d] + dginv[d] * da[c] + ginv * dda[c][d];
            ddh[(c, d)] = m.trace();
        }
    }
    let mut hess_h = Matrix2::zeros();
    for c in 0..2 {
        for d in 0..2 {
            let mut val = ddh[(c, d)];
            for e in 0..2 {
                val -= gamma(e, c, d) * dh[e];
            }
            hess_h[(c, d)] = val;
        }
    }

    let grad_a_sq = contract3(&ginv, &cov_a);
    let second_a_sq = contract4(&ginv, &cov2_a);

    JetDerivs {
        grad_a: cov_a,
        second_a: cov2_a,
        delta_a,
        grad_h: dh,
        hess_h,
        grad_a_sq,
        second_a_sq,
    }
}

/// `g^{cc'} g^{aa'} g^{bb'} T_{c a b} T_{c' a' b'}`.
fn contract3(ginv: &Matrix2<f64>, t: &[Matrix2<f64>; 2]) -> f64 {
    let mut acc = 0.0;
    for c in 0..2 {
        for cp in 0..2 {
            acc += ginv[(c, cp)] * (ginv * t[c] * ginv * t[cp].transpose()).trace();
        }
    }
    acc
}

/// Full `ginv` contraction of a four-index tensor stored as `[c][d] -> (a,b)`.
fn contract4(ginv: &Matrix2<f64>, t: &[[Matrix2<f64>; 2]; 2]) -> f64 {
    let mut acc = 0.0;
    for c in 0..2 {
        for cp in 0..2 {
            for d in 0..2 {
                for dp in 0..2 {
                    acc += ginv[(c, cp)]
                        * ginv[(d, dp)]
                        * (ginv * t[c][d] * ginv * t[cp][dp].transpose()).trace();
                }
            }
        }
    }
    acc
}

pub fn derivative_tier(state: &ShapeState) -> DerivativeTier {
    let n = state.vertex_count();
    let derivs: Vec<JetDerivs> = (0..n)
        .into_par_iter()
        .map(|v| {
            let core = CoreGeometry {
                g: state.metric[v],
                ginv: rank_one_inverse(&state.jets[v].grad),
                a: state.a[v],
                h: state.h[v],
                a_sq: state.a_sq[v],
                a0: state.a0[v],
                a0_sq: state.a0_sq[v],
            };
            jet_derivatives(&state.jets[v], &core)
        })
        .collect();

    let mut tier = DerivativeTier {
        grad_a: Vec::with_capacity(n),
        grad_a_sq: Vec::with_capacity(n),
        second_a: Vec::with_capacity(n),
        second_a_sq: Vec::with_capacity(n),
        delta_a: Vec::with_capacity(n),
        grad_h: Vec::with_capacity(n),
        hess_h: Vec::with_capacity(n),
        low_order: Vec::with_capacity(n),
    };
    for (v, d) in derivs.into_iter().enumerate() {
        tier.grad_a.push(d.grad_a);
        tier.grad_a_sq.push(d.grad_a_sq);
        tier.second_a.push(d.second_a);
        tier.second_a_sq.push(d.second_a_sq);
        tier.delta_a.push(d.delta_a);
        tier.grad_h.push(d.grad_h);
        tier.hess_h.push(d.hess_h);
        tier.low_order.push(state.jets[v].degree < 4);
    }
    tier
}

/// Covariant derivatives of `A` and `H` at each vertex estimated from the
/// field of neighboring values: every two-ring member's tensor is evaluated
/// on this vertex's graph coordinate frame (carried through the chart) and
/// the resulting component fields are fitted quadratically. This route
/// shares no algebra with the per-vertex jet derivatives, which makes it
/// the honest counterpart for identity residuals: a single jet satisfies
/// Gauss, Codazzi and Simons exactly, so only a cross-vertex comparison
/// measures discretization error.
pub struct CrossDerivatives {
    pub grad_a: Vec<[Matrix2<f64>; 2]>,
    pub delta_a: Vec<Matrix2<f64>>,
    pub grad_h: Vec<Vector2<f64>>,
    pub hess_h: Vec<Matrix2<f64>>,
}

struct CrossAtVertex {
    grad_a: [Matrix2<f64>; 2],
    delta_a: Matrix2<f64>,
    grad_h: Vector2<f64>,
    hess_h: Matrix2<f64>,
}

/// Gradient of the fitted height function at coordinates `xi`.
fn jet_gradient_at(jet: &SurfaceJet, xi: &Vector2<f64>) -> Vector2<f64> {
    let mut out = jet.grad;
    for a_ in 0..2 {
        for b in 0..2 {
            out[a_] += jet.hess[(a_, b)] * xi[b];
            for c in 0..2 {
                out[a_] += 0.5 * jet.w3(a_, b, c) * xi[b] * xi[c];
                for d in 0..2 {
                    out[a_] += jet.w4(a_, b, c, d) * xi[b] * xi[c] * xi[d] / 6.0;
                }
            }
        }
    }
    out
}

fn cross_at_vertex(
    state: &ShapeState,
    im: &Immersion,
    amb: &AmbientSpace,
    v: usize,
) -> Result<CrossAtVertex, ShapeError> {
    let p = im.vertices()[v];
    let f = &state.frames[v];
    let jet = &state.jets[v];
    let gamma_amb = amb.christoffel(&p)?;
    let ring = im.two_ring(v);

    let mut coords = Vec::with_capacity(ring.len());
    let mut values = Vec::with_capacity(ring.len());
    for &q in &ring {
        let delta = im.vertices()[q] - p;
        let corr = Vector3::new(
            delta.dot(&(gamma_amb[0] * delta)),
            delta.dot(&(gamma_amb[1] * delta)),
            delta.dot(&(gamma_amb[2] * delta)),
        );
        let y = f.lambda * (delta + 0.5 * corr);
        let xi = Vector2::new(y.dot(&f.e1), y.dot(&f.e2));
        let r = y.norm();
        if !(r.is_finite() && r > 0.0) {
            return Err(ShapeError::NonFinite { vertex: v });
        }

        // This vertex's graph coordinate basis at xi, pushed to chart
        // vectors at q through the differential of the normal-coordinate
        // map, then evaluated against q's tensor.
        let grad_at = jet_gradient_at(jet, &xi);
        let mut kmat = Matrix3::zeros();
        for k in 0..3 {
            let row = gamma_amb[k] * delta;
            for i in 0..3 {
                kmat[(k, i)] = row[i];
            }
        }
        let map = f.lambda * (Matrix3::identity() + kmat);
        let lu = map.lu();
        let mut comps = [Vector2::zeros(); 2];
        for a_ in 0..2 {
            let e = if a_ == 0 { f.e1 } else { f.e2 };
            let t_y = e + grad_at[a_] * f.nu_axis;
            let u = lu
                .solve(&t_y)
                .ok_or(ShapeError::NonFinite { vertex: v })?;
            comps[a_] = state.graph_components(q, &u);
        }
        let aq = state.a[q];
        let a00 = (comps[0].transpose() * aq * comps[0])[(0, 0)];
        let a01 = (comps[0].transpose() * aq * comps[1])[(0, 0)];
        let a11 = (comps[1].transpose() * aq * comps[1])[(0, 0)];
        coords.push((xi, r));
        values.push([a00, a01, a11, state.h[q]]);
    }

    let scale = coords.iter().map(|c| c.1).sum::<f64>() / coords.len() as f64;
    let center = [
        state.a[v][(0, 0)],
        state.a[v][(0, 1)],
        state.a[v][(1, 1)],
        state.h[v],
    ];
    let mut normal = NormalEquations::new();
    for (&(xi, r), row_vals) in coords.iter().zip(&values) {
        let row = design_row(xi[0] / scale, xi[1] / scale);
        let rhs = [
            row_vals[0] - center[0],
            row_vals[1] - center[1],
            row_vals[2] - center[2],
            row_vals[3] - center[3],
        ];
        normal.add_row(&row, &rhs, scale / r);
    }
    let chol = match SmallCholesky::new(&normal.symmetrized(), 5) {
        Some(c) if normal.rows >= 5 && c.cond <= FIT_CONDITION_CAP => c,
        Some(c) => {
            return Err(ShapeError::RankDeficientFit {
                vertex: v,
                rows: normal.rows,
                condition: c.cond,
            })
        }
        None => {
            return Err(ShapeError::RankDeficientFit {
                vertex: v,
                rows: normal.rows,
                condition: f64::INFINITY,
            })
        }
    };
    let mut partials = [[0.0f64; 5]; 4];
    for (field, partial) in partials.iter_mut().enumerate() {
        let beta = chol.solve(&normal.b[field]);
        partial[0] = beta[0] / scale;
        partial[1] = beta[1] / scale;
        partial[2] = beta[2] / (scale * scale);
        partial[3] = beta[3] / (scale * scale);
        partial[4] = beta[4] / (scale * scale);
    }

    // Reassemble partial derivatives of the tensor components; the fields
    // are packed as [a00, a01, a11, h] and the symmetric component index is
    // i + j.
    let da = |c: usize, i: usize, j: usize| partials[i + j][c];
    let dda = |c: usize, d: usize, i: usize, j: usize| partials[i + j][2 + c + d];
    let dh = Vector2::new(partials[3][0], partials[3][1]);
    let ddh = Matrix2::new(partials[3][2], partials[3][3], partials[3][3], partials[3][4]);

    // Covariant corrections with this vertex's connection.
    let ginv = rank_one_inverse(&jet.grad);
    let dginv = metric_first_derivatives(jet, &ginv);
    let conn = graph_connection(jet, &ginv, &dginv);
    let a = state.a[v];

    let mut cov_a = [Matrix2::zeros(); 2];
    for c in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                let mut val = da(c, i, j);
                for e in 0..2 {
                    val -= conn.gamma[e][c][i] * a[(e, j)] + conn.gamma[e][c][j] * a[(i, e)];
                }
                cov_a[c][(i, j)] = val;
            }
        }
    }
    let mut cov2_a = [[Matrix2::zeros(); 2]; 2];
    for c in 0..2 {
        for d in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut val = dda(c, d, i, j);
                    for e in 0..2 {
                        val -= conn.dgamma[c][e][d][i] * a[(e, j)]
                            + conn.gamma[e][d][i] * da(c, e, j)
                            + conn.dgamma[c][e][d][j] * a[(i, e)]
                            + conn.gamma[e][d][j] * da(c, i, e);
                    }
                    for e in 0..2 {
                        val -= conn.gamma[e][c][d] * cov_a[e][(i, j)]
                            + conn.gamma[e][c][i] * cov_a[d][(e, j)]
                            + conn.gamma[e][c][j] * cov_a[d][(i, e)];
                    }
                    cov2_a[c][d][(i, j)] = val;
                }
            }
        }
    }
    let mut delta_a = Matrix2::zeros();
    for c in 0..2 {
        for d in 0..2 {
            delta_a += ginv[(c, d)] * cov2_a[c][d];
        }
    }
    let mut hess_h = Matrix2::zeros();
    for c in 0..2 {
        for d in 0..2 {
            let mut val = ddh[(c, d)];
            for e in 0..2 {
                val -= conn.gamma[e][c][d] * dh[e];
            }
            hess_h[(c, d)] = val;
        }
    }

    Ok(CrossAtVertex {
        grad_a: cov_a,
        delta_a,
        grad_h: dh,
        hess_h,
    })
}

pub fn cross_derivatives(
    state: &ShapeState,
    im: &Immersion,
    amb: &AmbientSpace,
) -> Result<CrossDerivatives, ShapeError> {
    let n = state.vertex_count();
    let per_vertex: Vec<Result<CrossAtVertex, ShapeError>> = (0..n)
        .into_par_iter()
        .map(|v| cross_at_vertex(state, im, amb, v))
        .collect();
    let mut out = CrossDerivatives {
        grad_a: Vec::with_capacity(n),
        delta_a: Vec::with_capacity(n),
        grad_h: Vec::with_capacity(n),
        hess_h: Vec::with_capacity(n),
    };
    for r in per_vertex {
        let r = r?;
        out.grad_a.push(r.grad_a);
        out.delta_a.push(r.delta_a);
        out.grad_h.push(r.grad_h);
        out.hess_h.push(r.hess_h);
    }
    Ok(out)
}

/// Covariant first and second derivatives of a scalar surface field, in
/// each vertex's graph basis.
#[derive(Debug, Clone)]
pub struct ScalarDerivatives {
    pub grad: Vec<Vector2<f64>>,
    pub hess: Vec<Matrix2<f64>>,
}

fn scalar_at_vertex(
    state: &ShapeState,
    im: &Immersion,
    amb: &AmbientSpace,
    field: &[f64],
    v: usize,
) -> Result<(Vector2<f64>, Matrix2<f64>), ShapeError> {
    let p = im.vertices()[v];
    let f = &state.frames[v];
    let jet = &state.jets[v];
    let gamma_amb = amb.christoffel(&p)?;

    let mut normal = NormalEquations::new();
    let mut scale_acc = 0.0;
    let ring = im.two_ring(v);
    let mut samples = Vec::with_capacity(ring.len());
    for &q in &ring {
        let delta = im.vertices()[q] - p;
        let corr = Vector3::new(
            delta.dot(&(gamma_amb[0] * delta)),
            delta.dot(&(gamma_amb[1] * delta)),
            delta.dot(&(gamma_amb[2] * delta)),
        );
        let y = f.lambda * (delta + 0.5 * corr);
        let r = y.norm();
        if !(r.is_finite() && r > 0.0) {
            return Err(ShapeError::NonFinite { vertex: v });
        }
        scale_acc += r;
        samples.push((y.dot(&f.e1), y.dot(&f.e2), field[q] - field[v], r));
    }
    let scale = scale_acc / samples.len() as f64;
    for &(x1, x2, dval, r) in &samples {
        let row = design_row(x1 / scale, x2 / scale);
        normal.add_row(&row, &[dval], scale / r);
    }
    let chol = SmallCholesky::new(&normal.symmetrized(), 5)
        .filter(|c| c.cond <= FIT_CONDITION_CAP)
        .ok_or(ShapeError::RankDeficientFit {
            vertex: v,
            rows: normal.rows,
            condition: f64::INFINITY,
        })?;
    if normal.rows < 5 {
        return Err(ShapeError::RankDeficientFit {
            vertex: v,
            rows: normal.rows,
            condition: chol.cond,
        });
    }
    let beta = chol.solve(&normal.b[0]);
    let grad = Vector2::new(beta[0] / scale, beta[1] / scale);
    let s2 = scale * scale;
    let raw_hess = Matrix2::new(beta[2] / s2, beta[3] / s2, beta[3] / s2, beta[4] / s2);

    let ginv = rank_one_inverse(&jet.grad);
    let dginv = metric_first_derivatives(jet, &ginv);
    let conn = graph_connection(jet, &ginv, &dginv);
    let mut hess = raw_hess;
    for c in 0..2 {
        for d in 0..2 {
            for e in 0..2 {
                hess[(c, d)] -= conn.gamma[e][c][d] * grad[e];
            }
        }
    }
    Ok((grad, hess))
}

/// Fits the neighborhood differences of a scalar field in each vertex's
/// graph chart and covariantizes, mirroring the cross-vertex tensor route.
pub fn scalar_derivatives(
    state: &ShapeState,
    im: &Immersion,
    amb: &AmbientSpace,
    field: &[f64],
) -> Result<ScalarDerivatives, ShapeError> {
    assert_eq!(field.len(), state.vertex_count());
    let per_vertex: Vec<Result<(Vector2<f64>, Matrix2<f64>), ShapeError>> = (0
        ..state.vertex_count())
        .into_par_iter()
        .map(|v| scalar_at_vertex(state, im, amb, field, v))
        .collect();
    let mut out = ScalarDerivatives {
        grad: Vec::with_capacity(field.len()),
        hess: Vec::with_capacity(field.len()),
    };
    for r in per_vertex {
        let (g, h) = r?;
        out.grad.push(g);
        out.hess.push(h);
    }
    Ok(out)
}

/// The Simons identity combination
/// `Delta A - Hess H - (H A g^{-1} A - |A|^2 A) - kappa (2A - H g)`
/// at one vertex, with the derivative estimates supplied by the caller.
fn simons_matrix(
    state: &ShapeState,
    v: usize,
    delta_a: &Matrix2<f64>,
    hess_h: &Matrix2<f64>,
    kappa: f64,
) -> Matrix2<f64> {
    let ginv = rank_one_inverse(&state.jets[v].grad);
    let a = state.a[v];
    let h = state.h[v];
    delta_a - hess_h - (h * a * ginv * a - state.a_sq[v] * a)
        - kappa * (2.0 * a - h * state.metric[v])
}

fn tensor_norm(ginv: &Matrix2<f64>, m: &Matrix2<f64>) -> f64 {
    (ginv * m * ginv * m.transpose()).trace().max(0.0).sqrt()
}

/// Pointwise norm of the Simons identity residual, comparing the
/// cross-vertex estimates of `Delta A` and `Hess H` against the algebraic
/// side. `kappa` is read off the ambient scalar curvature at each vertex;
/// exact for the constant-curvature ambients, a local space-form
/// approximation `kappa = Sc / 6` for a general conformal one.
pub fn simons_residual(
    state: &ShapeState,
    cross: &CrossDerivatives,
    im: &Immersion,
    amb: &AmbientSpace,
) -> Result<Vec<f64>, ShapeError> {
    let n = state.vertex_count();
    let mut out = Vec::with_capacity(n);
    for v in 0..n {
        let kappa = amb.scalar_curvature(&im.vertices()[v])? / 6.0;
        let res = simons_matrix(state, v, &cross.delta_a[v], &cross.hess_h[v], kappa);
        let ginv = rank_one_inverse(&state.jets[v].grad);
        out.push(tensor_norm(&ginv, &res));
    }
    Ok(out)
}

pub struct CurvatureResiduals {
    pub gauss: Vec<f64>,
    pub codazzi: Vec<f64>,
}

/// Gauss residual: twice the angle-defect Gauss curvature against the
/// traced Gauss equation `Sc_surface = Sc - 2 Ric(nu, nu) + H^2 - |A|^2`.
/// Codazzi residual: the antisymmetrized cross-vertex derivative of `A`
/// against the ambient curvature term, which vanishes in constant
/// curvature. Both compare independently computed routes.
pub fn gauss_codazzi_residuals(
    state: &ShapeState,
    cross: &CrossDerivatives,
    im: &Immersion,
    amb: &AmbientSpace,
) -> Result<CurvatureResiduals, ShapeError> {
    let n = state.vertex_count();
    let defect = angle_defect_curvature(im, &state.induced, &state.lap);
    let mut gauss = Vec::with_capacity(n);
    let mut codazzi = Vec::with_capacity(n);
    for v in 0..n {
        let p = im.vertices()[v];
        let sc = amb.scalar_curvature(&p)?;
        let target = sc - 2.0 * state.ricci_nu[v] + state.h[v] * state.h[v] - state.a_sq[v];
        gauss.push((2.0 * defect[v] - target).abs());

        let riemann = amb.riemann(&p)?;
        let f = &state.frames[v];
        let jet = &state.jets[v];
        let tangent = |i: usize| {
            let e = if i == 0 { f.e1 } else { f.e2 };
            (e + jet.grad[i] * f.nu_axis) / f.lambda
        };
        let t0 = tangent(0);
        let t1 = tangent(1);
        let frame = [t0, t1];
        let ginv = rank_one_inverse(&jet.grad);
        let mut d = [[[0.0f64; 2]; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let ambient = riemann.eval(&state.nu[v], &frame[i], &frame[j], &frame[k]);
                    d[i][j][k] =
                        cross.grad_a[v][i][(j, k)] - cross.grad_a[v][j][(i, k)] + ambient;
                }
            }
        }
        let mut norm_sq = 0.0;
        for i in 0..2 {
            for ip in 0..2 {
                for j in 0..2 {
                    for jp in 0..2 {
                        for k in 0..2 {
                            for kp in 0..2 {
                                norm_sq += ginv[(i, ip)]
                                    * ginv[(j, jp)]
                                    * ginv[(k, kp)]
                                    * d[i][j][k]
                                    * d[ip][jp][kp];
                            }
                        }
                    }
                }
            }
        }
        codazzi.push(norm_sq.max(0.0).sqrt());
    }
    Ok(CurvatureResiduals { gauss, codazzi })
}

/// Area-weighted L2 norm of a pointwise residual field.
pub fn l2_norm(values: &[f64], dual_area: &[f64], total_area: f64) -> f64 {
    let mut acc = 0.0;
    for (v, r) in values.iter().enumerate() {
        acc += r * r * dual_area[v];
    }
    (acc / total_area).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{ellipsoid, icosphere};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::Rotation3;

    fn unit_sphere_jet() -> SurfaceJet {
        // Exterior-normal graph of the unit sphere at a tangency point:
        // w = -(1 - sqrt(1 - |xi|^2)).
        SurfaceJet {
            grad: Vector2::zeros(),
            hess: -Matrix2::identity(),
            third: [0.0; 4],
            fourth: [-3.0, 0.0, -1.0, 0.0, -3.0],
            degree: 4,
        }
    }

    #[test]
    fn analytic_sphere_jet_gives_round_curvature() {
        let jet = unit_sphere_jet();
        let core = core_geometry(&jet);
        assert_relative_eq!(core.h, 2.0, max_relative = 1e-14);
        assert_relative_eq!(core.a_sq, 2.0, max_relative = 1e-14);
        assert_abs_diff_eq!(core.a0_sq, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(core.a[(0, 1)], 0.0, epsilon = 1e-14);
        assert_relative_eq!(core.a[(0, 0)], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn analytic_sphere_jet_has_parallel_curvature() {
        // On the round sphere A = g, so all covariant derivatives of A and
        // the Hessian of H vanish identically; the fourth-order jet terms
        // must cancel the Christoffel derivative terms exactly.
        let jet = unit_sphere_jet();
        let core = core_geometry(&jet);
        let d = jet_derivatives(&jet, &core);
        for c in 0..2 {
            assert_abs_diff_eq!(d.grad_a[c].norm(), 0.0, epsilon = 1e-13);
        }
        assert_abs_diff_eq!(d.delta_a.norm(), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(d.hess_h.norm(), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(d.grad_h.norm(), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(d.grad_a_sq, 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(d.second_a_sq, 0.0, epsilon = 1e-13);
    }

    #[test]
    fn tilted_paraboloid_jet_matches_closed_form() {
        // w = x^2 - y^2 + x^3 with a nonzero linear part, exercising the
        // den and Christoffel factors: compare A against the closed-form
        // graph curvature -w_ij / sqrt(1 + |dw|^2) (its exact value here).
        let jet = SurfaceJet {
            grad: Vector2::new(0.3, -0.2),
            hess: Matrix2::new(2.0, 0.0, 0.0, -2.0),
            third: [6.0, 0.0, 0.0, 0.0],
            fourth: [0.0; 5],
            degree: 4,
        };
        let core = core_geometry(&jet);
        let den = (1.0f64 + 0.09 + 0.04).sqrt();
        assert_relative_eq!(core.a[(0, 0)], -2.0 / den, max_relative = 1e-14);
        assert_relative_eq!(core.a[(1, 1)], 2.0 / den, max_relative = 1e-14);
        // Trace identities.
        let ginv = rank_one_inverse(&jet.grad);
        let h = (ginv * core.a).trace();
        assert_relative_eq!(core.h, h, max_relative = 1e-14);
        assert_relative_eq!(
            core.a_sq,
            core.a0_sq + 0.5 * core.h * core.h,
            max_relative = 1e-12
        );
    }

    #[test]
    fn icosphere_curvature_matches_round_sphere() {
        let amb = AmbientSpace::euclidean();
        let im = icosphere(3).unwrap();
        let state = ShapeState::compute(&im, &amb).unwrap();
        for v in 0..state.vertex_count() {
            assert_relative_eq!(state.h[v], 2.0, max_relative = 2e-3);
            assert_relative_eq!(state.a_sq[v], 2.0, max_relative = 4e-3);
            assert!(state.a0_sq[v] < 1e-4);
            // Exterior normal points along the position vector.
            let dir = im.vertices()[v].normalize();
            assert!(state.nu[v].dot(&dir) > 0.9999);
            // Trace identities hold at every vertex by construction.
            let ginv = rank_one_inverse(&state.jets[v].grad);
            let tr_a0 = (ginv * state.a0[v]).trace();
            assert_abs_diff_eq!(tr_a0, 0.0, epsilon = 1e-12);
            assert_relative_eq!(
                state.a_sq[v],
                state.a0_sq[v] + 0.5 * state.h[v] * state.h[v],
                max_relative = 1e-10
            );
        }
        // The deficit is the inscribed-mesh area error, O(h^2): about 0.6%
        // at this level.
        assert_relative_eq!(state.energy, 4.0 * std::f64::consts::PI, max_relative = 8e-3);
    }

    #[test]
    fn willmore_operator_vanishes_on_finer_spheres() {
        let amb = AmbientSpace::euclidean();
        let coarse = ShapeState::compute(&icosphere(2).unwrap(), &amb).unwrap();
        let fine = ShapeState::compute(&icosphere(3).unwrap(), &amb).unwrap();
        assert!(fine.sup_w() < coarse.sup_w() / 1.5);
        assert!(fine.sup_w() < 0.2);
    }

    #[test]
    fn hyperbolic_geodesic_sphere_has_constant_mean_curvature() {
        // Geodesic sphere of radius r in curvature -1: H = 2 coth r, and
        // the Willmore operator reduces to H * (Ric(nu,nu)) + Delta H with
        // A0 = 0, so W = -2 H.
        let amb = AmbientSpace::hyperbolic(-1.0).unwrap();
        let r = 0.7f64;
        let im = crate::io::geodesic_sphere(&amb, &Vector3::zeros(), r, 3).unwrap();
        let state = ShapeState::compute(&im, &amb).unwrap();
        let expect_h = 2.0 / r.tanh();
        for v in 0..state.vertex_count() {
            assert_relative_eq!(state.h[v], expect_h, max_relative = 5e-3);
            assert!(state.a0_sq[v] < 5e-3);
            assert_relative_eq!(state.ricci_nu[v], -2.0, max_relative = 1e-10);
        }
        let expect_w = -2.0 * expect_h;
        let mean_w: f64 = state.w.iter().sum::<f64>() / state.w.len() as f64;
        assert_relative_eq!(mean_w, expect_w, max_relative = 2e-2);
    }

    #[test]
    fn rigid_motion_leaves_scalars_unchanged() {
        let amb = AmbientSpace::euclidean();
        let im = icosphere(2).unwrap();
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), 0.83);
        let shift = Vector3::new(0.4, -1.1, 2.3);
        let moved = im.map_vertices(|p| rot * p + shift);
        let a = ShapeState::compute(&im, &amb).unwrap();
        let b = ShapeState::compute(&moved, &amb).unwrap();
        for v in 0..a.vertex_count() {
            assert_relative_eq!(a.h[v], b.h[v], max_relative = 1e-9);
            assert_relative_eq!(a.a_sq[v], b.a_sq[v], max_relative = 1e-9, epsilon = 1e-9);
            assert_abs_diff_eq!(a.w[v], b.w[v], epsilon = 1e-7 * (1.0 + a.w[v].abs()));
            // The normal rotates with the surface.
            let expect = rot * a.nu[v];
            assert!((expect - b.nu[v]).norm() < 1e-9);
        }
        assert_relative_eq!(a.energy, b.energy, max_relative = 1e-11);
    }

    #[test]
    fn scaling_rescales_curvature_exactly() {
        let amb = AmbientSpace::euclidean();
        let im = icosphere(2).unwrap();
        let base = ShapeState::compute(&im, &amb).unwrap();
        for lambda in [0.5f64, 2.0, 10.0] {
            let scaled = im.map_vertices(|p| lambda * p);
            let state = ShapeState::compute(&scaled, &amb).unwrap();
            for v in 0..base.vertex_count() {
                assert_relative_eq!(
                    state.h[v] * lambda,
                    base.h[v],
                    max_relative = 1e-8
                );
                assert_relative_eq!(
                    state.w[v] * lambda.powi(3),
                    base.w[v],
                    max_relative = 1e-6,
                    epsilon = 1e-8
                );
            }
            // The Willmore energy is scale invariant in Euclidean space.
            assert_relative_eq!(state.energy, base.energy, max_relative = 1e-8);
        }
    }

    #[test]
    fn orientation_flip_negates_odd_quantities() {
        let amb = AmbientSpace::euclidean();
        let im = icosphere(2).unwrap();
        let a = ShapeState::compute(&im, &amb).unwrap();
        let b = ShapeState::compute(&im.flipped(), &amb).unwrap();
        for v in 0..a.vertex_count() {
            assert_abs_diff_eq!(a.h[v] + b.h[v], 0.0, epsilon = 1e-11);
            assert_abs_diff_eq!(a.w[v] + b.w[v], 0.0, epsilon = 1e-9);
            assert_relative_eq!(a.a_sq[v], b.a_sq[v], max_relative = 1e-11);
            assert!((a.nu[v] + b.nu[v]).norm() < 1e-11);
        }
        assert_relative_eq!(a.energy, b.energy, max_relative = 1e-12);
    }

    #[test]
    fn vertex_relabeling_is_harmless() {
        let amb = AmbientSpace::euclidean();
        let im = icosphere(2).unwrap();
        let n = im.vertex_count();
        // Reverse the vertex order.
        let perm: Vec<usize> = (0..n).rev().collect();
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let verts: Vec<Vector3<f64>> = perm.iter().map(|&old| im.vertices()[old]).collect();
        let tris: Vec<[usize; 3]> = im
            .triangles()
            .iter()
            .map(|t| [inv[t[0]], inv[t[1]], inv[t[2]]])
            .collect();
        let relabeled = Immersion::new(verts, tris).unwrap();
        let a = ShapeState::compute(&im, &amb).unwrap();
        let b = ShapeState::compute(&relabeled, &amb).unwrap();
        for v in 0..n {
            assert_abs_diff_eq!(a.h[v], b.h[inv[v]], epsilon = 1e-10);
            assert_abs_diff_eq!(a.w[v], b.w[inv[v]], epsilon = 1e-8);
        }
        assert_relative_eq!(a.energy, b.energy, max_relative = 1e-12);
    }

    #[test]
    fn tetrahedron_stencil_is_rank_deficient() {
        // Valence 3 everywhere: the two-ring has three points, below even
        // the quadratic model.
        let s = 1.0 / 3.0f64.sqrt();
        let verts = vec![
            Vector3::new(s, s, s),
            Vector3::new(s, -s, -s),
            Vector3::new(-s, s, -s),
            Vector3::new(-s, -s, s),
        ];
        let tris = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
        let im = Immersion::new(verts, tris).unwrap();
        let amb = AmbientSpace::euclidean();
        match ShapeState::compute(&im, &amb) {
            Err(ShapeError::RankDeficientFit { rows, .. }) => assert_eq!(rows, 3),
            other => panic!("expected rank-deficient fit, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn a_form_agrees_with_projected_tensor_on_sphere() {
        let amb = AmbientSpace::euclidean();
        let im = icosphere(3).unwrap();
        let state = ShapeState::compute(&im, &amb).unwrap();
        for v in [0usize, 37, 200] {
            let nu = state.nu[v];
            let probe = Vector3::new(0.3, -0.8, 0.52);
            let tang = probe - nu * probe.dot(&nu);
            // On the unit sphere A is the induced metric, so A(u, u) is the
            // squared tangential length.
            let val = state.a_form(v, &probe, &probe);
            assert_relative_eq!(val, tang.norm_squared(), max_relative = 2e-2);
        }
    }

    #[test]
    fn jet_route_satisfies_graph_identities_exactly() {
        // A single graph jet satisfies Simons and Codazzi algebraically in
        // a flat ambient, whatever the surface: machine-zero here checks
        // the symbolic derivative formulas, not the mesh. This is why the
        // reported residuals must use the cross-vertex route instead.
        let amb = AmbientSpace::euclidean();
        let im = ellipsoid(1.0, 0.8, 0.6, 2).unwrap();
        let state = ShapeState::compute(&im, &amb).unwrap();
        let tier = derivative_tier(&state);
        for v in 0..state.vertex_count() {
            let res = simons_matrix(&state, v, &tier.delta_a[v], &tier.hess_h[v], 0.0);
            let ginv = rank_one_inverse(&state.jets[v].grad);
            assert_abs_diff_eq!(tensor_norm(&ginv, &res), 0.0, epsilon = 1e-10);
            for k in 0..2 {
                let anti = tier.grad_a[v][0][(1, k)] - tier.grad_a[v][1][(0, k)];
                assert_abs_diff_eq!(anti, 0.0, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn simons_residual_small_and_shrinking_on_spheres() {
        let amb = AmbientSpace::euclidean();
        let mut norms = Vec::new();
        for level in [2u32, 3] {
            let im = icosphere(level).unwrap();
            let state = ShapeState::compute(&im, &amb).unwrap();
            let cross = cross_derivatives(&state, &im, &amb).unwrap();
            let res = simons_residual(&state, &cross, &im, &amb).unwrap();
            norms.push(l2_norm(&res, &state.lap.dual_area, state.induced.total_area));
        }
        assert!(norms[1] < norms[0], "no improvement: {norms:?}");
    }

    #[test]
    fn gauss_identity_holds_on_ellipsoid() {
        let amb = AmbientSpace::euclidean();
        let coarse = ellipsoid(1.0, 0.8, 0.6, 2).unwrap();
        let fine = ellipsoid(1.0, 0.8, 0.6, 3).unwrap();
        let mut norms = Vec::new();
        for im in [&coarse, &fine] {
            let state = ShapeState::compute(im, &amb).unwrap();
            let cross = cross_derivatives(&state, im, &amb).unwrap();
            let res = gauss_codazzi_residuals(&state, &cross, im, &amb).unwrap();
            norms.push(l2_norm(
                &res.gauss,
                &state.lap.dual_area,
                state.induced.total_area,
            ));
        }
        assert!(norms[1] < norms[0], "no improvement: {norms:?}");
    }

    #[test]
    fn scalar_hessian_matches_spherical_harmonic() {
        // On the round unit sphere the coordinate z restricts to a first
        // spherical harmonic, whose covariant Hessian is -z g.
        let amb = AmbientSpace::euclidean();
        let im = crate::io::icosphere(4).unwrap();
        let state = ShapeState::compute(&im, &amb).unwrap();
        let field: Vec<f64> = im.vertices().iter().map(|p| p.z).collect();
        let derivs = scalar_derivatives(&state, &im, &amb, &field).unwrap();

        let mut worst_hess = 0.0f64;
        let mut worst_grad = 0.0f64;
        for v in 0..im.vertex_count() {
            let z = im.vertices()[v].z;
            let ginv = state.metric[v].try_inverse().unwrap();
            let diff = derivs.hess[v] + z * state.metric[v];
            worst_hess = worst_hess.max(tensor_norm(&ginv, &diff));
            let grad_sq = (derivs.grad[v].transpose() * ginv * derivs.grad[v])[(0, 0)];
            worst_grad = worst_grad.max((grad_sq - (1.0 - z * z)).abs());
        }
        assert!(worst_hess < 2e-2, "hessian defect {worst_hess:.3e}");
        assert!(worst_grad < 2e-3, "gradient defect {worst_grad:.3e}");
    }

    #[test]
    fn codazzi_residual_small_in_space_forms() {
        // The ambient term vanishes in constant curvature, so the residual
        // is pure discretization error of the antisymmetrized derivative.
        let amb = AmbientSpace::hyperbolic(-1.0).unwrap();
        let im = crate::io::geodesic_sphere(&amb, &Vector3::zeros(), 0.7, 3).unwrap();
        let state = ShapeState::compute(&im, &amb).unwrap();
        let cross = cross_derivatives(&state, &im, &amb).unwrap();
        let res = gauss_codazzi_residuals(&state, &cross, &im, &amb).unwrap();
        let norm = l2_norm(
            &res.codazzi,
            &state.lap.dual_area,
            state.induced.total_area,
        );
        assert!(norm < 1.0, "Codazzi residual too large: {norm}");
    }
}
