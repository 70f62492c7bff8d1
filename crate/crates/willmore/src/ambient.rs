//! Ambient 3-manifolds presented in a single global chart on (a subset of) R^3.
//!
//! Every supported ambient metric is conformally flat, `g = e^{2phi} delta`:
//!
//! * Euclidean space: `phi = 0`.
//! * Hyperbolic space of curvature `kappa < 0`: the ball `|p|^2 < -1/kappa`
//!   with `e^phi = 2 / (1 + kappa |p|^2)`.
//! * The round sphere of curvature `kappa > 0`: stereographic chart on R^3
//!   with the same factor `e^phi = 2 / (1 + kappa |p|^2)`, restricted to a cap
//!   that stays away from the projection pole.
//! * A user-supplied conformal factor with analytic first and second
//!   derivatives, plus user-declared curvature and injectivity bounds.
//!
//! Conventions. The curvature tensor is indexed so that for constant curvature
//! `kappa` the all-lower components are
//! `R_{ijkl} = kappa (g_{il} g_{jk} - g_{ik} g_{jl})`,
//! the Ricci tensor is the contraction `Ric_{il} = g^{jk} R_{ijkl} = 2 kappa g_{il}`
//! and the scalar curvature is `6 kappa`. `sect_sup` is the supremum of the
//! Ricci quadratic form over unit tangent vectors, so it is `2 kappa` for the
//! model spaces and in particular non-positive for Euclidean and hyperbolic
//! ambients.

use nalgebra::{Matrix3, Vector3};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Fraction of the chart-origin-to-pole distance inside which spherical chart
/// queries are accepted. Beyond it the conformal factor is too ill-conditioned.
pub const SPHERICAL_CHART_CAP: f64 = 0.95;

/// Number of cubes per axis needed to cover a Euclidean ball by half-radius
/// balls: cubes of side `2 rho / n` have circumradius `<= rho/2` once
/// `n >= 2 sqrt(3)`, so `n = 4` and the Euclidean covering constant is 64.
const EUCLIDEAN_COVER_AXIS: f64 = 2.0 * 1.7320508075688772;

#[derive(Debug, Error)]
pub enum AmbientError {
    #[error("point ({x:.6}, {y:.6}, {z:.6}) lies outside the {chart} chart: {detail}")]
    OutOfChart {
        x: f64,
        y: f64,
        z: f64,
        chart: &'static str,
        detail: String,
    },
    #[error("radius {radius} is not below the injectivity radius {inj}")]
    RadiusExceedsInjectivity { radius: f64, inj: f64 },
    #[error("geodesic between chart points did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid ambient parameter: {0}")]
    InvalidParameter(String),
}

/// Conformal factor callback: `phi` with analytic gradient and Hessian.
///
/// Third and higher derivatives are never requested; curvature quantities that
/// would need them are covered by the declared bounds instead.
pub trait ConformalFactor: Send + Sync {
    fn phi(&self, p: &Vector3<f64>) -> f64;
    fn grad_phi(&self, p: &Vector3<f64>) -> Vector3<f64>;
    fn hess_phi(&self, p: &Vector3<f64>) -> Matrix3<f64>;
    /// Short tag used in snapshot headers and error messages.
    fn name(&self) -> &'static str {
        "custom"
    }
}

/// Declared geometric bounds for a user conformal factor.
///
/// `sect_inf` is a lower bound on sectional curvature; it enters the ball
/// covering construction. `ricci_deriv_sup[i]` bounds the norm of the i-th
/// covariant derivative of the Ricci tensor.
#[derive(Debug, Clone, Copy)]
pub struct ConformalBounds {
    pub inj_radius: f64,
    pub sect_sup: f64,
    pub sect_inf: f64,
    pub ricci_deriv_sup: [f64; 6],
}

#[derive(Clone)]
pub enum AmbientKind {
    Euclidean,
    Hyperbolic { kappa: f64 },
    Spherical { kappa: f64 },
    Conformal { factor: Arc<dyn ConformalFactor> },
}

impl fmt::Debug for AmbientKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AmbientKind::Euclidean => write!(f, "Euclidean"),
            AmbientKind::Hyperbolic { kappa } => write!(f, "Hyperbolic {{ kappa: {kappa} }}"),
            AmbientKind::Spherical { kappa } => write!(f, "Spherical {{ kappa: {kappa} }}"),
            AmbientKind::Conformal { factor } => write!(f, "Conformal {{ {} }}", factor.name()),
        }
    }
}

/// An ambient 3-manifold in a single global chart.
#[derive(Debug, Clone)]
pub struct AmbientSpace {
    kind: AmbientKind,
    inj_radius: f64,
    sect_sup: f64,
    sect_inf: f64,
    ricci_deriv_sup: [f64; 6],
}

impl AmbientSpace {
    pub fn euclidean() -> Self {
        AmbientSpace {
            kind: AmbientKind::Euclidean,
            inj_radius: f64::INFINITY,
            sect_sup: 0.0,
            sect_inf: 0.0,
            ricci_deriv_sup: [0.0; 6],
        }
    }

    pub fn hyperbolic(kappa: f64) -> Result<Self, AmbientError> {
        if !(kappa < 0.0) || !kappa.is_finite() {
            return Err(AmbientError::InvalidParameter(format!(
                "hyperbolic curvature must be finite and negative, got {kappa}"
            )));
        }
        Ok(AmbientSpace {
            kind: AmbientKind::Hyperbolic { kappa },
            inj_radius: f64::INFINITY,
            sect_sup: 2.0 * kappa,
            sect_inf: kappa,
            ricci_deriv_sup: Self::model_ricci_bounds(kappa),
        })
    }

    pub fn spherical(kappa: f64) -> Result<Self, AmbientError> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(AmbientError::InvalidParameter(format!(
                "spherical curvature must be finite and positive, got {kappa}"
            )));
        }
        Ok(AmbientSpace {
            kind: AmbientKind::Spherical { kappa },
            inj_radius: std::f64::consts::PI / kappa.sqrt(),
            sect_sup: 2.0 * kappa,
            sect_inf: kappa,
            ricci_deriv_sup: Self::model_ricci_bounds(kappa),
        })
    }

    pub fn conformal(factor: Arc<dyn ConformalFactor>, bounds: ConformalBounds) -> Result<Self, AmbientError> {
        if !(bounds.inj_radius > 0.0) {
            return Err(AmbientError::InvalidParameter(format!(
                "declared injectivity radius must be positive, got {}",
                bounds.inj_radius
            )));
        }
        // `sect_sup` bounds the Ricci form while `sect_inf` bounds sectional
        // curvature, so no order between the two is required (hyperbolic
        // space has sect_inf = kappa > 2 kappa = sect_sup).
        Ok(AmbientSpace {
            kind: AmbientKind::Conformal { factor },
            inj_radius: bounds.inj_radius,
            sect_sup: bounds.sect_sup,
            sect_inf: bounds.sect_inf,
            ricci_deriv_sup: bounds.ricci_deriv_sup,
        })
    }

    /// Ricci is parallel with norm `|2 kappa g| = 2 sqrt(3) |kappa|` in the
    /// model spaces; all covariant derivatives vanish.
    fn model_ricci_bounds(kappa: f64) -> [f64; 6] {
        let mut b = [0.0; 6];
        b[0] = 2.0 * 3.0f64.sqrt() * kappa.abs();
        b
    }

    pub fn kind(&self) -> &AmbientKind {
        &self.kind
    }

    pub fn inj_radius(&self) -> f64 {
        self.inj_radius
    }

    /// Supremum of the Ricci quadratic form on unit vectors (`2 kappa` for the
    /// model spaces, declared for conformal factors).
    pub fn sect_sup(&self) -> f64 {
        self.sect_sup
    }

    /// Lower sectional curvature bound, used by the covering construction.
    pub fn sect_inf(&self) -> f64 {
        self.sect_inf
    }

    /// Bound on the norm of the i-th covariant derivative of Ricci, i in 0..=5.
    pub fn ricci_deriv_sup(&self, i: usize) -> f64 {
        self.ricci_deriv_sup[i]
    }

    /// Tag written into snapshot headers, parsable back for the model kinds.
    pub fn chart_tag(&self) -> String {
        match &self.kind {
            AmbientKind::Euclidean => "euclidean".to_string(),
            AmbientKind::Hyperbolic { kappa } => format!("hyperbolic kappa={kappa}"),
            AmbientKind::Spherical { kappa } => format!("spherical kappa={kappa}"),
            AmbientKind::Conformal { factor } => format!("conformal {}", factor.name()),
        }
    }

    fn chart_name(&self) -> &'static str {
        match &self.kind {
            AmbientKind::Euclidean => "euclidean",
            AmbientKind::Hyperbolic { .. } => "hyperbolic",
            AmbientKind::Spherical { .. } => "spherical",
            AmbientKind::Conformal { .. } => "conformal",
        }
    }

    /// Largest chart radius at which queries are accepted, if bounded.
    pub fn chart_bound(&self) -> Option<f64> {
        match &self.kind {
            AmbientKind::Euclidean | AmbientKind::Conformal { .. } => None,
            AmbientKind::Hyperbolic { kappa } => Some((-1.0 / kappa).sqrt()),
            AmbientKind::Spherical { kappa } => {
                // Allow geodesic distance from the chart origin up to
                // SPHERICAL_CHART_CAP times the distance to the pole.
                let half_angle = SPHERICAL_CHART_CAP * std::f64::consts::FRAC_PI_2;
                Some(half_angle.tan() / kappa.sqrt())
            }
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        match self.chart_bound() {
            None => true,
            Some(b) => p.norm() < b,
        }
    }

    pub fn require_in_chart(&self, p: &Vector3<f64>) -> Result<(), AmbientError> {
        if self.contains(p) {
            return Ok(());
        }
        let bound = self.chart_bound().unwrap();
        Err(AmbientError::OutOfChart {
            x: p.x,
            y: p.y,
            z: p.z,
            chart: self.chart_name(),
            detail: format!("|p| = {:.6} exceeds chart radius {:.6}", p.norm(), bound),
        })
    }

    /// `phi`, `grad phi`, `hess phi` of the conformal factor at `p`.
    fn log_factor(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>, Matrix3<f64>) {
        match &self.kind {
            AmbientKind::Euclidean => (0.0, Vector3::zeros(), Matrix3::zeros()),
            AmbientKind::Hyperbolic { kappa } | AmbientKind::Spherical { kappa } => {
                // phi = ln 2 - ln(1 + kappa |p|^2)
                let k = *kappa;
                let s = 1.0 + k * p.norm_squared();
                let grad = p * (-2.0 * k / s);
                let hess = Matrix3::identity() * (-2.0 * k / s)
                    + (p * p.transpose()) * (4.0 * k * k / (s * s));
                (2.0f64.ln() - s.ln(), grad, hess)
            }
            AmbientKind::Conformal { factor } => {
                (factor.phi(p), factor.grad_phi(p), factor.hess_phi(p))
            }
        }
    }

    /// Conformal factor `lambda = e^phi`, so that `g = lambda^2 delta`.
    pub fn conformal_factor(&self, p: &Vector3<f64>) -> Result<f64, AmbientError> {
        self.require_in_chart(p)?;
        Ok(self.log_factor(p).0.exp())
    }

    /// Metric tensor at `p` (symmetric positive definite).
    pub fn metric_at(&self, p: &Vector3<f64>) -> Result<Matrix3<f64>, AmbientError> {
        let lambda = self.conformal_factor(p)?;
        Ok(Matrix3::identity() * (lambda * lambda))
    }

    /// Symmetric square root of the metric, `B` with `B^T B = g`.
    pub fn metric_sqrt(&self, p: &Vector3<f64>) -> Result<Matrix3<f64>, AmbientError> {
        Ok(Matrix3::identity() * self.conformal_factor(p)?)
    }

    pub fn metric_sqrt_inv(&self, p: &Vector3<f64>) -> Result<Matrix3<f64>, AmbientError> {
        Ok(Matrix3::identity() * self.conformal_factor(p)?.recip())
    }

    /// Inner product of chart vectors at `p`.
    pub fn dot(&self, p: &Vector3<f64>, u: &Vector3<f64>, v: &Vector3<f64>) -> Result<f64, AmbientError> {
        let lambda = self.conformal_factor(p)?;
        Ok(lambda * lambda * u.dot(v))
    }

    /// Christoffel symbols `Gamma^k_{ij}` at `p`; `result[k][(i, j)]`.
    ///
    /// For `g = e^{2phi} delta` these are
    /// `Gamma^k_{ij} = d_i phi delta^k_j + d_j phi delta^k_i - d_k phi delta_{ij}`.
    pub fn christoffel(&self, p: &Vector3<f64>) -> Result<[Matrix3<f64>; 3], AmbientError> {
        self.require_in_chart(p)?;
        let (_, grad, _) = self.log_factor(p);
        Ok(christoffel_from_grad(&grad))
    }

    /// All-lower curvature tensor `R_{ijkl}` at `p`.
    pub fn riemann(&self, p: &Vector3<f64>) -> Result<Riemann, AmbientError> {
        self.require_in_chart(p)?;
        match &self.kind {
            AmbientKind::Euclidean => Ok(Riemann::zero()),
            AmbientKind::Hyperbolic { kappa } | AmbientKind::Spherical { kappa } => {
                let g = self.metric_at(p)?;
                Ok(Riemann::constant_curvature(*kappa, &g))
            }
            AmbientKind::Conformal { .. } => Ok(self.riemann_from_connection(p)),
        }
    }

    /// Ricci tensor (all-lower) at `p`.
    pub fn ricci(&self, p: &Vector3<f64>) -> Result<Matrix3<f64>, AmbientError> {
        match &self.kind {
            AmbientKind::Euclidean => {
                self.require_in_chart(p)?;
                Ok(Matrix3::zeros())
            }
            AmbientKind::Hyperbolic { kappa } | AmbientKind::Spherical { kappa } => {
                Ok(self.metric_at(p)? * (2.0 * kappa))
            }
            AmbientKind::Conformal { .. } => {
                let riem = self.riemann(p)?;
                let ginv = self.metric_at(p)?.try_inverse().expect("metric is SPD");
                Ok(riem.ricci(&ginv))
            }
        }
    }

    /// Scalar curvature at `p`.
    pub fn scalar_curvature(&self, p: &Vector3<f64>) -> Result<f64, AmbientError> {
        match &self.kind {
            AmbientKind::Euclidean => {
                self.require_in_chart(p)?;
                Ok(0.0)
            }
            AmbientKind::Hyperbolic { kappa } | AmbientKind::Spherical { kappa } => {
                self.require_in_chart(p)?;
                Ok(6.0 * kappa)
            }
            AmbientKind::Conformal { .. } => {
                let ric = self.ricci(p)?;
                let ginv = self.metric_at(p)?.try_inverse().expect("metric is SPD");
                Ok((ginv * ric).trace())
            }
        }
    }

    /// Ricci form evaluated on a chart vector: `Ric(v, v)`.
    pub fn ricci_quadratic(&self, p: &Vector3<f64>, v: &Vector3<f64>) -> Result<f64, AmbientError> {
        let ric = self.ricci(p)?;
        Ok((v.transpose() * ric * v)[(0, 0)])
    }

    /// Curvature tensor assembled from the analytic connection,
    /// `R_{ijk}{}^l = d_i Gamma^l_{jk} - d_j Gamma^l_{ik} + Gamma ... `,
    /// then lowered. Only second derivatives of `phi` are needed.
    fn riemann_from_connection(&self, p: &Vector3<f64>) -> Riemann {
        let (phi, grad, hess) = self.log_factor(p);
        // d_i Gamma^k_{jl} = hess_{ij} delta^k_l + hess_{il} delta^k_j - hess_{ik} delta_{jl}
        let dgamma = |i: usize, k: usize, j: usize, l: usize| -> f64 {
            let mut v = 0.0;
            if k == l {
                v += hess[(i, j)];
            }
            if k == j {
                v += hess[(i, l)];
            }
            if j == l {
                v -= hess[(i, k)];
            }
            v
        };
        let gamma = christoffel_from_grad(&grad);
        let lam2 = (2.0 * phi).exp();
        let mut r = Riemann::zero();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for m in 0..3 {
                        let mut up = dgamma(i, m, j, k) - dgamma(j, m, i, k);
                        for q in 0..3 {
                            up += gamma[m][(i, q)] * gamma[q][(j, k)]
                                - gamma[m][(j, q)] * gamma[q][(i, k)];
                        }
                        // lower the last index: metric is lam2 * delta
                        r.c[i][j][k][m] = lam2 * up;
                    }
                }
            }
        }
        r
    }

    /// Geodesic distance between chart points.
    ///
    /// Closed forms for the model kinds; for conformal factors a shooting
    /// method (Newton on the initial velocity over an RK4 geodesic integrator)
    /// with endpoint tolerance `1e-9 (1 + |q - p|)` in chart coordinates.
    pub fn geodesic_distance(&self, p: &Vector3<f64>, q: &Vector3<f64>) -> Result<f64, AmbientError> {
        self.require_in_chart(p)?;
        self.require_in_chart(q)?;
        match &self.kind {
            AmbientKind::Euclidean => Ok((p - q).norm()),
            AmbientKind::Hyperbolic { kappa } => {
                let s = (-kappa).sqrt();
                let x = p * s;
                let y = q * s;
                let num = 2.0 * (x - y).norm_squared();
                let den = (1.0 - x.norm_squared()) * (1.0 - y.norm_squared());
                let arg = (1.0 + num / den).max(1.0);
                Ok(arg.acosh() / s)
            }
            AmbientKind::Spherical { kappa } => {
                let r = kappa.sqrt().recip();
                let x = stereographic_lift(p, r);
                let y = stereographic_lift(q, r);
                let c = (x.dot(&y) / (r * r)).clamp(-1.0, 1.0);
                Ok(r * c.acos())
            }
            AmbientKind::Conformal { .. } => self.distance_by_shooting(p, q),
        }
    }

    fn distance_by_shooting(&self, p: &Vector3<f64>, q: &Vector3<f64>) -> Result<f64, AmbientError> {
        let sep = (q - p).norm();
        if sep == 0.0 {
            return Ok(0.0);
        }
        let tol = 1e-9 * (1.0 + sep);
        let steps = 64.max((sep * 32.0).ceil() as usize);
        let mut v = q - p;
        let mut err = self.shoot(p, &v, steps)? - q;
        for iter in 0..64 {
            if err.norm() <= tol {
                // Geodesics have constant speed; affine time is [0, 1].
                let lambda = self.conformal_factor(p)?;
                return Ok(lambda * v.norm());
            }
            let eps = 1e-7 * (1.0 + v.norm());
            let mut jac = Matrix3::zeros();
            for c in 0..3 {
                let mut vp = v;
                vp[c] += eps;
                let col = (self.shoot(p, &vp, steps)? - q - err) / eps;
                jac.set_column(c, &col);
            }
            let dv = jac
                .lu()
                .solve(&(-err))
                .ok_or(AmbientError::NoConvergence { iterations: iter, residual: err.norm() })?;
            // Damped update: halve until the residual does not grow.
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..8 {
                let cand = v + dv * scale;
                let cand_err = self.shoot(p, &cand, steps)? - q;
                if cand_err.norm() < err.norm() {
                    v = cand;
                    err = cand_err;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                return Err(AmbientError::NoConvergence { iterations: iter, residual: err.norm() });
            }
        }
        Err(AmbientError::NoConvergence { iterations: 64, residual: err.norm() })
    }

    /// Endpoint of the affine-time-1 geodesic from `p` with initial chart
    /// velocity `v`, by fixed-step RK4 on `x'' = -Gamma(x)(x', x')`.
    fn shoot(&self, p: &Vector3<f64>, v: &Vector3<f64>, steps: usize) -> Result<Vector3<f64>, AmbientError> {
        let h = 1.0 / steps as f64;
        let mut x = *p;
        let mut u = *v;
        let acc = |x: &Vector3<f64>, u: &Vector3<f64>| -> Result<Vector3<f64>, AmbientError> {
            let gamma = self.christoffel(x)?;
            let mut a = Vector3::zeros();
            for k in 0..3 {
                a[k] = -(u.transpose() * gamma[k] * u)[(0, 0)];
            }
            Ok(a)
        };
        for _ in 0..steps {
            let k1x = u;
            let k1u = acc(&x, &u)?;
            let k2x = u + k1u * (h / 2.0);
            let k2u = acc(&(x + k1x * (h / 2.0)), &k2x)?;
            let k3x = u + k2u * (h / 2.0);
            let k3u = acc(&(x + k2x * (h / 2.0)), &k3x)?;
            let k4x = u + k3u * h;
            let k4u = acc(&(x + k3x * h), &k4x)?;
            x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
            u += (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (h / 6.0);
        }
        Ok(x)
    }

    /// Chart point at geodesic distance `dist` from `p` along the chart
    /// direction `dir` (need not be normalized).
    pub fn exp_chart(&self, p: &Vector3<f64>, dir: &Vector3<f64>, dist: f64) -> Result<Vector3<f64>, AmbientError> {
        self.require_in_chart(p)?;
        if dist == 0.0 || dir.norm() == 0.0 {
            return Ok(*p);
        }
        let lambda = self.conformal_factor(p)?;
        let v = dir * (dist / (lambda * dir.norm()));
        let steps = 64.max((dist.abs() * 32.0).ceil() as usize);
        self.shoot(p, &v, steps)
    }

    /// Upper bound on how many balls of radius `rho/2` cover any geodesic ball
    /// of radius `rho`.
    ///
    /// Construction: cover the tangent-space ball of radius `rho` by `n^3`
    /// cubes whose circumscribed balls have radius `rho / (2 beta)`, where
    /// `beta = sinh(a)/a >= 1` (with `a = sqrt(3) sqrt(-sect_inf) rho`) bounds
    /// the expansion of the exponential map under the lower curvature bound.
    /// The exponential image of each such ball lies in a geodesic ball of
    /// radius `rho/2`. In Euclidean space `beta = 1` and the bound is the
    /// rho-independent 64; non-positively curved exponentials only expand, so
    /// for positive lower bounds `beta = 1` as well.
    pub fn covering_constant(&self, rho: f64) -> Result<u32, AmbientError> {
        if !(rho > 0.0) {
            return Err(AmbientError::InvalidParameter(format!(
                "covering radius must be positive, got {rho}"
            )));
        }
        if rho >= self.inj_radius {
            return Err(AmbientError::RadiusExceedsInjectivity { radius: rho, inj: self.inj_radius });
        }
        let n = (EUCLIDEAN_COVER_AXIS * self.cover_distortion(rho)).ceil() as u32;
        Ok(n * n * n)
    }

    fn cover_distortion(&self, rho: f64) -> f64 {
        let low = self.sect_inf.min(0.0);
        if low == 0.0 {
            return 1.0;
        }
        let a = 3.0f64.sqrt() * (-low).sqrt() * rho;
        if a < 1e-8 {
            1.0
        } else {
            a.sinh() / a
        }
    }

    /// Centers realizing [`covering_constant`]: chart points whose `rho/2`
    /// geodesic balls cover the geodesic ball of radius `rho` around `x`.
    pub fn covering_centers(&self, x: &Vector3<f64>, rho: f64) -> Result<Vec<Vector3<f64>>, AmbientError> {
        let n = ((EUCLIDEAN_COVER_AXIS * self.cover_distortion(rho)).ceil()) as i64;
        self.covering_constant(rho)?;
        let lambda = self.conformal_factor(x)?;
        let side = 2.0 * rho / n as f64;
        let mut centers = Vec::with_capacity((n * n * n) as usize);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let c = Vector3::new(
                        -rho + side * (i as f64 + 0.5),
                        -rho + side * (j as f64 + 0.5),
                        -rho + side * (k as f64 + 0.5),
                    );
                    let len = c.norm();
                    if len == 0.0 {
                        centers.push(*x);
                        continue;
                    }
                    // Tangent vector in chart components; `exp_chart`
                    // normalizes against the metric, so divide out lambda.
                    let dir = c / lambda;
                    centers.push(self.exp_chart(x, &dir, len)?);
                }
            }
        }
        Ok(centers)
    }
}

fn christoffel_from_grad(grad: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let mut gamma = [Matrix3::zeros(); 3];
    for k in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                let mut v = 0.0;
                if k == j {
                    v += grad[i];
                }
                if k == i {
                    v += grad[j];
                }
                if i == j {
                    v -= grad[k];
                }
                gamma[k][(i, j)] = v;
            }
        }
    }
    gamma
}

/// Embed a stereographic chart point on the radius-`r` sphere in R^4.
fn stereographic_lift(p: &Vector3<f64>, r: f64) -> nalgebra::Vector4<f64> {
    let r2 = r * r;
    let n2 = p.norm_squared();
    let den = r2 + n2;
    nalgebra::Vector4::new(
        2.0 * r2 * p.x / den,
        2.0 * r2 * p.y / den,
        2.0 * r2 * p.z / den,
        r * (r2 - n2) / den,
    )
}

/// All-lower curvature tensor at a point, `c[i][j][k][l] = R_{ijkl}`.
#[derive(Clone)]
pub struct Riemann {
    pub c: [[[[f64; 3]; 3]; 3]; 3],
}

impl Riemann {
    pub fn zero() -> Self {
        Riemann { c: [[[[0.0; 3]; 3]; 3]; 3] }
    }

    pub fn constant_curvature(kappa: f64, g: &Matrix3<f64>) -> Self {
        let mut r = Riemann::zero();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        r.c[i][j][k][l] = kappa * (g[(i, l)] * g[(j, k)] - g[(i, k)] * g[(j, l)]);
                    }
                }
            }
        }
        r
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.c[i][j][k][l]
    }

    /// `Ric_{il} = g^{jk} R_{ijkl}`.
    pub fn ricci(&self, ginv: &Matrix3<f64>) -> Matrix3<f64> {
        let mut ric = Matrix3::zeros();
        for i in 0..3 {
            for l in 0..3 {
                let mut s = 0.0;
                for j in 0..3 {
                    for k in 0..3 {
                        s += ginv[(j, k)] * self.c[i][j][k][l];
                    }
                }
                ric[(i, l)] = s;
            }
        }
        ric
    }

    /// Evaluate on four chart vectors: `R(a, b, c, d)`.
    pub fn eval(&self, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            if a[i] == 0.0 {
                continue;
            }
            for j in 0..3 {
                if b[j] == 0.0 {
                    continue;
                }
                for k in 0..3 {
                    for l in 0..3 {
                        s += self.c[i][j][k][l] * a[i] * b[j] * c[k] * d[l];
                    }
                }
            }
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        m = m.max(self.c[i][j][k][l].abs());
                    }
                }
            }
        }
        m
    }
}

/// Gaussian bump conformal factor `phi = a exp(-|p|^2 / (2 w^2))`, a mild
/// perturbation of Euclidean space useful for exercising the generic paths.
#[derive(Debug, Clone)]
pub struct BumpField {
    pub amplitude: f64,
    pub width: f64,
}

impl BumpField {
    pub fn new(amplitude: f64, width: f64) -> Result<Self, AmbientError> {
        if !(width > 0.0) || !amplitude.is_finite() {
            return Err(AmbientError::InvalidParameter(format!(
                "bump field needs positive width and finite amplitude, got a={amplitude}, w={width}"
            )));
        }
        Ok(BumpField { amplitude, width })
    }

    /// Bounds calibrated by dense sampling of the curvature tensors over the
    /// bump support, with a 2x safety margin; adequate for monitoring, not a
    /// proof.
    pub fn calibrated_bounds(&self) -> ConformalBounds {
        let factor: Arc<dyn ConformalFactor> = Arc::new(self.clone());
        let probe = AmbientSpace {
            kind: AmbientKind::Conformal { factor },
            inj_radius: f64::INFINITY,
            sect_sup: 0.0,
            sect_inf: 0.0,
            ricci_deriv_sup: [0.0; 6],
        };
        let mut sec_lo = f64::INFINITY;
        let mut sec_hi = f64::NEG_INFINITY;
        let mut ric_max: f64 = 0.0;
        let n = 9;
        let reach = 3.0 * self.width;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let f = |t: i32| -> f64 { reach * (2.0 * t as f64 / (n - 1) as f64 - 1.0) };
                    let p = Vector3::new(f(i), f(j), f(k));
                    let riem = probe.riemann_from_connection(&p);
                    let g = probe.metric_at(&p).unwrap();
                    let ginv = g.try_inverse().unwrap();
                    let ric = riem.ricci(&ginv);
                    // sectional curvatures of the coordinate planes
                    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
                        let denom = g[(a, a)] * g[(b, b)] - g[(a, b)] * g[(a, b)];
                        let sec = riem.c[a][b][b][a] / denom;
                        sec_lo = sec_lo.min(sec);
                        sec_hi = sec_hi.max(sec);
                    }
                    let mut sq = 0.0;
                    for a in 0..3 {
                        for b in 0..3 {
                            for c in 0..3 {
                                for d in 0..3 {
                                    sq += ginv[(a, b)] * ginv[(c, d)] * ric[(a, c)] * ric[(b, d)];
                                }
                            }
                        }
                    }
                    ric_max = ric_max.max(sq.sqrt());
                }
            }
        }
        let margin = 2.0;
        let mut deriv = [f64::INFINITY; 6];
        deriv[0] = margin * ric_max;
        // Scale-based bounds for the first two derivatives; higher ones are
        // not consumed anywhere and stay infinite.
        deriv[1] = margin * ric_max / self.width;
        deriv[2] = margin * ric_max / (self.width * self.width);
        ConformalBounds {
            inj_radius: f64::INFINITY,
            sect_sup: margin * sec_hi.max(0.0),
            sect_inf: margin * sec_lo.min(0.0),
            ricci_deriv_sup: deriv,
        }
    }

    /// Ambient space carrying this bump with calibrated bounds.
    pub fn into_space(self) -> AmbientSpace {
        let bounds = self.calibrated_bounds();
        AmbientSpace::conformal(Arc::new(self), bounds).expect("calibrated bounds are valid")
    }
}

impl ConformalFactor for BumpField {
    fn phi(&self, p: &Vector3<f64>) -> f64 {
        self.amplitude * (-p.norm_squared() / (2.0 * self.width * self.width)).exp()
    }

    fn grad_phi(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p * (-self.phi(p) / (self.width * self.width))
    }

    fn hess_phi(&self, p: &Vector3<f64>) -> Matrix3<f64> {
        let w2 = self.width * self.width;
        let phi = self.phi(p);
        Matrix3::identity() * (-phi / w2) + (p * p.transpose()) * (phi / (w2 * w2))
    }

    fn name(&self) -> &'static str {
        "gaussian-bump"
    }
}
