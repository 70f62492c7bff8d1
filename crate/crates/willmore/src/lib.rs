//! Willmore flow of closed surfaces immersed in curved ambient 3-manifolds.
//!
//! A triangulated closed surface, carried in the global chart of a conformally
//! flat ambient space, is driven by the negative gradient of the Willmore
//! energy `W = 1/4 integral H^2 dmu`. The descent velocity is `-W(f) nu` with
//! `W(f) = Delta H + H |A0|^2 + H Ric(nu, nu)`, where `A0` is the trace-free
//! part of the second fundamental form. Alongside the flow the crate tracks
//! the quantities that govern finite-time curvature concentration: the local
//! `integral |A|^2` concentration function, a ball-covering inequality, a
//! Sobolev inequality with explicit constant, and finite-difference checks of
//! the evolution equations for metric, measure, normal and curvature.
//!
//! Orientation and sign convention: normals are exterior, and the round unit
//! sphere in Euclidean space has `H = +2`. All formulas in the crate are
//! stated in this convention.
//!
//! Modules:
//! - [`ambient`]: metric, connection, curvature and distances of the ambient.
//! - [`mesh`]: immersions, induced metric, intrinsic discrete operators.
//! - [`shape`]: second fundamental form estimation, Willmore energy/operator,
//!   Gauss/Codazzi/Simons residuals.
//! - [`flow`]: explicit energy-monotone gradient stepping.
//! - [`diagnostics`]: concentration, covering, Sobolev and evolution checks.
//! - [`io`]: configuration, mesh generation, snapshots, diagnostics logs.

pub mod ambient;
pub mod diagnostics;
pub mod flow;
pub mod io;
pub mod mesh;
pub mod shape;
