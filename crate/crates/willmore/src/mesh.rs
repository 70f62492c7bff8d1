//! Immersed triangle meshes and the discrete operators induced on them.
//!
//! An [`Immersion`] stores vertex positions in the ambient chart together
//! with oriented triangles; it must be closed, connected and consistently
//! oriented. All metric quantities are derived against an
//! [`AmbientSpace`](crate::ambient::AmbientSpace): each triangle carries the
//! pullback metric of its affine parametrization evaluated at the barycenter,
//! and every discrete operator (cotangent Laplacian, mixed-Voronoi dual
//! areas, angle defects, gradients) is built from those per-triangle Gram
//! matrices, so the same code serves every chart kind.

use crate::ambient::{AmbientError, AmbientSpace};
use nalgebra::{Matrix2, Vector2, Vector3};
use std::collections::{HashMap, VecDeque};
use thiserror::Error;

/// Triangles with ambient area below this are rejected as degenerate.
pub const TRIANGLE_AREA_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("triangle {tri} references vertex {vertex} but there are only {count} vertices")]
    IndexOutOfBounds { tri: usize, vertex: usize, count: usize },
    #[error("triangle {tri} repeats a vertex")]
    RepeatedVertex { tri: usize },
    #[error("edge ({a}, {b}) borders {count} triangles; a closed surface needs exactly 2")]
    NotClosed { a: usize, b: usize, count: usize },
    #[error("edge ({a}, {b}) is traversed twice in the same direction; orientation is inconsistent")]
    InconsistentOrientation { a: usize, b: usize },
    #[error("mesh is not connected ({reached} of {total} vertices reachable)")]
    NotConnected { reached: usize, total: usize },
    #[error("triangle {tri} is degenerate: ambient area {area:.3e} below floor {floor:.3e}")]
    DegenerateTriangle { tri: usize, area: f64, floor: f64 },
    #[error(transparent)]
    Ambient(#[from] AmbientError),
}

/// A closed, connected, consistently oriented triangle mesh whose vertices
/// live in the ambient chart.
#[derive(Debug, Clone)]
pub struct Immersion {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[usize; 3]>,
    /// Flow time this configuration belongs to.
    pub t: f64,
    edges: Vec<[usize; 2]>,
    edge_tris: Vec<[usize; 2]>,
    vert_tris: Vec<Vec<usize>>,
    vert_nbrs: Vec<Vec<usize>>,
}

impl Immersion {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let nv = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= nv {
                    return Err(MeshError::IndexOutOfBounds { tri: t, vertex: v, count: nv });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::RepeatedVertex { tri: t });
            }
        }

        // Each undirected edge must be traversed once per direction.
        let mut edge_map: HashMap<(usize, usize), (usize, usize, Vec<usize>)> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for s in 0..3 {
                let a = tri[s];
                let b = tri[(s + 1) % 3];
                let key = (a.min(b), a.max(b));
                let entry = edge_map.entry(key).or_insert((0, 0, Vec::new()));
                if a < b {
                    entry.0 += 1;
                } else {
                    entry.1 += 1;
                }
                entry.2.push(t);
            }
        }
        let mut edges = Vec::with_capacity(edge_map.len());
        let mut edge_tris = Vec::with_capacity(edge_map.len());
        let mut keys: Vec<_> = edge_map.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            let (fwd, bwd, tris) = &edge_map[&key];
            let count = fwd + bwd;
            if count != 2 {
                return Err(MeshError::NotClosed { a: key.0, b: key.1, count });
            }
            if *fwd != 1 {
                return Err(MeshError::InconsistentOrientation { a: key.0, b: key.1 });
            }
            edges.push([key.0, key.1]);
            edge_tris.push([tris[0], tris[1]]);
        }

        let mut vert_tris = vec![Vec::new(); nv];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                vert_tris[v].push(t);
            }
        }
        let mut vert_nbrs = vec![Vec::new(); nv];
        for e in &edges {
            vert_nbrs[e[0]].push(e[1]);
            vert_nbrs[e[1]].push(e[0]);
        }
        for n in &mut vert_nbrs {
            n.sort_unstable();
        }

        // Connectivity; also catches isolated vertices.
        let mut seen = vec![false; nv];
        let mut queue = VecDeque::new();
        seen[0] = true;
        queue.push_back(0usize);
        let mut reached = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &vert_nbrs[v] {
                if !seen[w] {
                    seen[w] = true;
                    reached += 1;
                    queue.push_back(w);
                }
            }
        }
        if reached != nv {
            return Err(MeshError::NotConnected { reached, total: nv });
        }

        Ok(Immersion { vertices, triangles, t: 0.0, edges, edge_tris, vert_tris, vert_nbrs })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn edge_triangles(&self) -> &[[usize; 2]] {
        &self.edge_tris
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.triangles.len() as i64
    }

    pub fn one_ring(&self, v: usize) -> &[usize] {
        &self.vert_nbrs[v]
    }

    pub fn incident_triangles(&self, v: usize) -> &[usize] {
        &self.vert_tris[v]
    }

    /// Vertices within two edges of `v`, excluding `v`, sorted.
    pub fn two_ring(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.vert_nbrs[v].clone();
        for &w in &self.vert_nbrs[v] {
            out.extend_from_slice(&self.vert_nbrs[w]);
        }
        out.sort_unstable();
        out.dedup();
        out.retain(|&w| w != v);
        out
    }

    /// Every vertex must lie strictly inside the ambient chart.
    pub fn validate_in_chart(&self, amb: &AmbientSpace) -> Result<(), MeshError> {
        for p in &self.vertices {
            amb.require_in_chart(p)?;
        }
        Ok(())
    }

    /// Same connectivity with transformed vertex positions.
    pub fn map_vertices(&self, mut f: impl FnMut(&Vector3<f64>) -> Vector3<f64>) -> Immersion {
        let mut out = self.clone();
        for p in &mut out.vertices {
            *p = f(p);
        }
        out
    }

    /// Same connectivity with replaced vertex positions. Connectivity tables
    /// are reused, so this is the cheap path for a flow step.
    pub fn with_positions(&self, vertices: Vec<Vector3<f64>>) -> Immersion {
        assert_eq!(vertices.len(), self.vertices.len());
        let mut out = self.clone();
        out.vertices = vertices;
        out
    }

    /// Same vertices with all triangle windings flipped.
    pub fn flipped(&self) -> Immersion {
        let triangles = self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect();
        Immersion::new(self.vertices.clone(), triangles).expect("flip preserves validity")
    }
}

/// Pullback geometry: per-triangle Gram matrix of the affine parametrization
/// in the edge basis `(v1 - v0, v2 - v0)`, the ambient area element, and
/// per-edge ambient lengths.
#[derive(Debug, Clone)]
pub struct InducedMetric {
    pub tri_metric: Vec<Matrix2<f64>>,
    pub tri_area: Vec<f64>,
    pub edge_length: Vec<f64>,
    pub total_area: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl InducedMetric {
    pub fn compute(im: &Immersion, amb: &AmbientSpace) -> Result<InducedMetric, MeshError> {
        let vs = im.vertices();
        let nt = im.triangle_count();
        let mut tri_metric = Vec::with_capacity(nt);
        let mut tri_area = Vec::with_capacity(nt);
        let mut total_area = 0.0;
        for (t, tri) in im.triangles().iter().enumerate() {
            let (p0, p1, p2) = (vs[tri[0]], vs[tri[1]], vs[tri[2]]);
            let bary = (p0 + p1 + p2) / 3.0;
            let lambda = amb.conformal_factor(&bary)?;
            let e1 = p1 - p0;
            let e2 = p2 - p0;
            let l2 = lambda * lambda;
            let g = Matrix2::new(
                l2 * e1.dot(&e1),
                l2 * e1.dot(&e2),
                l2 * e1.dot(&e2),
                l2 * e2.dot(&e2),
            );
            let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
            let area = 0.5 * det.max(0.0).sqrt();
            if !(area >= TRIANGLE_AREA_FLOOR) {
                return Err(MeshError::DegenerateTriangle { tri: t, area, floor: TRIANGLE_AREA_FLOOR });
            }
            tri_metric.push(g);
            tri_area.push(area);
            total_area += area;
        }
        let mut edge_length = Vec::with_capacity(im.edges().len());
        let mut h_min = f64::INFINITY;
        let mut h_max = 0.0f64;
        for e in im.edges() {
            let (a, b) = (vs[e[0]], vs[e[1]]);
            let mid = (a + b) * 0.5;
            let l = amb.conformal_factor(&mid)? * (b - a).norm();
            h_min = h_min.min(l);
            h_max = h_max.max(l);
            edge_length.push(l);
        }
        Ok(InducedMetric { tri_metric, tri_area, edge_length, total_area, h_min, h_max })
    }

    /// Intrinsic squared side lengths of triangle `t` in edge order
    /// `(v0 v1, v1 v2, v2 v0)`.
    pub fn side_lengths_sq(&self, t: usize) -> [f64; 3] {
        let g = &self.tri_metric[t];
        [
            g[(0, 0)],
            g[(0, 0)] + g[(1, 1)] - 2.0 * g[(0, 1)],
            g[(1, 1)],
        ]
    }

    /// Cotangents of the interior angles of triangle `t` at corners 0, 1, 2.
    pub fn corner_cotans(&self, t: usize) -> [f64; 3] {
        let g = &self.tri_metric[t];
        let two_a = 2.0 * self.tri_area[t];
        let cot0 = g[(0, 1)] / two_a;
        let cot1 = (g[(0, 0)] - g[(0, 1)]) / two_a;
        let cot2 = (g[(1, 1)] - g[(0, 1)]) / two_a;
        [cot0, cot1, cot2]
    }

    /// Interior angles of triangle `t` at corners 0, 1, 2, in radians.
    pub fn corner_angles(&self, t: usize) -> [f64; 3] {
        let g = &self.tri_metric[t];
        let (a, b) = (g[(0, 0)].sqrt(), g[(1, 1)].sqrt());
        let
            c = (g[(0, 0)] + g[(1, 1)] - 2.0 * g[(0, 1)]).max(0.0).sqrt();
        let cos0 = (g[(0, 1)] / (a * b)).clamp(-1.0, 1.0);
        let cos1 = ((g[(0, 0)] - g[(0, 1)]) / (a * c)).clamp(-1.0, 1.0);
        let a0 = cos0.acos();
        let a1 = cos1.acos();
        [a0, a1, (std::f64::consts::PI - a0 - a1).max(0.0)]
    }
}

/// Cotangent Laplacian with mixed-Voronoi vertex areas.
///
/// `apply` computes `Delta u (v) = (1/dual_area_v) sum_j w_vj (u_j - u_v)`
/// with `w = (cot alpha + cot beta) / 2`; negative weights from obtuse pairs
/// are kept as-is. The weighted form (before dual-area division) is symmetric
/// negative semidefinite.
#[derive(Debug, Clone)]
pub struct Laplacian {
    pub dual_area: Vec<f64>,
    edge_weight: Vec<f64>,
    edges: Vec<[usize; 2]>,
    offsets: Vec<usize>,
    nbr: Vec<usize>,
    w: Vec<f64>,
}

impl Laplacian {
    pub fn build(im: &Immersion, induced: &InducedMetric) -> Laplacian {
        let nv = im.vertex_count();
        let ne = im.edges().len();
        let mut edge_weight = vec![0.0; ne];
        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::with_capacity(ne);
        for (i, e) in im.edges().iter().enumerate() {
            edge_index.insert((e[0], e[1]), i);
        }
        let mut dual_area = vec![0.0; nv];
        for (t, tri) in im.triangles().iter().enumerate() {
            let cots = induced.corner_cotans(t);
            let sides = induced.side_lengths_sq(t);
            // side s joins corners s and s+1 and is opposite corner s+2
            for s in 0..3 {
                let a = tri[s];
                let b = tri[(s + 1) % 3];
                let key = (a.min(b), a.max(b));
                edge_weight[edge_index[&key]] += 0.5 * cots[(s + 2) % 3];
            }
            let area = induced.tri_area[t];
            let obtuse = cots.iter().position(|&c| c < 0.0);
            match obtuse {
                Some(c) => {
                    for s in 0..3 {
                        dual_area[tri[s]] += if s == c { area / 2.0 } else { area / 4.0 };
                    }
                }
                None => {
                    // corner s is flanked by sides s and s+2
                    for s in 0..3 {
                        let va = 0.125 * (sides[s] * cots[(s + 2) % 3] + sides[(s + 2) % 3] * cots[(s + 1) % 3]);
                        dual_area[tri[s]] += va;
                    }
                }
            }
        }
        let mut offsets = vec![0usize; nv + 1];
        for e in im.edges() {
            offsets[e[0] + 1] += 1;
            offsets[e[1] + 1] += 1;
        }
        for i in 0..nv {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut nbr = vec![0usize; 2 * ne];
        let mut w = vec![0.0; 2 * ne];
        for (i, e) in im.edges().iter().enumerate() {
            nbr[cursor[e[0]]] = e[1];
            w[cursor[e[0]]] = edge_weight[i];
            cursor[e[0]] += 1;
            nbr[cursor[e[1]]] = e[0];
            w[cursor[e[1]]] = edge_weight[i];
            cursor[e[1]] += 1;
        }
        Laplacian { dual_area, edge_weight, edges: im.edges().to_vec(), offsets, nbr, w }
    }

    pub fn vertex_count(&self) -> usize {
        self.dual_area.len()
    }

    pub fn edge_weights(&self) -> (&[[usize; 2]], &[f64]) {
        (&self.edges, &self.edge_weight)
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.apply_into(u, &mut out);
        out
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        for v in 0..self.dual_area.len() {
            let mut s = 0.0;
            for k in self.offsets[v]..self.offsets[v + 1] {
                s += self.w[k] * (u[self.nbr[k]] - u[v]);
            }
            out[v] = s / self.dual_area[v];
        }
    }

    /// Dirichlet form `sum_e w_e (u_a - u_b)^2` (non-negative for any mesh).
    pub fn dirichlet_form(&self, u: &[f64]) -> f64 {
        let mut s = 0.0;
        for (e, &w) in self.edges.iter().zip(&self.edge_weight) {
            let d = u[e[0]] - u[e[1]];
            s += w * d * d;
        }
        s
    }
}

/// Gaussian curvature by angle defect: `(2 pi - sum of angles) / dual area`.
pub fn angle_defect_curvature(im: &Immersion, induced: &InducedMetric, lap: &Laplacian) -> Vec<f64> {
    let mut defect = vec![2.0 * std::f64::consts::PI; im.vertex_count()];
    for (t, tri) in im.triangles().iter().enumerate() {
        let angles = induced.corner_angles(t);
        for s in 0..3 {
            defect[tri[s]] -= angles[s];
        }
    }
    for (d, &a) in defect.iter_mut().zip(&lap.dual_area) {
        *d /= a;
    }
    defect
}

/// Outward vertex normals, unit length in the ambient metric.
///
/// The conformal factor scales all chart vectors equally, so the ambient
/// normal direction of a triangle is the chart cross product of its edges;
/// per-vertex normals average those directions weighted by chart area and are
/// then normalized in the metric at the vertex.
pub fn vertex_normals(im: &Immersion, amb: &AmbientSpace) -> Result<Vec<Vector3<f64>>, MeshError> {
    let vs = im.vertices();
    let mut acc = vec![Vector3::zeros(); vs.len()];
    for tri in im.triangles() {
        let cross = (vs[tri[1]] - vs[tri[0]]).cross(&(vs[tri[2]] - vs[tri[0]]));
        for &v in tri {
            acc[v] += cross;
        }
    }
    let mut out = Vec::with_capacity(vs.len());
    for (v, a) in acc.iter().enumerate() {
        let lambda = amb.conformal_factor(&vs[v])?;
        let norm = lambda * a.norm();
        out.push(a / norm);
    }
    Ok(out)
}

/// Per-triangle gradient of a vertex function.
#[derive(Debug, Clone, Copy)]
pub struct TriGradient {
    /// Covector components in the edge basis: `(u1 - u0, u2 - u0)`.
    pub covector: Vector2<f64>,
    /// Contravariant components in the edge basis (`g^{-1}` applied).
    pub vector: Vector2<f64>,
    /// Chart representation of the gradient vector.
    pub chart: Vector3<f64>,
    /// `|grad u|^2` in the induced metric.
    pub norm_sq: f64,
}

pub fn tangential_gradient(im: &Immersion, induced: &InducedMetric, u: &[f64]) -> Vec<TriGradient> {
    let vs = im.vertices();
    im.triangles()
        .iter()
        .enumerate()
        .map(|(t, tri)| {
            let du = Vector2::new(u[tri[1]] - u[tri[0]], u[tri[2]] - u[tri[0]]);
            let g = induced.tri_metric[t];
            let vector = g.try_inverse().expect("triangle metric is SPD") * du;
            let chart = (vs[tri[1]] - vs[tri[0]]) * vector.x + (vs[tri[2]] - vs[tri[0]]) * vector.y;
            TriGradient { covector: du, vector, chart, norm_sq: du.dot(&vector) }
        })
        .collect()
}

/// Covariant derivative of a per-triangle symmetric 2-tensor field given in
/// each triangle's edge basis; `result[t][c]` holds `(nabla_c T)_{ab}`.
///
/// Neighbor tensors are transported into the central triangle's basis by
/// metric projection onto its tangent plane, the partial derivatives come
/// from a least-squares fit over the three edge neighbors, and the
/// Christoffel symbols of the induced metric are estimated from the same fit
/// applied to the metric itself (which makes the operator metric-compatible
/// by construction).
pub fn covariant_derivative(
    im: &Immersion,
    amb: &AmbientSpace,
    induced: &InducedMetric,
    field: &[Matrix2<f64>],
) -> Result<Vec<[Matrix2<f64>; 2]>, MeshError> {
    let vs = im.vertices();
    let nt = im.triangle_count();
    // triangle -> its three edge-neighbors
    let mut nbrs = vec![[usize::MAX; 3]; nt];
    let mut fill = vec![0usize; nt];
    for (e, ts) in im.edge_triangles().iter().enumerate() {
        let _ = e;
        let (a, b) = (ts[0], ts[1]);
        nbrs[a][fill[a]] = b;
        fill[a] += 1;
        nbrs[b][fill[b]] = a;
        fill[b] += 1;
    }
    let bary = |t: usize| -> Vector3<f64> {
        let tri = im.triangles()[t];
        (vs[tri[0]] + vs[tri[1]] + vs[tri[2]]) / 3.0
    };
    let mut out = Vec::with_capacity(nt);
    for t in 0..nt {
        let tri = im.triangles()[t];
        let e = [vs[tri[1]] - vs[tri[0]], vs[tri[2]] - vs[tri[0]]];
        let g = induced.tri_metric[t];
        let ginv = g.try_inverse().expect("triangle metric is SPD");
        let bt = bary(t);
        let lambda2 = {
            let l = amb.conformal_factor(&bt)?;
            l * l
        };
        // chart vector -> contravariant edge-basis components
        let to_basis = |x: &Vector3<f64>| -> Vector2<f64> {
            ginv * Vector2::new(lambda2 * e[0].dot(x), lambda2 * e[1].dot(x))
        };
        let mut disp = [Vector2::zeros(); 3];
        let mut dfield = [Matrix2::zeros(); 3];
        let mut dmetric = [Matrix2::zeros(); 3];
        for (j, &n) in nbrs[t].iter().enumerate() {
            let ntri = im.triangles()[n];
            let f = [vs[ntri[1]] - vs[ntri[0]], vs[ntri[2]] - vs[ntri[0]]];
            // columns: neighbor basis vectors in central contravariant components
            let m = Matrix2::from_columns(&[to_basis(&f[0]), to_basis(&f[1])]);
            let minv = m.try_inverse().expect("adjacent triangle bases overlap");
            let transport = |s: &Matrix2<f64>| minv.transpose() * s * minv;
            dfield[j] = transport(&field[n]) - field[t];
            dmetric[j] = transport(&induced.tri_metric[n]) - g;
            disp[j] = to_basis(&(bary(n) - bt));
        }
        // least squares for the two directional slots
        let mut ata = Matrix2::zeros();
        for d in &disp {
            ata += d * d.transpose();
        }
        let ata_inv = ata.try_inverse().expect("neighbor displacements span the tangent plane");
        let solve = |delta: &[Matrix2<f64>; 3]| -> [Matrix2<f64>; 2] {
            let mut rhs = [Matrix2::zeros(); 2];
            for j in 0..3 {
                for c in 0..2 {
                    rhs[c] += delta[j] * disp[j][c];
                }
            }
            let mut part = [Matrix2::zeros(); 2];
            for a in 0..2 {
                for b in 0..2 {
                    let y = Vector2::new(rhs[0][(a, b)], rhs[1][(a, b)]);
                    let x = ata_inv * y;
                    part[0][(a, b)] = x[0];
                    part[1][(a, b)] = x[1];
                }
            }
            part
        };
        let dt_field = solve(&dfield);
        let dt_metric = solve(&dmetric);
        // Christoffels via the Koszul formula on the fitted metric derivative.
        let mut gamma = [[Vector2::zeros(); 2]; 2]; // gamma[c][a] = Gamma^._{ca}
        for c in 0..2 {
            for a in 0..2 {
                let mut low = Vector2::zeros();
                for eidx in 0..2 {
                    low[eidx] = 0.5
                        * (dt_metric[c][(a, eidx)] + dt_metric[a][(c, eidx)] - dt_metric[eidx][(c, a)]);
                }
                gamma[c][a] = ginv * low;
            }
        }
        let mut cov = [Matrix2::zeros(); 2];
        for c in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    let mut v = dt_field[c][(a, b)];
                    for d in 0..2 {
                        v -= gamma[c][a][d] * field[t][(d, b)] + gamma[c][b][d] * field[t][(a, d)];
                    }
                    cov[c][(a, b)] = v;
                }
            }
        }
        out.push(cov);
    }
    Ok(out)
}

/// Worst-element mesh quality numbers.
#[derive(Debug, Clone, Copy)]
pub struct QualityReport {
    pub min_angle_deg: f64,
    pub max_aspect: f64,
    pub min_area: f64,
    pub edge_ratio: f64,
}

pub fn quality_report(induced: &InducedMetric) -> QualityReport {
    let mut min_angle = f64::INFINITY;
    let mut max_aspect = 0.0f64;
    let mut min_area = f64::INFINITY;
    for t in 0..induced.tri_area.len() {
        let angles = induced.corner_angles(t);
        for a in angles {
            min_angle = min_angle.min(a);
        }
        let s = induced.side_lengths_sq(t);
        let longest = s.iter().cloned().fold(0.0f64, f64::max).sqrt();
        let shortest = s.iter().cloned().fold(f64::INFINITY, f64::min).sqrt();
        max_aspect = max_aspect.max(longest / shortest);
        min_area = min_area.min(induced.tri_area[t]);
    }
    QualityReport {
        min_angle_deg: min_angle.to_degrees(),
        max_aspect,
        min_area,
        edge_ratio: induced.h_max / induced.h_min,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Regular octahedron; winding chosen so normals point outward.
    pub fn octahedron() -> Immersion {
        let vertices = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, 0.0, -1.0),
        ];
        let triangles = vec![
            [0, 2, 4],
            [2, 1, 4],
            [1, 3, 4],
            [3, 0, 4],
            [2, 0, 5],
            [1, 2, 5],
            [3, 1, 5],
            [0, 3, 5],
        ];
        Immersion::new(vertices, triangles).unwrap()
    }

    #[test]
    fn octahedron_is_valid_and_spherical() {
        let im = octahedron();
        assert_eq!(im.euler_characteristic(), 2);
        assert_eq!(im.edges().len(), 12);
        assert_eq!(im.one_ring(4).len(), 4);
    }

    #[test]
    fn open_mesh_rejected() {
        let vertices = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let err = Immersion::new(vertices, vec![[0, 1, 2]]).unwrap_err();
        assert!(matches!(err, MeshError::NotClosed { .. }));
    }

    #[test]
    fn inconsistent_orientation_rejected() {
        let im = octahedron();
        let mut tris = im.triangles().to_vec();
        tris[0] = [im.triangles()[0][0], im.triangles()[0][2], im.triangles()[0][1]];
        let err = Immersion::new(im.vertices().to_vec(), tris).unwrap_err();
        assert!(matches!(
            err,
            MeshError::InconsistentOrientation { .. } | MeshError::NotClosed { .. }
        ));
    }

    #[test]
    fn disconnected_mesh_rejected() {
        let a = octahedron();
        let mut vertices = a.vertices().to_vec();
        let offset = vertices.len();
        vertices.extend(a.vertices().iter().map(|p| p + Vector3::new(10.0, 0.0, 0.0)));
        let mut triangles = a.triangles().to_vec();
        triangles.extend(
            a.triangles()
                .iter()
                .map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]),
        );
        let err = Immersion::new(vertices, triangles).unwrap_err();
        assert!(matches!(err, MeshError::NotConnected { .. }));
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let mut im = octahedron();
        // collapse one vertex onto another
        im = im.map_vertices(|p| {
            if (p - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-9 {
                Vector3::new(0.0, 1.0, 0.0) + Vector3::new(1e-13, 0.0, 0.0)
            } else {
                *p
            }
        });
        let amb = AmbientSpace::euclidean();
        let err = InducedMetric::compute(&im, &amb).unwrap_err();
        assert!(matches!(err, MeshError::DegenerateTriangle { .. }));
    }

    #[test]
    fn laplacian_of_constant_is_exactly_zero() {
        let im = octahedron();
        let amb = AmbientSpace::euclidean();
        let induced = InducedMetric::compute(&im, &amb).unwrap();
        let lap = Laplacian::build(&im, &induced);
        let u = vec![3.75; im.vertex_count()];
        for d in lap.apply(&u) {
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn laplacian_integrates_to_zero() {
        let im = octahedron();
        let amb = AmbientSpace::euclidean();
        let induced = InducedMetric::compute(&im, &amb).unwrap();
        let lap = Laplacian::build(&im, &induced);
        let u: Vec<f64> = im.vertices().iter().map(|p| p.x * p.x - 0.3 * p.y).collect();
        let du = lap.apply(&u);
        let total: f64 = du.iter().zip(&lap.dual_area).map(|(d, a)| d * a).collect::<Vec<_>>().iter().sum();
        let umax = u.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(total.abs() <= 1e-10 * umax * induced.total_area);
    }

    #[test]
    fn dual_areas_partition_total_area() {
        let im = octahedron();
        let amb = AmbientSpace::euclidean();
        let induced = InducedMetric::compute(&im, &amb).unwrap();
        let lap = Laplacian::build(&im, &induced);
        let dual: f64 = lap.dual_area.iter().sum();
        assert_relative_eq!(dual, induced.total_area, max_relative = 1e-12);
    }

    #[test]
    fn dirichlet_form_is_nonnegative() {
        let im = octahedron();
        let amb = AmbientSpace::euclidean();
        let induced = InducedMetric::compute(&im, &amb).unwrap();
        let lap = Laplacian::build(&im, &induced);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..32 {
            let u: Vec<f64> = (0..im.vertex_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(lap.dirichlet_form(&u) >= -1e-14);
        }
    }

    #[test]
    fn uniform_scaling_acts_exactly() {
        // lambda = 2 keeps all products exact in binary floating point
        let im = octahedron();
        let scaled = im.map_vertices(|p| p * 2.0);
        let amb = AmbientSpace::euclidean();
        let induced = InducedMetric::compute(&im, &amb).unwrap();
        let induced_s = InducedMetric::compute(&scaled, &amb).unwrap();
        for t in 0..im.triangle_count() {
            assert_eq!(induced_s.tri_area[t], 4.0 * induced.tri_area[t]);
        }
        let lap = Laplacian::build(&im, &induced);
        let lap_s = Laplacian::build(&scaled, &induced_s);
        let u: Vec<f64> = im.vertices().iter().map(|p| p.x + 0.5 * p.z).collect();
        let du = lap.apply(&u);
        let du_s = lap_s.apply(&u);
        for v in 0..im.vertex_count() {
            assert_eq!(du_s[v] * 4.0, du[v]);
        }
    }

    #[test]
    fn normals_point_outward_and_flip_with_winding() {
        let im = octahedron();
        let amb = AmbientSpace::euclidean();
        let normals = vertex_normals(&im, &amb).unwrap();
        for (p, n) in im.vertices().iter().zip(&normals) {
            assert!(p.dot(n) > 0.9);
        }
        let flipped = vertex_normals(&im.flipped(), &amb).unwrap();
        for (n, m) in normals.iter().zip(&flipped) {
            assert_relative_eq!(*n, -m, max_relative = 1e-15);
        }
    }

    #[test]
    fn normals_are_unit_in_ambient_metric() {
        let im = octahedron().map_vertices(|p| p * 0.3);
        let amb = AmbientSpace::hyperbolic(-1.0).unwrap();
        let normals = vertex_normals(&im, &amb).unwrap();
        for (p, n) in im.vertices().iter().zip(&normals) {
            let g = amb.metric_at(p).unwrap();
            let len = (n.transpose() * g * n)[(0, 0)];
            assert_relative_eq!(len, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn gradient_of_linear_function_is_exact_on_flat_patch() {
        // tetrahedron is closed; use one with known flat faces
        let im = octahedron();
        let amb = AmbientSpace::euclidean();
        let induced = InducedMetric::compute(&im, &amb).unwrap();
        let u: Vec<f64> = im.vertices().iter().map(|p| 2.0 * p.x - p.y + 0.5).collect();
        let grads = tangential_gradient(&im, &induced, &u);
        let field = Vector3::new(2.0, -1.0, 0.0);
        for (t, g) in grads.iter().enumerate() {
            // gradient must be the tangential projection of the chart field
            let tri = im.triangles()[t];
            let vs = im.vertices();
            let n = (vs[tri[1]] - vs[tri[0]]).cross(&(vs[tri[2]] - vs[tri[0]])).normalize();
            let proj = field - n * field.dot(&n);
            assert_relative_eq!(g.chart, proj, epsilon = 1e-12);
            assert_relative_eq!(g.norm_sq, proj.norm_squared(), epsilon = 1e-12);
        }
    }

    #[test]
    fn covariant_derivative_of_metric_vanishes() {
        let im = octahedron().map_vertices(|p| p * 0.4);
        let amb = AmbientSpace::hyperbolic(-1.0).unwrap();
        let induced = InducedMetric::compute(&im, &amb).unwrap();
        let field = induced.tri_metric.clone();
        let cov = covariant_derivative(&im, &amb, &induced, &field).unwrap();
        for c in cov {
            for part in c {
                assert!(part.abs().max() <= 1e-10, "metric not parallel: {part}");
            }
        }
    }

    #[test]
    fn covariant_derivative_of_constant_field_on_flat_patch() {
        // flatten the octahedron's metric by using a huge sphere so each
        // triangle pair is nearly coplanar: use Euclidean plane-like config
        let im = octahedron();
        let amb = AmbientSpace::euclidean();
        let induced = InducedMetric::compute(&im, &amb).unwrap();
        // field proportional to the metric is parallel regardless of shape
        let field: Vec<Matrix2<f64>> = induced.tri_metric.iter().map(|g| g * 2.5).collect();
        let cov = covariant_derivative(&im, &amb, &induced, &field).unwrap();
        for c in cov {
            for part in c {
                assert!(part.abs().max() <= 1e-9);
            }
        }
    }

    #[test]
    fn quality_report_octahedron() {
        let im = octahedron();
        let amb = AmbientSpace::euclidean();
        let induced = InducedMetric::compute(&im, &amb).unwrap();
        let q = quality_report(&induced);
        assert_relative_eq!(q.min_angle_deg, 60.0, max_relative = 1e-12);
        assert_relative_eq!(q.max_aspect, 1.0, max_relative = 1e-12);
        assert_relative_eq!(q.edge_ratio, 1.0, max_relative = 1e-12);
    }
}
