//! Configuration, mesh generation, and result persistence.
//!
//! The config format is flat `key = value` lines under `[section]` headers;
//! parsing is total and reports every problem at once rather than stopping at
//! the first. Mesh generators supply closed oriented initial data; snapshot
//! persistence lives here too so every run leaves a self-describing output
//! directory.

use crate::ambient::{AmbientError, AmbientSpace, BumpField};
use crate::flow::FlowState;
use crate::mesh::{Immersion, MeshError};
use nalgebra::Vector3;
use std::collections::BTreeMap;
use std::path::PathBuf;
use thiserror::Error;

/// One problem found while parsing or validating a config.
#[derive(Debug, Clone)]
pub struct ConfigProblem {
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(n) => write!(f, "line {n}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("config has {} problem(s):\n{}", .0.len(), .0.iter().map(|p| format!("  {p}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<ConfigProblem>),
    #[error("bad generator parameters: {0}")]
    BadParams(String),
    #[error("snapshot schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Ambient(#[from] AmbientError),
}

// ---------------------------------------------------------------------------
// mesh generators

/// Icosahedron subdivided `level` times, vertices on the unit sphere.
pub fn icosphere(level: u32) -> Result<Immersion, IoError> {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ];
    let mut vertices: Vec<Vector3<f64>> = raw
        .iter()
        .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
        .collect();
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut next = Vec::with_capacity(4 * triangles.len());
        for tri in &triangles {
            let mut mid = [0usize; 3];
            for s in 0..3 {
                let (a, b) = (tri[s], tri[(s + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[s] = *midpoint.entry(key).or_insert_with(|| {
                    let p = (vertices[a] + vertices[b]).normalize();
                    vertices.push(p);
                    vertices.len() - 1
                });
            }
            next.push([tri[0], mid[0], mid[2]]);
            next.push([tri[1], mid[1], mid[0]]);
            next.push([tri[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        triangles = next;
    }
    Ok(Immersion::new(vertices, triangles)?)
}

/// Icosphere stretched to semi-axes `(a, b, c)`.
pub fn ellipsoid(a: f64, b: f64, c: f64, level: u32) -> Result<Immersion, IoError> {
    if !(a > 0.0 && b > 0.0 && c > 0.0) || !(a.is_finite() && b.is_finite() && c.is_finite()) {
        return Err(IoError::BadParams(format!(
            "ellipsoid semi-axes must be positive and finite, got ({a}, {b}, {c})"
        )));
    }
    let im = icosphere(level)?;
    Ok(im.map_vertices(|p| Vector3::new(a * p.x, b * p.y, c * p.z)))
}

/// Torus of revolution around the z axis with major radius `big_r`, minor
/// radius `small_r`, and an `nu` by `nv` vertex grid.
pub fn torus(big_r: f64, small_r: f64, nu: usize, nv: usize) -> Result<Immersion, IoError> {
    if !(big_r > small_r && small_r > 0.0) {
        return Err(IoError::BadParams(format!(
            "torus needs big_r > small_r > 0, got ({big_r}, {small_r})"
        )));
    }
    if nu < 3 || nv < 3 {
        return Err(IoError::BadParams(format!(
            "torus grid must be at least 3x3, got ({nu}, {nv})"
        )));
    }
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = 2.0 * std::f64::consts::PI * i as f64 / nu as f64;
        for j in 0..nv {
            let v = 2.0 * std::f64::consts::PI * j as f64 / nv as f64;
            let ring = big_r + small_r * v.cos();
            vertices.push(Vector3::new(ring * u.cos(), ring * u.sin(), small_r * v.sin()));
        }
    }
    let idx = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut triangles = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    Ok(Immersion::new(vertices, triangles)?)
}

/// Dumbbell-shaped surface of revolution around the z axis.
///
/// The profile is `rho(z) = (w + (1 - w) z^2) sqrt(1 - z^2)` for
/// `z in [-1, 1]`: two lobes joined by a neck of radius `w` at the equator;
/// `w = 1` recovers the unit sphere. Rings are spaced by the polar angle so
/// resolution clusters at the poles, and `level` scales the ring counts.
pub fn dumbbell(neck_width: f64, level: u32) -> Result<Immersion, IoError> {
    if !(neck_width > 0.0 && neck_width <= 1.0) {
        return Err(IoError::BadParams(format!(
            "dumbbell neck width must lie in (0, 1], got {neck_width}"
        )));
    }
    let n_u = 6 * 2usize.pow(level);
    let n_z = 6 * 2usize.pow(level);
    let rho = |z: f64| (neck_width + (1.0 - neck_width) * z * z) * (1.0 - z * z).max(0.0).sqrt();
    let mut vertices = Vec::with_capacity((n_z - 1) * n_u + 2);
    let north = 0usize;
    vertices.push(Vector3::new(0.0, 0.0, 1.0));
    for j in 1..n_z {
        let theta = std::f64::consts::PI * j as f64 / n_z as f64;
        let z = theta.cos();
        let r = rho(z);
        for i in 0..n_u {
            let u = 2.0 * std::f64::consts::PI * i as f64 / n_u as f64;
            vertices.push(Vector3::new(r * u.cos(), r * u.sin(), z));
        }
    }
    let south = vertices.len();
    vertices.push(Vector3::new(0.0, 0.0, -1.0));
    let ring = |j: usize, i: usize| 1 + (j - 1) * n_u + (i % n_u);
    let mut triangles = Vec::new();
    for i in 0..n_u {
        triangles.push([north, ring(1, i), ring(1, i + 1)]);
    }
    for j in 1..n_z - 1 {
        for i in 0..n_u {
            triangles.push([ring(j, i), ring(j + 1, i), ring(j + 1, i + 1)]);
            triangles.push([ring(j, i), ring(j + 1, i + 1), ring(j, i + 1)]);
        }
    }
    for i in 0..n_u {
        triangles.push([south, ring(n_z - 1, i + 1), ring(n_z - 1, i)]);
    }
    Ok(Immersion::new(vertices, triangles)?)
}

/// Sphere of ambient geodesic radius `r` about `center`, built by pushing an
/// icosphere's unit directions through the exponential map.
pub fn geodesic_sphere(
    amb: &AmbientSpace,
    center: &Vector3<f64>,
    r: f64,
    level: u32,
) -> Result<Immersion, IoError> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(IoError::BadParams(format!("geodesic sphere radius must be positive, got {r}")));
    }
    if r >= amb.inj_radius() {
        return Err(IoError::BadParams(format!(
            "geodesic sphere radius {r} reaches the injectivity radius {}",
            amb.inj_radius()
        )));
    }
    let unit = icosphere(level)?;
    let mut vertices = Vec::with_capacity(unit.vertex_count());
    for d in unit.vertices() {
        vertices.push(amb.exp_chart(center, d, r)?);
    }
    Ok(Immersion::new(vertices, unit.triangles().to_vec())?)
}

/// Dispatch a generator by name with named numeric parameters.
pub fn generate_mesh(
    name: &str,
    params: &BTreeMap<String, f64>,
    amb: &AmbientSpace,
) -> Result<Immersion, IoError> {
    let get = |key: &str| -> Result<f64, IoError> {
        params
            .get(key)
            .copied()
            .ok_or_else(|| IoError::BadParams(format!("generator '{name}' needs parameter '{key}'")))
    };
    let get_level = |key: &str| -> Result<u32, IoError> {
        let v = get(key)?;
        if v.fract() != 0.0 || !(0.0..=8.0).contains(&v) {
            return Err(IoError::BadParams(format!(
                "parameter '{key}' must be an integer in 0..=8, got {v}"
            )));
        }
        Ok(v as u32)
    };
    let get_count = |key: &str| -> Result<usize, IoError> {
        let v = get(key)?;
        if v.fract() != 0.0 || !(3.0..=4096.0).contains(&v) {
            return Err(IoError::BadParams(format!(
                "parameter '{key}' must be an integer in 3..=4096, got {v}"
            )));
        }
        Ok(v as usize)
    };
    match name {
        "icosphere" => icosphere(get_level("level")?),
        "ellipsoid" => ellipsoid(get("a")?, get("b")?, get("c")?, get_level("level")?),
        "torus" => torus(get("big_r")?, get("small_r")?, get_count("nu")?, get_count("nv")?),
        "dumbbell" => dumbbell(get("neck_width")?, get_level("level")?),
        "geodesic_sphere" => {
            let center = Vector3::new(
                params.get("cx").copied().unwrap_or(0.0),
                params.get("cy").copied().unwrap_or(0.0),
                params.get("cz").copied().unwrap_or(0.0),
            );
            geodesic_sphere(amb, &center, get("radius")?, get_level("level")?)
        }
        other => Err(IoError::BadParams(format!(
            "unknown generator '{other}'; known: icosphere, ellipsoid, torus, dumbbell, geodesic_sphere"
        ))),
    }
}

// ---------------------------------------------------------------------------
// run configuration

#[derive(Debug, Clone, PartialEq)]
pub enum AmbientConfig {
    Euclidean,
    Hyperbolic { kappa: f64 },
    Spherical { kappa: f64 },
    /// Rotationally symmetric Gaussian bump in the conformal factor; the one
    /// curved-ambient family reachable from a text config.
    Bump { amplitude: f64, width: f64 },
}

impl AmbientConfig {
    pub fn build(&self) -> Result<AmbientSpace, AmbientError> {
        match self {
            AmbientConfig::Euclidean => Ok(AmbientSpace::euclidean()),
            AmbientConfig::Hyperbolic { kappa } => AmbientSpace::hyperbolic(*kappa),
            AmbientConfig::Spherical { kappa } => AmbientSpace::spherical(*kappa),
            AmbientConfig::Bump { amplitude, width } => {
                Ok(BumpField::new(*amplitude, *width)?.into_space())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    Generator { name: String, params: BTreeMap<String, f64> },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowControls {
    /// Time step safety factor in `dt = c_cfl h_min^4 / max(1, |A|^4 l^4)`.
    pub c_cfl: f64,
    /// Flow horizon; the run stops once `t` reaches it.
    pub horizon: f64,
    /// Hard upper bound on any single step.
    pub max_dt: f64,
    /// Terminate with a curvature-cap event once `max|A| l` exceeds this.
    pub curvature_cap: f64,
    /// Terminate with a quality event once the worst angle drops below this.
    pub min_angle_deg: f64,
    /// Snapshot every this many accepted steps (first and last always).
    pub snapshot_every: usize,
    /// Consecutive halvings allowed before a step counts as failed.
    pub max_rejects: usize,
    /// Reference length `l` making curvature thresholds dimensionless.
    pub length_scale: f64,
}

impl Default for FlowControls {
    fn default() -> Self {
        FlowControls {
            c_cfl: 0.05,
            horizon: 0.0,
            max_dt: 1e-3,
            curvature_cap: 1e3,
            min_angle_deg: 5.0,
            snapshot_every: 10,
            max_rejects: 20,
            length_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsControls {
    /// Cutoff radii for concentration and covering checks.
    pub rho_list: Vec<f64>,
    /// Concentration threshold defining the tracked radius.
    pub epsilon0: f64,
    /// Area concentration scale reported alongside.
    pub sigma0: f64,
    /// Radius grid (min, max, count) for concentration scans.
    pub radius_grid: (f64, f64, usize),
}

impl Default for DiagnosticsControls {
    fn default() -> Self {
        DiagnosticsControls {
            rho_list: vec![0.5, 1.0],
            epsilon0: 1e-2,
            sigma0: 1.0,
            radius_grid: (0.05, 1.0, 20),
        }
    }
}

impl DiagnosticsControls {
    /// Materialize the radius grid as an ascending list.
    pub fn radii(&self) -> Vec<f64> {
        let (min, max, count) = self.radius_grid;
        (0..count)
            .map(|i| min + (max - min) * i as f64 / (count - 1) as f64)
            .collect()
    }
}

/// Family of dumbbell initial surfaces for a lifespan campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    /// Neck widths, one experiment each.
    pub neck_widths: Vec<f64>,
    /// Refinement level shared by all experiments.
    pub level: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub ambient: AmbientConfig,
    pub mesh: MeshSource,
    pub flow: FlowControls,
    pub diagnostics: DiagnosticsControls,
    pub output_dir: PathBuf,
    pub deterministic: bool,
    /// Present when the config carries a [campaign] section.
    pub campaign: Option<CampaignConfig>,
    /// Verbatim input text, echoed into the output directory.
    pub raw: String,
}

const KNOWN_KEYS: &[(&str, &str)] = &[
    ("ambient", "kind"),
    ("ambient", "kappa"),
    ("ambient", "amplitude"),
    ("ambient", "width"),
    ("mesh", "generator"),
    ("mesh", "file"),
    ("mesh", "level"),
    ("mesh", "a"),
    ("mesh", "b"),
    ("mesh", "c"),
    ("mesh", "big_r"),
    ("mesh", "small_r"),
    ("mesh", "nu"),
    ("mesh", "nv"),
    ("mesh", "neck_width"),
    ("mesh", "radius"),
    ("mesh", "cx"),
    ("mesh", "cy"),
    ("mesh", "cz"),
    ("flow", "c_cfl"),
    ("flow", "horizon"),
    ("flow", "max_dt"),
    ("flow", "curvature_cap"),
    ("flow", "min_angle_deg"),
    ("flow", "snapshot_every"),
    ("flow", "max_rejects"),
    ("flow", "length_scale"),
    ("diagnostics", "rho_list"),
    ("diagnostics", "epsilon0"),
    ("diagnostics", "sigma0"),
    ("diagnostics", "radius_grid_min"),
    ("diagnostics", "radius_grid_max"),
    ("diagnostics", "radius_grid_count"),
    ("output", "dir"),
    ("output", "deterministic"),
    ("campaign", "neck_widths"),
    ("campaign", "level"),
];

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn nearest_key(section: &str, key: &str) -> Option<&'static str> {
    KNOWN_KEYS
        .iter()
        .filter(|(s, _)| *s == section)
        .map(|(_, k)| (*k, edit_distance(key, k)))
        .min_by_key(|&(_, d)| d)
        .filter(|&(_, d)| d <= 3)
        .map(|(k, _)| k)
}

/// Parse and validate a run configuration, reporting every problem found.
pub fn parse_config(text: &str) -> Result<RunConfig, IoError> {
    let mut problems: Vec<ConfigProblem> = Vec::new();
    let mut values: BTreeMap<(String, String), (String, usize)> = BTreeMap::new();
    let mut section = String::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            match rest.strip_suffix(']') {
                Some(name) if !name.trim().is_empty() => section = name.trim().to_string(),
                _ => problems.push(ConfigProblem {
                    line: Some(lineno),
                    message: format!("malformed section header '{line}'"),
                }),
            }
            continue;
        }
        let Some(eq) = line.find('=') else {
            problems.push(ConfigProblem {
                line: Some(lineno),
                message: format!("expected 'key = value', got '{line}'"),
            });
            continue;
        };
        let key = line[..eq].trim().to_string();
        let value = line[eq + 1..].trim().to_string();
        if section.is_empty() {
            problems.push(ConfigProblem {
                line: Some(lineno),
                message: format!("key '{key}' appears before any [section] header"),
            });
            continue;
        }
        if key.is_empty() || value.is_empty() {
            problems.push(ConfigProblem {
                line: Some(lineno),
                message: format!("empty key or value in '{line}'"),
            });
            continue;
        }
        if !KNOWN_KEYS.iter().any(|(s, k)| *s == section && *k == key) {
            let hint = match nearest_key(&section, &key) {
                Some(k) => format!("; nearest known key is '{k}'"),
                None => String::new(),
            };
            problems.push(ConfigProblem {
                line: Some(lineno),
                message: format!("unknown key '{key}' in section [{section}]{hint}"),
            });
            continue;
        }
        if let Some((_, first)) = values.get(&(section.clone(), key.clone())) {
            problems.push(ConfigProblem {
                line: Some(lineno),
                message: format!("key '{key}' in [{section}] already set on line {first}"),
            });
            continue;
        }
        values.insert((section.clone(), key.clone()), (value, lineno));
    }

    let mut take = |section: &str, key: &str| -> Option<(String, usize)> {
        values.remove(&(section.to_string(), key.to_string()))
    };
    macro_rules! bad {
        ($line:expr, $msg:expr) => {
            problems.push(ConfigProblem { line: Some($line), message: $msg })
        };
    }
    macro_rules! parse_num {
        ($take:expr, $default:expr, $kind:ty) => {
            match $take {
                Some((v, line)) => match v.parse::<$kind>() {
                    Ok(x) => x,
                    Err(_) => {
                        bad!(line, format!("cannot parse '{v}' as a number"));
                        $default
                    }
                },
                None => $default,
            }
        };
    }

    // ambient
    let ambient = {
        let kind = take("ambient", "kind");
        let kappa = take("ambient", "kappa");
        let amplitude = take("ambient", "amplitude");
        let width = take("ambient", "width");
        match kind {
            None => {
                problems.push(ConfigProblem {
                    line: None,
                    message: "missing required key 'kind' in [ambient]".into(),
                });
                AmbientConfig::Euclidean
            }
            Some((k, line)) => match k.as_str() {
                "euclidean" => AmbientConfig::Euclidean,
                "hyperbolic" => {
                    let kappa = parse_num!(kappa, -1.0, f64);
                    AmbientConfig::Hyperbolic { kappa }
                }
                "spherical" => {
                    let kappa = parse_num!(kappa, 1.0, f64);
                    AmbientConfig::Spherical { kappa }
                }
                "bump" => {
                    let amplitude = parse_num!(amplitude, 0.1, f64);
                    let width = parse_num!(width, 1.0, f64);
                    AmbientConfig::Bump { amplitude, width }
                }
                other => {
                    bad!(
                        line,
                        format!(
                            "unknown ambient kind '{other}'; known: euclidean, hyperbolic, spherical, bump"
                        )
                    );
                    AmbientConfig::Euclidean
                }
            },
        }
    };

    // mesh
    let mesh = {
        let generator = take("mesh", "generator");
        let file = take("mesh", "file");
        match (generator, file) {
            (Some((_, gl)), Some((_, fl))) => {
                bad!(gl.max(fl), "set either 'generator' or 'file' in [mesh], not both".into());
                MeshSource::Generator { name: "icosphere".into(), params: BTreeMap::new() }
            }
            (None, Some((path, _))) => MeshSource::File(PathBuf::from(path)),
            (Some((name, _)), None) => {
                let mut params = BTreeMap::new();
                for key in [
                    "level", "a", "b", "c", "big_r", "small_r", "nu", "nv", "neck_width", "radius",
                    "cx", "cy", "cz",
                ] {
                    if let Some((v, line)) = take("mesh", key) {
                        match v.parse::<f64>() {
                            Ok(x) => {
                                params.insert(key.to_string(), x);
                            }
                            Err(_) => bad!(line, format!("cannot parse '{v}' as a number")),
                        }
                    }
                }
                MeshSource::Generator { name, params }
            }
            (None, None) => {
                problems.push(ConfigProblem {
                    line: None,
                    message: "missing 'generator' or 'file' in [mesh]".into(),
                });
                MeshSource::Generator { name: "icosphere".into(), params: BTreeMap::new() }
            }
        }
    };

    // flow
    let mut flow = FlowControls::default();
    let horizon = take("flow", "horizon");
    match horizon {
        Some((v, line)) => match v.parse::<f64>() {
            Ok(x) => flow.horizon = x,
            Err(_) => bad!(line, format!("cannot parse '{v}' as a number")),
        },
        None => problems.push(ConfigProblem {
            line: None,
            message: "missing required key 'horizon' in [flow]".into(),
        }),
    }
    flow.c_cfl = parse_num!(take("flow", "c_cfl"), flow.c_cfl, f64);
    flow.max_dt = parse_num!(take("flow", "max_dt"), flow.max_dt, f64);
    flow.curvature_cap = parse_num!(take("flow", "curvature_cap"), flow.curvature_cap, f64);
    flow.min_angle_deg = parse_num!(take("flow", "min_angle_deg"), flow.min_angle_deg, f64);
    flow.snapshot_every = parse_num!(take("flow", "snapshot_every"), flow.snapshot_every, usize);
    flow.max_rejects = parse_num!(take("flow", "max_rejects"), flow.max_rejects, usize);
    flow.length_scale = parse_num!(take("flow", "length_scale"), flow.length_scale, f64);

    // diagnostics
    let mut diag = DiagnosticsControls::default();
    if let Some((v, line)) = take("diagnostics", "rho_list") {
        let mut list = Vec::new();
        let mut ok = true;
        for part in v.split(',') {
            match part.trim().parse::<f64>() {
                Ok(x) => list.push(x),
                Err(_) => {
                    bad!(line, format!("cannot parse rho_list entry '{}'", part.trim()));
                    ok = false;
                }
            }
        }
        if ok && !list.is_empty() {
            diag.rho_list = list;
        }
    }
    diag.epsilon0 = parse_num!(take("diagnostics", "epsilon0"), diag.epsilon0, f64);
    diag.sigma0 = parse_num!(take("diagnostics", "sigma0"), diag.sigma0, f64);
    diag.radius_grid.0 = parse_num!(take("diagnostics", "radius_grid_min"), diag.radius_grid.0, f64);
    diag.radius_grid.1 = parse_num!(take("diagnostics", "radius_grid_max"), diag.radius_grid.1, f64);
    diag.radius_grid.2 =
        parse_num!(take("diagnostics", "radius_grid_count"), diag.radius_grid.2, usize);

    // output
    let output_dir = match take("output", "dir") {
        Some((v, _)) => PathBuf::from(v),
        None => PathBuf::from("out"),
    };
    let deterministic = match take("output", "deterministic") {
        Some((v, line)) => match v.as_str() {
            "true" => true,
            "false" => false,
            other => {
                bad!(line, format!("expected true or false, got '{other}'"));
                true
            }
        },
        None => true,
    };

    // campaign
    let campaign = {
        let widths = take("campaign", "neck_widths");
        let level = take("campaign", "level");
        match widths {
            None => {
                if let Some((_, line)) = level {
                    bad!(line, "[campaign] has 'level' but no 'neck_widths'".into());
                }
                None
            }
            Some((v, line)) => {
                let mut list = Vec::new();
                for part in v.split(',') {
                    match part.trim().parse::<f64>() {
                        Ok(x) => list.push(x),
                        Err(_) => {
                            bad!(line, format!("cannot parse neck_widths entry '{}'", part.trim()))
                        }
                    }
                }
                let level = parse_num!(level, 3u32, u32);
                Some(CampaignConfig { neck_widths: list, level })
            }
        }
    };

    // semantic validation, aggregated with everything above
    macro_rules! invalid {
        ($msg:expr) => {
            problems.push(ConfigProblem { line: None, message: $msg })
        };
    }
    match &ambient {
        AmbientConfig::Hyperbolic { kappa } if !(*kappa < 0.0) => {
            invalid!(format!("[ambient] hyperbolic needs kappa < 0, got {kappa}"))
        }
        AmbientConfig::Spherical { kappa } if !(*kappa > 0.0) => {
            invalid!(format!("[ambient] spherical needs kappa > 0, got {kappa}"))
        }
        AmbientConfig::Bump { width, .. } if !(*width > 0.0) => {
            invalid!(format!("[ambient] bump needs width > 0, got {width}"))
        }
        _ => {}
    }
    if !(flow.horizon >= 0.0) {
        invalid!(format!("[flow] horizon must be >= 0, got {}", flow.horizon));
    }
    if !(flow.c_cfl > 0.0 && flow.c_cfl <= 1.0) {
        invalid!(format!("[flow] c_cfl must lie in (0, 1], got {}", flow.c_cfl));
    }
    if !(flow.max_dt > 0.0) {
        invalid!(format!("[flow] max_dt must be > 0, got {}", flow.max_dt));
    }
    if !(flow.curvature_cap > 0.0) {
        invalid!(format!("[flow] curvature_cap must be > 0, got {}", flow.curvature_cap));
    }
    if !(flow.length_scale > 0.0) {
        invalid!(format!("[flow] length_scale must be > 0, got {}", flow.length_scale));
    }
    if flow.snapshot_every == 0 {
        invalid!("[flow] snapshot_every must be >= 1".into());
    }
    for &rho in &diag.rho_list {
        if !(rho > 0.0) {
            invalid!(format!("[diagnostics] rho_list entries must be > 0, got {rho}"));
        }
    }
    if let Some(c) = &campaign {
        if c.neck_widths.is_empty() {
            invalid!("[campaign] neck_widths must list at least one width".into());
        }
        for &w in &c.neck_widths {
            if !(w > 0.0 && w < 1.0) {
                invalid!(format!("[campaign] neck widths must lie in (0, 1), got {w}"));
            }
        }
    }
    if !(diag.epsilon0 >= 0.0) {
        invalid!(format!("[diagnostics] epsilon0 must be >= 0, got {}", diag.epsilon0));
    }
    let (gmin, gmax, gcount) = diag.radius_grid;
    if !(gmin > 0.0 && gmax > gmin) {
        invalid!(format!("[diagnostics] radius grid needs 0 < min < max, got ({gmin}, {gmax})"));
    }
    if gcount < 2 {
        invalid!(format!("[diagnostics] radius_grid_count must be >= 2, got {gcount}"));
    }
    // radii must stay inside the chart for curved ambients
    if let Ok(amb) = ambient.build() {
        let inj = amb.inj_radius();
        for &rho in &diag.rho_list {
            if rho >= inj {
                invalid!(format!(
                    "[diagnostics] rho {rho} reaches the injectivity radius {inj}"
                ));
            }
        }
        if gmax >= inj {
            invalid!(format!(
                "[diagnostics] radius_grid_max {gmax} reaches the injectivity radius {inj}"
            ));
        }
    } else if problems.is_empty() {
        invalid!("[ambient] parameters do not define a valid space".into());
    }

    if !problems.is_empty() {
        return Err(IoError::Config(problems));
    }
    Ok(RunConfig {
        ambient,
        mesh,
        flow,
        diagnostics: diag,
        output_dir,
        deterministic,
        campaign,
        raw: text.to_string(),
    })
}

impl RunConfig {
    /// Build the configured ambient space.
    pub fn ambient_space(&self) -> Result<AmbientSpace, IoError> {
        Ok(self.ambient.build()?)
    }

    /// Build or load the configured initial mesh.
    pub fn initial_mesh(&self, amb: &AmbientSpace) -> Result<Immersion, IoError> {
        match &self.mesh {
            MeshSource::Generator { name, params } => generate_mesh(name, params, amb),
            MeshSource::File(path) => read_obj(path),
        }
    }
}

// ---------------------------------------------------------------------------
// OBJ serialization

/// Write an immersion as Wavefront OBJ with a chart comment; positions use 17
/// significant digits so a read round-trips bitwise.
pub fn write_obj(
    im: &Immersion,
    amb: &AmbientSpace,
    path: &std::path::Path,
) -> Result<(), IoError> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# chart: {}", amb.chart_tag())?;
    writeln!(out, "# t: {:.16e}", im.t)?;
    for p in im.vertices() {
        writeln!(out, "v {:.16e} {:.16e} {:.16e}", p.x, p.y, p.z)?;
    }
    for tri in im.triangles() {
        writeln!(out, "f {} {} {}", tri[0] + 1, tri[1] + 1, tri[2] + 1)?;
    }
    Ok(())
}

/// Read an OBJ written by [`write_obj`]; returns the mesh and the chart tag.
pub fn read_obj_with_chart(path: &std::path::Path) -> Result<(Immersion, Option<String>), IoError> {
    let text = std::fs::read_to_string(path)?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut chart = None;
    let mut t = 0.0;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("# chart:") {
            chart = Some(rest.trim().to_string());
            continue;
        }
        if let Some(rest) = line.strip_prefix("# t:") {
            t = rest.trim().parse::<f64>().map_err(|_| {
                IoError::SchemaMismatch(format!("line {lineno}: bad time comment '{line}'"))
            })?;
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut read = || -> Result<f64, IoError> {
                    parts
                        .next()
                        .and_then(|s| s.parse::<f64>().ok())
                        .ok_or_else(|| {
                            IoError::SchemaMismatch(format!("line {lineno}: bad vertex '{line}'"))
                        })
                };
                let (x, y, z) = (read()?, read()?, read()?);
                vertices.push(Vector3::new(x, y, z));
            }
            Some("f") => {
                let mut read = || -> Result<usize, IoError> {
                    parts
                        .next()
                        .and_then(|s| s.split('/').next())
                        .and_then(|s| s.parse::<usize>().ok())
                        .filter(|&i| i >= 1)
                        .ok_or_else(|| {
                            IoError::SchemaMismatch(format!("line {lineno}: bad face '{line}'"))
                        })
                };
                let (a, b, c) = (read()?, read()?, read()?);
                if parts.next().is_some() {
                    return Err(IoError::SchemaMismatch(format!(
                        "line {lineno}: only triangles are supported"
                    )));
                }
                triangles.push([a - 1, b - 1, c - 1]);
            }
            _ => {
                return Err(IoError::SchemaMismatch(format!(
                    "line {lineno}: unsupported OBJ element '{line}'"
                )))
            }
        }
    }
    let mut im = Immersion::new(vertices, triangles)?;
    im.t = t;
    Ok((im, chart))
}

pub fn read_obj(path: &std::path::Path) -> Result<Immersion, IoError> {
    Ok(read_obj_with_chart(path)?.0)
}

// ---------------------------------------------------------------------------
// snapshots and the diagnostics log

/// Column order of `diagnostics.csv`. Regression tooling keys on positions,
/// so the order is frozen.
pub const DIAGNOSTICS_COLUMNS: &str =
    "t,dt,energy,eta,rho_of_t,area_conc_max,hs_ok,covering_slack,max_abs_A,min_quality";

/// One row of the per-snapshot diagnostics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub dt: f64,
    pub energy: f64,
    pub eta: f64,
    pub rho_of_t: f64,
    pub area_conc_max: f64,
    pub hs_ok: bool,
    pub covering_slack: f64,
    pub max_abs_a: f64,
    pub min_quality: f64,
}

impl DiagnosticsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e}",
            self.t,
            self.dt,
            self.energy,
            self.eta,
            self.rho_of_t,
            self.area_conc_max,
            u8::from(self.hs_ok),
            self.covering_slack,
            self.max_abs_a,
            self.min_quality,
        )
    }

    pub fn parse(line: &str) -> Result<DiagnosticsRow, IoError> {
        let parts: Vec<&str> = line.trim().split(',').collect();
        if parts.len() != 10 {
            return Err(IoError::SchemaMismatch(format!(
                "diagnostics row has {} fields, expected 10: '{line}'",
                parts.len()
            )));
        }
        let num = |i: usize| -> Result<f64, IoError> {
            parts[i].parse::<f64>().map_err(|_| {
                IoError::SchemaMismatch(format!("bad number '{}' in diagnostics row", parts[i]))
            })
        };
        let hs_ok = match parts[6] {
            "0" => false,
            "1" => true,
            other => {
                return Err(IoError::SchemaMismatch(format!(
                    "bad hs_ok flag '{other}' in diagnostics row"
                )))
            }
        };
        Ok(DiagnosticsRow {
            t: num(0)?,
            dt: num(1)?,
            energy: num(2)?,
            eta: num(3)?,
            rho_of_t: num(4)?,
            area_conc_max: num(5)?,
            hs_ok,
            covering_slack: num(7)?,
            max_abs_a: num(8)?,
            min_quality: num(9)?,
        })
    }
}

/// Mesh and field-sidecar paths of the snapshot at `index`.
pub fn snapshot_paths(dir: &std::path::Path, index: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    (dir.join(format!("snap_{index}.obj")), dir.join(format!("snap_{index}.fields.csv")))
}

/// Rows currently recorded in `diagnostics.csv`; the next snapshot index.
/// Snapshot files without a row are considered not durable and are rewritten.
fn recorded_rows(dir: &std::path::Path) -> Result<usize, IoError> {
    let path = dir.join("diagnostics.csv");
    if !path.exists() {
        return Ok(0);
    }
    let text = std::fs::read_to_string(&path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == DIAGNOSTICS_COLUMNS => {}
        Some(other) => {
            return Err(IoError::SchemaMismatch(format!(
                "diagnostics.csv header '{other}' does not match '{DIAGNOSTICS_COLUMNS}'"
            )))
        }
        None => return Ok(0),
    }
    Ok(lines.filter(|l| !l.trim().is_empty()).count())
}

/// Write one snapshot: mesh, per-vertex field sidecar, then the diagnostics
/// row. The row is appended only after both files are synced, so a row's
/// presence means its snapshot is durable. Returns the snapshot index.
pub fn write_snapshot(
    state: &FlowState,
    amb: &AmbientSpace,
    row: &DiagnosticsRow,
    dir: &std::path::Path,
) -> Result<usize, IoError> {
    use std::io::Write;
    std::fs::create_dir_all(dir)?;
    let index = recorded_rows(dir)?;
    let (obj_path, fields_path) = snapshot_paths(dir, index);
    write_obj(&state.immersion, amb, &obj_path)?;
    std::fs::File::open(&obj_path)?.sync_all()?;

    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&fields_path)?);
        writeln!(out, "vertex,h,a_sq,a0_sq,w")?;
        for v in 0..state.shape.vertex_count() {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e}",
                v, state.shape.h[v], state.shape.a_sq[v], state.shape.a0_sq[v], state.shape.w[v]
            )?;
        }
        out.flush()?;
        out.into_inner()
            .map_err(|e| IoError::Io(std::io::Error::other(e.to_string())))?
            .sync_all()?;
    }

    let log_path = dir.join("diagnostics.csv");
    let fresh = !log_path.exists();
    let mut log = std::fs::OpenOptions::new().create(true).append(true).open(&log_path)?;
    if fresh {
        writeln!(log, "{DIAGNOSTICS_COLUMNS}")?;
    }
    writeln!(log, "{}", row.csv_line())?;
    log.sync_all()?;
    Ok(index)
}

/// Read back snapshot `index` and rebuild its flow state in `amb`. Vertex
/// positions and connectivity reproduce the written mesh bitwise; derived
/// quantities are recomputed, and the last step size is not restored.
pub fn read_snapshot(
    dir: &std::path::Path,
    index: usize,
    amb: &AmbientSpace,
) -> Result<FlowState, IoError> {
    let (obj_path, _) = snapshot_paths(dir, index);
    if !obj_path.exists() {
        return Err(IoError::NotFound(format!("snapshot {index} in {}", dir.display())));
    }
    let (im, chart) = read_obj_with_chart(&obj_path)?;
    match chart {
        Some(tag) if tag == amb.chart_tag() => {}
        Some(tag) => {
            return Err(IoError::SchemaMismatch(format!(
                "snapshot chart '{tag}' does not match ambient chart '{}'",
                amb.chart_tag()
            )))
        }
        None => {
            return Err(IoError::SchemaMismatch(
                "snapshot is missing its chart comment".to_string(),
            ))
        }
    }
    let mut state = FlowState::new(im, amb).map_err(shape_to_io)?;
    state.step_index = index as u64;
    Ok(state)
}

fn shape_to_io(e: crate::shape::ShapeError) -> IoError {
    match e {
        crate::shape::ShapeError::Mesh(m) => IoError::Mesh(m),
        crate::shape::ShapeError::Ambient(a) => IoError::Ambient(a),
        other => IoError::SchemaMismatch(format!("snapshot mesh rejected: {other}")),
    }
}

/// Parse every row of a run's diagnostics log.
pub fn read_diagnostics_log(dir: &std::path::Path) -> Result<Vec<DiagnosticsRow>, IoError> {
    let path = dir.join("diagnostics.csv");
    if !path.exists() {
        return Err(IoError::NotFound(format!("diagnostics.csv in {}", dir.display())));
    }
    let text = std::fs::read_to_string(&path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == DIAGNOSTICS_COLUMNS => {}
        Some(other) => {
            return Err(IoError::SchemaMismatch(format!(
                "diagnostics.csv header '{other}' does not match '{DIAGNOSTICS_COLUMNS}'"
            )))
        }
        None => return Ok(Vec::new()),
    }
    lines.filter(|l| !l.trim().is_empty()).map(DiagnosticsRow::parse).collect()
}

/// Echo the verbatim config text into the run directory.
pub fn write_config_echo(config: &RunConfig, dir: &std::path::Path) -> Result<(), IoError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.echo"), &config.raw)?;
    Ok(())
}
