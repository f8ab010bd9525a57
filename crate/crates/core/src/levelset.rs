//! Level-set representation of the inclusion.
//!
//! Convention: the inclusion is the set where the P1 interpolant of the nodal
//! field is negative. Element conductivities use the exact area fraction of
//! that set inside each triangle.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Point, StructuredMesh};
use crate::par::Execution;

/// A primitive inclusion shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Ellipse { center: Point, semiaxes: [f64; 2] },
    Circle { center: Point, radius: f64 },
    Polygon { vertices: Vec<Point> },
}

impl Shape {
    /// Implicit function, negative inside. Circles and polygons return the
    /// exact signed distance; ellipses use `(|A^{-1}(x - c)| - 1) * min(a)`,
    /// which is exact for circles and has the right zero set otherwise.
    pub fn implicit(&self, x: Point) -> f64 {
        match self {
            Shape::Ellipse { center, semiaxes } => {
                let u = (x[0] - center[0]) / semiaxes[0];
                let v = (x[1] - center[1]) / semiaxes[1];
                ((u * u + v * v).sqrt() - 1.0) * semiaxes[0].min(semiaxes[1])
            }
            Shape::Circle { center, radius } => {
                ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt() - radius
            }
            Shape::Polygon { vertices } => polygon_signed_distance(vertices, x),
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let inside = |lo: f64, hi: f64| lo > 0.0 && hi < 1.0;
        let ok = match self {
            Shape::Ellipse { center, semiaxes } => {
                if semiaxes.iter().any(|&a| !(a > 0.0)) {
                    return Err(Error::InvalidParameter(format!(
                        "ellipse {index} has non-positive semiaxes"
                    )));
                }
                inside(center[0] - semiaxes[0], center[0] + semiaxes[0])
                    && inside(center[1] - semiaxes[1], center[1] + semiaxes[1])
            }
            Shape::Circle { center, radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "circle {index} has non-positive radius"
                    )));
                }
                inside(center[0] - radius, center[0] + radius)
                    && inside(center[1] - radius, center[1] + radius)
            }
            Shape::Polygon { vertices } => {
                if vertices.len() < 3 || polygon_area(vertices).abs() < 1e-14 {
                    return Err(Error::InvalidParameter(format!(
                        "polygon {index} is degenerate"
                    )));
                }
                vertices.iter().all(|p| inside(p[0], p[0]) && inside(p[1], p[1]))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Containment { index })
        }
    }
}

fn polygon_area(v: &[Point]) -> f64 {
    let mut a = 0.0;
    for i in 0..v.len() {
        let p = v[i];
        let q = v[(i + 1) % v.len()];
        a += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a
}

fn polygon_signed_distance(v: &[Point], x: Point) -> f64 {
    let mut dist = f64::INFINITY;
    let mut inside = false;
    for i in 0..v.len() {
        let a = v[i];
        let b = v[(i + 1) % v.len()];
        dist = dist.min(point_segment_distance(x, a, b));
        if (a[1] > x[1]) != (b[1] > x[1]) {
            let t = (x[1] - a[1]) / (b[1] - a[1]);
            if x[0] < a[0] + t * (b[0] - a[0]) {
                inside = !inside;
            }
        }
    }
    if inside {
        -dist
    } else {
        dist
    }
}

pub(crate) fn point_segment_distance(x: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((x[0] - a[0]) * d[0] + (x[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let p = [a[0] + t * d[0], a[1] + t * d[1]];
    ((x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2)).sqrt()
}

/// Union of primitive shapes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub primitives: Vec<Shape>,
}

impl Phantom {
    pub fn new(primitives: Vec<Shape>) -> Self {
        Self { primitives }
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::InvalidParameter("phantom has no primitives".into()));
        }
        self.primitives
            .iter()
            .enumerate()
            .try_for_each(|(i, s)| s.validate(i))
    }

    /// Union implicit function (minimum over primitives).
    pub fn implicit(&self, x: Point) -> f64 {
        self.primitives
            .iter()
            .map(|s| s.implicit(x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Nodal level-set values; negative inside the inclusion.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetField {
    pub values: Vec<f64>,
}

impl LevelSetField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    /// Whether the field has at least one negative node.
    pub fn has_interior(&self) -> bool {
        self.values.iter().any(|&v| v < 0.0)
    }
}

/// Per-element conductivity.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityField {
    pub values: Vec<f64>,
}

impl ConductivityField {
    pub fn uniform(value: f64, elements: usize) -> Self {
        Self {
            values: vec![value; elements],
        }
    }
}

pub fn phantom_to_levelset(phantom: &Phantom, mesh: &StructuredMesh) -> Result<LevelSetField> {
    phantom.validate()?;
    Ok(LevelSetField::new(
        mesh.nodes().iter().map(|&x| phantom.implicit(x)).collect(),
    ))
}

/// Area fraction of a triangle on which the linear interpolant of the vertex
/// values is negative.
pub fn negative_fraction(v: [f64; 3]) -> f64 {
    let neg = v.iter().filter(|&&x| x < 0.0).count();
    match neg {
        0 => 0.0,
        3 => 1.0,
        1 => {
            let a = v.iter().position(|&x| x < 0.0).unwrap();
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            let (va, vb, vc) = (v[a], v[b], v[c]);
            (va / (va - vb)) * (va / (va - vc))
        }
        _ => {
            let a = v.iter().position(|&x| x >= 0.0).unwrap();
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            let (va, vb, vc) = (v[a], v[b], v[c]);
            1.0 - (va / (va - vb)) * (va / (va - vc))
        }
    }
}

/// Vertex values of a nodal field on element `e`.
pub(crate) fn element_values(mesh: &StructuredMesh, field: &[f64], e: usize) -> [f64; 3] {
    let t = mesh.triangles()[e];
    [field[t[0]], field[t[1]], field[t[2]]]
}

/// A polygon vertex carrying the values of linear functions at that point.
#[derive(Clone, Copy)]
struct ClipVertex<const K: usize> {
    x: Point,
    f: [f64; K],
}

/// Keeps the part of a convex polygon where linear function `k` is negative.
fn clip_negative<const K: usize>(poly: &[ClipVertex<K>], k: usize) -> Vec<ClipVertex<K>> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        let p_in = p.f[k] < 0.0;
        let q_in = q.f[k] < 0.0;
        if p_in {
            out.push(p);
        }
        if p_in != q_in {
            let t = p.f[k] / (p.f[k] - q.f[k]);
            let mut f = [0.0; K];
            for (m, fm) in f.iter_mut().enumerate() {
                *fm = p.f[m] + t * (q.f[m] - p.f[m]);
            }
            out.push(ClipVertex {
                x: [p.x[0] + t * (q.x[0] - p.x[0]), p.x[1] + t * (q.x[1] - p.x[1])],
                f,
            });
        }
    }
    out
}

fn shoelace<const K: usize>(poly: &[ClipVertex<K>]) -> f64 {
    let pts: Vec<Point> = poly.iter().map(|v| v.x).collect();
    if pts.len() < 3 {
        0.0
    } else {
        polygon_area(&pts)
    }
}

/// Area of the part of triangle `tri` where all given linear functions
/// (by vertex values) are negative, computed by successive half-plane clipping.
pub fn clipped_area<const K: usize>(tri: [Point; 3], values: [[f64; 3]; K]) -> f64 {
    let mut poly: Vec<ClipVertex<K>> = (0..3)
        .map(|a| {
            let mut f = [0.0; K];
            for (k, fk) in f.iter_mut().enumerate() {
                *fk = values[k][a];
            }
            ClipVertex { x: tri[a], f }
        })
        .collect();
    for k in 0..K {
        poly = clip_negative(&poly, k);
        if poly.is_empty() {
            return 0.0;
        }
    }
    shoelace(&poly).abs()
}

/// Per-element area fraction of the negative set of `phi`.
pub fn area_fractions(phi: &LevelSetField, mesh: &StructuredMesh, exec: Execution) -> Vec<f64> {
    exec.map_range(mesh.element_count(), |e| {
        negative_fraction(element_values(mesh, &phi.values, e))
    })
}

/// `sigma_e = sigma1 * theta_e + sigma0 * (1 - theta_e)` with `theta_e` the
/// exact area fraction of the inclusion in element `e`.
pub fn conductivity_from_levelset(
    phi: &LevelSetField,
    sigma0: f64,
    sigma1: f64,
    mesh: &StructuredMesh,
) -> Result<ConductivityField> {
    conductivity_with(phi, sigma0, sigma1, mesh, Execution::default())
}

pub fn conductivity_with(
    phi: &LevelSetField,
    sigma0: f64,
    sigma1: f64,
    mesh: &StructuredMesh,
    exec: Execution,
) -> Result<ConductivityField> {
    if !(sigma0 > 0.0 && sigma1 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "conductivities must be positive (sigma0 = {sigma0}, sigma1 = {sigma1})"
        )));
    }
    let theta = area_fractions(phi, mesh, exec);
    Ok(ConductivityField {
        values: theta
            .into_iter()
            .map(|t| sigma1 * t + sigma0 * (1.0 - t))
            .collect(),
    })
}

/// One semi-Lagrangian transport step: the new value at node `x_i` is the P1
/// interpolant of `phi` at `x_i - tau * V(x_i)`, with the foot point clamped
/// to the unit square.
pub fn advect_levelset(
    phi: &LevelSetField,
    velocity: &[[f64; 2]],
    tau: f64,
    mesh: &StructuredMesh,
) -> LevelSetField {
    advect_with(phi, velocity, tau, mesh, Execution::default())
}

pub fn advect_with(
    phi: &LevelSetField,
    velocity: &[[f64; 2]],
    tau: f64,
    mesh: &StructuredMesh,
    exec: Execution,
) -> LevelSetField {
    assert_eq!(velocity.len(), mesh.node_count(), "velocity length");
    let nodes = mesh.nodes();
    let values = exec.map_range(mesh.node_count(), |i| {
        let v = velocity[i];
        if tau == 0.0 || (v[0] == 0.0 && v[1] == 0.0) {
            return phi.values[i];
        }
        let foot = [nodes[i][0] - tau * v[0], nodes[i][1] - tau * v[1]];
        let clamped = [foot[0].clamp(0.0, 1.0), foot[1].clamp(0.0, 1.0)];
        if clamped != foot {
            log::debug!("advection foot point of node {i} clamped to the domain");
        }
        // The clamped point is always inside the square.
        mesh.evaluate(&phi.values, clamped).expect("clamped foot point")
    });
    LevelSetField::new(values)
}

/// Raises level-set values on the boundary of the square to at least `floor`
/// so the inclusion stays compactly contained. Returns how many nodes changed.
pub fn enforce_boundary_positivity(
    phi: &mut LevelSetField,
    mesh: &StructuredMesh,
    floor: f64,
) -> usize {
    let mut changed = 0;
    for (v, on) in phi.values.iter_mut().zip(mesh.boundary_node_mask()) {
        if on && *v < floor {
            *v = floor;
            changed += 1;
        }
    }
    if changed > 0 {
        log::warn!("clamped {changed} boundary level-set values to keep the inclusion inside");
    }
    changed
}

/// Piece of the zero level line inside one element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceSegment {
    pub element: usize,
    pub a: Point,
    pub b: Point,
}

impl InterfaceSegment {
    pub fn length(&self) -> f64 {
        ((self.a[0] - self.b[0]).powi(2) + (self.a[1] - self.b[1]).powi(2)).sqrt()
    }
}

/// Marching triangles on the P1 interpolant: one segment per element whose
/// vertices are split between negative and non-negative values.
pub fn interface_segments(phi: &LevelSetField, mesh: &StructuredMesh) -> Vec<InterfaceSegment> {
    let mut segments = Vec::new();
    for e in 0..mesh.element_count() {
        let v = element_values(mesh, &phi.values, e);
        let neg = v.iter().filter(|&&x| x < 0.0).count();
        if neg == 0 || neg == 3 {
            continue;
        }
        let lone = if neg == 1 {
            v.iter().position(|&x| x < 0.0).unwrap()
        } else {
            v.iter().position(|&x| x >= 0.0).unwrap()
        };
        let p = mesh.vertices(e);
        let cross = |a: usize, b: usize| {
            let t = v[a] / (v[a] - v[b]);
            [p[a][0] + t * (p[b][0] - p[a][0]), p[a][1] + t * (p[b][1] - p[a][1])]
        };
        let s = InterfaceSegment {
            element: e,
            a: cross(lone, (lone + 1) % 3),
            b: cross(lone, (lone + 2) % 3),
        };
        if s.a != s.b {
            segments.push(s);
        }
    }
    segments
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReinitStatus {
    Redistanced,
    /// The field has no sign change; returned unchanged.
    NoInterface,
}

/// Replaces nodal values by the signed Euclidean distance to the zero-level
/// polyline of the P1 interpolant, keeping each node's sign.
pub fn reinitialize(phi: &LevelSetField, mesh: &StructuredMesh) -> (LevelSetField, ReinitStatus) {
    reinitialize_with(phi, mesh, Execution::default())
}

pub fn reinitialize_with(
    phi: &LevelSetField,
    mesh: &StructuredMesh,
    exec: Execution,
) -> (LevelSetField, ReinitStatus) {
    let segments = interface_segments(phi, mesh);
    if segments.is_empty() {
        return (phi.clone(), ReinitStatus::NoInterface);
    }
    let nodes = mesh.nodes();
    let values = exec.map_range(mesh.node_count(), |i| {
        let v = phi.values[i];
        if v == 0.0 {
            return 0.0;
        }
        let d = segments
            .iter()
            .map(|s| point_segment_distance(nodes[i], s.a, s.b))
            .fold(f64::INFINITY, f64::min);
        if v < 0.0 {
            -d
        } else {
            d
        }
    });
    (LevelSetField::new(values), ReinitStatus::Redistanced)
}

/// `|Omega* xor Omega^r| / |Omega*|` with areas computed by exact clipping of
/// the two P1 interpolants on every element.
pub fn symmetric_difference_error(
    phi_r: &LevelSetField,
    phi_star: &LevelSetField,
    mesh: &StructuredMesh,
) -> Result<f64> {
    let (num, den) = symmetric_difference_parts(phi_r, phi_star, mesh);
    if den <= 0.0 {
        return Err(Error::EmptyReference);
    }
    Ok(num / den)
}

/// Returns `(|A xor B|, |B|)` where A, B are the negative sets of `phi_a`, `phi_b`.
pub fn symmetric_difference_parts(
    phi_a: &LevelSetField,
    phi_b: &LevelSetField,
    mesh: &StructuredMesh,
) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for e in 0..mesh.element_count() {
        let va = element_values(mesh, &phi_a.values, e);
        let vb = element_values(mesh, &phi_b.values, e);
        let area = mesh.area(e);
        let fa = negative_fraction(va);
        let fb = negative_fraction(vb);
        den += fb * area;
        if fa == 0.0 && fb == 0.0 {
            continue;
        }
        let both = if fa == 0.0 || fb == 0.0 {
            0.0
        } else if fa == 1.0 {
            fb * area
        } else if fb == 1.0 {
            fa * area
        } else {
            clipped_area(mesh.vertices(e), [va, vb])
        };
        num += (fa + fb) * area - 2.0 * both;
    }
    (num.max(0.0), den)
}

/// Writes a nodal field as an `(n+1) x (n+1)` text grid: a `# n = ...` header,
/// then one line per grid row `j` (bottom to top) with the values for
/// `i = 0..=n`.
pub fn write_grid<W: Write>(values: &[f64], mesh: &StructuredMesh, mut w: W) -> std::io::Result<()> {
    let n = mesh.resolution();
    writeln!(w, "# n = {n}")?;
    for j in 0..=n {
        let row: Vec<String> = (0..=n)
            .map(|i| values[mesh.node_index(i, j)].to_string())
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Legacy ASCII VTK structured-points file with one nodal scalar field.
pub fn write_vtk<W: Write>(name: &str, values: &[f64], mesh: &StructuredMesh, mut w: W) -> std::io::Result<()> {
    let n = mesh.resolution();
    let h = mesh.h();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{name}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} 1", n + 1, n + 1)?;
    writeln!(w, "ORIGIN 0 0 0")?;
    writeln!(w, "SPACING {h} {h} 1")?;
    writeln!(w, "POINT_DATA {}", (n + 1) * (n + 1))?;
    writeln!(w, "SCALARS {name} double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    // node_index runs i fastest, which is the VTK ordering
    for v in values {
        writeln!(w, "{v}")?;
    }
    Ok(())
}
