//! Structured triangulation of the unit square with tagged boundary edges.
//!
//! Node `(i, j)` sits at `(i/n, j/n)` and has index `j * (n + 1) + i`. Cell
//! `(i, j)` is split along its lower-left to upper-right diagonal into two
//! counterclockwise triangles with indices `2 * (j * n + i)` (below the
//! diagonal) and `2 * (j * n + i) + 1` (above it).

use std::io::Write;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Tolerance used for geometric predicates on the unit square.
const GEOM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Upper,
    Lower,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Upper, Side::Lower];

    /// Coordinate that varies along this side (x2 for left/right, x1 for
    /// upper/lower).
    pub fn tangential_coordinate(self, x: Point) -> f64 {
        match self {
            Side::Left | Side::Right => x[1],
            Side::Upper | Side::Lower => x[0],
        }
    }

    /// Side whose closed segment contains `x`, checked in the order
    /// left, right, upper, lower (so corners resolve to left/right).
    pub fn of_point(x: Point) -> Option<Side> {
        let on = |a: f64, b: f64| (a - b).abs() <= 1e-9;
        let inside = |t: f64| (-1e-9..=1.0 + 1e-9).contains(&t);
        if on(x[0], 0.0) && inside(x[1]) {
            Some(Side::Left)
        } else if on(x[0], 1.0) && inside(x[1]) {
            Some(Side::Right)
        } else if on(x[1], 1.0) && inside(x[0]) {
            Some(Side::Upper)
        } else if on(x[1], 0.0) && inside(x[0]) {
            Some(Side::Lower)
        } else {
            None
        }
    }
}

/// Boundary part: `Neumann` is the current/measurement part Γ, `Dirichlet`
/// the grounded part Γ0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryPart {
    Neumann,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub side: Side,
    pub part: BoundaryPart,
}

/// Axis-aligned segment on the boundary of the unit square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletSegment {
    pub start: Point,
    pub end: Point,
}

impl DirichletSegment {
    pub fn new(start: Point, end: Point) -> Self {
        Self { start, end }
    }

    /// `[0.4, 0.6] x {0}` and `[0.4, 0.6] x {1}`.
    pub fn default_pair() -> Vec<DirichletSegment> {
        vec![
            DirichletSegment::new([0.4, 0.0], [0.6, 0.0]),
            DirichletSegment::new([0.4, 1.0], [0.6, 1.0]),
        ]
    }

    fn side(&self) -> Option<Side> {
        let a = Side::of_point(self.start)?;
        let b = Side::of_point(self.end)?;
        if a == b {
            return Some(a);
        }
        // Segments that end at a corner are classified by the other endpoint.
        let horizontal = (self.start[1] - self.end[1]).abs() <= 1e-9;
        let vertical = (self.start[0] - self.end[0]).abs() <= 1e-9;
        if horizontal {
            [Side::Upper, Side::Lower]
                .into_iter()
                .find(|s| Side::of_point_on(*s, self.start) && Side::of_point_on(*s, self.end))
        } else if vertical {
            [Side::Left, Side::Right]
                .into_iter()
                .find(|s| Side::of_point_on(*s, self.start) && Side::of_point_on(*s, self.end))
        } else {
            None
        }
    }

    /// Whether `x` lies on the closed segment.
    pub fn contains(&self, x: Point) -> bool {
        let lo = [self.start[0].min(self.end[0]), self.start[1].min(self.end[1])];
        let hi = [self.start[0].max(self.end[0]), self.start[1].max(self.end[1])];
        (0..2).all(|d| x[d] >= lo[d] - 1e-9 && x[d] <= hi[d] + 1e-9)
    }
}

impl Side {
    fn of_point_on(side: Side, x: Point) -> bool {
        let on = |a: f64, b: f64| (a - b).abs() <= 1e-9;
        match side {
            Side::Left => on(x[0], 0.0),
            Side::Right => on(x[0], 1.0),
            Side::Upper => on(x[1], 1.0),
            Side::Lower => on(x[1], 0.0),
        }
    }
}

/// Element containing a point, with the point's barycentric coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub element: usize,
    pub bary: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct StructuredMesh {
    n: usize,
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    areas: Vec<f64>,
    /// Gradients of the three barycentric (hat) functions, per element.
    hat_gradients: Vec<[[f64; 2]; 3]>,
}

/// Builds the `n x n` mesh of the unit square with the default Dirichlet
/// segments `[0.4, 0.6] x {0, 1}`.
///
/// The Dirichlet part is resolved exactly only when `n` is a multiple of 5;
/// otherwise it is the union of edges whose midpoints fall in the segments.
pub fn build_unit_square_mesh(n: usize) -> Result<StructuredMesh> {
    if n == 0 {
        return Err(Error::InvalidResolution(n));
    }
    let np = n + 1;
    let h = 1.0 / n as f64;
    let mut nodes = Vec::with_capacity(np * np);
    for j in 0..np {
        for i in 0..np {
            nodes.push([i as f64 * h, j as f64 * h]);
        }
    }
    let idx = |i: usize, j: usize| j * np + i;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    let mut boundary_edges = Vec::with_capacity(4 * n);
    for i in 0..n {
        boundary_edges.push(edge(idx(i, 0), idx(i + 1, 0), Side::Lower));
    }
    for j in 0..n {
        boundary_edges.push(edge(idx(n, j), idx(n, j + 1), Side::Right));
    }
    for i in (0..n).rev() {
        boundary_edges.push(edge(idx(i + 1, n), idx(i, n), Side::Upper));
    }
    for j in (0..n).rev() {
        boundary_edges.push(edge(idx(0, j + 1), idx(0, j), Side::Left));
    }

    let mut areas = Vec::with_capacity(triangles.len());
    let mut hat_gradients = Vec::with_capacity(triangles.len());
    for tri in &triangles {
        let (area, grads) = hat_gradients_of(&[nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]]);
        areas.push(area);
        hat_gradients.push(grads);
    }

    let mesh = StructuredMesh {
        n,
        nodes,
        triangles,
        boundary_edges,
        areas,
        hat_gradients,
    };
    classify_boundary(mesh, &DirichletSegment::default_pair())
}

fn edge(a: usize, b: usize, side: Side) -> BoundaryEdge {
    BoundaryEdge {
        nodes: [a, b],
        side,
        part: BoundaryPart::Neumann,
    }
}

/// Signed area and constant hat-function gradients of a triangle.
pub fn hat_gradients_of(p: &[Point; 3]) -> (f64, [[f64; 2]; 3]) {
    let d1 = [p[1][0] - p[0][0], p[1][1] - p[0][1]];
    let d2 = [p[2][0] - p[0][0], p[2][1] - p[0][1]];
    let det = d1[0] * d2[1] - d1[1] * d2[0];
    let area = 0.5 * det;
    // grad(lambda_1) and grad(lambda_2) are the rows of the inverse Jacobian.
    let g1 = [d2[1] / det, -d2[0] / det];
    let g2 = [-d1[1] / det, d1[0] / det];
    let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
    (area, [g0, g1, g2])
}

/// Retags every boundary edge: `Dirichlet` iff its midpoint lies in one of the
/// given segments. Side tags are recomputed from the edge geometry.
pub fn classify_boundary(
    mut mesh: StructuredMesh,
    dirichlet_segments: &[DirichletSegment],
) -> Result<StructuredMesh> {
    for seg in dirichlet_segments {
        if seg.side().is_none() {
            return Err(Error::InvalidGeometry(format!(
                "segment ({}, {})-({}, {}) does not lie on one side of the unit square",
                seg.start[0], seg.start[1], seg.end[0], seg.end[1]
            )));
        }
    }
    let nodes = &mesh.nodes;
    for e in &mut mesh.boundary_edges {
        let a = nodes[e.nodes[0]];
        let b = nodes[e.nodes[1]];
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        e.side = if a[0] == 0.0 && b[0] == 0.0 {
            Side::Left
        } else if a[0] == 1.0 && b[0] == 1.0 {
            Side::Right
        } else if a[1] == 1.0 && b[1] == 1.0 {
            Side::Upper
        } else {
            Side::Lower
        };
        let on_dirichlet = dirichlet_segments
            .iter()
            .any(|s| s.side() == Some(e.side) && s.contains(mid));
        e.part = if on_dirichlet {
            BoundaryPart::Dirichlet
        } else {
            BoundaryPart::Neumann
        };
    }
    Ok(mesh)
}

impl StructuredMesh {
    pub fn resolution(&self) -> usize {
        self.n
    }

    /// Mesh size `1/n`.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn element_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn area(&self, e: usize) -> f64 {
        self.areas[e]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn hat_gradients(&self, e: usize) -> &[[f64; 2]; 3] {
        &self.hat_gradients[e]
    }

    pub fn vertices(&self, e: usize) -> [Point; 3] {
        let t = self.triangles[e];
        [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]]
    }

    pub fn centroid(&self, e: usize) -> Point {
        let v = self.vertices(e);
        [
            (v[0][0] + v[1][0] + v[2][0]) / 3.0,
            (v[0][1] + v[1][1] + v[2][1]) / 3.0,
        ]
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    /// Mask of nodes on the boundary of the square.
    pub fn boundary_node_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.nodes.len()];
        for e in &self.boundary_edges {
            mask[e.nodes[0]] = true;
            mask[e.nodes[1]] = true;
        }
        mask
    }

    /// Mask of nodes on the Dirichlet part Γ0 (endpoints included).
    pub fn dirichlet_node_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.nodes.len()];
        for e in self
            .boundary_edges
            .iter()
            .filter(|e| e.part == BoundaryPart::Dirichlet)
        {
            mask[e.nodes[0]] = true;
            mask[e.nodes[1]] = true;
        }
        mask
    }

    pub fn edge_length(&self, e: &BoundaryEdge) -> f64 {
        let a = self.nodes[e.nodes[0]];
        let b = self.nodes[e.nodes[1]];
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    /// Whether `x` lies on the boundary of the square (within 1e-12).
    pub fn on_boundary(x: Point) -> bool {
        x[0] <= GEOM_EPS || x[0] >= 1.0 - GEOM_EPS || x[1] <= GEOM_EPS || x[1] >= 1.0 - GEOM_EPS
    }

    /// Barycentric coordinates of `x` with respect to element `e` (unclamped).
    pub fn barycentric(&self, e: usize, x: Point) -> [f64; 3] {
        let g = &self.hat_gradients[e];
        let p0 = self.nodes[self.triangles[e][0]];
        let d = [x[0] - p0[0], x[1] - p0[1]];
        let l1 = g[1][0] * d[0] + g[1][1] * d[1];
        let l2 = g[2][0] * d[0] + g[2][1] * d[1];
        [1.0 - l1 - l2, l1, l2]
    }

    /// Finds the element containing `x`. Points on shared edges or vertices
    /// resolve to the lowest element index. Returned coordinates are clamped
    /// to `[0, 1]` and renormalized.
    pub fn locate_point(&self, x: Point) -> Result<Location> {
        if !(x[0].is_finite() && x[1].is_finite())
            || x[0] < -GEOM_EPS
            || x[0] > 1.0 + GEOM_EPS
            || x[1] < -GEOM_EPS
            || x[1] > 1.0 + GEOM_EPS
        {
            return Err(Error::OutOfDomain { x: x[0], y: x[1] });
        }
        let x = [x[0].clamp(0.0, 1.0), x[1].clamp(0.0, 1.0)];
        let n = self.n;
        let nf = n as f64;
        let cell_range = |t: f64| {
            let s = t * nf;
            let lo = ((s - 1e-9).floor().max(0.0) as usize).min(n - 1);
            let hi = ((s + 1e-9).floor().max(0.0) as usize).min(n - 1);
            lo..=hi
        };
        let mut best: Option<Location> = None;
        for j in cell_range(x[1]) {
            for i in cell_range(x[0]) {
                let base = 2 * (j * n + i);
                for e in [base, base + 1] {
                    if best.is_some_and(|b| b.element < e) {
                        continue;
                    }
                    let b = self.barycentric(e, x);
                    if b.iter().all(|&l| l >= -1e-10) {
                        best = Some(Location {
                            element: e,
                            bary: normalize_bary(b),
                        });
                    }
                }
            }
        }
        best.ok_or(Error::OutOfDomain { x: x[0], y: x[1] })
    }

    /// Value of the P1 interpolant of a nodal field at a located point.
    pub fn interpolate(&self, field: &[f64], loc: &Location) -> f64 {
        let t = self.triangles[loc.element];
        loc.bary[0] * field[t[0]] + loc.bary[1] * field[t[1]] + loc.bary[2] * field[t[2]]
    }

    /// Value of the P1 interpolant of a nodal field at `x`.
    pub fn evaluate(&self, field: &[f64], x: Point) -> Result<f64> {
        let loc = self.locate_point(x)?;
        Ok(self.interpolate(field, &loc))
    }

    /// Constant gradient of a nodal field on element `e`.
    pub fn element_gradient(&self, field: &[f64], e: usize) -> [f64; 2] {
        let t = self.triangles[e];
        let g = &self.hat_gradients[e];
        let mut out = [0.0; 2];
        for a in 0..3 {
            out[0] += field[t[a]] * g[a][0];
            out[1] += field[t[a]] * g[a][1];
        }
        out
    }

    /// Element gradients of a nodal field for all elements.
    pub fn gradients(&self, field: &[f64]) -> Vec<[f64; 2]> {
        (0..self.triangles.len())
            .map(|e| self.element_gradient(field, e))
            .collect()
    }

    /// Average of the nodal values over the vertices of element `e`.
    pub fn element_mean(&self, field: &[f64], e: usize) -> f64 {
        let t = self.triangles[e];
        (field[t[0]] + field[t[1]] + field[t[2]]) / 3.0
    }

    /// Elements of cells within `radius` cells of the cell containing `x`.
    pub fn elements_near(&self, x: Point, radius: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.n;
        let ci = ((x[0] * n as f64).floor().max(0.0) as usize).min(n - 1);
        let cj = ((x[1] * n as f64).floor().max(0.0) as usize).min(n - 1);
        let i0 = ci.saturating_sub(radius);
        let j0 = cj.saturating_sub(radius);
        let i1 = (ci + radius).min(n - 1);
        let j1 = (cj + radius).min(n - 1);
        (j0..=j1).flat_map(move |j| {
            (i0..=i1).flat_map(move |i| {
                let base = 2 * (j * n + i);
                [base, base + 1]
            })
        })
    }

    /// Writes the plain-text node/element listing: `id x y` per node, then
    /// `id n0 n1 n2` per triangle, each block preceded by a `#` header line.
    pub fn write_listing<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# nodes {}", self.nodes.len())?;
        for (id, p) in self.nodes.iter().enumerate() {
            writeln!(w, "{} {} {}", id, p[0], p[1])?;
        }
        writeln!(w, "# triangles {}", self.triangles.len())?;
        for (id, t) in self.triangles.iter().enumerate() {
            writeln!(w, "{} {} {} {}", id, t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

fn normalize_bary(b: [f64; 3]) -> [f64; 3] {
    let c = [b[0].clamp(0.0, 1.0), b[1].clamp(0.0, 1.0), b[2].clamp(0.0, 1.0)];
    let s = c[0] + c[1] + c[2];
    [c[0] / s, c[1] / s, c[2] / s]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn counts() {
        for (n, nodes, tris, edges) in [(1, 4, 2, 4), (2, 9, 8, 8), (128, 16641, 32768, 512)] {
            let m = build_unit_square_mesh(n).unwrap();
            assert_eq!(m.node_count(), nodes);
            assert_eq!(m.element_count(), tris);
            assert_eq!(m.boundary_edges().len(), edges);
        }
    }

    #[test]
    fn zero_resolution_rejected() {
        assert!(matches!(
            build_unit_square_mesh(0),
            Err(Error::InvalidResolution(0))
        ));
    }

    #[test]
    fn areas_positive_and_sum_to_one() {
        let n = 7;
        let m = build_unit_square_mesh(n).unwrap();
        let expected = 1.0 / (2.0 * (n * n) as f64);
        for &a in m.areas() {
            assert!((a - expected).abs() < 1e-15);
        }
        let total: f64 = m.areas().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn edge_sharing() {
        let m = build_unit_square_mesh(6).unwrap();
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in m.triangles() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        for e in m.boundary_edges() {
            let key = (e.nodes[0].min(e.nodes[1]), e.nodes[0].max(e.nodes[1]));
            assert_eq!(count[&key], 1);
        }
        let boundary = m.boundary_edges().len();
        let interior = count.values().filter(|&&c| c == 2).count();
        assert_eq!(count.values().filter(|&&c| c == 1).count(), boundary);
        assert_eq!(interior + boundary, count.len());
    }

    #[test]
    fn dirichlet_part_is_exact_for_multiples_of_five() {
        for n in [5, 10, 40] {
            let m = build_unit_square_mesh(n).unwrap();
            let len: f64 = m
                .boundary_edges()
                .iter()
                .filter(|e| e.part == BoundaryPart::Dirichlet)
                .map(|e| m.edge_length(e))
                .sum();
            assert!((len - 0.4).abs() < 1e-12, "n={n} len={len}");
            for e in m.boundary_edges() {
                if e.part == BoundaryPart::Dirichlet {
                    for &v in &e.nodes {
                        let p = m.nodes()[v];
                        assert!(p[1] == 0.0 || p[1] == 1.0);
                        assert!(p[0] >= 0.4 - 1e-12 && p[0] <= 0.6 + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn classification_by_midpoint() {
        let m = build_unit_square_mesh(10).unwrap();
        let find = |mid: Point| {
            *m.boundary_edges()
                .iter()
                .find(|e| {
                    let a = m.nodes()[e.nodes[0]];
                    let b = m.nodes()[e.nodes[1]];
                    ((a[0] + b[0]) / 2.0 - mid[0]).abs() < 1e-12
                        && ((a[1] + b[1]) / 2.0 - mid[1]).abs() < 1e-12
                })
                .unwrap()
        };
        assert_eq!(find([0.45, 0.0]).part, BoundaryPart::Dirichlet);
        assert_eq!(find([0.55, 1.0]).part, BoundaryPart::Dirichlet);
        let left = find([0.0, 0.45]);
        assert_eq!(left.part, BoundaryPart::Neumann);
        assert_eq!(left.side, Side::Left);
        assert_eq!(find([0.35, 0.0]).part, BoundaryPart::Neumann);
        assert_eq!(find([1.0, 0.55]).side, Side::Right);
    }

    #[test]
    fn classification_rejects_interior_segment() {
        let m = build_unit_square_mesh(5).unwrap();
        let bad = [DirichletSegment::new([0.2, 0.5], [0.4, 0.5])];
        assert!(matches!(
            classify_boundary(m, &bad),
            Err(Error::InvalidGeometry(_))
        ));
    }

    #[test]
    fn custom_segments() {
        let m = build_unit_square_mesh(10).unwrap();
        let m = classify_boundary(m, &[DirichletSegment::new([0.0, 0.0], [0.0, 1.0])]).unwrap();
        for e in m.boundary_edges() {
            assert_eq!(e.part == BoundaryPart::Dirichlet, e.side == Side::Left);
        }
    }

    #[test]
    fn locate_vertex_and_centroid() {
        let m = build_unit_square_mesh(4).unwrap();
        let loc = m.locate_point([0.5, 0.25]).unwrap();
        let t = m.triangles()[loc.element];
        let k = m.node_index(2, 1);
        let pos = t.iter().position(|&v| v == k).unwrap();
        assert!((loc.bary[pos] - 1.0).abs() < 1e-14);
        for e in [0, 5, 17, 31] {
            let loc = m.locate_point(m.centroid(e)).unwrap();
            assert_eq!(loc.element, e);
            for b in loc.bary {
                assert!((b - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn locate_matches_brute_force() {
        let m = build_unit_square_mesh(4).unwrap();
        for x in [[0.25, 0.125], [0.1, 0.9], [0.5, 0.5], [1.0, 1.0], [0.0, 0.3], [0.61, 0.13]] {
            // Oracle: the lowest-index element whose closed triangle contains x.
            let expected = (0..m.element_count())
                .find(|&e| m.barycentric(e, x).iter().all(|&l| l >= -1e-12))
                .unwrap();
            let loc = m.locate_point(x).unwrap();
            assert_eq!(loc.element, expected, "x = {x:?}");
            let v = m.vertices(loc.element);
            let rx = (0..3).map(|a| loc.bary[a] * v[a][0]).sum::<f64>();
            let ry = (0..3).map(|a| loc.bary[a] * v[a][1]).sum::<f64>();
            assert!((rx - x[0]).abs() < 1e-14 && (ry - x[1]).abs() < 1e-14);
            assert!((loc.bary.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn locate_out_of_domain() {
        let m = build_unit_square_mesh(3).unwrap();
        assert!(matches!(
            m.locate_point([1.1, 0.5]),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(m.locate_point([-0.01, 0.5]).is_err());
    }

    #[test]
    fn listing_format() {
        let m = build_unit_square_mesh(1).unwrap();
        let mut buf = Vec::new();
        m.write_listing(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# nodes 4");
        assert_eq!(lines[2], "1 1 0");
        assert_eq!(lines[5], "# triangles 2");
        assert_eq!(lines[6], "0 0 1 3");
    }
}
