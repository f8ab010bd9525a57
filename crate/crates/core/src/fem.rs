//! P1 finite-element assembly on the structured mesh.

use crate::error::{Error, Result};
use crate::levelset::ConductivityField;
use crate::mesh::{BoundaryEdge, BoundaryPart, Point, StructuredMesh};
use crate::par::Execution;
use crate::solver::{ConstrainedOperator, CsrMatrix, SolverOptions};

pub type NodalField = Vec<f64>;
pub type NodalVectorField = Vec<[f64; 2]>;

/// Sparsity pattern of P1 matrices on a mesh, with the CSR slot of every
/// local (element) entry precomputed for scatter-free reassembly.
#[derive(Debug, Clone)]
pub struct Pattern {
    template: CsrMatrix,
    slots: Vec<[usize; 9]>,
}

impl Pattern {
    pub fn new(mesh: &StructuredMesh) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); mesh.node_count()];
        for t in mesh.triangles() {
            for &a in t {
                for &b in t {
                    rows[a].push(b);
                }
            }
        }
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
        }
        let template = CsrMatrix::from_pattern(&rows);
        let slots = mesh
            .triangles()
            .iter()
            .map(|t| {
                let mut s = [0; 9];
                for a in 0..3 {
                    for b in 0..3 {
                        s[3 * a + b] = template.position(t[a], t[b]).expect("pattern entry");
                    }
                }
                s
            })
            .collect();
        Self { template, slots }
    }

    /// Assembles `sum_e local(e)` where `local(e)[a][b]` couples the local
    /// vertices `a` and `b` of element `e`. Local matrices may be computed in
    /// parallel; the scatter runs in element order.
    pub fn assemble<F>(&self, exec: Execution, local: F) -> CsrMatrix
    where
        F: Fn(usize) -> [[f64; 3]; 3] + Sync + Send,
    {
        let locals = exec.map_range(self.slots.len(), local);
        let mut m = self.template.clone();
        for (slot, loc) in self.slots.iter().zip(&locals) {
            for a in 0..3 {
                for b in 0..3 {
                    m.values[slot[3 * a + b]] += loc[a][b];
                }
            }
        }
        m
    }
}

/// Element stiffness `sigma * area * grad(phi_a) . grad(phi_b)`.
pub fn local_stiffness(mesh: &StructuredMesh, e: usize, sigma: f64) -> [[f64; 3]; 3] {
    let g = mesh.hat_gradients(e);
    let s = sigma * mesh.area(e);
    let mut k = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            k[a][b] = s * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
        }
    }
    k
}

/// Consistent P1 mass matrix `area/12 * (1 + delta_ab)`.
pub fn local_mass(mesh: &StructuredMesh, e: usize) -> [[f64; 3]; 3] {
    let m = mesh.area(e) / 12.0;
    let mut k = [[m; 3]; 3];
    for (a, row) in k.iter_mut().enumerate() {
        row[a] = 2.0 * m;
    }
    k
}

/// `A_ij = sum_e sigma_e * int_e grad(phi_i) . grad(phi_j)`.
pub fn assemble_scalar_stiffness(
    mesh: &StructuredMesh,
    pattern: &Pattern,
    sigma: &ConductivityField,
    exec: Execution,
) -> CsrMatrix {
    pattern.assemble(exec, |e| local_stiffness(mesh, e, sigma.values[e]))
}

pub fn assemble_mass(mesh: &StructuredMesh, pattern: &Pattern, exec: Execution) -> CsrMatrix {
    pattern.assemble(exec, |e| local_mass(mesh, e))
}

/// Boundary flux density on an edge, evaluated at a point of that edge.
pub trait BoundaryFlux {
    fn flux_at(&self, edge: &BoundaryEdge, x: Point) -> f64;
}

impl<F: Fn(&BoundaryEdge, Point) -> f64> BoundaryFlux for F {
    fn flux_at(&self, edge: &BoundaryEdge, x: Point) -> f64 {
        self(edge, x)
    }
}

/// `b_i = int_Gamma g phi_i` by the trapezoid rule on each Neumann edge;
/// Dirichlet edges contribute nothing.
pub fn assemble_boundary_flux(mesh: &StructuredMesh, g: &impl BoundaryFlux) -> NodalField {
    let mut b = vec![0.0; mesh.node_count()];
    for e in mesh.boundary_edges() {
        if e.part == BoundaryPart::Dirichlet {
            continue;
        }
        let half = 0.5 * mesh.edge_length(e);
        for &v in &e.nodes {
            b[v] += half * g.flux_at(e, mesh.nodes()[v]);
        }
    }
    b
}

/// `b_i = int f phi_i` for an element-wise constant source.
pub fn assemble_source(mesh: &StructuredMesh, f: &[f64]) -> NodalField {
    let mut b = vec![0.0; mesh.node_count()];
    for (e, t) in mesh.triangles().iter().enumerate() {
        let c = f[e] * mesh.area(e) / 3.0;
        for &v in t {
            b[v] += c;
        }
    }
    b
}

/// `b_i = sum_k w_k phi_i(x_k)`: each point load is split among the vertices
/// of its element by barycentric weights.
pub fn assemble_point_loads(mesh: &StructuredMesh, loads: &[(Point, f64)]) -> Result<NodalField> {
    let mut b = vec![0.0; mesh.node_count()];
    for &(x, w) in loads {
        let loc = mesh.locate_point(x)?;
        let t = mesh.triangles()[loc.element];
        for a in 0..3 {
            b[t[a]] += w * loc.bary[a];
        }
    }
    Ok(b)
}

/// Scalar block of the vector Helmholtz operator
/// `alpha1 * int DV : Dxi + alpha2 * int V . xi`. Both vector components use
/// this block and are uncoupled.
pub fn assemble_vector_helmholtz(
    mesh: &StructuredMesh,
    pattern: &Pattern,
    alpha1: f64,
    alpha2: f64,
    exec: Execution,
) -> Result<CsrMatrix> {
    if !(alpha1 >= 0.0 && alpha2 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Helmholtz coefficients must be non-negative (alpha1 = {alpha1}, alpha2 = {alpha2})"
        )));
    }
    Ok(pattern.assemble(exec, |e| {
        let k = local_stiffness(mesh, e, alpha1);
        let m = local_mass(mesh, e);
        let mut out = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                out[a][b] = k[a][b] + alpha2 * m[a][b];
            }
        }
        out
    }))
}

/// Matrix, right-hand side and Dirichlet constraints `(index, value)`.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub constraints: Vec<(usize, f64)>,
}

/// Imposes the constraints by symmetric row/column elimination, then solves.
/// Constrained entries of the result equal their prescribed values exactly.
pub fn apply_dirichlet_and_solve(system: SparseSystem, options: &SolverOptions) -> Result<NodalField> {
    let n = system.matrix.nrows;
    if system.rhs.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "rhs has {} entries, matrix has {n} rows",
            system.rhs.len()
        )));
    }
    let mut prescribed = vec![None; n];
    for &(i, v) in &system.constraints {
        prescribed[i] = Some(v);
    }
    // Lift the prescribed values into the right-hand side.
    let mut lift = vec![0.0; n];
    for (i, p) in prescribed.iter().enumerate() {
        if let Some(v) = p {
            lift[i] = *v;
        }
    }
    let a_lift = system.matrix.mul(&lift);
    let rhs: Vec<f64> = system
        .rhs
        .iter()
        .zip(&a_lift)
        .map(|(b, al)| b - al)
        .collect();
    let mask: Vec<bool> = prescribed.iter().map(Option::is_some).collect();
    let op = ConstrainedOperator::new(system.matrix, mask, *options)?;
    let mut x = op.solve(&rhs, None)?;
    for (xi, p) in x.iter_mut().zip(&prescribed) {
        if let Some(v) = p {
            *xi = *v;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_unit_square_mesh, hat_gradients_of};
    use crate::solver::SolverKind;

    #[test]
    fn reference_triangle_stiffness() {
        let (area, g) = hat_gradients_of(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let mut k = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                k[a][b] = area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for a in 0..3 {
            for b in 0..3 {
                assert!((k[a][b] - expected[a][b]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stiffness_properties() {
        let mesh = build_unit_square_mesh(6).unwrap();
        let pat = Pattern::new(&mesh);
        let sigma = ConductivityField {
            values: (0..mesh.element_count()).map(|e| 1.0 + (e % 7) as f64).collect(),
        };
        let a = assemble_scalar_stiffness(&mesh, &pat, &sigma, Execution::Sequential);
        assert!(a.asymmetry() < 1e-12);
        for i in 0..a.nrows {
            let s: f64 = a.row(i).map(|(_, v)| v).sum();
            assert!(s.abs() < 1e-12);
            assert!(a.get(i, i) > 0.0);
        }
        let doubled = ConductivityField {
            values: sigma.values.iter().map(|s| 2.0 * s).collect(),
        };
        let a2 = assemble_scalar_stiffness(&mesh, &pat, &doubled, Execution::Parallel);
        for (x, y) in a.values.iter().zip(&a2.values) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_flux_cases() {
        let mesh = build_unit_square_mesh(10).unwrap();
        let zero = assemble_boundary_flux(&mesh, &|_: &BoundaryEdge, _: Point| 0.0);
        assert!(zero.iter().all(|&v| v == 0.0));

        let target = mesh.boundary_edges()[33];
        let single = assemble_boundary_flux(&mesh, &|e: &BoundaryEdge, _: Point| {
            if e.nodes == target.nodes {
                1.0
            } else {
                0.0
            }
        });
        let l = mesh.edge_length(&target);
        assert!((single[target.nodes[0]] - l / 2.0).abs() < 1e-15);
        assert!((single[target.nodes[1]] - l / 2.0).abs() < 1e-15);
        assert!((single.iter().sum::<f64>() - l).abs() < 1e-15);

        let ones = assemble_boundary_flux(&mesh, &|_: &BoundaryEdge, _: Point| 1.0);
        assert!((ones.iter().sum::<f64>() - 3.6).abs() < 1e-12);
    }

    #[test]
    fn point_load_cases() {
        let mesh = build_unit_square_mesh(5).unwrap();
        let node = mesh.node_index(2, 3);
        let b = assemble_point_loads(&mesh, &[(mesh.nodes()[node], 2.5)]).unwrap();
        assert_eq!(b[node], 2.5);
        assert_eq!(b.iter().filter(|&&v| v != 0.0).count(), 1);

        let e = 13;
        let b = assemble_point_loads(&mesh, &[(mesh.centroid(e), 3.0)]).unwrap();
        for &v in &mesh.triangles()[e] {
            assert!((b[v] - 1.0).abs() < 1e-14);
        }

        let loads = [([0.13, 0.77], 1.5), ([0.5, 0.0], -0.25), ([0.91, 0.42], 2.0)];
        let b = assemble_point_loads(&mesh, &loads).unwrap();
        assert!((b.iter().sum::<f64>() - 3.25).abs() < 1e-14);

        assert!(assemble_point_loads(&mesh, &[([1.5, 0.2], 1.0)]).is_err());
    }

    #[test]
    fn helmholtz_row_sums_are_lumped_mass() {
        let mesh = build_unit_square_mesh(4).unwrap();
        let pat = Pattern::new(&mesh);
        let a = assemble_vector_helmholtz(&mesh, &pat, 0.0, 0.7, Execution::Sequential).unwrap();
        // Oracle: int phi_i = sum over adjacent elements of area / 3.
        let mut lumped = vec![0.0; mesh.node_count()];
        for (e, t) in mesh.triangles().iter().enumerate() {
            for &v in t {
                lumped[v] += mesh.area(e) / 3.0;
            }
        }
        for i in 0..a.nrows {
            let s: f64 = a.row(i).map(|(_, v)| v).sum();
            assert!((s - 0.7 * lumped[i]).abs() < 1e-15);
        }
        let k = assemble_vector_helmholtz(&mesh, &pat, 0.3, 0.0, Execution::Sequential).unwrap();
        let ones = vec![1.0; mesh.node_count()];
        assert!(k.mul(&ones).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn helmholtz_is_spd() {
        let mesh = build_unit_square_mesh(8).unwrap();
        let pat = Pattern::new(&mesh);
        let a = assemble_vector_helmholtz(&mesh, &pat, 0.3, 0.7, Execution::Sequential).unwrap();
        assert!(crate::solver::BandedCholesky::factor(&a).is_ok());
        assert!(assemble_vector_helmholtz(&mesh, &pat, -1.0, 0.7, Execution::Sequential).is_err());
    }

    #[test]
    fn dirichlet_solve_linearity_and_constraints() {
        let mesh = build_unit_square_mesh(10).unwrap();
        let pat = Pattern::new(&mesh);
        let sigma = ConductivityField::uniform(1.0, mesh.element_count());
        let a = assemble_scalar_stiffness(&mesh, &pat, &sigma, Execution::Sequential);
        let constraints: Vec<(usize, f64)> = mesh
            .dirichlet_node_mask()
            .iter()
            .enumerate()
            .filter(|(_, &d)| d)
            .map(|(i, _)| (i, 0.0))
            .collect();
        let zero = apply_dirichlet_and_solve(
            SparseSystem {
                matrix: a.clone(),
                rhs: vec![0.0; a.nrows],
                constraints: constraints.clone(),
            },
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));

        let rhs = assemble_boundary_flux(&mesh, &|_: &BoundaryEdge, x: Point| x[0] - x[1]);
        for kind in [SolverKind::Cg, SolverKind::Direct] {
            let opts = SolverOptions {
                kind,
                ..SolverOptions::default()
            };
            let solve = |scale: f64| {
                apply_dirichlet_and_solve(
                    SparseSystem {
                        matrix: a.clone(),
                        rhs: rhs.iter().map(|v| scale * v).collect(),
                        constraints: constraints.clone(),
                    },
                    &opts,
                )
                .unwrap()
            };
            let x1 = solve(1.0);
            let x2 = solve(2.0);
            for (u, v) in x1.iter().zip(&x2) {
                assert!((2.0 * u - v).abs() < 1e-9);
            }
            // Residual check on the unconstrained rows.
            let ax = a.mul(&x1);
            let mask = mesh.dirichlet_node_mask();
            let res: f64 = (0..a.nrows)
                .filter(|&i| !mask[i])
                .map(|i| (ax[i] - rhs[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            let bn: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(res <= 1e-9 * bn, "{kind:?}: {res}");
        }
    }

    #[test]
    fn nonzero_constraints_are_exact() {
        let mesh = build_unit_square_mesh(6).unwrap();
        let pat = Pattern::new(&mesh);
        let sigma = ConductivityField::uniform(1.0, mesh.element_count());
        let a = assemble_scalar_stiffness(&mesh, &pat, &sigma, Execution::Sequential);
        // u = x + 2y is discretely harmonic; impose it on the whole boundary.
        let exact: Vec<f64> = mesh.nodes().iter().map(|p| p[0] + 2.0 * p[1]).collect();
        let constraints = mesh
            .boundary_node_mask()
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i, exact[i]))
            .collect();
        let x = apply_dirichlet_and_solve(
            SparseSystem {
                matrix: a,
                rhs: vec![0.0; mesh.node_count()],
                constraints,
            },
            &SolverOptions::default(),
        )
        .unwrap();
        for (u, v) in x.iter().zip(&exact) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
