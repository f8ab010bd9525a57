//! Distributed shape derivative, the H1-type descent field and the
//! interface (boundary) form used as a cross-check.

use crate::error::{Error, Result};
use crate::fem::{assemble_vector_helmholtz, NodalVectorField, Pattern};
use crate::levelset::{element_values, interface_segments, ConductivityField, LevelSetField};
use crate::mesh::{Point, StructuredMesh};
use crate::adjoint::PointSampler;
use crate::par::Execution;
use crate::solver::{ConstrainedOperator, SolverOptions};

pub type Tensor2 = [[f64; 2]; 2];

/// State, adjoint and weight of one current.
#[derive(Debug, Clone, Copy)]
pub struct CurrentFields<'a> {
    pub state: &'a [f64],
    pub adjoint: &'a [f64],
    pub residuals: &'a [f64],
    pub weight: f64,
}

/// Volume source `f`: element values and element gradients of its smooth
/// extension.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTerm {
    pub values: Vec<f64>,
    pub gradients: Vec<[f64; 2]>,
}

/// `dJ(V) = int S1 : DV + int S0r . V + sum_k m_k . V(x_k)`, stored per
/// element together with the nodal coefficients `l` with `dJ(V) = sum l . V`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDerivative {
    pub s1: Vec<Tensor2>,
    pub s0r: Vec<[f64; 2]>,
    pub s0s: Vec<(Point, [f64; 2])>,
    pub functional: NodalVectorField,
}

/// `-2 sigma grad u (.) grad p + (sigma grad u . grad p - f p) I`, with (.)
/// the symmetrized outer product.
pub fn s1_tensor(sigma: f64, gu: [f64; 2], gp: [f64; 2], fp: f64) -> Tensor2 {
    let dot = gu[0] * gp[0] + gu[1] * gp[1];
    let mut s = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            s[i][j] = -sigma * (gu[i] * gp[j] + gu[j] * gp[i]);
        }
        s[i][i] += sigma * dot - fp;
    }
    s
}

/// Weighted sum over currents of the element tensors.
pub fn assemble_s1(
    mesh: &StructuredMesh,
    sigma: &ConductivityField,
    currents: &[CurrentFields],
    source: Option<&SourceTerm>,
    exec: Execution,
) -> Vec<Tensor2> {
    exec.map_range(mesh.element_count(), |e| {
        let mut s = [[0.0; 2]; 2];
        for c in currents {
            if c.weight == 0.0 {
                continue;
            }
            let gu = mesh.element_gradient(c.state, e);
            let gp = mesh.element_gradient(c.adjoint, e);
            let fp = source.map_or(0.0, |f| f.values[e] * mesh.element_mean(c.adjoint, e));
            let t = s1_tensor(sigma.values[e], gu, gp, fp);
            for i in 0..2 {
                for j in 0..2 {
                    s[i][j] += c.weight * t[i][j];
                }
            }
        }
        s
    })
}

/// Element field `S0r = -p grad f` and point masses `-r_k grad u(x_k)` at the
/// interior measurement points. Points on the outer boundary are dropped:
/// the perturbation fields vanish there.
pub fn assemble_s0(
    mesh: &StructuredMesh,
    phi: &LevelSetField,
    currents: &[CurrentFields],
    source: Option<&SourceTerm>,
    sampler: &PointSampler,
) -> Result<(Vec<[f64; 2]>, Vec<(Point, [f64; 2])>)> {
    let mut s0r = vec![[0.0; 2]; mesh.element_count()];
    if let Some(f) = source {
        for (e, out) in s0r.iter_mut().enumerate() {
            for c in currents {
                let p = mesh.element_mean(c.adjoint, e);
                out[0] -= c.weight * p * f.gradients[e][0];
                out[1] -= c.weight * p * f.gradients[e][1];
            }
        }
    }
    let mut s0s = Vec::new();
    for (k, (&x, loc)) in sampler.points().iter().zip(sampler.locations()).enumerate() {
        if StructuredMesh::on_boundary(x) {
            continue;
        }
        if mesh.interpolate(&phi.values, loc) == 0.0 {
            return Err(Error::PointOnInterface { x: x[0], y: x[1] });
        }
        let mut m = [0.0; 2];
        for c in currents {
            let g = mesh.element_gradient(c.state, loc.element);
            m[0] -= c.weight * c.residuals[k] * g[0];
            m[1] -= c.weight * c.residuals[k] * g[1];
        }
        s0s.push((x, m));
    }
    Ok((s0r, s0s))
}

impl ShapeDerivative {
    /// Builds the nodal functional from the element and point parts.
    pub fn new(
        mesh: &StructuredMesh,
        s1: Vec<Tensor2>,
        s0r: Vec<[f64; 2]>,
        s0s: Vec<(Point, [f64; 2])>,
    ) -> Result<Self> {
        let mut l = vec![[0.0; 2]; mesh.node_count()];
        for e in 0..mesh.element_count() {
            let area = mesh.area(e);
            let g = mesh.hat_gradients(e);
            let t = mesh.triangles()[e];
            let s = &s1[e];
            for a in 0..3 {
                for i in 0..2 {
                    l[t[a]][i] += area * (s[i][0] * g[a][0] + s[i][1] * g[a][1] + s0r[e][i] / 3.0);
                }
            }
        }
        for &(x, m) in &s0s {
            let loc = mesh.locate_point(x)?;
            let t = mesh.triangles()[loc.element];
            for a in 0..3 {
                for i in 0..2 {
                    l[t[a]][i] += loc.bary[a] * m[i];
                }
            }
        }
        Ok(Self {
            s1,
            s0r,
            s0s,
            functional: l,
        })
    }

    /// Full assembly for a set of currents.
    pub fn assemble(
        mesh: &StructuredMesh,
        phi: &LevelSetField,
        sigma: &ConductivityField,
        currents: &[CurrentFields],
        source: Option<&SourceTerm>,
        sampler: &PointSampler,
        exec: Execution,
    ) -> Result<Self> {
        let s1 = assemble_s1(mesh, sigma, currents, source, exec);
        let (s0r, s0s) = assemble_s0(mesh, phi, currents, source, sampler)?;
        Self::new(mesh, s1, s0r, s0s)
    }

    pub fn zero(mesh: &StructuredMesh) -> Self {
        Self {
            s1: vec![[[0.0; 2]; 2]; mesh.element_count()],
            s0r: vec![[0.0; 2]; mesh.element_count()],
            s0s: Vec::new(),
            functional: vec![[0.0; 2]; mesh.node_count()],
        }
    }

    /// `sum_j l_j . V_j`.
    pub fn apply(&self, v: &[[f64; 2]]) -> f64 {
        self.functional
            .iter()
            .zip(v)
            .map(|(l, v)| l[0] * v[0] + l[1] * v[1])
            .sum()
    }
}

/// Element-constant Jacobian `(DV)_ij = d_j V_i` of a P1 vector field.
pub fn vector_gradient(mesh: &StructuredMesh, v: &[[f64; 2]], e: usize) -> Tensor2 {
    let t = mesh.triangles()[e];
    let g = mesh.hat_gradients(e);
    let mut d = [[0.0; 2]; 2];
    for a in 0..3 {
        for i in 0..2 {
            for j in 0..2 {
                d[i][j] += v[t[a]][i] * g[a][j];
            }
        }
    }
    d
}

/// Evaluates `dJ(V)` element by element, independently of the assembled
/// functional.
pub fn eval_dj(mesh: &StructuredMesh, sd: &ShapeDerivative, v: &[[f64; 2]]) -> Result<f64> {
    if v.len() != mesh.node_count() {
        return Err(Error::ShapeMismatch(format!(
            "vector field has {} nodes, mesh has {}",
            v.len(),
            mesh.node_count()
        )));
    }
    let mut total = 0.0;
    for e in 0..mesh.element_count() {
        let d = vector_gradient(mesh, v, e);
        let s = &sd.s1[e];
        let t = mesh.triangles()[e];
        let mut mean = [0.0; 2];
        for &a in &t {
            mean[0] += v[a][0] / 3.0;
            mean[1] += v[a][1] / 3.0;
        }
        let contraction = s[0][0] * d[0][0] + s[0][1] * d[0][1] + s[1][0] * d[1][0] + s[1][1] * d[1][1];
        total += mesh.area(e) * (contraction + sd.s0r[e][0] * mean[0] + sd.s0r[e][1] * mean[1]);
    }
    for &(x, m) in &sd.s0s {
        let vx = [
            mesh.evaluate(&component(v, 0), x)?,
            mesh.evaluate(&component(v, 1), x)?,
        ];
        total += m[0] * vx[0] + m[1] * vx[1];
    }
    Ok(total)
}

fn component(v: &[[f64; 2]], i: usize) -> Vec<f64> {
    v.iter().map(|x| x[i]).collect()
}

/// Factored `alpha1 K + alpha2 M` with `V = 0` on the outer boundary.
pub struct DescentSolver {
    operator: ConstrainedOperator,
}

impl DescentSolver {
    pub fn new(
        mesh: &StructuredMesh,
        pattern: &Pattern,
        alpha1: f64,
        alpha2: f64,
        options: &SolverOptions,
        exec: Execution,
    ) -> Result<Self> {
        if !(alpha1 > 0.0 || alpha2 > 0.0) {
            return Err(Error::InvalidParameter(
                "descent operator needs alpha1 > 0 or alpha2 > 0".into(),
            ));
        }
        let a = assemble_vector_helmholtz(mesh, pattern, alpha1, alpha2, exec)?;
        Ok(Self {
            operator: ConstrainedOperator::new(a, mesh.boundary_node_mask(), *options)?,
        })
    }

    /// Solves `int alpha1 DV : Dxi + alpha2 V . xi = -dJ(xi)`.
    pub fn solve(&self, sd: &ShapeDerivative) -> Result<NodalVectorField> {
        let mut out = vec![[0.0; 2]; sd.functional.len()];
        for i in 0..2 {
            let rhs: Vec<f64> = sd.functional.iter().map(|l| -l[i]).collect();
            let vi = self.operator.solve(&rhs, None)?;
            for (o, x) in out.iter_mut().zip(vi) {
                o[i] = x;
            }
        }
        Ok(out)
    }

    /// Solves with an arbitrary nodal load for both components.
    pub fn solve_load(&self, load: &[[f64; 2]]) -> Result<NodalVectorField> {
        let mut out = vec![[0.0; 2]; load.len()];
        for i in 0..2 {
            let vi = self.operator.solve(&component(load, i), None)?;
            for (o, x) in out.iter_mut().zip(vi) {
                o[i] = x;
            }
        }
        Ok(out)
    }
}

/// One-shot descent field.
pub fn solve_descent_field(
    mesh: &StructuredMesh,
    sd: &ShapeDerivative,
    alpha1: f64,
    alpha2: f64,
    options: &SolverOptions,
) -> Result<NodalVectorField> {
    DescentSolver::new(mesh, &Pattern::new(mesh), alpha1, alpha2, options, Execution::default())?
        .solve(sd)
}

/// Interface form of the shape derivative,
/// `int_{dOmega} (-[[sigma dn u dn p]] + [[sigma]] grad_t u . grad_t p - [[f]] p) V.n`,
/// with jumps taken inside minus outside and `n` the outward normal of the
/// inclusion. One-sided gradients come from the nearest element lying wholly
/// inside or wholly outside within `search_radius` cells; normal fluxes and
/// tangential derivatives are averaged between the two sides.
#[allow(clippy::too_many_arguments)]
pub fn boundary_expression(
    mesh: &StructuredMesh,
    phi: &LevelSetField,
    currents: &[CurrentFields],
    sigma0: f64,
    sigma1: f64,
    f_jump: f64,
    v: &[[f64; 2]],
    search_radius: usize,
) -> f64 {
    let vx = component(v, 0);
    let vy = component(v, 1);
    let mut total = 0.0;
    for seg in interface_segments(phi, mesh) {
        let len = seg.length();
        if len < 1e-12 {
            log::debug!("skipping degenerate interface segment in element {}", seg.element);
            continue;
        }
        let gphi = mesh.element_gradient(&phi.values, seg.element);
        let norm = (gphi[0] * gphi[0] + gphi[1] * gphi[1]).sqrt();
        if norm == 0.0 {
            continue;
        }
        let n = [gphi[0] / norm, gphi[1] / norm];
        let tan = [-n[1], n[0]];
        let mid = [(seg.a[0] + seg.b[0]) / 2.0, (seg.a[1] + seg.b[1]) / 2.0];
        let (inside, outside) = match one_sided_elements(mesh, phi, mid, search_radius) {
            Some(p) => p,
            None => {
                log::debug!("no one-sided elements near {mid:?}");
                continue;
            }
        };
        let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
        let mut density = 0.0;
        for c in currents {
            if c.weight == 0.0 {
                continue;
            }
            let (ui, uo) = (mesh.element_gradient(c.state, inside), mesh.element_gradient(c.state, outside));
            let (pi, po) = (mesh.element_gradient(c.adjoint, inside), mesh.element_gradient(c.adjoint, outside));
            let qu = 0.5 * (sigma1 * dot(ui, n) + sigma0 * dot(uo, n));
            let qp = 0.5 * (sigma1 * dot(pi, n) + sigma0 * dot(po, n));
            let tu = 0.5 * (dot(ui, tan) + dot(uo, tan));
            let tp = 0.5 * (dot(pi, tan) + dot(po, tan));
            let p_mid = mesh.element_mean(c.adjoint, seg.element);
            density += c.weight
                * (-qu * qp * (1.0 / sigma1 - 1.0 / sigma0) + (sigma1 - sigma0) * tu * tp - f_jump * p_mid);
        }
        // Simpson's rule in V.n along the segment.
        let vn = |x: Point| {
            let loc = match mesh.locate_point(x) {
                Ok(l) => l,
                Err(_) => return 0.0,
            };
            mesh.interpolate(&vx, &loc) * n[0] + mesh.interpolate(&vy, &loc) * n[1]
        };
        let w = (vn(seg.a) + 4.0 * vn(mid) + vn(seg.b)) / 6.0;
        total += density * w * len;
    }
    total
}

fn one_sided_elements(
    mesh: &StructuredMesh,
    phi: &LevelSetField,
    x: Point,
    radius: usize,
) -> Option<(usize, usize)> {
    let mut best_in: Option<(f64, usize)> = None;
    let mut best_out: Option<(f64, usize)> = None;
    for e in mesh.elements_near(x, radius) {
        let v = element_values(mesh, &phi.values, e);
        let c = mesh.centroid(e);
        let d = (c[0] - x[0]).powi(2) + (c[1] - x[1]).powi(2);
        let slot = if v.iter().all(|&s| s < 0.0) {
            &mut best_in
        } else if v.iter().all(|&s| s >= 0.0) {
            &mut best_out
        } else {
            continue;
        };
        if slot.map_or(true, |(bd, _)| d < bd) {
            *slot = Some((d, e));
        }
    }
    Some((best_in?.1, best_out?.1))
}

/// Smooth, seeded perturbation field: the descent operator applied to an
/// independent standard normal load at every interior node.
pub fn seeded_smooth_field(
    mesh: &StructuredMesh,
    descent: &DescentSolver,
    seed: u64,
) -> Result<NodalVectorField> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mask = mesh.boundary_node_mask();
    let load: Vec<[f64; 2]> = mask
        .iter()
        .map(|&b| {
            let x: f64 = StandardNormal.sample(&mut rng);
            let y: f64 = StandardNormal.sample(&mut rng);
            if b {
                [0.0, 0.0]
            } else {
                [x, y]
            }
        })
        .collect();
    let mut v = descent.solve_load(&load)?;
    let m = v.iter().fold(0.0f64, |m, x| m.max(x[0].hypot(x[1])));
    if m > 0.0 {
        for x in v.iter_mut() {
            x[0] /= m;
            x[1] /= m;
        }
    }
    Ok(v)
}

/// One row of the finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheckRow {
    pub t: f64,
    pub finite_difference: f64,
    pub distributed: f64,
    /// `|fd - distributed| / |distributed|`, 0 when both vanish.
    pub mismatch: f64,
}

/// Central differences of the discrete objective along the transport of
/// `phi` by `+-t V`, against the distributed derivative at `phi`.
pub fn gradient_check(
    objective: &crate::inversion::Objective,
    phi: &LevelSetField,
    v: &[[f64; 2]],
    ts: &[f64],
) -> Result<Vec<GradientCheckRow>> {
    let mesh = objective.mesh;
    let eval = objective.evaluate(phi)?;
    let sd = objective.shape_derivative(phi, &eval)?;
    let distributed = eval_dj(mesh, &sd, v)?;
    let exec = objective.execution;
    ts.iter()
        .map(|&t| {
            let plus = crate::levelset::advect_with(phi, v, t, mesh, exec);
            let minus = crate::levelset::advect_with(phi, v, -t, mesh, exec);
            let fd = (objective.value(&plus)? - objective.value(&minus)?) / (2.0 * t);
            let diff = (fd - distributed).abs();
            let mismatch = if diff == 0.0 { 0.0 } else { diff / distributed.abs() };
            Ok(GradientCheckRow {
                t,
                finite_difference: fd,
                distributed,
                mismatch,
            })
        })
        .collect()
}
