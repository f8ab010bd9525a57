//! Measurement residuals and the adjoint problem with point sources.

use crate::error::{Error, Result};
use crate::forward::{MeasurementSet, StateOperator};
use crate::mesh::{Location, Point, StructuredMesh};

/// Measurement points located once on a mesh, for repeated sampling and
/// point-load assembly.
#[derive(Debug, Clone)]
pub struct PointSampler {
    points: Vec<Point>,
    locations: Vec<Location>,
}

impl PointSampler {
    pub fn new(mesh: &StructuredMesh, points: &[Point]) -> Result<Self> {
        let locations = points
            .iter()
            .map(|&x| mesh.locate_point(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            points: points.to_vec(),
            locations,
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn sample(&self, mesh: &StructuredMesh, u: &[f64]) -> Vec<f64> {
        self.locations
            .iter()
            .map(|l| mesh.interpolate(u, l))
            .collect()
    }

    /// Load vector `b_j = sum_k w_k phi_j(x_k)`.
    pub fn point_loads(&self, mesh: &StructuredMesh, weights: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; mesh.node_count()];
        for (loc, &w) in self.locations.iter().zip(weights) {
            let t = mesh.triangles()[loc.element];
            for a in 0..3 {
                b[t[a]] += w * loc.bary[a];
            }
        }
        b
    }
}

/// Residuals `r_ik = u_i(x_k) - h_i(x_k)` and current weights `mu_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    pub residuals: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl ResidualSet {
    /// `J = 1/2 sum_i mu_i sum_k r_ik^2`.
    pub fn objective(&self) -> f64 {
        0.5 * self
            .residuals
            .iter()
            .zip(&self.weights)
            .map(|(r, &mu)| mu * sum_squares(r))
            .sum::<f64>()
    }

    /// `sum_k r_ik^2` for each current.
    pub fn misfits(&self) -> Vec<f64> {
        self.residuals.iter().map(|r| sum_squares(r)).collect()
    }
}

pub(crate) fn sum_squares(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Residuals of predicted point values against the measurements.
/// `predicted[i][k]` is the state of current `i` at point `k`.
pub fn compute_residuals(
    predicted: &[Vec<f64>],
    measurements: &MeasurementSet,
    weights: &[f64],
) -> Result<ResidualSet> {
    if predicted.len() != measurements.current_count() || weights.len() != predicted.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted currents, {} measured, {} weights",
            predicted.len(),
            measurements.current_count(),
            weights.len()
        )));
    }
    let residuals = predicted
        .iter()
        .zip(&measurements.values)
        .enumerate()
        .map(|(i, (u, h))| {
            if u.len() != h.len() {
                return Err(Error::ShapeMismatch(format!(
                    "current {}: {} predicted values, {} measured",
                    i + 1,
                    u.len(),
                    h.len()
                )));
            }
            Ok(u.iter().zip(h).map(|(a, b)| a - b).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(ResidualSet {
        residuals,
        weights: weights.to_vec(),
    })
}

/// Solves `int sigma grad p . grad phi = -sum_k r_k phi(x_k)` for all test
/// functions vanishing on Γ0, using the factored state operator.
pub fn solve_adjoint(
    mesh: &StructuredMesh,
    operator: &StateOperator,
    sampler: &PointSampler,
    residuals: &[f64],
) -> Result<Vec<f64>> {
    if residuals.len() != sampler.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} residuals for {} points",
            residuals.len(),
            sampler.len()
        )));
    }
    if residuals.iter().all(|&r| r == 0.0) {
        return Ok(vec![0.0; mesh.node_count()]);
    }
    let neg: Vec<f64> = residuals.iter().map(|r| -r).collect();
    operator.solve_load(&sampler.point_loads(mesh, &neg), None)
}
