//! End-to-end pipelines driven by a [`Config`]: data generation, forward
//! solves, the gradient check and the reconstruction.

use crate::config::Config;
use crate::error::{Error, Result};
use crate::fem::Pattern;
use crate::forward::{solve_state, MeasurementSet, NoiseInfo};
use crate::inversion::{compute_weights, run_on_mesh, InversionResult, Objective};
use crate::levelset::{conductivity_with, enforce_boundary_positivity, phantom_to_levelset};
use crate::mesh::{build_unit_square_mesh, StructuredMesh};
use crate::shape_gradient::{gradient_check, seeded_smooth_field, DescentSolver, GradientCheckRow};
use crate::synthetic::{add_noise, generate_measurements};

/// Synthetic data of the configured scenario with the configured noise.
pub fn make_data(cfg: &Config) -> Result<MeasurementSet> {
    let scenario = cfg.scenario()?;
    let clean = generate_measurements(
        &cfg.truth(&scenario.phantom),
        &cfg.currents()?,
        &cfg.points()?,
        &cfg.solver,
        cfg.execution(),
    )?;
    add_noise(&clean, cfg.noise.delta, cfg.noise.seed)
}

/// Errors unless the data carry the configured currents and points.
pub fn check_compatible(cfg: &Config, data: &MeasurementSet) -> Result<()> {
    data.validate()?;
    let currents = cfg.currents()?.len();
    if data.current_count() != currents {
        return Err(Error::ShapeMismatch(format!(
            "data has I = {} currents, config expects {currents}",
            data.current_count()
        )));
    }
    let points = cfg.points()?;
    if data.point_count() != points.len() {
        return Err(Error::ShapeMismatch(format!(
            "data has K = {} points, config expects {}",
            data.point_count(),
            points.len()
        )));
    }
    for (k, (a, b)) in data.points.iter().zip(&points).enumerate() {
        if (a[0] - b[0]).abs() > 1e-9 || (a[1] - b[1]).abs() > 1e-9 {
            return Err(Error::ShapeMismatch(format!(
                "point {} is ({}, {}), config expects ({}, {})",
                k + 1,
                a[0],
                a[1],
                b[0],
                b[1]
            )));
        }
    }
    Ok(())
}

/// States of the scenario phantom on the inversion mesh and their values at
/// the measurement points.
pub fn forward(cfg: &Config) -> Result<(StructuredMesh, Vec<Vec<f64>>, MeasurementSet)> {
    let mesh = build_unit_square_mesh(cfg.mesh.n)?;
    let scenario = cfg.scenario()?;
    let phi = phantom_to_levelset(&scenario.phantom, &mesh)?;
    let sigma = conductivity_with(&phi, cfg.physics.sigma0, cfg.physics.sigma1, &mesh, cfg.execution())?;
    let currents = cfg.currents()?;
    let points = cfg.points()?;
    let sampler = crate::adjoint::PointSampler::new(&mesh, &points)?;
    let mut states = Vec::with_capacity(currents.len());
    let mut values = Vec::with_capacity(currents.len());
    for g in &currents {
        let u = solve_state(&mesh, &sigma, g, None, &cfg.solver)?.values;
        values.push(sampler.sample(&mesh, &u));
        states.push(u);
    }
    let set = MeasurementSet {
        points,
        values,
        noise: NoiseInfo::default(),
    };
    Ok((mesh, states, set))
}

/// Finite differences of the objective against the distributed derivative
/// at the initial guess, along a seeded smooth field. The first row uses
/// `V = 0`.
pub fn check_gradient(cfg: &Config, data: &MeasurementSet, ts: &[f64]) -> Result<Vec<GradientCheckRow>> {
    check_compatible(cfg, data)?;
    let mesh = build_unit_square_mesh(cfg.mesh.n)?;
    let currents = cfg.currents()?;
    let exec = cfg.execution();
    let mut objective = Objective::new(
        &mesh,
        &currents,
        data,
        cfg.physics.sigma0,
        cfg.physics.sigma1,
        cfg.solver,
        exec,
    )?;
    let mut phi = phantom_to_levelset(&cfg.initial_guess(), &mesh)?;
    enforce_boundary_positivity(&mut phi, &mesh, 1e-3 * mesh.h());
    let eval = objective.evaluate(&phi)?;
    objective.weights = compute_weights(&eval.residuals, data);
    let descent = DescentSolver::new(
        &mesh,
        &Pattern::new(&mesh),
        cfg.descent.alpha1,
        cfg.descent.alpha2,
        &cfg.solver,
        exec,
    )?;
    let v = seeded_smooth_field(&mesh, &descent, cfg.noise.seed)?;
    let zero = vec![[0.0; 2]; mesh.node_count()];
    let mut rows = gradient_check(&objective, &phi, &zero, &ts[..1.min(ts.len())])?;
    rows.extend(gradient_check(&objective, &phi, &v, ts)?);
    Ok(rows)
}

/// Reconstruction from `data`, scored against the scenario phantom.
pub fn invert(cfg: &Config, data: &MeasurementSet) -> Result<(StructuredMesh, InversionResult)> {
    check_compatible(cfg, data)?;
    let mesh = build_unit_square_mesh(cfg.mesh.n)?;
    let reference = phantom_to_levelset(&cfg.scenario()?.phantom, &mesh)?;
    let result = run_on_mesh(&mesh, &cfg.inversion()?, data, Some(&reference))?;
    Ok((mesh, result))
}
