//! Synthetic point data on a finer truth mesh, Gaussian noise and the
//! relative noise level.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::adjoint::PointSampler;
use crate::error::{Error, Result};
use crate::fem::Pattern;
use crate::forward::{CurrentPattern, MeasurementSet, NoiseInfo, StateOperator};
use crate::levelset::{conductivity_with, phantom_to_levelset, ConductivityField, Phantom};
use crate::mesh::{build_unit_square_mesh, Point};
use crate::par::Execution;
use crate::solver::SolverOptions;

/// Forward model of a known phantom, evaluated on its own mesh.
#[derive(Debug, Clone)]
pub struct TruthSpec<'a> {
    pub phantom: &'a Phantom,
    pub sigma0: f64,
    pub sigma1: f64,
    pub resolution: usize,
}

/// Solves the state problems of the phantom (f = 0) on the truth mesh and
/// samples them at the points. An empty phantom gives the homogeneous
/// background.
pub fn generate_measurements(
    truth: &TruthSpec,
    currents: &[CurrentPattern],
    points: &[Point],
    options: &SolverOptions,
    exec: Execution,
) -> Result<MeasurementSet> {
    let mesh = build_unit_square_mesh(truth.resolution)?;
    let sigma = if truth.phantom.is_empty() {
        if !(truth.sigma0 > 0.0) {
            return Err(Error::InvalidParameter("non-positive conductivity".into()));
        }
        ConductivityField::uniform(truth.sigma0, mesh.element_count())
    } else {
        let phi = phantom_to_levelset(truth.phantom, &mesh)?;
        conductivity_with(&phi, truth.sigma0, truth.sigma1, &mesh, exec)?
    };
    let pattern = Pattern::new(&mesh);
    let op = StateOperator::new(&mesh, &pattern, &sigma, options, exec)?;
    let sampler = PointSampler::new(&mesh, points)?;
    let values = exec.try_map_slice(currents, |g| {
        let u = op.solve_state(&mesh, g, None, None)?;
        Ok::<_, Error>(sampler.sample(&mesh, &u.values))
    })?;
    Ok(MeasurementSet {
        points: points.to_vec(),
        values,
        noise: NoiseInfo::default(),
    })
}

/// Adds independent `N(0, (delta |h_i|_inf)^2)` noise, drawn current by
/// current and point by point from a ChaCha8 stream seeded with `seed`.
pub fn add_noise(clean: &MeasurementSet, delta: f64, seed: u64) -> Result<MeasurementSet> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise delta {delta} is negative")));
    }
    let mut noisy = clean.clone();
    if delta > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for h in noisy.values.iter_mut() {
            let scale = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let normal = Normal::new(0.0, delta * scale)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            for v in h.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    noisy.noise = NoiseInfo {
        delta,
        seed,
        level: if delta > 0.0 { noise_level(clean, &noisy)? } else { 0.0 },
    };
    Ok(noisy)
}

/// `sum_i |h_i - h~_i| / sum_i |h_i|`, Euclidean norms over the points.
pub fn noise_level(clean: &MeasurementSet, noisy: &MeasurementSet) -> Result<f64> {
    if clean.current_count() != noisy.current_count()
        || clean.values.iter().zip(&noisy.values).any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::ShapeMismatch("clean and noisy sets differ in shape".into()));
    }
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let mut num = 0.0;
    let mut den = 0.0;
    for (h, n) in clean.values.iter().zip(&noisy.values) {
        num += norm(&mut h.iter().zip(n).map(|(a, b)| a - b));
        den += norm(&mut h.iter().copied());
    }
    if den == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(num / den)
}
