//! The reconstruction loop: weighted objective, descent field, Armijo line
//! search along the level-set transport, periodic redistancing, stopping.

use std::io::Write;

use crate::adjoint::{compute_residuals, solve_adjoint, sum_squares, PointSampler, ResidualSet};
use crate::error::{Error, Result};
use crate::fem::{NodalVectorField, Pattern};
use crate::forward::{CurrentPattern, MeasurementSet, StateOperator};
use crate::levelset::{
    advect_with, conductivity_with, enforce_boundary_positivity, phantom_to_levelset,
    reinitialize_with, symmetric_difference_error, ConductivityField, LevelSetField, Phantom,
    ReinitStatus,
};
use crate::mesh::StructuredMesh;
use crate::par::Execution;
use crate::shape_gradient::{CurrentFields, DescentSolver, ShapeDerivative};
use crate::solver::SolverOptions;

/// Backtracking line-search parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoOptions {
    /// Sufficient-decrease constant in (0, 1).
    pub c: f64,
    /// Step reduction factor in (0, 1).
    pub backtrack: f64,
    /// Initial step moves the fastest node by this many cells.
    pub initial_cells: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoOptions {
    fn default() -> Self {
        Self {
            c: 1e-4,
            backtrack: 0.5,
            initial_cells: 2.0,
            max_backtracks: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingOptions {
    pub max_iterations: usize,
    /// Smallest admissible maximal nodal displacement of a trial step.
    pub step_tolerance: f64,
    pub plateau_window: usize,
    /// Relative decrease of J over the window below which the run stops.
    pub plateau_tolerance: f64,
}

impl Default for StoppingOptions {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            step_tolerance: 1e-8,
            plateau_window: 10,
            plateau_tolerance: 1e-5,
        }
    }
}

/// How the search direction is built from the Riesz representative `V` of
/// the shape derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchDirection {
    /// `V` itself.
    Gradient,
    /// Polak-Ribiere (clipped at zero) combination of `V` with the previous
    /// direction in the descent inner product. Falls back to `V` when the
    /// combination fails the line search.
    #[default]
    Conjugate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionConfig {
    pub resolution: usize,
    pub sigma0: f64,
    pub sigma1: f64,
    pub currents: Vec<CurrentPattern>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub armijo: ArmijoOptions,
    pub stopping: StoppingOptions,
    pub direction: SearchDirection,
    /// Redistance every this many accepted steps; 0 disables.
    pub reinit_period: usize,
    /// Keep a level-set snapshot every this many iterations; 0 disables.
    pub snapshot_period: usize,
    pub initial_guess: Phantom,
    pub solver: SolverOptions,
    pub execution: Execution,
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.armijo;
        let s = &self.stopping;
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(a.c > 0.0 && a.c < 1.0) {
            return bad("armijo c must lie in (0, 1)");
        }
        if !(a.backtrack > 0.0 && a.backtrack < 1.0) {
            return bad("backtrack factor must lie in (0, 1)");
        }
        if !(a.initial_cells > 0.0) {
            return bad("initial step must be positive");
        }
        if !(s.step_tolerance > 0.0 && s.plateau_tolerance > 0.0) {
            return bad("stopping tolerances must be positive");
        }
        if !(self.sigma0 > 0.0 && self.sigma1 > 0.0) {
            return bad("conductivities must be positive");
        }
        if self.currents.is_empty() {
            return bad("at least one current is needed");
        }
        self.initial_guess.validate()
    }
}

/// One row of the history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    /// Relative symmetric-difference error, NaN without a reference shape.
    pub error: f64,
    pub step: f64,
    pub max_velocity: f64,
    /// `dJ(V)` of the descent field that produced this iterate.
    pub derivative: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InversionStatus {
    MaxIterations,
    /// Relative decrease of J over the plateau window fell below tolerance.
    Plateau,
    /// Trial displacement fell below the step tolerance.
    StepUnderflow,
    /// No sufficient decrease within the allowed backtracks.
    Stalled,
    /// Zero objective or zero descent field.
    Stationary,
}

impl InversionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            InversionStatus::MaxIterations => "max_iterations",
            InversionStatus::Plateau => "plateau",
            InversionStatus::StepUnderflow => "step_underflow",
            InversionStatus::Stalled => "stalled",
            InversionStatus::Stationary => "stationary",
        }
    }
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub levelset: LevelSetField,
    pub history: Vec<IterationRecord>,
    pub status: InversionStatus,
    pub weights: Vec<f64>,
    pub snapshots: Vec<(usize, LevelSetField)>,
}

impl InversionResult {
    pub fn final_record(&self) -> &IterationRecord {
        self.history.last().expect("history has the initial record")
    }
}

/// Everything that depends on one level set: conductivity, factored state
/// operator, states and residuals.
pub struct Evaluation {
    pub sigma: ConductivityField,
    pub operator: StateOperator,
    pub states: Vec<Vec<f64>>,
    pub residuals: ResidualSet,
}

impl Evaluation {
    pub fn objective(&self) -> f64 {
        self.residuals.objective()
    }
}

/// The discrete objective on a fixed mesh and data set.
pub struct Objective<'a> {
    pub mesh: &'a StructuredMesh,
    pub pattern: Pattern,
    pub currents: &'a [CurrentPattern],
    pub measurements: &'a MeasurementSet,
    pub sampler: PointSampler,
    pub weights: Vec<f64>,
    pub sigma0: f64,
    pub sigma1: f64,
    pub solver: SolverOptions,
    pub execution: Execution,
}

impl<'a> Objective<'a> {
    /// Unit weights; see [`compute_weights`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mesh: &'a StructuredMesh,
        currents: &'a [CurrentPattern],
        measurements: &'a MeasurementSet,
        sigma0: f64,
        sigma1: f64,
        solver: SolverOptions,
        execution: Execution,
    ) -> Result<Self> {
        measurements.validate()?;
        if currents.len() != measurements.current_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} currents configured, data has {}",
                currents.len(),
                measurements.current_count()
            )));
        }
        Ok(Self {
            mesh,
            pattern: Pattern::new(mesh),
            currents,
            measurements,
            sampler: PointSampler::new(mesh, &measurements.points)?,
            weights: vec![1.0; currents.len()],
            sigma0,
            sigma1,
            solver,
            execution,
        })
    }

    pub fn evaluate(&self, phi: &LevelSetField) -> Result<Evaluation> {
        let sigma = conductivity_with(phi, self.sigma0, self.sigma1, self.mesh, self.execution)?;
        let operator = StateOperator::new(self.mesh, &self.pattern, &sigma, &self.solver, self.execution)?;
        let states = self.execution.try_map_slice(self.currents, |g| {
            operator
                .solve_state(self.mesh, g, None, None)
                .map(|s| s.values)
        })?;
        let predicted: Vec<Vec<f64>> = states
            .iter()
            .map(|u| self.sampler.sample(self.mesh, u))
            .collect();
        let residuals = compute_residuals(&predicted, self.measurements, &self.weights)?;
        Ok(Evaluation {
            sigma,
            operator,
            states,
            residuals,
        })
    }

    pub fn value(&self, phi: &LevelSetField) -> Result<f64> {
        Ok(self.evaluate(phi)?.objective())
    }

    /// Adjoint states of an evaluation, one per current (zero for currents
    /// with zero weight).
    pub fn adjoints(&self, eval: &Evaluation) -> Result<Vec<Vec<f64>>> {
        let idx: Vec<usize> = (0..self.currents.len()).collect();
        self.execution.try_map_slice(&idx, |&i| {
            if self.weights[i] == 0.0 {
                return Ok(vec![0.0; self.mesh.node_count()]);
            }
            solve_adjoint(self.mesh, &eval.operator, &self.sampler, &eval.residuals.residuals[i])
        })
    }

    /// Shape derivative at `phi` from its evaluation.
    pub fn shape_derivative(&self, phi: &LevelSetField, eval: &Evaluation) -> Result<ShapeDerivative> {
        let adjoints = self.adjoints(eval)?;
        let fields: Vec<CurrentFields> = (0..self.currents.len())
            .map(|i| CurrentFields {
                state: &eval.states[i],
                adjoint: &adjoints[i],
                residuals: &eval.residuals.residuals[i],
                weight: self.weights[i],
            })
            .collect();
        ShapeDerivative::assemble(
            self.mesh,
            phi,
            &eval.sigma,
            &fields,
            None,
            &self.sampler,
            self.execution,
        )
    }
}

/// `mu_i = 1 / sum_k r_ik^2`. A current whose misfit is negligible against
/// its data (relative 1e-24) gets weight 0 and a warning.
pub fn compute_weights(residuals: &ResidualSet, measurements: &MeasurementSet) -> Vec<f64> {
    residuals
        .residuals
        .iter()
        .zip(&measurements.values)
        .enumerate()
        .map(|(i, (r, h))| {
            let misfit = sum_squares(r);
            let scale = sum_squares(h);
            if misfit <= 1e-24 * scale || misfit == 0.0 {
                log::warn!("current {} already fits the data at the initial guess; weight set to 0", i + 1);
                0.0
            } else {
                1.0 / misfit
            }
        })
        .collect()
}

fn max_norm(v: &NodalVectorField) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x[0].hypot(x[1])))
}

/// Runs the reconstruction. `reference` is the true level set on the same
/// mesh, used only to report the error column.
pub fn run_inversion(
    config: &InversionConfig,
    measurements: &MeasurementSet,
    reference: Option<&LevelSetField>,
) -> Result<(StructuredMesh, InversionResult)> {
    config.validate()?;
    let mesh = crate::mesh::build_unit_square_mesh(config.resolution)?;
    let result = run_on_mesh(&mesh, config, measurements, reference)?;
    Ok((mesh, result))
}

pub fn run_on_mesh(
    mesh: &StructuredMesh,
    config: &InversionConfig,
    measurements: &MeasurementSet,
    reference: Option<&LevelSetField>,
) -> Result<InversionResult> {
    config.validate()?;
    let exec = config.execution;
    let mut objective = Objective::new(
        mesh,
        &config.currents,
        measurements,
        config.sigma0,
        config.sigma1,
        config.solver,
        exec,
    )?;
    let descent = DescentSolver::new(mesh, &objective.pattern, config.alpha1, config.alpha2, &config.solver, exec)?;
    let floor = 1e-3 * mesh.h();
    let error_of = |phi: &LevelSetField| -> Result<f64> {
        match reference {
            Some(r) => symmetric_difference_error(phi, r, mesh),
            None => Ok(f64::NAN),
        }
    };

    let mut phi = phantom_to_levelset(&config.initial_guess, mesh)?;
    enforce_boundary_positivity(&mut phi, mesh, floor);
    let mut eval = objective.evaluate(&phi)?;
    objective.weights = compute_weights(&eval.residuals, measurements);
    eval.residuals.weights = objective.weights.clone();
    let mut j = eval.objective();

    let mut history = vec![IterationRecord {
        iteration: 0,
        objective: j,
        error: error_of(&phi)?,
        step: 0.0,
        max_velocity: 0.0,
        derivative: 0.0,
    }];
    let mut snapshots = Vec::new();
    if config.snapshot_period > 0 {
        snapshots.push((0, phi.clone()));
    }
    let armijo = config.armijo;
    let stop = config.stopping;
    let mut status = InversionStatus::MaxIterations;
    let mut accepted = 0usize;
    let mut prev: Option<(NodalVectorField, f64, NodalVectorField)> = None;

    for it in 1..=stop.max_iterations {
        if j == 0.0 {
            status = InversionStatus::Stationary;
            break;
        }
        let sd = objective.shape_derivative(&phi, &eval)?;
        let g = descent.solve(&sd)?;
        let gg = -sd.apply(&g);
        // <V_k, V_{k-1}> in the descent inner product is -l_k(V_{k-1}).
        let conj = match config.direction {
            SearchDirection::Gradient => None,
            SearchDirection::Conjugate => prev.take().and_then(|(pg, pgg, pd)| {
                let beta = ((gg + sd.apply(&pg)) / pgg).max(0.0);
                let d: NodalVectorField = g
                    .iter()
                    .zip(&pd)
                    .map(|(a, b)| [a[0] + beta * b[0], a[1] + beta * b[1]])
                    .collect();
                (beta > 0.0 && sd.apply(&d) < 0.0).then_some(d)
            }),
        };
        let mut candidates = Vec::new();
        if let Some(d) = conj {
            candidates.push(d);
        }
        candidates.push(g.clone());
        let mut found = None;
        let (mut v, mut tau, mut vmax, mut dj) = (Vec::new(), 0.0, 0.0, 0.0);
        for cand in candidates {
            v = cand;
            dj = sd.apply(&v);
            vmax = max_norm(&v);
            if vmax == 0.0 || dj >= 0.0 {
                if dj > 0.0 {
                    log::warn!("descent field is not a descent direction (dJ = {dj:e})");
                }
                status = InversionStatus::Stationary;
                break;
            }
            status = InversionStatus::MaxIterations;
            tau = armijo.initial_cells * mesh.h() / vmax;
            for _ in 0..=armijo.max_backtracks {
                if tau * vmax < stop.step_tolerance {
                    status = InversionStatus::StepUnderflow;
                    break;
                }
                let mut trial = advect_with(&phi, &v, tau, mesh, exec);
                enforce_boundary_positivity(&mut trial, mesh, floor);
                let trial_eval = objective.evaluate(&trial)?;
                let jt = trial_eval.objective();
                if jt <= j + armijo.c * tau * dj && jt < j {
                    found = Some((trial, trial_eval, jt));
                    break;
                }
                tau *= armijo.backtrack;
            }
            if found.is_some() {
                break;
            }
            if status == InversionStatus::MaxIterations {
                status = InversionStatus::Stalled;
            }
        }
        let Some((trial, trial_eval, jt)) = found else {
            break;
        };
        prev = Some((g, gg, v.clone()));
        phi = trial;
        eval = trial_eval;
        j = jt;
        accepted += 1;

        if config.reinit_period > 0 && accepted % config.reinit_period == 0 {
            let (mut re, st) = reinitialize_with(&phi, mesh, exec);
            if st == ReinitStatus::Redistanced {
                enforce_boundary_positivity(&mut re, mesh, floor);
                let re_eval = objective.evaluate(&re)?;
                let jr = re_eval.objective();
                if jr <= j {
                    phi = re;
                    eval = re_eval;
                    j = jr;
                } else {
                    log::debug!("iteration {it}: redistancing raised J ({j:e} -> {jr:e}); kept the transported field");
                }
            } else {
                log::warn!("iteration {it}: the inclusion vanished");
            }
        }

        history.push(IterationRecord {
            iteration: it,
            objective: j,
            error: error_of(&phi)?,
            step: tau,
            max_velocity: vmax,
            derivative: dj,
        });
        if config.snapshot_period > 0 && it % config.snapshot_period == 0 {
            snapshots.push((it, phi.clone()));
        }
        let w = stop.plateau_window;
        if w > 0 && history.len() > w {
            let old = history[history.len() - 1 - w].objective;
            if old > 0.0 && (old - j) / old < stop.plateau_tolerance {
                status = InversionStatus::Plateau;
                break;
            }
        }
    }

    Ok(InversionResult {
        levelset: phi,
        history,
        status,
        weights: objective.weights,
        snapshots,
    })
}

/// History as CSV with header `iter,J,E,step,Vmax`.
pub fn write_history_csv<W: Write>(history: &[IterationRecord], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let fmt = |e: csv::Error| Error::Format {
        line: 0,
        message: e.to_string(),
    };
    csv.write_record(["iter", "J", "E", "step", "Vmax"]).map_err(fmt)?;
    for r in history {
        csv.write_record([
            r.iteration.to_string(),
            format!("{:e}", r.objective),
            format!("{:e}", r.error),
            format!("{:e}", r.step),
            format!("{:e}", r.max_velocity),
        ])
        .map_err(fmt)?;
    }
    csv.flush()?;
    Ok(())
}
