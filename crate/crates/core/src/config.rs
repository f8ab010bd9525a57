//! Run configuration (TOML) and the built-in scenarios.
//!
//! ```toml
//! [scenario]
//! name = "two_ellipses"
//!
//! [mesh]
//! n = 128
//!
//! [measurements]
//! spacing = 0.05
//!
//! [noise]
//! delta = 0.01
//! seed = 7
//! ```
//!
//! Every other section and key is optional. `scenario.phantom` and
//! `scenario.initial_guess` accept inline shape lists that override the
//! preset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{measurement_points, standard_currents, CurrentPattern};
use crate::inversion::{ArmijoOptions, InversionConfig, SearchDirection, StoppingOptions};
use crate::levelset::{Phantom, Shape};
use crate::mesh::{DirichletSegment, Point};
use crate::par::Execution;
use crate::solver::SolverOptions;
use crate::synthetic::TruthSpec;

/// Names of the built-in scenarios.
pub const PRESETS: [&str; 4] = ["two_ellipses", "concave", "three_inclusions", "single_ellipse"];

/// A named ground truth with its default number of currents.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub phantom: Phantom,
    pub current_count: usize,
}

/// Outline of the concave test inclusion before mapping into the square by
/// `x -> CONCAVE_SHIFT + CONCAVE_SCALE * x`.
const CONCAVE_OUTLINE: [[f64; 2]; 68] = [
    [1.520565, 0.584200], [1.493806, 0.587955], [1.467047, 0.594101],
    [1.440288, 0.603245], [1.428873, 0.608925], [1.413529, 0.619704],
    [1.400350, 0.632931], [1.384588, 0.656938], [1.376503, 0.680944],
    [1.371107, 0.704950], [1.367595, 0.728956], [1.364009, 0.776969],
    [1.362501, 0.848988], [1.362278, 1.089050], [1.362915, 1.377125],
    [1.364525, 1.425138], [1.368951, 1.473150], [1.373207, 1.497156],
    [1.379672, 1.521163], [1.381099, 1.545169], [1.380360, 1.641194],
    [1.380713, 2.097313], [1.381099, 2.121319], [1.379672, 2.145325],
    [1.373207, 2.169331], [1.368951, 2.193338], [1.364525, 2.241350],
    [1.362915, 2.289363], [1.362285, 2.409394], [1.363203, 2.865513],
    [1.365372, 2.913525], [1.367595, 2.937531], [1.371107, 2.961538],
    [1.376503, 2.985544], [1.386770, 3.013969], [1.400350, 3.033556],
    [1.413529, 3.046783], [1.428873, 3.057563], [1.440288, 3.063243],
    [1.467047, 3.072386], [1.493806, 3.078533], [1.520565, 3.082287],
    [1.574083, 3.085293], [1.654360, 3.086593], [1.948708, 3.086798],
    [2.269816, 3.086079], [2.323334, 3.084420], [2.361765, 3.081569],
    [2.376852, 3.079484], [2.403611, 3.073823], [2.457129, 3.057562],
    [3.126104, 2.457406], [3.125238, 2.433400], [2.671184, 2.025294],
    [2.510646, 1.881256], [2.495429, 1.857250], [2.495429, 1.809237],
    [2.510647, 1.785231], [3.125238, 1.233087], [3.126104, 1.209081],
    [2.457129, 0.608925], [2.403611, 0.592664], [2.361765, 0.584919],
    [2.323334, 0.582067], [2.243057, 0.580057], [2.055744, 0.579690],
    [1.600842, 0.580507], [1.547324, 0.582345],
];
const CONCAVE_SHIFT: [f64; 2] = [-0.145, -0.06];
const CONCAVE_SCALE: f64 = 0.303;

fn two_ellipses() -> Vec<Shape> {
    vec![
        Shape::Ellipse {
            center: [0.6, 0.7],
            semiaxes: [0.144, 0.08],
        },
        Shape::Ellipse {
            center: [0.4, 0.3],
            semiaxes: [0.08, 0.144],
        },
    ]
}

pub fn concave_polygon() -> Shape {
    Shape::Polygon {
        vertices: CONCAVE_OUTLINE
            .iter()
            .map(|p| {
                [
                    CONCAVE_SHIFT[0] + CONCAVE_SCALE * p[0],
                    CONCAVE_SHIFT[1] + CONCAVE_SCALE * p[1],
                ]
            })
            .collect(),
    }
}

/// Looks up a built-in scenario.
pub fn preset(name: &str) -> Result<Scenario> {
    let (shapes, current_count) = match name {
        "two_ellipses" => (two_ellipses(), 3),
        "concave" => (vec![concave_polygon()], 3),
        "three_inclusions" => {
            let mut s = two_ellipses();
            s.push(Shape::Circle {
                center: [0.2, 0.65],
                radius: 0.08,
            });
            (s, 7)
        }
        "single_ellipse" => (
            vec![Shape::Ellipse {
                center: [0.45, 0.55],
                semiaxes: [0.18, 0.12],
            }],
            3,
        ),
        _ => {
            return Err(Error::UnknownScenario {
                name: name.to_string(),
                available: PRESETS.join(", "),
            })
        }
    };
    Ok(Scenario {
        name: name.to_string(),
        phantom: Phantom::new(shapes),
        current_count,
    })
}

/// The default initial guess: a centred circle of radius 0.2.
pub fn default_initial_guess() -> Phantom {
    Phantom::new(vec![Shape::Circle {
        center: [0.5, 0.5],
        radius: 0.2,
    }])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<Vec<Shape>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_guess: Option<Vec<Shape>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub n: usize,
    /// Resolution of the data-generating mesh; twice `n` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_n: Option<usize>,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self { n: 128, truth_n: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsSection {
    pub sigma0: f64,
    pub sigma1: f64,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        Self {
            sigma0: 1.0,
            sigma1: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurrentsSection {
    /// 3 or 7; the scenario's default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    pub ramp_width: f64,
}

impl Default for CurrentsSection {
    fn default() -> Self {
        Self {
            count: None,
            ramp_width: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementsSection {
    pub spacing: f64,
}

impl Default for MeasurementsSection {
    fn default() -> Self {
        Self { spacing: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub delta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescentSection {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for DescentSection {
    fn default() -> Self {
        Self {
            alpha1: 0.3,
            alpha2: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub max_iterations: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub initial_step_cells: f64,
    pub max_backtracks: usize,
    pub reinit_period: usize,
    pub direction: SearchDirection,
    pub step_tolerance: f64,
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let a = ArmijoOptions::default();
        let s = StoppingOptions::default();
        Self {
            max_iterations: s.max_iterations,
            armijo_c: a.c,
            backtrack: a.backtrack,
            initial_step_cells: a.initial_cells,
            max_backtracks: a.max_backtracks,
            reinit_period: 5,
            direction: SearchDirection::default(),
            step_tolerance: s.step_tolerance,
            plateau_window: s.plateau_window,
            plateau_tolerance: s.plateau_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Level-set snapshot every this many iterations; 0 keeps only the final one.
    pub snapshot_period: usize,
    /// Also write legacy VTK files.
    pub vtk: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            snapshot_period: 0,
            vtk: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    #[serde(default)]
    pub currents: CurrentsSection,
    #[serde(default)]
    pub measurements: MeasurementsSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub descent: DescentSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub output: OutputSection,
}

impl Config {
    /// Defaults for a named scenario.
    pub fn for_scenario(name: &str) -> Self {
        Self {
            scenario: ScenarioSection {
                name: name.to_string(),
                phantom: None,
                initial_guess: None,
            },
            mesh: MeshSection::default(),
            physics: PhysicsSection::default(),
            currents: CurrentsSection::default(),
            measurements: MeasurementsSection::default(),
            noise: NoiseSection::default(),
            descent: DescentSection::default(),
            optimizer: OptimizerSection::default(),
            solver: SolverOptions::default(),
            output: OutputSection::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let scenario = self.scenario()?;
        scenario.phantom.validate()?;
        self.initial_guess().validate()?;
        if self.mesh.n == 0 {
            return Err(Error::InvalidResolution(0));
        }
        if self.truth_resolution() < self.mesh.n {
            return Err(Error::Config(format!(
                "mesh.truth_n = {} is coarser than mesh.n = {}",
                self.truth_resolution(),
                self.mesh.n
            )));
        }
        self.currents()?;
        self.points()?;
        if !(self.noise.delta >= 0.0) {
            return Err(Error::Config("noise.delta must be non-negative".into()));
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::Config("solver.tol must be positive".into()));
        }
        Ok(())
    }

    /// The scenario with any inline phantom override applied.
    pub fn scenario(&self) -> Result<Scenario> {
        let mut s = match &self.scenario.phantom {
            Some(shapes) => Scenario {
                name: self.scenario.name.clone(),
                phantom: Phantom::new(shapes.clone()),
                current_count: preset(&self.scenario.name).map_or(3, |p| p.current_count),
            },
            None => preset(&self.scenario.name)?,
        };
        if let Some(c) = self.currents.count {
            s.current_count = c;
        }
        Ok(s)
    }

    pub fn initial_guess(&self) -> Phantom {
        match &self.scenario.initial_guess {
            Some(shapes) => Phantom::new(shapes.clone()),
            None => default_initial_guess(),
        }
    }

    pub fn truth_resolution(&self) -> usize {
        self.mesh.truth_n.unwrap_or(2 * self.mesh.n)
    }

    pub fn currents(&self) -> Result<Vec<CurrentPattern>> {
        standard_currents(self.scenario()?.current_count, self.currents.ramp_width)
    }

    pub fn points(&self) -> Result<Vec<Point>> {
        measurement_points(self.measurements.spacing, &DirichletSegment::default_pair())
    }

    pub fn truth<'a>(&self, phantom: &'a Phantom) -> TruthSpec<'a> {
        TruthSpec {
            phantom,
            sigma0: self.physics.sigma0,
            sigma1: self.physics.sigma1,
            resolution: self.truth_resolution(),
        }
    }

    pub fn execution(&self) -> Execution {
        Execution::default()
    }

    pub fn inversion(&self) -> Result<InversionConfig> {
        let o = &self.optimizer;
        Ok(InversionConfig {
            resolution: self.mesh.n,
            sigma0: self.physics.sigma0,
            sigma1: self.physics.sigma1,
            currents: self.currents()?,
            alpha1: self.descent.alpha1,
            alpha2: self.descent.alpha2,
            armijo: ArmijoOptions {
                c: o.armijo_c,
                backtrack: o.backtrack,
                initial_cells: o.initial_step_cells,
                max_backtracks: o.max_backtracks,
            },
            stopping: StoppingOptions {
                max_iterations: o.max_iterations,
                step_tolerance: o.step_tolerance,
                plateau_window: o.plateau_window,
                plateau_tolerance: o.plateau_tolerance,
            },
            direction: o.direction,
            reinit_period: o.reinit_period,
            snapshot_period: self.output.snapshot_period,
            initial_guess: self.initial_guess(),
            solver: self.solver,
            execution: self.execution(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = Config::parse("[scenario]\nname = \"two_ellipses\"\n").unwrap();
        assert_eq!(c.mesh.n, 128);
        assert_eq!(c.truth_resolution(), 256);
        assert_eq!(c.descent, DescentSection::default());
        assert_eq!(c.currents().unwrap().len(), 3);
        assert_eq!(c.points().unwrap().len(), 70);
    }

    #[test]
    fn three_inclusions_has_seven_currents() {
        let c = Config::parse("[scenario]\nname = \"three_inclusions\"\n").unwrap();
        assert_eq!(c.currents().unwrap().len(), 7);
        assert_eq!(c.scenario().unwrap().phantom.primitives.len(), 3);
    }

    #[test]
    fn errors_name_the_problem() {
        let e = Config::parse("[mesh]\nn = 64\n").unwrap_err().to_string();
        assert!(e.contains("scenario"), "{e}");
        let e = Config::parse("[scenario]\n").unwrap_err().to_string();
        assert!(e.contains("name"), "{e}");
        let e = Config::parse("[scenario]\nname = \"x\"\n").unwrap_err();
        assert!(matches!(e, Error::UnknownScenario { .. }));
        assert!(e.to_string().contains("two_ellipses"));
        let e = Config::parse("[scenario]\nname = \"concave\"\n[mesh]\nsize = 3\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("size"), "{e}");
        assert!(Config::parse("[scenario]\nname = \"concave\"\n[measurements]\nspacing = 0.3\n").is_err());
    }

    #[test]
    fn inline_shapes_override_preset() {
        let text = r#"
[scenario]
name = "custom"
phantom = [{ type = "circle", center = [0.3, 0.3], radius = 0.1 }]
initial_guess = [{ type = "ellipse", center = [0.5, 0.5], semiaxes = [0.2, 0.1] }]

[currents]
count = 7
"#;
        let c = Config::parse(text).unwrap();
        assert_eq!(c.currents().unwrap().len(), 7);
        assert!(matches!(c.initial_guess().primitives[0], Shape::Ellipse { .. }));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = Config::for_scenario("concave");
        c.measurements.spacing = 0.1;
        c.noise.delta = 0.005;
        let back = Config::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn concave_shape_inside_and_nonconvex() {
        let s = concave_polygon();
        Phantom::new(vec![s.clone()]).validate().unwrap();
        let Shape::Polygon { vertices } = &s else { unreachable!() };
        let area: f64 = (0..vertices.len())
            .map(|k| {
                let a = vertices[k];
                let b = vertices[(k + 1) % vertices.len()];
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            .abs()
            / 2.0;
        assert!((area - 0.326).abs() < 1e-3, "{area}");
        // The notch: a point right of the re-entrant corner lies outside.
        assert!(s.implicit([0.70, 0.49]) > 0.0);
        assert!(s.implicit([0.35, 0.49]) < 0.0);
    }
}
