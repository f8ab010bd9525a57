//! Boundary current patterns, the state problem and point sampling.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_boundary_flux, assemble_scalar_stiffness, assemble_source, BoundaryFlux, NodalField,
    Pattern,
};
use crate::levelset::ConductivityField;
use crate::mesh::{BoundaryEdge, DirichletSegment, Point, Side, StructuredMesh};
use crate::par::Execution;
use crate::solver::{ConstrainedOperator, SolverOptions};

/// Current density along one side of the square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SideProfile {
    Constant(f64),
    /// `below` for tangential coordinate under 1/2, `above` over it, joined by
    /// a linear ramp of width `ramp` centred on the side midpoint.
    Split { below: f64, above: f64, ramp: f64 },
}

impl SideProfile {
    pub fn value(&self, s: f64) -> f64 {
        match *self {
            SideProfile::Constant(v) => v,
            SideProfile::Split { below, above, ramp } => {
                if ramp <= 0.0 {
                    if s > 0.5 {
                        above
                    } else {
                        below
                    }
                } else {
                    let t = ((s - 0.5) / ramp + 0.5).clamp(0.0, 1.0);
                    below + (above - below) * t
                }
            }
        }
    }
}

/// Applied boundary current `g_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentPattern {
    pub id: usize,
    pub left: SideProfile,
    pub right: SideProfile,
    pub upper: SideProfile,
    pub lower: SideProfile,
}

impl CurrentPattern {
    pub fn profile(&self, side: Side) -> &SideProfile {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
            Side::Upper => &self.upper,
            Side::Lower => &self.lower,
        }
    }

    /// Value on a given side at point `x` of that side.
    pub fn value_on(&self, side: Side, x: Point) -> f64 {
        self.profile(side).value(side.tangential_coordinate(x))
    }

    /// Value at a boundary point; corners resolve to the left/right sides.
    pub fn value_at(&self, x: Point) -> Option<f64> {
        Side::of_point(x).map(|s| self.value_on(s, x))
    }

    fn constant(id: usize, left: f64, right: f64, upper: f64, lower: f64) -> Self {
        Self {
            id,
            left: SideProfile::Constant(left),
            right: SideProfile::Constant(right),
            upper: SideProfile::Constant(upper),
            lower: SideProfile::Constant(lower),
        }
    }

    fn split_on(id: usize, side: Side, ramp: f64) -> Self {
        let mut g = Self::constant(id, 0.0, 0.0, 0.0, 0.0);
        let split = SideProfile::Split {
            below: -1.0,
            above: 1.0,
            ramp,
        };
        match side {
            Side::Left => g.left = split,
            Side::Right => g.right = split,
            Side::Upper => g.upper = split,
            Side::Lower => g.lower = split,
        }
        g
    }
}

impl BoundaryFlux for CurrentPattern {
    fn flux_at(&self, edge: &BoundaryEdge, x: Point) -> f64 {
        self.value_on(edge.side, x)
    }
}

/// The three side-pair currents, plus the four single-side split currents
/// when `count == 7`.
pub fn standard_currents(count: usize, ramp_width: f64) -> Result<Vec<CurrentPattern>> {
    if count != 3 && count != 7 {
        return Err(Error::UnsupportedCurrentCount(count));
    }
    let mut out = vec![
        CurrentPattern::constant(1, 1.0, 1.0, -1.0, -1.0),
        CurrentPattern::constant(2, 1.0, -1.0, 1.0, -1.0),
        CurrentPattern::constant(3, 1.0, -1.0, -1.0, 1.0),
    ];
    if count == 7 {
        if !(ramp_width > 0.0 && ramp_width <= 0.2) {
            return Err(Error::InvalidParameter(format!(
                "ramp width {ramp_width} outside (0, 0.2]"
            )));
        }
        for (k, side) in [Side::Left, Side::Right, Side::Upper, Side::Lower]
            .into_iter()
            .enumerate()
        {
            out.push(CurrentPattern::split_on(4 + k, side, ramp_width));
        }
    }
    Ok(out)
}

/// Nodal potential for one applied current.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSolution {
    pub current: usize,
    pub values: NodalField,
}

/// Factored state operator `int sigma grad u . grad v` with `u = 0` on Γ0.
/// Reused for every current and for the adjoint problems.
pub struct StateOperator {
    operator: ConstrainedOperator,
}

impl StateOperator {
    pub fn new(
        mesh: &StructuredMesh,
        pattern: &Pattern,
        sigma: &ConductivityField,
        options: &SolverOptions,
        exec: Execution,
    ) -> Result<Self> {
        if sigma.values.len() != mesh.element_count() {
            return Err(Error::ShapeMismatch(format!(
                "conductivity has {} values for {} elements",
                sigma.values.len(),
                mesh.element_count()
            )));
        }
        if sigma.values.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParameter("non-positive conductivity".into()));
        }
        let a = assemble_scalar_stiffness(mesh, pattern, sigma, exec);
        Ok(Self {
            operator: ConstrainedOperator::new(a, mesh.dirichlet_node_mask(), *options)?,
        })
    }

    pub fn operator(&self) -> &ConstrainedOperator {
        &self.operator
    }

    /// Solves `int sigma grad u . grad v = int f v + int_Gamma g v`.
    pub fn solve_state(
        &self,
        mesh: &StructuredMesh,
        g: &CurrentPattern,
        source: Option<&[f64]>,
        guess: Option<&[f64]>,
    ) -> Result<StateSolution> {
        let mut rhs = assemble_boundary_flux(mesh, g);
        if let Some(f) = source {
            for (b, s) in rhs.iter_mut().zip(assemble_source(mesh, f)) {
                *b += s;
            }
        }
        Ok(StateSolution {
            current: g.id,
            values: self.operator.solve(&rhs, guess)?,
        })
    }

    /// Solves with an arbitrary load vector.
    pub fn solve_load(&self, rhs: &[f64], guess: Option<&[f64]>) -> Result<NodalField> {
        self.operator.solve(rhs, guess)
    }
}

/// One-shot state solve: assembles, factors and solves for a single current.
pub fn solve_state(
    mesh: &StructuredMesh,
    sigma: &ConductivityField,
    g: &CurrentPattern,
    source: Option<&[f64]>,
    options: &SolverOptions,
) -> Result<StateSolution> {
    let pattern = Pattern::new(mesh);
    StateOperator::new(mesh, &pattern, sigma, options, Execution::default())?
        .solve_state(mesh, g, source, None)
}

/// P1 interpolation of a nodal field at each point.
pub fn sample_measurements(
    mesh: &StructuredMesh,
    u: &[f64],
    points: &[Point],
) -> Result<Vec<f64>> {
    points.iter().map(|&x| mesh.evaluate(u, x)).collect()
}

/// Boundary points at the given spacing, in the order left (bottom to top),
/// right, upper, lower, with corners listed once and points on the closed
/// Dirichlet segments removed.
pub fn measurement_points(spacing: f64, dirichlet: &[DirichletSegment]) -> Result<Vec<Point>> {
    let m = (1.0 / spacing).round();
    if !(spacing > 0.0) || m < 1.0 || (m * spacing - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "measurement spacing {spacing} does not divide 1"
        )));
    }
    let m = m as usize;
    let t = |k: usize| k as f64 / m as f64;
    let mut pts = Vec::new();
    for k in 0..=m {
        pts.push([0.0, t(k)]);
    }
    for k in 0..=m {
        pts.push([1.0, t(k)]);
    }
    for k in 1..m {
        pts.push([t(k), 1.0]);
    }
    for k in 1..m {
        pts.push([t(k), 0.0]);
    }
    pts.retain(|&x| !dirichlet.iter().any(|s| s.contains(x)));
    Ok(pts)
}

/// Metadata of the noise added to a measurement set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseInfo {
    pub delta: f64,
    pub seed: u64,
    pub level: f64,
}

/// Point locations and measured values `h_i(x_k)` for every current.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub points: Vec<Point>,
    /// `values[i][k]` is the measurement for current `i` at point `k`.
    pub values: Vec<Vec<f64>>,
    pub noise: NoiseInfo,
}

impl MeasurementSet {
    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn current_count(&self) -> usize {
        self.values.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            if v.len() != self.points.len() {
                return Err(Error::ShapeMismatch(format!(
                    "current {} has {} values for {} points",
                    i + 1,
                    v.len(),
                    self.points.len()
                )));
            }
        }
        Ok(())
    }

    /// CSV with header `x, y, h_1, ..., h_I`, one row per point, and the noise
    /// metadata as leading `#` comment lines.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        self.validate()?;
        writeln!(w, "# delta = {}", self.noise.delta)?;
        writeln!(w, "# seed = {}", self.noise.seed)?;
        writeln!(w, "# noise_level = {}", self.noise.level)?;
        let mut csv = csv::WriterBuilder::new().from_writer(w);
        let mut header = vec!["x".to_string(), "y".to_string()];
        header.extend((1..=self.current_count()).map(|i| format!("h_{i}")));
        csv.write_record(&header).map_err(csv_err)?;
        for (k, p) in self.points.iter().enumerate() {
            let mut row = vec![p[0].to_string(), p[1].to_string()];
            row.extend(self.values.iter().map(|v| v[k].to_string()));
            csv.write_record(&row).map_err(csv_err)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut noise = NoiseInfo::default();
        let mut body = String::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if let Some(meta) = trimmed.strip_prefix('#') {
                if let Some((key, value)) = meta.split_once('=') {
                    let value = value.trim();
                    let bad = |_| Error::Format {
                        line: lineno + 1,
                        message: format!("bad metadata value `{value}`"),
                    };
                    match key.trim() {
                        "delta" => noise.delta = value.parse().map_err(bad)?,
                        "seed" => {
                            noise.seed = value.parse().map_err(|_| Error::Format {
                                line: lineno + 1,
                                message: format!("bad seed `{value}`"),
                            })?
                        }
                        "noise_level" => noise.level = value.parse().map_err(bad)?,
                        _ => {}
                    }
                }
                body.push('\n');
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(body.as_bytes());
        let header = rdr.headers().map_err(csv_err)?.clone();
        if header.len() < 3 || &header[0] != "x" || &header[1] != "y" {
            return Err(Error::Format {
                line: 1,
                message: "expected header `x, y, h_1, ...`".into(),
            });
        }
        let currents = header.len() - 2;
        let mut points = Vec::new();
        let mut values = vec![Vec::new(); currents];
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| Error::Format {
                    line,
                    message: format!("not a number: `{s}`"),
                })
            };
            if rec.len() != header.len() {
                return Err(Error::Format {
                    line,
                    message: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            points.push([parse(&rec[0])?, parse(&rec[1])?]);
            for (i, col) in values.iter_mut().enumerate() {
                col.push(parse(&rec[i + 2])?);
            }
        }
        Ok(Self {
            points,
            values,
            noise,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Format {
        line,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_mesh;

    #[test]
    fn current_values() {
        let g = standard_currents(7, 0.1).unwrap();
        assert_eq!(g[0].value_at([0.0, 0.5]), Some(1.0));
        assert_eq!(g[0].value_at([0.3, 1.0]), Some(-1.0));
        assert_eq!(g[1].value_at([0.0, 0.5]), Some(1.0));
        assert_eq!(g[1].value_at([1.0, 0.5]), Some(-1.0));
        assert_eq!(g[1].value_at([0.7, 1.0]), Some(1.0));
        assert_eq!(g[2].value_at([0.2, 0.0]), Some(1.0));
        assert_eq!(g[3].value_at([0.0, 0.75]), Some(1.0));
        assert_eq!(g[3].value_at([0.0, 0.25]), Some(-1.0));
        assert_eq!(g[3].value_at([1.0, 0.5]), Some(0.0));
        assert_eq!(g[3].value_at([0.0, 0.5]), Some(0.0));
        assert!((g[3].value_at([0.0, 0.52]).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(g[5].value_at([0.8, 1.0]), Some(1.0));
        assert_eq!(g[6].value_at([0.2, 0.0]), Some(-1.0));
        assert_eq!(g[6].value_at([0.2, 1.0]), Some(0.0));
    }

    #[test]
    fn current_counts() {
        assert_eq!(standard_currents(3, 0.1).unwrap().len(), 3);
        assert_eq!(standard_currents(7, 0.1).unwrap().len(), 7);
        assert!(matches!(
            standard_currents(5, 0.1),
            Err(Error::UnsupportedCurrentCount(5))
        ));
        assert!(standard_currents(7, 0.5).is_err());
    }

    #[test]
    fn currents_bounded_by_one() {
        for g in standard_currents(7, 0.2).unwrap() {
            for side in Side::ALL {
                for k in 0..=200 {
                    let s = k as f64 / 200.0;
                    let x = match side {
                        Side::Left => [0.0, s],
                        Side::Right => [1.0, s],
                        Side::Upper => [s, 1.0],
                        Side::Lower => [s, 0.0],
                    };
                    assert!(g.value_on(side, x).abs() <= 1.0);
                }
            }
        }
    }

    #[test]
    fn point_patterns() {
        let dir = DirichletSegment::default_pair();
        let k: Vec<usize> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&h| measurement_points(h, &dir).unwrap().len())
            .collect();
        assert_eq!(k, vec![16, 34, 70]);
        let p = measurement_points(0.2, &dir).unwrap();
        for x in [[0.0, 0.0], [0.0, 0.2], [0.2, 0.0], [1.0, 1.0]] {
            assert_eq!(p.iter().filter(|q| **q == x).count(), 1, "{x:?}");
        }
        for x in measurement_points(0.05, &dir).unwrap() {
            let on_gamma0 = (x[1] == 0.0 || x[1] == 1.0) && (0.4 - 1e-12..=0.6 + 1e-12).contains(&x[0]);
            assert!(!on_gamma0 && Side::of_point(x).is_some());
        }
        assert_eq!(
            measurement_points(0.1, &dir).unwrap(),
            measurement_points(0.1, &dir).unwrap()
        );
        assert!(measurement_points(0.3, &dir).is_err());
    }

    #[test]
    fn zero_data_zero_state() {
        let mesh = build_unit_square_mesh(5).unwrap();
        let sigma = ConductivityField::uniform(1.0, mesh.element_count());
        let g = CurrentPattern::constant(1, 0.0, 0.0, 0.0, 0.0);
        let u = solve_state(&mesh, &sigma, &g, None, &SolverOptions::default()).unwrap();
        assert!(u.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sampling() {
        let mesh = build_unit_square_mesh(4).unwrap();
        let u: Vec<f64> = mesh.nodes().iter().map(|p| 2.0 * p[0] - p[1] + 0.5).collect();
        let pts = [[0.25, 0.5], [0.33, 0.71], [1.0, 0.1]];
        let s = sample_measurements(&mesh, &u, &pts).unwrap();
        for (v, p) in s.iter().zip(&pts) {
            assert!((v - (2.0 * p[0] - p[1] + 0.5)).abs() < 1e-14);
        }
        // On an edge: convex combination of the two endpoint values.
        let w: Vec<f64> = (0..mesh.node_count()).map(|i| ((i * 37) % 11) as f64).collect();
        let a = mesh.node_index(1, 0);
        let b = mesh.node_index(2, 0);
        let v = sample_measurements(&mesh, &w, &[[0.25 + 0.25 * 0.3, 0.0]]).unwrap()[0];
        assert!((v - (0.7 * w[a] + 0.3 * w[b])).abs() < 1e-13);
        assert!(sample_measurements(&mesh, &u, &[[0.5, 1.2]]).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let set = MeasurementSet {
            points: vec![[0.0, 0.25], [1.0, 0.5]],
            values: vec![vec![0.1, -0.2], vec![1.0 / 3.0, 2e-17]],
            noise: NoiseInfo {
                delta: 0.01,
                seed: 7,
                level: 0.0113,
            },
        };
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("x,y,h_1,h_2"));
        assert!(text.starts_with("# delta = 0.01\n"));
        let back = MeasurementSet::read_csv(&buf[..]).unwrap();
        assert_eq!(back, set);

        let spaced = "# seed = 3\nx, y, h_1\n0, 0.5, 1.5\n";
        let s = MeasurementSet::read_csv(spaced.as_bytes()).unwrap();
        assert_eq!(s.values, vec![vec![1.5]]);
        assert_eq!(s.noise.seed, 3);

        let bad = "x,y,h_1\n0,0.5,abc\n";
        assert!(matches!(
            MeasurementSet::read_csv(bad.as_bytes()),
            Err(Error::Format { .. })
        ));
    }

    fn manufactured_error(n: usize) -> f64 {
        let mesh = build_unit_square_mesh(n).unwrap();
        let sigma = ConductivityField::uniform(1.0, mesh.element_count());
        let g = CurrentPattern::constant(0, 0.0, 0.0, -1.0, -1.0);
        let f = vec![2.0; mesh.element_count()];
        let u = solve_state(&mesh, &sigma, &g, Some(&f), &SolverOptions::cg(1e-12)).unwrap();
        // Mass-weighted L2 error against u = y (1 - y).
        let exact: Vec<f64> = mesh.nodes().iter().map(|p| p[1] * (1.0 - p[1])).collect();
        let mut err = 0.0;
        for e in 0..mesh.element_count() {
            let t = mesh.triangles()[e];
            let mean_sq: f64 = t.iter().map(|&i| (u.values[i] - exact[i]).powi(2)).sum::<f64>() / 3.0;
            err += mesh.area(e) * mean_sq;
        }
        err.sqrt()
    }

    #[test]
    fn manufactured_solution_second_order() {
        let e: Vec<f64> = [10, 20, 40].iter().map(|&n| manufactured_error(n)).collect();
        for w in e.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!(rate > 1.8, "rate {rate} from {e:?}");
        }
    }

    #[test]
    fn state_linear_in_current() {
        let mesh = build_unit_square_mesh(12).unwrap();
        let phi = crate::levelset::phantom_to_levelset(
            &crate::levelset::Phantom::new(vec![crate::levelset::Shape::Circle {
                center: [0.45, 0.55],
                radius: 0.2,
            }]),
            &mesh,
        )
        .unwrap();
        let sigma = crate::levelset::conductivity_from_levelset(&phi, 1.0, 10.0, &mesh).unwrap();
        let pattern = Pattern::new(&mesh);
        let op = StateOperator::new(&mesh, &pattern, &sigma, &SolverOptions::default(), Execution::Sequential).unwrap();
        let gs = standard_currents(3, 0.1).unwrap();
        let u1 = op.solve_state(&mesh, &gs[0], None, None).unwrap().values;
        let u2 = op.solve_state(&mesh, &gs[1], None, None).unwrap().values;
        let mut combo = gs[0].clone();
        for side in Side::ALL {
            let v = 2.0 * gs[0].value_on(side, [0.0, 0.3]) - 0.5 * gs[1].value_on(side, [0.0, 0.3]);
            let p = SideProfile::Constant(v);
            match side {
                Side::Left => combo.left = p,
                Side::Right => combo.right = p,
                Side::Upper => combo.upper = p,
                Side::Lower => combo.lower = p,
            }
        }
        let u = op.solve_state(&mesh, &combo, None, None).unwrap().values;
        for i in 0..u.len() {
            assert!((u[i] - (2.0 * u1[i] - 0.5 * u2[i])).abs() < 1e-10);
        }
        // Dirichlet nodes stay exactly zero.
        for (i, &d) in mesh.dirichlet_node_mask().iter().enumerate() {
            if d {
                assert_eq!(u[i], 0.0);
            }
        }
    }
}
