//! Sequential against parallel execution of the data-parallel kernels.
//! Both policies produce identical output; only the wall time differs.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use pointeit::config::Config;
use pointeit::experiment::make_data;
use pointeit::fem::{assemble_scalar_stiffness, Pattern};
use pointeit::inversion::Objective;
use pointeit::levelset::{advect_with, conductivity_with, phantom_to_levelset, reinitialize_with};
use pointeit::mesh::build_unit_square_mesh;
use pointeit::par::Execution;

const POLICIES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn kernels(c: &mut Criterion) {
    let n = 128;
    let mesh = build_unit_square_mesh(n).unwrap();
    let pattern = Pattern::new(&mesh);
    let mut cfg = Config::for_scenario("three_inclusions");
    cfg.mesh.n = n;
    cfg.mesh.truth_n = Some(n);
    let phi = phantom_to_levelset(&cfg.scenario().unwrap().phantom, &mesh).unwrap();
    let sigma = conductivity_with(&phi, 1.0, 10.0, &mesh, Execution::Sequential).unwrap();
    let swirl: Vec<[f64; 2]> = mesh.nodes().iter().map(|p| [0.5 - p[1], p[0] - 0.5]).collect();

    let mut g = c.benchmark_group("kernels");
    for (name, exec) in POLICIES {
        g.bench_with_input(BenchmarkId::new("stiffness", name), &exec, |b, &e| {
            b.iter(|| assemble_scalar_stiffness(&mesh, &pattern, &sigma, e))
        });
        g.bench_with_input(BenchmarkId::new("conductivity", name), &exec, |b, &e| {
            b.iter(|| conductivity_with(&phi, 1.0, 10.0, &mesh, e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("advect", name), &exec, |b, &e| {
            b.iter(|| advect_with(&phi, &swirl, 0.01, &mesh, e))
        });
        g.bench_with_input(BenchmarkId::new("reinitialize", name), &exec, |b, &e| {
            b.iter(|| reinitialize_with(black_box(&phi), &mesh, e))
        });
    }
    g.finish();
}

fn multi_current(c: &mut Criterion) {
    let n = 64;
    let mut cfg = Config::for_scenario("three_inclusions");
    cfg.mesh.n = n;
    let data = make_data(&cfg).unwrap();
    let mesh = build_unit_square_mesh(n).unwrap();
    let currents = cfg.currents().unwrap();
    let phi = phantom_to_levelset(&cfg.initial_guess(), &mesh).unwrap();

    let mut g = c.benchmark_group("seven_currents");
    for (name, exec) in POLICIES {
        let obj = Objective::new(&mesh, &currents, &data, 1.0, 10.0, cfg.solver, exec).unwrap();
        g.bench_function(BenchmarkId::new("states", name), |b| b.iter(|| obj.evaluate(&phi).unwrap()));
        let eval = obj.evaluate(&phi).unwrap();
        g.bench_function(BenchmarkId::new("adjoints_and_derivative", name), |b| {
            b.iter(|| obj.shape_derivative(&phi, &eval).unwrap())
        });
    }
    g.finish();
}

criterion_group!(
    name = benches;
    config = Criterion::default().sample_size(10).configure_from_args();
    targets = kernels, multi_current
);
criterion_main!(benches);
