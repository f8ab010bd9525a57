use pointeit::forward::{standard_currents, MeasurementSet, NoiseInfo};
use pointeit::levelset::{area_fractions, conductivity_with, LevelSetField};
use pointeit::mesh::{build_unit_square_mesh, StructuredMesh};
use pointeit::par::Execution;
use pointeit::shape_gradient::{eval_dj, ShapeDerivative, Tensor2};
use pointeit::synthetic::noise_level;
use proptest::prelude::*;

const N: usize = 6;

fn mesh() -> StructuredMesh {
    build_unit_square_mesh(N).unwrap()
}

fn nodal() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, (N + 1) * (N + 1))
}

fn vector_field() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(prop::array::uniform2(-1.0f64..1.0), (N + 1) * (N + 1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fractions_bounded_and_scale_invariant(v in nodal(), c in 0.01f64..100.0) {
        let m = mesh();
        let a = area_fractions(&LevelSetField::new(v.clone()), &m, Execution::Sequential);
        let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
        let b = area_fractions(&LevelSetField::new(scaled), &m, Execution::Sequential);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((0.0..=1.0).contains(x));
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn conductivity_grows_as_the_level_set_drops(v in nodal(), shift in 0.0f64..0.5) {
        let m = mesh();
        let lower: Vec<f64> = v.iter().map(|x| x - shift).collect();
        let s = conductivity_with(&LevelSetField::new(v), 1.0, 10.0, &m, Execution::Sequential).unwrap();
        let t = conductivity_with(&LevelSetField::new(lower), 1.0, 10.0, &m, Execution::Sequential).unwrap();
        for (a, b) in s.values.iter().zip(&t.values) {
            prop_assert!((1.0..=10.0).contains(a));
            prop_assert!(*b >= *a - 1e-12);
        }
    }

    #[test]
    fn policies_agree_on_fractions(v in nodal()) {
        let m = mesh();
        let phi = LevelSetField::new(v);
        prop_assert_eq!(
            area_fractions(&phi, &m, Execution::Sequential),
            area_fractions(&phi, &m, Execution::Parallel)
        );
    }

    #[test]
    fn derivative_is_linear(
        s1 in prop::collection::vec(prop::array::uniform4(-1.0f64..1.0), 2 * N * N),
        v1 in vector_field(),
        v2 in vector_field(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let m = mesh();
        let s1: Vec<Tensor2> = s1.iter().map(|t| [[t[0], t[1]], [t[1], t[3]]]).collect();
        let s0r = s1.iter().map(|t| [t[0][0], t[1][1]]).collect();
        let sd = ShapeDerivative::new(&m, s1, s0r, vec![([0.0, 0.5], [0.3, -0.2])]).unwrap();
        let comb: Vec<[f64; 2]> = v1
            .iter()
            .zip(&v2)
            .map(|(p, q)| [a * p[0] + b * q[0], a * p[1] + b * q[1]])
            .collect();
        let lhs = eval_dj(&m, &sd, &comb).unwrap();
        let rhs = a * eval_dj(&m, &sd, &v1).unwrap() + b * eval_dj(&m, &sd, &v2).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
        prop_assert!((sd.apply(&comb) - lhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn noise_level_is_scale_free(
        h in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 8), 1..4),
        e in prop::collection::vec(-0.1f64..0.1, 32),
        c in 0.01f64..100.0,
    ) {
        prop_assume!(h.iter().flatten().any(|x| x.abs() > 1e-3));
        let set = |values: Vec<Vec<f64>>| MeasurementSet {
            points: vec![[0.0, 0.5]; 8],
            values,
            noise: NoiseInfo::default(),
        };
        let noisy: Vec<Vec<f64>> = h
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().enumerate().map(|(k, x)| x + e[(8 * i + k) % 32]).collect())
            .collect();
        let scale = |v: &Vec<Vec<f64>>| v.iter().map(|r| r.iter().map(|x| c * x).collect()).collect();
        let base = noise_level(&set(h.clone()), &set(noisy.clone())).unwrap();
        let scaled = noise_level(&set(scale(&h)), &set(scale(&noisy))).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!((base - scaled).abs() < 1e-10 * (1.0 + base));
    }

    #[test]
    fn csv_round_trip(values in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 5), 1..8)) {
        let set = MeasurementSet {
            points: vec![[0.0, 0.1], [0.0, 0.2], [1.0, 0.3], [0.25, 1.0], [0.75, 0.0]],
            values,
            noise: NoiseInfo { delta: 0.005, seed: 11, level: 0.0042 },
        };
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        prop_assert_eq!(MeasurementSet::read_csv(&buf[..]).unwrap(), set);
    }

    #[test]
    fn currents_are_bounded(t in 0.0f64..1.0) {
        for g in standard_currents(7, 0.1).unwrap() {
            for x in [[0.0, t], [1.0, t], [t, 0.0], [t, 1.0]] {
                prop_assert!(g.value_at(x).unwrap().abs() <= 1.0 + 1e-15);
            }
        }
    }
}
