use active_sysid::dynamics::*;
use active_sysid::lemmas::{random_matrix, random_spd, random_vector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(d: usize, c: usize, i: usize, j: usize, link: LinkFn, rng: &mut ChaCha8Rng) -> ModelSpec {
    let f = (0..=i).map(|_| random_matrix(d, d, rng) * 0.3).collect();
    let b = (0..=j).map(|_| random_matrix(d, c, rng)).collect();
    ModelSpec::new(f, b, random_spd(d, 0.1, rng) * 0.01, link).unwrap()
}

fn random_history(spec: &ModelSpec, scale: f64, rng: &mut ChaCha8Rng) -> History {
    let r = (0..=spec.ar_order()).map(|_| random_vector(spec.d(), rng) * scale).collect();
    let u = (0..spec.input_order()).map(|_| random_vector(spec.c(), rng)).collect();
    History::from_buffers(r, u, spec.c()).unwrap()
}

#[test]
fn stacked_parameters_reproduce_the_plant_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (d, c) = (rng.gen_range(1..4), rng.gen_range(1..3));
        let (i, j) = (rng.gen_range(0..3), rng.gen_range(0..3));
        let spec = random_model(d, c, i, j, LinkFn::Identity, &mut rng);
        let h = random_history(&spec, 1.0, &mut rng);
        let u = random_vector(c, &mut rng);
        let x = build_regressor(&h, &u).unwrap();
        assert_eq!(x.len(), spec.regressor_dim());
        let direct = step_with_noise(&spec, &h, &u, &DVector::zeros(d)).unwrap();
        let stacked = stack_parameters(&spec) * x.as_vector();
        assert!((direct - stacked).amax() < 1e-12);
    }
}

#[test]
fn observation_residual_is_the_injected_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = random_model(3, 2, 1, 1, LinkFn::Identity, &mut rng);
    let a = stack_parameters(&spec);
    let mut h = History::new(&spec);
    for _ in 0..200 {
        let u = random_vector(2, &mut rng);
        let x = build_regressor(&h, &u).unwrap();
        let (r, e) = step(&spec, &h, &u, &mut rng).unwrap();
        let y = linearize_observation(&spec, &r).unwrap();
        assert!((y - &a * x.as_vector() - &e).amax() < 1e-12);
        h.push(r, u);
    }
}

#[test]
fn tanh_plant_linearizes_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = random_model(2, 1, 0, 0, LinkFn::Tanh, &mut rng);
    let a = stack_parameters(&spec);
    let mut h = History::new(&spec);
    for _ in 0..200 {
        let u = random_vector(1, &mut rng) * 0.3;
        let x = build_regressor(&h, &u).unwrap();
        let (r, e) = step(&spec, &h, &u, &mut rng).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1.0));
        let y = linearize_observation(&spec, &r).unwrap();
        assert!((y - &a * x.as_vector() - &e).amax() < 1e-9);
        h.push(r, u);
    }
}

#[test]
fn tanh_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let r = DVector::from_fn(3, |_, _| rng.gen_range(-0.999..0.999));
        let back = LinkFn::Tanh.forward(&LinkFn::Tanh.inverse(&r).unwrap());
        assert!((back - &r).amax() < 1e-10);
    }
    let y = LinkFn::Tanh.inverse(&DVector::from_element(1, 0.5)).unwrap();
    assert!((y[0] - 0.549_306_144_334_054_8).abs() < 1e-12);
    assert_eq!(LinkFn::Identity.inverse(&DVector::from_element(2, 7.0)).unwrap(), DVector::from_element(2, 7.0));
}

#[test]
fn noise_covariance_matches_v_true() {
    let v = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.3]);
    let spec = ModelSpec::new(vec![DMatrix::zeros(2, 2)], vec![DMatrix::zeros(2, 1)], v.clone(), LinkFn::Identity)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = History::new(&spec);
    let n = 100_000;
    let mut acc = DMatrix::zeros(2, 2);
    for _ in 0..n {
        let (r, _) = step(&spec, &h, &DVector::zeros(1), &mut rng).unwrap();
        acc += &r * r.transpose();
    }
    let emp = acc / n as f64;
    for i in 0..2 {
        for j in 0..2 {
            let se = ((v[(i, i)] * v[(j, j)] + v[(i, j)].powi(2)) / n as f64).sqrt();
            assert!((emp[(i, j)] - v[(i, j)]).abs() < 4.0 * se);
        }
    }
}

#[test]
fn same_seed_same_trajectory() {
    let run = |seed| {
        let mut mrng = ChaCha8Rng::seed_from_u64(10);
        let spec = random_model(2, 1, 1, 0, LinkFn::Identity, &mut mrng);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = History::new(&spec);
        let mut out = Vec::new();
        for _ in 0..50 {
            let (r, _) = step(&spec, &h, &DVector::from_element(1, 0.5), &mut rng).unwrap();
            out.push(r.clone());
            h.push(r, DVector::from_element(1, 0.5));
        }
        out
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7), run(8));
}

#[test]
fn generator_respects_the_spectral_radius_cap() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for &(i, rho) in &[(0, 0.5), (1, 0.9), (2, 0.95)] {
        let g = GeneratorParams { ar_order: i, spectral_radius: rho, ..GeneratorParams::default() };
        let spec = ModelSpec::generate(&g, &mut rng).unwrap();
        assert!(companion_spectral_radius(spec.f()) <= rho + 1e-9);
        assert_eq!(spec.f().len(), i + 1);
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = random_model(2, 2, 0, 0, LinkFn::Identity, &mut rng);
    let h = History::new(&spec);
    assert!(build_regressor(&h, &DVector::zeros(3)).is_err());
    assert!(step_with_noise(&spec, &h, &DVector::zeros(2), &DVector::zeros(3)).is_err());
    assert!(linearize_observation(&spec, &DVector::zeros(5)).is_err());
}
