mod common;

use std::time::Instant;

use active_sysid::config::ExperimentConfig;
use active_sysid::control::*;
use active_sysid::dynamics::Regressor;
use active_sysid::estimator::{batch_posterior, PosteriorState, PriorSpec, DRIFT_TOLERANCE};
use active_sysid::harness::{run_experiment, quantile, ReplicaTrace};
use active_sysid::lemmas::{self, random_matrix, random_spd, random_vector};
use active_sysid::linalg::max_abs;
use active_sysid::quad;
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, passed: bool, detail: String, started: Instant) -> bool {
    println!(
        "{} criterion {id} {name}: {detail} ({:.2}s)",
        if passed { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    passed
}

#[test]
fn criterion_01_conjugate_factorization() {
    let t0 = Instant::now();
    let gap = lemmas::conjugate_factorization_gap(2, 3, 200, 101).unwrap();
    let ok = gap < 1e-8;
    assert!(report(1, "conjugate factorization", ok, format!("max log gap {gap:.3e} < 1e-8"), t0));
}

#[test]
fn criterion_02_joint_entropy() {
    let t0 = Instant::now();
    let joint = lemmas::joint_entropy_relative_gap(100_000, 202).unwrap();
    let iw = lemmas::inverse_wishart_entropy_gap().unwrap();
    let ok = joint < 0.03 && iw < 1e-3;
    let detail = format!("joint MC relative gap {joint:.3e} < 0.03, inverse-Wishart quadrature gap {iw:.3e} < 1e-3");
    assert!(report(2, "joint entropy", ok, detail, t0));
}

#[test]
fn criterion_03_predictive_logdet_invariance() {
    let t0 = Instant::now();
    let z1 = lemmas::predictive_logdet_spread(1, 100_000, 303).unwrap();
    let z2 = lemmas::predictive_logdet_spread(2, 100_000, 304).unwrap();
    let ok = z1 < 3.0 && z2 < 3.0;
    let detail = format!("max spread d=1 {z1:.2} SE, d=2 {z2:.2} SE (< 3)");
    assert!(report(3, "predictive log-det invariance", ok, detail, t0));
}

#[test]
fn criterion_04_update_correctness() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| max_abs(&(a - b)) / max_abs(b).max(1e-300);

    let mut batch_err = 0.0f64;
    for _ in 0..20 {
        let (d, m) = (rng.gen_range(1..4), rng.gen_range(1..6));
        let prior = PosteriorState::init(
            random_matrix(d, m, &mut rng),
            random_spd(m, 0.3, &mut rng),
            random_spd(d, 0.3, &mut rng),
            d as f64 + 2.0,
        )
        .unwrap();
        let xs: Vec<_> = (0..20).map(|_| Regressor::from_vector(random_vector(m, &mut rng))).collect();
        let ys: Vec<_> = (0..20).map(|_| random_vector(d, &mut rng)).collect();
        let mut post = prior.clone();
        for (x, y) in xs.iter().zip(&ys) {
            post = post.update(x, y).unwrap().0;
        }
        let mut k = prior.precision().clone();
        let mut rhs = prior.mean() * prior.precision();
        for (x, y) in xs.iter().zip(&ys) {
            k += x.as_vector() * x.as_vector().transpose();
            rhs += y * x.as_vector().transpose();
        }
        let mean = k.clone().lu().solve(&rhs.transpose()).unwrap().transpose();
        batch_err = batch_err.max(rel(post.precision(), &k)).max(rel(post.mean(), &mean));
        let batch = batch_posterior(&prior, &xs, &ys).unwrap();
        batch_err = batch_err.max(rel(batch.mean(), &mean));
    }

    let mut gamma_err = 0.0f64;
    for _ in 0..200 {
        let m = rng.gen_range(1..8);
        let s = PosteriorState::init(random_matrix(2, m, &mut rng), random_spd(m, 0.3, &mut rng), random_spd(2, 0.3, &mut rng), 4.0)
            .unwrap();
        let xv = random_vector(m, &mut rng);
        let direct = 1.0 - xv.dot(&(&xv * xv.transpose() + s.precision()).lu().solve(&xv).unwrap());
        gamma_err = gamma_err.max((s.gamma(&Regressor::from_vector(xv)).unwrap() - direct).abs());
    }

    let m = 8;
    let mut s = PriorSpec::default().build(3, m).unwrap();
    let mut drift = 0.0f64;
    for _ in 0..10_000 {
        let x = Regressor::from_vector(random_vector(m, &mut rng));
        s = s.update(&x, &random_vector(3, &mut rng)).unwrap().0;
        let direct = s.precision().clone().try_inverse().unwrap();
        drift = drift.max(max_abs(&(s.covariance() - &direct)) / max_abs(&direct));
    }

    let ok = batch_err < 1e-8 && gamma_err < 1e-10 && drift < DRIFT_TOLERANCE;
    let detail = format!(
        "batch relative error {batch_err:.3e} < 1e-8, gamma gap {gamma_err:.3e} < 1e-10, covariance drift {drift:.3e} < 1e-6"
    );
    assert!(report(4, "update correctness", ok, detail, t0));
}

#[test]
fn criterion_05_predictive_density() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut mass_err = 0.0f64;
    for _ in 0..10 {
        let s = PosteriorState::init(random_matrix(1, 3, &mut rng), random_spd(3, 0.3, &mut rng), random_spd(1, 0.3, &mut rng), 1.0 + rng.gen_range(0.5..6.0))
            .unwrap();
        let x = Regressor::from_vector(random_vector(3, &mut rng));
        let total =
            quad::integrate_real_line(|y| s.predictive_logpdf(&x, &DVector::from_element(1, y)).unwrap().exp(), 1e-12);
        mass_err = mass_err.max((total - 1.0).abs());
    }

    // average of 𝒩(y; Ax, V) over (A, V) drawn from the posterior
    let s = PosteriorState::init(
        DMatrix::from_element(1, 1, 0.4),
        DMatrix::from_element(1, 1, 2.0),
        DMatrix::from_element(1, 1, 1.5),
        4.0,
    )
    .unwrap();
    let x = 1.3;
    let draws = 200_000;
    let mut worst_z = 0.0f64;
    for y in [-1.0, 0.5, 2.5] {
        let iw = active_sysid::distributions::InverseWishartParams::new(s.scatter().clone(), s.dof()).unwrap();
        let vals: Vec<f64> = (0..draws)
            .map(|_| {
                let v = active_sysid::distributions::sample_inverse_wishart(&iw, &mut rng)[(0, 0)];
                let a = 0.4 + (v / 2.0).sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
                (-(y - a * x) * (y - a * x) / (2.0 * v)).exp() / (std::f64::consts::TAU * v).sqrt()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / draws as f64).sqrt();
        let exact = s.predictive_logpdf(&Regressor::from_vector(DVector::from_element(1, x)), &DVector::from_element(1, y))
            .unwrap()
            .exp();
        worst_z = worst_z.max((mean - exact).abs() / (sd / (draws as f64).sqrt()));
    }
    let ok = mass_err < 1e-3 && worst_z < 4.0;
    let detail = format!("|mass - 1| {mass_err:.3e} < 1e-3, MC marginal max z {worst_z:.2} < 4");
    assert!(report(5, "predictive density", ok, detail, t0));
}

#[test]
fn criterion_06_control_optimality() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0.0f64;
    let mut min_gap = f64::INFINITY;
    for i in 0..100 {
        let c = 1 + i % 2;
        let d = 2;
        let s = random_state(1, d + c, 0.3, &mut rng);
        let h = random_history(d, c, &mut rng);
        let q = ControlQuadratic::new(&s, &h).unwrap();
        let f = quadratic_fn(&q);
        let bound = rng.gen_range(0.5..1.5);
        for dom in [ControlDomain::boxed(bound), ControlDomain::ball(bound)] {
            let u_max = infomax_control(&s, &h, &dom).unwrap();
            let u_min = noise_optimal_control(&s, &h, &dom).unwrap();
            assert!(dom.contains(&u_max, 1e-9) && dom.contains(&u_min, 1e-9));
            let (hi, lo) = match (dom.kind, c) {
                (DomainKind::Box, _) => (
                    grid_optimum(&f, &|_| true, c, bound, Sense::Max).unwrap().0,
                    grid_optimum(&f, &|_| true, c, bound, Sense::Min).unwrap().0,
                ),
                (DomainKind::Ball, 1) => (
                    grid_optimum(&f, &|_| true, 1, bound, Sense::Max).unwrap().0,
                    grid_optimum(&f, &|_| true, 1, bound, Sense::Min).unwrap().0,
                ),
                (DomainKind::Ball, _) => {
                    let inside = |u: &[f64]| u[0] * u[0] + u[1] * u[1] <= bound * bound;
                    (
                        circle_optimum(&f, bound, Sense::Max).0,
                        grid_optimum(&f, &inside, 2, bound, Sense::Min).unwrap().0.min(circle_optimum(&f, bound, Sense::Min).0),
                    )
                }
            };
            // the quadratic must reproduce xᵀPx on the returned controls
            for u in [&u_max, &u_min] {
                worst = worst.max((q.value(u) - control_objective(&s, &h, u).unwrap()).abs());
            }
            worst = worst.max((q.value(&u_max) - hi).abs()).max((q.value(&u_min) - lo).abs());
            min_gap = min_gap.min(q.value(&u_max) - q.value(&u_min));
        }
    }
    let ok = worst < 1e-6 && min_gap > 0.0;
    let detail = format!("max objective gap to grid {worst:.3e} < 1e-6, min incompatibility gap {min_gap:.3e} > 0");
    assert!(report(6, "control optimality", ok, detail, t0));
}

#[test]
fn criterion_07_equivalence_chains() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let argbest = |vals: &[f64], max: bool| {
        (0..vals.len())
            .reduce(|a, b| if (max && vals[b] > vals[a]) || (!max && vals[b] < vals[a]) { b } else { a })
            .unwrap()
    };
    let (mut agree_max, mut agree_min) = (0, 0);
    for _ in 0..100 {
        let (d, m) = (rng.gen_range(1..4), rng.gen_range(2..6));
        let s = random_state(d, m, 0.2, &mut rng);
        let k = s.precision();
        let cands: Vec<DVector<f64>> =
            (0..rng.gen_range(5..30)).map(|_| random_vector(m, &mut rng) * rng.gen_range(0.2..3.0)).collect();
        let qf: Vec<f64> = cands.iter().map(|x| x.dot(&(s.covariance() * x))).collect();
        let neg_entropy: Vec<f64> =
            cands.iter().map(|x| -(d as f64) / 2.0 * (x * x.transpose() + k).determinant().ln()).collect();
        let shrunk: Vec<f64> =
            cands.iter().map(|x| x.dot(&(x * x.transpose() + k).lu().solve(x).unwrap())).collect();
        let ratio: Vec<f64> = qf.iter().map(|v| v / (1.0 + v)).collect();
        agree_max += usize::from(argbest(&qf, true) == argbest(&neg_entropy, false));
        agree_min += usize::from(argbest(&shrunk, false) == argbest(&ratio, false));
    }
    let ok = agree_max == 100 && agree_min == 100;
    let detail = format!("argmax agreement {agree_max}/100, argmin agreement {agree_min}/100");
    assert!(report(7, "equivalence chains", ok, detail, t0));
}

fn run(kind: StrategyKind, tau: Option<usize>) -> (ExperimentConfig, Vec<ReplicaTrace>) {
    let mut cfg = ExperimentConfig::default();
    cfg.strategy = StrategySpec::new(kind);
    cfg.strategy.tau = tau;
    let traces = run_experiment(&cfg).unwrap();
    assert!(traces.iter().all(|t| t.failure.is_none()));
    (cfg, traces)
}

#[test]
fn criterion_08_end_to_end_identification() {
    let t0 = Instant::now();
    let (cfg, info) = run(StrategyKind::Infomax, None);
    let (_, rand) = run(StrategyKind::Random, None);
    let model = cfg.model.build().unwrap();
    assert_eq!((model.d(), model.c(), model.ar_order(), model.input_order()), (3, 2, 1, 0));
    assert_eq!((cfg.horizon, cfg.replicas), (2000, 50));
    let n = info.len() as f64;
    let wins = info.iter().zip(&rand).filter(|(a, b)| a.last().unwrap().param_error <= b.last().unwrap().param_error).count();
    let shrunk = info.iter().filter(|t| t.last().unwrap().param_error < t.initial_param_error / 100.0).count();
    let ok = wins as f64 >= 0.9 * n && shrunk as f64 >= 0.95 * n;
    let detail = format!(
        "infomax <= random in {:.0}% (need 90%), error < initial/100 in {:.0}% (need 95%)",
        100.0 * wins as f64 / n,
        100.0 * shrunk as f64 / n
    );
    assert!(report(8, "end-to-end identification", ok, detail, t0));
}

#[test]
fn criterion_09_switching_heuristics() {
    let t0 = Instant::now();
    let (cfg, ti) = run(StrategyKind::TauInfomax, Some(500));
    let (_, tz) = run(StrategyKind::TauZero, Some(500));
    let amp: Vec<f64> = ti
        .iter()
        .flat_map(|tr| tr.records.iter().filter(|r| (600..=1000).contains(&r.t)).map(|r| r.u.iter().fold(0.0f64, |a, v| a.max(v.abs()))))
        .collect();
    let median_amp = quantile(&amp, 0.5);
    let final_noise = |tr: &[ReplicaTrace]| quantile(&tr.iter().map(|t| t.last().unwrap().noise_error).collect::<Vec<_>>(), 0.5);
    let (ni, nz) = (final_noise(&ti), final_noise(&tz));
    let rel = (nz - ni).abs() / ni;
    let bound = cfg.strategy.domain.bound;
    let ok = median_amp < 0.05 * bound && rel < 0.2;
    let detail = format!(
        "median |u|_inf on [600,1000] {median_amp:.3e} < {:.3e}, noise_error medians {nz:.4e} vs {ni:.4e} (relative {rel:.3})",
        0.05 * bound
    );
    assert!(report(9, "switching heuristics", ok, detail, t0));
}

#[test]
fn criterion_10_block_formula_discrepancy() {
    let t0 = Instant::now();
    let s = state_with_precision(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 4.0]));
    let h = scalar_history(1.0);
    let dom = ControlDomain::boxed(10.0);
    let exact_u = noise_optimal_control(&s, &h, &dom).unwrap();
    let block_u = block_formula_control(&s, &h, &dom).unwrap();
    let exact = control_objective(&s, &h, &exact_u).unwrap();
    let block = control_objective(&s, &h, &block_u).unwrap();
    let q = ControlQuadratic::new(&s, &h).unwrap();
    let f = quadratic_fn(&q);
    let (grid_min, grid_u) = grid_optimum(&f, &|_| true, 1, 2.0, Sense::Min).unwrap();
    let grid_block = f(&[0.25]);
    let ok = (exact - 1.0).abs() < 1e-12
        && (block - 1.1875).abs() < 1e-12
        && (grid_min - 1.0).abs() < 1e-6
        && (grid_u[0] - 1.0).abs() < 1e-3
        && (grid_block - 1.1875).abs() < 1e-6;
    let detail = format!(
        "exact u={:.4} objective {exact:.4}, block u={:.4} objective {block:.4}, grid minimum {grid_min:.6}",
        exact_u[0], block_u[0]
    );
    assert!(report(10, "block-formula discrepancy", ok, detail, t0));
}
