//! Numerical checks of the conjugate-update identities, the posterior entropy
//! formula and the predictive log-determinant invariance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::Serialize;

use crate::distributions::{
    entropy_inverse_wishart, entropy_joint_mniw, inverse_wishart_logpdf, matrix_normal_logpdf, matrix_t_logpdf,
    sample_inverse_wishart, sample_matrix_normal, InverseWishartParams, MatrixNormalParams, MatrixTParams,
};
use crate::error::Result;
use crate::linalg::{logdet_spd, spd_cholesky, spd_inverse};
use crate::quad;

/// Outcome of one numerical check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl LemmaReport {
    fn new(name: impl Into<String>, max_error: f64, tolerance: f64) -> Self {
        Self { name: name.into(), max_error, tolerance, passed: max_error.is_finite() && max_error < tolerance }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: max_error={:.3e} tolerance={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.tolerance
        )
    }
}

pub fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `WWᵀ/n + floor·I`, eigenvalues bounded below by `floor`.
pub fn random_spd<R: Rng + ?Sized>(n: usize, floor: f64, rng: &mut R) -> DMatrix<f64> {
    let w = random_matrix(n, n, rng);
    &w * w.transpose() / n as f64 + DMatrix::identity(n, n) * floor
}

/// Max over `trials` random tuples of the gap between the two sides of
/// `𝒩_y(Ax,V)·𝒩_A(M,V,K)·𝒲𝒾_V(Q,n) = 𝒩_A(M⁺,V,xxᵀ+K)·𝒲𝒾_V(Q+γeeᵀ,n+1)·𝒯_y(Q,n,Mx,γ)`
/// in log space.
pub fn conjugate_factorization_gap(d: usize, m: usize, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let a = random_matrix(d, m, &mut rng);
        let mean = random_matrix(d, m, &mut rng);
        let x = random_vector(m, &mut rng);
        let y = random_vector(d, &mut rng);
        let v = random_spd(d, 0.2, &mut rng);
        let k = random_spd(m, 0.2, &mut rng);
        let q = random_spd(d, 0.2, &mut rng);
        let n = d as f64 + rng.gen_range(0.0..10.0);

        let lhs = matrix_normal_logpdf(
            &DMatrix::from_column_slice(d, 1, y.as_slice()),
            &MatrixNormalParams::new(
                DMatrix::from_column_slice(d, 1, (&a * &x).as_slice()),
                v.clone(),
                DMatrix::identity(1, 1),
            )?,
        )? + matrix_normal_logpdf(&a, &MatrixNormalParams::new(mean.clone(), v.clone(), k.clone())?)?
            + inverse_wishart_logpdf(&v, &InverseWishartParams::new(q.clone(), n)?)?;

        let k_post = &x * x.transpose() + &k;
        let k_post_inv = spd_inverse(&k_post, "xxᵀ+K")?;
        let gamma = 1.0 - (x.transpose() * &k_post_inv * &x)[(0, 0)];
        let m_post = (&mean * &k + &y * x.transpose()) * &k_post_inv;
        let resid = &y - &mean * &x;
        let q_post = &q + &resid * resid.transpose() * gamma;
        let rhs = matrix_normal_logpdf(&a, &MatrixNormalParams::new(m_post, v.clone(), k_post)?)?
            + inverse_wishart_logpdf(&v, &InverseWishartParams::new(q_post, n + 1.0)?)?
            + matrix_t_logpdf(
                &DMatrix::from_column_slice(d, 1, y.as_slice()),
                &MatrixTParams::vector(q, n, &mean * &x, gamma)?,
            )?;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// Monte-Carlo estimate of the joint entropy of `𝒩_A(M,V,K)·𝒲𝒾_V(Q,n)` and its
/// standard error.
pub fn joint_entropy_mc(
    mean: &DMatrix<f64>,
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    n: f64,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let iw = InverseWishartParams::new(q.clone(), n)?;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let v = sample_inverse_wishart(&iw, &mut rng);
        let mn = MatrixNormalParams::new(mean.clone(), v.clone(), k.clone())?;
        let a = sample_matrix_normal(&mn, &mut rng);
        let nll = -(matrix_normal_logpdf(&a, &mn)? + inverse_wishart_logpdf(&v, &iw)?);
        sum += nll;
        sum_sq += nll * nll;
    }
    let nf = draws as f64;
    let est = sum / nf;
    let var = (sum_sq / nf - est * est).max(0.0);
    Ok((est, (var / nf).sqrt()))
}

/// Largest relative gap between closed-form and Monte-Carlo joint entropies
/// over a fixed set of shapes with `d ≤ 2`, `m ≤ 3`.
pub fn joint_entropy_relative_gap(draws: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for (i, &(d, m, n, q_scale)) in [(1, 1, 4.0, 3.0), (1, 3, 6.0, 5.0), (2, 2, 5.0, 4.0), (2, 3, 7.5, 6.0)]
        .iter()
        .enumerate()
    {
        let mean = random_matrix(d, m, &mut rng);
        let k = random_spd(m, 0.5, &mut rng) * 0.5;
        let q = random_spd(d, 0.5, &mut rng) * q_scale;
        let closed = entropy_joint_mniw(&k, &q, n)?.value();
        let (mc, _) = joint_entropy_mc(&mean, &k, &q, n, draws, seed.wrapping_add(1 + i as u64))?;
        worst = worst.max((closed - mc).abs() / closed.abs());
    }
    Ok(worst)
}

/// `−∫ p ln p` for a one-dimensional inverse-Wishart density by quadrature.
pub fn inverse_wishart_entropy_quadrature(q: f64, n: f64) -> Result<f64> {
    let p = InverseWishartParams::new(DMatrix::from_element(1, 1, q), n)?;
    let h = quad::integrate_half_line(
        |v| match inverse_wishart_logpdf(&DMatrix::from_element(1, 1, v), &p) {
            Ok(lp) => -lp * lp.exp(),
            Err(_) => 0.0,
        },
        1e-12,
    );
    Ok(h)
}

/// Largest absolute gap between closed-form and quadrature entropies of 1-D
/// inverse-Wishart densities.
pub fn inverse_wishart_entropy_gap() -> Result<f64> {
    let mut worst = 0.0f64;
    for &(q, n) in &[(1.0, 3.0), (0.5, 5.0), (2.0, 2.5), (4.0, 10.0)] {
        let closed = entropy_inverse_wishart(&InverseWishartParams::new(DMatrix::from_element(1, 1, q), n)?).value();
        worst = worst.max((closed - inverse_wishart_entropy_quadrature(q, n)?).abs());
    }
    Ok(worst)
}

/// Draw from `𝒯_y(Q, n, μ, γ)`: a multivariate t with `n+1−d` degrees of
/// freedom and scale `Q/(γ(n+1−d))`.
pub fn sample_vector_t<R: Rng + ?Sized>(
    q_chol: &DMatrix<f64>,
    n: f64,
    mu: &DVector<f64>,
    gamma: f64,
    rng: &mut R,
) -> DVector<f64> {
    let d = mu.len();
    let w = ChiSquared::new(n + 1.0 - d as f64).expect("n > d − 1").sample(rng);
    mu + q_chol * random_vector(d, rng) / (gamma * w).sqrt()
}

/// Monte-Carlo estimate and standard error of
/// `∫ 𝒯_y(Q,n,μ,γ) ln|Q + (y−μ)γ(y−μ)ᵀ| dy`.
pub fn predictive_logdet_mc(
    q: &DMatrix<f64>,
    n: f64,
    mu: &DVector<f64>,
    gamma: f64,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = spd_cholesky(q, "Q")?.l();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let y = sample_vector_t(&l, n, mu, gamma, &mut rng);
        let r = &y - mu;
        let val = logdet_spd(&(q + &r * r.transpose() * gamma), "Q+γrrᵀ")?;
        sum += val;
        sum_sq += val * val;
    }
    let nf = draws as f64;
    let est = sum / nf;
    Ok((est, ((sum_sq / nf - est * est).max(0.0) / nf).sqrt()))
}

/// Largest deviation, in combined standard errors, of any `(μ, γ)` estimate
/// from the pooled mean of the others.
pub fn predictive_logdet_spread(d: usize, draws: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_spd(d, 0.5, &mut rng);
    let n = d as f64 + 2.5;
    let mut estimates = Vec::new();
    let mut stream = seed;
    for &shift in &[0.0, 1.0, -3.0] {
        for &gamma in &[0.1, 0.5, 0.9] {
            stream = stream.wrapping_add(0x9E37_79B9);
            let mu = DVector::from_element(d, shift);
            estimates.push(predictive_logdet_mc(&q, n, &mu, gamma, draws, stream)?);
        }
    }
    let mut worst = 0.0f64;
    for (i, &(est, se)) in estimates.iter().enumerate() {
        let others: Vec<_> = estimates.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, e)| *e).collect();
        let k = others.len() as f64;
        let pooled = others.iter().map(|e| e.0).sum::<f64>() / k;
        let pooled_se = (others.iter().map(|e| e.1 * e.1).sum::<f64>()).sqrt() / k;
        worst = worst.max((est - pooled).abs() / (se * se + pooled_se * pooled_se).sqrt());
    }
    Ok(worst)
}

/// Full suite with default sizes.
pub fn run_all(seed: u64) -> Result<Vec<LemmaReport>> {
    Ok(vec![
        LemmaReport::new("conjugate factorization (d=2, m=3, 200 tuples)", conjugate_factorization_gap(2, 3, 200, seed)?, 1e-8),
        LemmaReport::new("joint entropy vs Monte-Carlo (relative)", joint_entropy_relative_gap(100_000, seed)?, 0.03),
        LemmaReport::new("inverse-Wishart entropy vs quadrature (d=1)", inverse_wishart_entropy_gap()?, 1e-3),
        LemmaReport::new("predictive log-det invariance d=1 (std. errors)", predictive_logdet_spread(1, 100_000, seed)?, 3.0),
        LemmaReport::new("predictive log-det invariance d=2 (std. errors)", predictive_logdet_spread(2, 100_000, seed)?, 3.0),
    ])
}
