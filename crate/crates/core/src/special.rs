//! Gamma-family special functions.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Digamma `Ψ(x)` for `x > 0`.
///
/// Shifts the argument above 10 with `Ψ(x) = Ψ(x + 1) − 1/x`, then applies the
/// asymptotic series through the `x⁻¹⁴` term (truncation error below 1e−16).
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Bernoulli terms B_2k / (2k), Horner form in x⁻².
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 / x - series
}

/// `ln Z_{n,d} = d(d−1)/4 · ln π + Σ_{i=1..d} ln Γ((n+1−i)/2)`, the
/// multivariate gamma normalizer shared by the Wishart family.
pub fn log_multi_gamma(d: usize, n: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::Domain("dimension must be positive".into()));
    }
    let smallest = (n + 1.0 - d as f64) / 2.0;
    if !(smallest > 0.0) || !n.is_finite() {
        return Err(Error::Domain(format!(
            "multivariate gamma needs n + 1 - d > 0 (d = {d}, n = {n})"
        )));
    }
    let df = d as f64;
    let sum: f64 = (1..=d).map(|i| ln_gamma((n + 1.0 - i as f64) / 2.0)).sum();
    Ok(df * (df - 1.0) / 4.0 * PI.ln() + sum)
}

/// `Σ_{i=1..d} Ψ((n+1−i)/2)`.
pub fn multi_digamma(d: usize, n: f64) -> f64 {
    (1..=d).map(|i| digamma((n + 1.0 - i as f64) / 2.0)).sum()
}
