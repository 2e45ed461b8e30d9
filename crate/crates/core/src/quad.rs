//! Numerical integration used by the density and entropy validation suites.
//!
//! Thin wrappers over double-exponential (tanh-sinh) quadrature, with variable
//! changes for half-line and whole-line integrals.

use quadrature::double_exponential;

/// `∫_a^b f(x) dx`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    double_exponential::integrate(
        |x| {
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        a,
        b,
        tol,
    )
    .integral
}

/// `∫_0^∞ f(x) dx` through `x = s/(1−s)`.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, tol: f64) -> f64 {
    integrate(
        |s| {
            let one_minus = 1.0 - s;
            let x = s / one_minus;
            f(x) / (one_minus * one_minus)
        },
        0.0,
        1.0,
        tol,
    )
}

/// `∫_{−∞}^{∞} f(x) dx` through `x = s/(1−s²)`.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, tol: f64) -> f64 {
    integrate(
        |s| {
            let w = 1.0 - s * s;
            let x = s / w;
            f(x) * (1.0 + s * s) / (w * w)
        },
        -1.0,
        1.0,
        tol,
    )
}
