//! Matrix-normal, (inverse-)Wishart and matrix Student-t densities, samplers
//! and closed-form entropies.
//!
//! Conventions, all in nats:
//!
//! * `𝒩_A(M, V, K)`: `A ∈ ℝ^{d×m}` with row covariance `V` and column
//!   precision `K`, so `vec(A) ~ 𝒩(vec(M), V ⊗ K⁻¹)`.
//! * `𝒲𝒾_V(Q, n)`: `|V|^{−(n+d+1)/2} |Q/2|^{n/2} exp(−½ tr(V⁻¹Q)) / Z_{n,d}`,
//!   equivalently `V⁻¹ ~ 𝒲(Q⁻¹, n)`.
//! * `𝒯_A(Q, n, M, K)`: the matrix Student-t obtained by integrating `V` out of
//!   `𝒩_A(M, V, K) 𝒲𝒾_V(Q, n)`.

use std::f64::consts::{E, LN_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{logdet_from_cholesky, spd_cholesky};
use crate::special::{digamma, ln_gamma, log_multi_gamma, multi_digamma};

/// Differential entropy in nats.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EntropyValue(pub f64);

impl EntropyValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

fn check_dof(d: usize, n: f64) -> Result<()> {
    if n.is_finite() && n > d as f64 - 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "degrees of freedom must exceed d - 1 = {} (got {n})",
            d as f64 - 1.0
        )))
    }
}

fn check_finite(x: &DMatrix<f64>, name: &str) -> Result<()> {
    if crate::linalg::is_finite(x) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("`{name}` has non-finite entries")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixNormalParams {
    mean: DMatrix<f64>,
    row_cov: DMatrix<f64>,
    precision: DMatrix<f64>,
}

impl MatrixNormalParams {
    pub fn new(mean: DMatrix<f64>, row_cov: DMatrix<f64>, precision: DMatrix<f64>) -> Result<Self> {
        let (d, m) = mean.shape();
        if row_cov.shape() != (d, d) {
            return Err(Error::dims("matrix-normal row covariance", format!("{d}x{d}"), shape(&row_cov)));
        }
        if precision.shape() != (m, m) {
            return Err(Error::dims("matrix-normal precision", format!("{m}x{m}"), shape(&precision)));
        }
        check_finite(&mean, "M")?;
        spd_cholesky(&row_cov, "V")?;
        spd_cholesky(&precision, "K")?;
        Ok(Self { mean, row_cov, precision })
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    pub fn row_cov(&self) -> &DMatrix<f64> {
        &self.row_cov
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseWishartParams {
    scale: DMatrix<f64>,
    dof: f64,
}

impl InverseWishartParams {
    pub fn new(scale: DMatrix<f64>, dof: f64) -> Result<Self> {
        spd_cholesky(&scale, "Q")?;
        check_dof(scale.nrows(), dof)?;
        Ok(Self { scale, dof })
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn dim(&self) -> usize {
        self.scale.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTParams {
    scale: DMatrix<f64>,
    dof: f64,
    location: DMatrix<f64>,
    precision: DMatrix<f64>,
}

impl MatrixTParams {
    pub fn new(
        scale: DMatrix<f64>,
        dof: f64,
        location: DMatrix<f64>,
        precision: DMatrix<f64>,
    ) -> Result<Self> {
        let (d, m) = location.shape();
        if scale.shape() != (d, d) {
            return Err(Error::dims("matrix-t scale", format!("{d}x{d}"), shape(&scale)));
        }
        if precision.shape() != (m, m) {
            return Err(Error::dims("matrix-t precision", format!("{m}x{m}"), shape(&precision)));
        }
        check_finite(&location, "M")?;
        spd_cholesky(&scale, "Q")?;
        spd_cholesky(&precision, "K")?;
        check_dof(d, dof)?;
        Ok(Self { scale, dof, location, precision })
    }

    /// Vector-valued case (`m = 1`) with scalar precision, the form taken by
    /// predictive densities.
    pub fn vector(scale: DMatrix<f64>, dof: f64, location: DVector<f64>, precision: f64) -> Result<Self> {
        let d = location.len();
        Self::new(
            scale,
            dof,
            DMatrix::from_column_slice(d, 1, location.as_slice()),
            DMatrix::from_element(1, 1, precision),
        )
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn location(&self) -> &DMatrix<f64> {
        &self.location
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }
}

fn shape(x: &DMatrix<f64>) -> String {
    format!("{}x{}", x.nrows(), x.ncols())
}

/// `ln 𝒩_A(M, V, K) = (d/2) ln|K| − (m/2) ln|2πV| − ½ tr((A−M)ᵀ V⁻¹ (A−M) K)`.
pub fn matrix_normal_logpdf(a: &DMatrix<f64>, p: &MatrixNormalParams) -> Result<f64> {
    let (d, m) = p.mean.shape();
    if a.shape() != (d, m) {
        return Err(Error::dims("matrix-normal argument", format!("{d}x{m}"), shape(a)));
    }
    let chol_v = spd_cholesky(&p.row_cov, "V")?;
    let chol_k = spd_cholesky(&p.precision, "K")?;
    let resid = a - &p.mean;
    let vinv_r = chol_v.solve(&resid);
    let r_k = &resid * &p.precision;
    let trace = vinv_r.component_mul(&r_k).sum();
    let (df, mf) = (d as f64, m as f64);
    Ok(0.5 * df * logdet_from_cholesky(&chol_k)
        - 0.5 * mf * (df * (2.0 * PI).ln() + logdet_from_cholesky(&chol_v))
        - 0.5 * trace)
}

/// `ln 𝒲𝒾_V(Q, n) = −ln Z_{n,d} − ((d+1)/2) ln|V| + (n/2) ln|V⁻¹Q/2| − ½ tr(V⁻¹Q)`.
pub fn inverse_wishart_logpdf(v: &DMatrix<f64>, p: &InverseWishartParams) -> Result<f64> {
    let d = p.dim();
    if v.shape() != (d, d) {
        return Err(Error::dims("inverse-Wishart argument", format!("{d}x{d}"), shape(v)));
    }
    let chol_v = spd_cholesky(v, "V")?;
    let logdet_q = logdet_from_cholesky(&spd_cholesky(&p.scale, "Q")?);
    let logdet_v = logdet_from_cholesky(&chol_v);
    let trace = chol_v.solve(&p.scale).trace();
    let (df, n) = (d as f64, p.dof);
    Ok(-log_multi_gamma(d, n)? - 0.5 * (df + 1.0) * logdet_v
        + 0.5 * n * (logdet_q - logdet_v - df * LN_2)
        - 0.5 * trace)
}

/// `ln 𝒯_Y(Q, n, M, K)`:
/// `(d/2) ln|K| − (dm/2) ln π + ln Z_{n+m,d} − ln Z_{n,d} + (n/2) ln|Q|
///  − ((m+n)/2) ln|Q + (Y−M) K (Y−M)ᵀ|`.
pub fn matrix_t_logpdf(y: &DMatrix<f64>, p: &MatrixTParams) -> Result<f64> {
    let (d, m) = p.location.shape();
    if y.shape() != (d, m) {
        return Err(Error::dims("matrix-t argument", format!("{d}x{m}"), shape(y)));
    }
    let resid = y - &p.location;
    let spread = &p.scale + &resid * &p.precision * resid.transpose();
    let logdet_spread = logdet_from_cholesky(&spd_cholesky(&spread, "Q + (Y-M)K(Y-M)'")?);
    let logdet_q = logdet_from_cholesky(&spd_cholesky(&p.scale, "Q")?);
    let logdet_k = logdet_from_cholesky(&spd_cholesky(&p.precision, "K")?);
    let (df, mf, n) = (d as f64, m as f64, p.dof);
    Ok(0.5 * df * logdet_k - 0.5 * df * mf * PI.ln() + log_multi_gamma(d, n + mf)?
        - log_multi_gamma(d, n)?
        + 0.5 * n * logdet_q
        - 0.5 * (mf + n) * logdet_spread)
}

fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Column-major fill order is part of the reproducibility contract.
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Draw `A ~ 𝒩(M, V, K)` as `M + L_V Z L_K⁻¹` where `V = L_V L_Vᵀ`, `K = L_K L_Kᵀ`.
pub fn sample_matrix_normal<R: Rng + ?Sized>(p: &MatrixNormalParams, rng: &mut R) -> DMatrix<f64> {
    let (d, m) = p.mean.shape();
    let l_v = spd_cholesky(&p.row_cov, "V").expect("validated").l();
    let l_k = spd_cholesky(&p.precision, "K").expect("validated").l();
    let z = standard_normal_matrix(d, m, rng);
    // rows of Z L_K⁻¹ have covariance K⁻¹
    let zt = l_k
        .transpose()
        .solve_upper_triangular(&z.transpose())
        .expect("triangular factor has positive diagonal");
    &p.mean + l_v * zt.transpose()
}

/// Lower-triangular Bartlett factor: `A_ii = sqrt(χ²_{n−i})` (0-based `i`),
/// standard normal below the diagonal.
fn bartlett_factor<R: Rng + ?Sized>(d: usize, n: f64, rng: &mut R) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(n - i as f64).expect("dof validated");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    a
}

/// Draw `S ~ 𝒲(Σ, n)` (mean `nΣ`) by the Bartlett construction.
pub fn sample_wishart<R: Rng + ?Sized>(scale: &DMatrix<f64>, dof: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let l = spd_cholesky(scale, "Σ")?.l();
    check_dof(scale.nrows(), dof)?;
    let la = l * bartlett_factor(scale.nrows(), dof, rng);
    Ok(&la * la.transpose())
}

/// Draw `V ~ 𝒲𝒾(Q, n)` as the inverse of `S ~ 𝒲(Q⁻¹, n)`.
///
/// With `Q = L Lᵀ` and Bartlett factor `B`, `S = L⁻ᵀ B Bᵀ L⁻¹`, hence
/// `V = (L B⁻ᵀ)(L B⁻ᵀ)ᵀ` without forming `Q⁻¹`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(p: &InverseWishartParams, rng: &mut R) -> DMatrix<f64> {
    let d = p.dim();
    let l = spd_cholesky(&p.scale, "Q").expect("validated").l();
    let b = bartlett_factor(d, p.dof, rng);
    let b_inv = b
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .expect("chi-square diagonal is positive");
    let c = l * b_inv.transpose();
    &c * c.transpose()
}

/// `f₂(d, n) = −Σ Ψ((n+1−i)/2) − d ln 2`, so that `E_{𝒲(Σ,n)} ln|S| = ln|Σ| − f₂`.
pub fn wishart_logdet_offset(d: usize, n: f64) -> f64 {
    -multi_digamma(d, n) - d as f64 * LN_2
}

/// `f₃(d, n)`: the `Q`-free part of the inverse-Wishart entropy.
///
/// Collected from `H(V) = ln Z_{n,d} − (n/2) ln|Q/2| + ((n+d+1)/2)(ln|Q| + f₂) + nd/2`:
/// `f₃ = ln Z_{n,d} + (nd/2) ln 2 + ((n+d+1)/2) f₂ + nd/2`.
pub fn inverse_wishart_entropy_offset(d: usize, n: f64) -> Result<f64> {
    let (df, n_) = (d as f64, n);
    Ok(log_multi_gamma(d, n)? + 0.5 * n_ * df * LN_2
        + 0.5 * (n_ + df + 1.0) * wishart_logdet_offset(d, n)
        + 0.5 * n_ * df)
}

/// `f₁(d, m, n) = (dm/2) ln(2πe) + (m/2) f₂(d, n) + f₃(d, n)`.
///
/// Follows from `H(A, V) = H(V) + E_V[H(A | V)]` with
/// `E ln|V| = ln|Q| + f₂`.
pub fn joint_entropy_offset(d: usize, m: usize, n: f64) -> Result<f64> {
    let (df, mf) = (d as f64, m as f64);
    Ok(0.5 * df * mf * (2.0 * PI * E).ln()
        + 0.5 * mf * wishart_logdet_offset(d, n)
        + inverse_wishart_entropy_offset(d, n)?)
}

/// `f₄(d, n) = −ln[Γ((n+1)/2) / (π^{d/2} Γ((n+1−d)/2))]
///  + ((n+1)/2)(Ψ((n+1)/2) − Ψ((n+1−d)/2))`.
pub fn predicted_entropy_offset(d: usize, n: f64) -> Result<f64> {
    let df = d as f64;
    let lo = (n + 1.0 - df) / 2.0;
    let hi = (n + 1.0) / 2.0;
    if !(lo > 0.0) {
        return Err(Error::Domain(format!("f4 needs n + 1 - d > 0 (d = {d}, n = {n})")));
    }
    Ok(-(ln_gamma(hi) - 0.5 * df * PI.ln() - ln_gamma(lo)) + hi * (digamma(hi) - digamma(lo)))
}

/// `H = (m/2) ln|V| − (d/2) ln|K| + (dm/2) ln(2πe)`.
pub fn entropy_matrix_normal(p: &MatrixNormalParams) -> EntropyValue {
    let (d, m) = p.mean.shape();
    let logdet_v = logdet_from_cholesky(&spd_cholesky(&p.row_cov, "V").expect("validated"));
    let logdet_k = logdet_from_cholesky(&spd_cholesky(&p.precision, "K").expect("validated"));
    let (df, mf) = (d as f64, m as f64);
    EntropyValue(0.5 * mf * logdet_v - 0.5 * df * logdet_k + 0.5 * df * mf * (2.0 * PI * E).ln())
}

/// `H = ((d+1)/2) ln|Q| + f₃(d, n)`.
pub fn entropy_inverse_wishart(p: &InverseWishartParams) -> EntropyValue {
    let d = p.dim();
    let logdet_q = logdet_from_cholesky(&spd_cholesky(&p.scale, "Q").expect("validated"));
    let f3 = inverse_wishart_entropy_offset(d, p.dof).expect("validated");
    EntropyValue(0.5 * (d as f64 + 1.0) * logdet_q + f3)
}

/// Entropy of `𝒩_A(M, V, K) 𝒲𝒾_V(Q, n)`:
/// `−(d/2) ln|K| + ((m+d+1)/2) ln|Q| + f₁(d, m, n)`.
pub fn entropy_joint_mniw(k: &DMatrix<f64>, q: &DMatrix<f64>, n: f64) -> Result<EntropyValue> {
    let (m, d) = (k.nrows(), q.nrows());
    let logdet_k = crate::linalg::logdet_spd(k, "K")?;
    let logdet_q = crate::linalg::logdet_spd(q, "Q")?;
    check_dof(d, n)?;
    let (df, mf) = (d as f64, m as f64);
    Ok(EntropyValue(
        -0.5 * df * logdet_k + 0.5 * (mf + df + 1.0) * logdet_q + joint_entropy_offset(d, m, n)?,
    ))
}

/// Entropy of the predicted product `Ax` in the closed form used by the noise
/// objective: `f₄(d, n) + (d/2) ln K̃⁻¹ + ln|Q|`.
///
/// The exact entropy of `𝒯(Q, n, μ, K̃)` carries `½ ln|Q|` instead of `ln|Q|`;
/// the two agree in their dependence on `K̃`, which is all the control law uses.
/// See [`entropy_vector_t`] for the exact value.
pub fn entropy_predicted_product(k_tilde: f64, q: &DMatrix<f64>, n: f64) -> Result<EntropyValue> {
    if !(k_tilde > 0.0) || !k_tilde.is_finite() {
        return Err(Error::InvalidParameter(format!("K~ must be positive (got {k_tilde})")));
    }
    let d = q.nrows();
    let logdet_q = crate::linalg::logdet_spd(q, "Q")?;
    Ok(EntropyValue(
        predicted_entropy_offset(d, n)? - 0.5 * d as f64 * k_tilde.ln() + logdet_q,
    ))
}

/// Exact entropy of the vector-valued `𝒯(Q, n, μ, K̃)`:
/// `f₄(d, n) + (d/2) ln K̃⁻¹ + ½ ln|Q|`.
pub fn entropy_vector_t(k_tilde: f64, q: &DMatrix<f64>, n: f64) -> Result<EntropyValue> {
    let product = entropy_predicted_product(k_tilde, q, n)?;
    let logdet_q = crate::linalg::logdet_spd(q, "Q")?;
    Ok(EntropyValue(product.0 - 0.5 * logdet_q))
}
