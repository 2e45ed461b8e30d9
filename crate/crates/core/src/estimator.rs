//! Exact recursive posterior over `(A, V)`.
//!
//! The belief is `A | V ~ 𝒩(M, V, K)`, `V ~ 𝒲𝒾(Q, n)`. One observation
//! `(x, y)` updates it as
//!
//! ```text
//! γ  = 1 − xᵀ(xxᵀ + K)⁻¹x = 1 / (1 + xᵀPx)
//! M' = (MK + yxᵀ)(xxᵀ + K)⁻¹ = M + γ (y − Mx)(Px)ᵀ
//! K' = K + xxᵀ
//! P' = P − Pxxᵀ P γ                       (Sherman-Morrison, P = K⁻¹)
//! Q' = Q + γ (y − Mx)(y − Mx)ᵀ
//! n' = n + 1
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{entropy_joint_mniw, matrix_t_logpdf, MatrixTParams};
use crate::dynamics::Regressor;
use crate::error::{Error, Result};
use crate::linalg::{check_spd, is_finite, logdet_spd, max_abs, spd_inverse, symmetrize};

/// Updates between unconditional recomputations of `P = K⁻¹`.
pub const DEFAULT_REFRESH_INTERVAL: usize = 500;
/// Largest tolerated `‖PK − I‖_max` before `P` is recomputed.
pub const DRIFT_TOLERANCE: f64 = 1e-6;

/// Which posterior mean denoises an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTiming {
    /// `ê_{t+1} = y_{t+1} − M_t x_{t+1}`.
    #[default]
    PreUpdate,
    /// `ê_{t+1} = y_{t+1} − M_{t+1} x_{t+1}`.
    PostUpdate,
}

/// Prior hyperparameters `M0 = 0, K0 = κI, Q0 = q·I, n0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_q_scale")]
    pub q_scale: f64,
    /// Defaults to `d + 2`.
    #[serde(default)]
    pub n0: Option<f64>,
}

fn default_kappa() -> f64 {
    1e-2
}

fn default_q_scale() -> f64 {
    1.0
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { kappa: default_kappa(), q_scale: default_q_scale(), n0: None }
    }
}

impl PriorSpec {
    pub fn build(&self, d: usize, m: usize) -> Result<PosteriorState> {
        PosteriorState::init(
            DMatrix::zeros(d, m),
            DMatrix::identity(m, m) * self.kappa,
            DMatrix::identity(d, d) * self.q_scale,
            self.n0.unwrap_or(d as f64 + 2.0),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    mean: DMatrix<f64>,
    precision: DMatrix<f64>,
    /// Cached `K⁻¹`.
    covariance: DMatrix<f64>,
    scatter: DMatrix<f64>,
    dof: f64,
    updates: usize,
    since_refresh: usize,
    refresh_interval: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateDiagnostics {
    pub gamma: f64,
    /// Predictive log density of the observation under the pre-update belief.
    pub predictive_logpdf: f64,
    pub entropy_after: f64,
}

impl PosteriorState {
    pub fn init(m0: DMatrix<f64>, k0: DMatrix<f64>, q0: DMatrix<f64>, n0: f64) -> Result<Self> {
        let (d, m) = m0.shape();
        if d == 0 || m == 0 {
            return Err(Error::InvalidParameter("posterior dimensions must be positive".into()));
        }
        if k0.shape() != (m, m) {
            return Err(Error::dims("prior precision K0", format!("{m}x{m}"), format!("{}x{}", k0.nrows(), k0.ncols())));
        }
        if q0.shape() != (d, d) {
            return Err(Error::dims("prior scatter Q0", format!("{d}x{d}"), format!("{}x{}", q0.nrows(), q0.ncols())));
        }
        if !is_finite(&m0) {
            return Err(Error::InvalidParameter("prior mean M0 must be finite".into()));
        }
        if !(n0.is_finite() && n0 > d as f64 - 1.0) {
            return Err(Error::InvalidParameter(format!("prior degrees n0 = {n0} must exceed d - 1")));
        }
        let precision = symmetrize(&k0);
        let scatter = symmetrize(&q0);
        check_spd(&scatter, "Q0")?;
        let covariance = spd_inverse(&precision, "K0")?;
        Ok(Self {
            mean: m0,
            precision,
            covariance,
            scatter,
            dof: n0,
            updates: 0,
            since_refresh: 0,
            refresh_interval: DEFAULT_REFRESH_INTERVAL,
        })
    }

    pub fn with_refresh_interval(mut self, interval: usize) -> Self {
        self.refresh_interval = interval.max(1);
        self
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Cached `P = K⁻¹`.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn scatter(&self) -> &DMatrix<f64> {
        &self.scatter
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    /// Number of observations absorbed since `init`.
    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn d(&self) -> usize {
        self.mean.nrows()
    }

    pub fn m(&self) -> usize {
        self.mean.ncols()
    }

    pub fn logdet_precision(&self) -> Result<f64> {
        logdet_spd(&self.precision, "K")
    }

    pub fn logdet_scatter(&self) -> Result<f64> {
        logdet_spd(&self.scatter, "Q")
    }

    /// `‖PK − I‖_max`.
    pub fn inverse_drift(&self) -> f64 {
        let mut pk = &self.covariance * &self.precision;
        for i in 0..pk.nrows() {
            pk[(i, i)] -= 1.0;
        }
        max_abs(&pk)
    }

    fn check_pair(&self, x: &Regressor, y: &DVector<f64>) -> Result<()> {
        if x.len() != self.m() {
            return Err(Error::dims("regressor", self.m(), x.len()));
        }
        if y.len() != self.d() {
            return Err(Error::dims("observation", self.d(), y.len()));
        }
        if !x.as_vector().iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite regressor or observation".into()));
        }
        Ok(())
    }

    /// `γ = 1/(1 + xᵀPx)`.
    pub fn gamma(&self, x: &Regressor) -> Result<f64> {
        if x.len() != self.m() {
            return Err(Error::dims("regressor", self.m(), x.len()));
        }
        let x = x.as_vector();
        let q = x.dot(&(&self.covariance * x));
        let gamma = 1.0 / (1.0 + q);
        if gamma > 0.0 && gamma <= 1.0 {
            Ok(gamma)
        } else {
            Err(Error::Numerical(format!("gamma = {gamma} outside (0, 1] (xᵀPx = {q})")))
        }
    }

    /// Absorb one observation. On error `self` is untouched.
    pub fn update(&self, x: &Regressor, y: &DVector<f64>) -> Result<(PosteriorState, UpdateDiagnostics)> {
        self.check_pair(x, y)?;
        let predictive_logpdf = self.predictive_logpdf(x, y)?;
        let xv = x.as_vector();
        let px = &self.covariance * xv;
        let gamma = 1.0 / (1.0 + xv.dot(&px));
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Numerical(format!("gamma = {gamma} outside (0, 1]")));
        }
        let resid = y - &self.mean * xv;

        let mean = &self.mean + (&resid * px.transpose()) * gamma;
        let precision = &self.precision + xv * xv.transpose();
        let scatter = &self.scatter + (&resid * resid.transpose()) * gamma;
        let covariance = symmetrize(&(&self.covariance - (&px * px.transpose()) * gamma));

        let mut next = PosteriorState {
            mean,
            precision,
            covariance,
            scatter,
            dof: self.dof + 1.0,
            updates: self.updates + 1,
            since_refresh: self.since_refresh + 1,
            refresh_interval: self.refresh_interval,
        };
        if !is_finite(&next.mean) || !is_finite(&next.covariance) {
            return Err(Error::Numerical("posterior update produced non-finite values".into()));
        }
        if next.since_refresh >= next.refresh_interval || next.inverse_drift() >= DRIFT_TOLERANCE {
            next.refresh_covariance()?;
        }
        check_spd(&next.scatter, "Q")?;
        let entropy_after = next.posterior_entropy()?;
        Ok((next, UpdateDiagnostics { gamma, predictive_logpdf, entropy_after }))
    }

    /// Recompute `P` from `K` by a direct symmetric solve.
    pub fn refresh_covariance(&mut self) -> Result<()> {
        self.covariance = spd_inverse(&self.precision, "K")?;
        self.since_refresh = 0;
        Ok(())
    }

    /// `log 𝒯_y(Q, n, Mx, γ)`.
    pub fn predictive_logpdf(&self, x: &Regressor, y: &DVector<f64>) -> Result<f64> {
        self.check_pair(x, y)?;
        let gamma = self.gamma(x)?;
        let location = &self.mean * x.as_vector();
        let p = MatrixTParams::vector(self.scatter.clone(), self.dof, location, gamma)?;
        matrix_t_logpdf(&DMatrix::from_column_slice(y.len(), 1, y.as_slice()), &p)
    }

    /// `−(d/2) ln|K| + ((m+d+1)/2) ln|Q| + f₁(d, m, n)`.
    pub fn posterior_entropy(&self) -> Result<f64> {
        Ok(entropy_joint_mniw(&self.precision, &self.scatter, self.dof)?.value())
    }

    /// `ê = y − M x` with the current (pre-update) mean.
    pub fn estimate_noise(&self, x: &Regressor, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.estimate_noise_with(x, y, NoiseTiming::PreUpdate)
    }

    pub fn estimate_noise_with(&self, x: &Regressor, y: &DVector<f64>, timing: NoiseTiming) -> Result<DVector<f64>> {
        self.check_pair(x, y)?;
        match timing {
            NoiseTiming::PreUpdate => Ok(y - &self.mean * x.as_vector()),
            NoiseTiming::PostUpdate => {
                let (next, _) = self.update(x, y)?;
                Ok(y - next.mean * x.as_vector())
            }
        }
    }

    /// Posterior mean of `V`: `Q / (n − d − 1)`.
    pub fn noise_covariance_estimate(&self) -> Result<DMatrix<f64>> {
        let denom = self.dof - self.d() as f64 - 1.0;
        if denom > 0.0 {
            Ok(&self.scatter / denom)
        } else {
            Err(Error::Domain(format!(
                "inverse-Wishart mean needs n > d + 1 (n = {}, d = {})",
                self.dof,
                self.d()
            )))
        }
    }

    pub fn to_snapshot(&self) -> Snapshot {
        Snapshot {
            d: self.d(),
            m: self.m(),
            mean: MatrixJson::from(&self.mean),
            precision: MatrixJson::from(&self.precision),
            scatter: MatrixJson::from(&self.scatter),
            dof: self.dof,
            updates: self.updates,
        }
    }

    pub fn from_snapshot(s: &Snapshot) -> Result<Self> {
        let mean = s.mean.to_matrix("mean")?;
        let precision = s.precision.to_matrix("precision")?;
        let scatter = s.scatter.to_matrix("scatter")?;
        if mean.shape() != (s.d, s.m) {
            return Err(Error::dims("snapshot mean", format!("{}x{}", s.d, s.m), format!("{}x{}", mean.nrows(), mean.ncols())));
        }
        let mut state = Self::init(mean, precision, scatter, s.dof)?;
        state.updates = s.updates;
        Ok(state)
    }

    pub fn to_snapshot_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_snapshot()).expect("snapshot serializes")
    }

    pub fn from_snapshot_json(text: &str) -> Result<Self> {
        let snap: Snapshot = serde_json::from_str(text).map_err(|e| Error::Config {
            path: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        Self::from_snapshot(&snap)
    }
}

/// Fold a sequence of observations into a posterior.
pub fn batch_posterior(prior: &PosteriorState, xs: &[Regressor], ys: &[DVector<f64>]) -> Result<PosteriorState> {
    if xs.len() != ys.len() {
        return Err(Error::dims("observation sequence", xs.len(), ys.len()));
    }
    xs.iter()
        .zip(ys)
        .try_fold(prior.clone(), |s, (x, y)| s.update(x, y).map(|(next, _)| next))
}

/// Dense matrix stored row-major with explicit dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl MatrixJson {
    pub fn to_matrix(&self, name: &'static str) -> Result<DMatrix<f64>> {
        let expected = self.rows.checked_mul(self.cols);
        if expected != Some(self.data.len()) {
            return Err(Error::dims(
                name,
                format!("{} x {} entries", self.rows, self.cols),
                self.data.len(),
            ));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Checkpoint document for a [`PosteriorState`]. `P` is rebuilt from `K` on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub d: usize,
    pub m: usize,
    pub mean: MatrixJson,
    pub precision: MatrixJson,
    pub scatter: MatrixJson,
    pub dof: f64,
    pub updates: usize,
}
