//! Ground-truth plant `r_{t+1} = g(Σ_i F_i r_{t−i} + Σ_j B_j u_{t+1−j} + e_{t+1})`
//! and the regressor layout shared by the estimator and the control laws.
//!
//! The regressor is `x_{t+1} = [r_{t−I}; …; r_t; u_{t−J+1}; …; u_t; u_{t+1}]` and
//! the stacked parameter matrix is `A = [F_I, …, F_0, B_J, …, B_0]`, so that
//! `g⁻¹(r_{t+1}) = A x_{t+1} + e_{t+1}`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_finite, spd_cholesky};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinkFn {
    #[default]
    Identity,
    Tanh,
}

impl LinkFn {
    pub fn forward(self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            LinkFn::Identity => z.clone(),
            LinkFn::Tanh => z.map(f64::tanh),
        }
    }

    /// Componentwise inverse. Values outside the range of the link are an
    /// error, never clamped.
    pub fn inverse(self, r: &DVector<f64>) -> Result<DVector<f64>> {
        if let Some((i, v)) = r.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Domain(format!("activity component {i} is not finite ({v})")));
        }
        match self {
            LinkFn::Identity => Ok(r.clone()),
            LinkFn::Tanh => {
                if let Some((i, v)) = r.iter().enumerate().find(|(_, v)| v.abs() >= 1.0) {
                    return Err(Error::Domain(format!(
                        "tanh inverse undefined for component {i} = {v} (need |r| < 1)"
                    )));
                }
                Ok(r.map(f64::atanh))
            }
        }
    }
}

/// Ground-truth plant parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// `F_0, …, F_I`, indexed by delay.
    f: Vec<DMatrix<f64>>,
    /// `B_0, …, B_J`, indexed by delay.
    b: Vec<DMatrix<f64>>,
    noise_cov: DMatrix<f64>,
    link: LinkFn,
}

impl ModelSpec {
    pub fn new(
        f: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        noise_cov: DMatrix<f64>,
        link: LinkFn,
    ) -> Result<Self> {
        if f.is_empty() || b.is_empty() {
            return Err(Error::InvalidParameter(
                "model needs at least one F and one B matrix".into(),
            ));
        }
        let d = f[0].nrows();
        let c = b[0].ncols();
        if d == 0 || c == 0 {
            return Err(Error::InvalidParameter("model dimensions must be positive".into()));
        }
        for fi in &f {
            if fi.shape() != (d, d) {
                return Err(Error::dims("F matrix", format!("{d}x{d}"), format!("{}x{}", fi.nrows(), fi.ncols())));
            }
        }
        for bj in &b {
            if bj.shape() != (d, c) {
                return Err(Error::dims("B matrix", format!("{d}x{c}"), format!("{}x{}", bj.nrows(), bj.ncols())));
            }
        }
        if noise_cov.shape() != (d, d) {
            return Err(Error::dims(
                "noise covariance",
                format!("{d}x{d}"),
                format!("{}x{}", noise_cov.nrows(), noise_cov.ncols()),
            ));
        }
        if !f.iter().chain(b.iter()).all(is_finite) {
            return Err(Error::InvalidParameter("model matrices must be finite".into()));
        }
        spd_cholesky(&noise_cov, "V_true")?;
        Ok(Self { f, b, noise_cov, link })
    }

    /// Random plant with the linear part scaled to the requested spectral radius.
    pub fn generate<R: Rng + ?Sized>(g: &GeneratorParams, rng: &mut R) -> Result<Self> {
        let GeneratorParams { d, c, ar_order, input_order, spectral_radius, noise_scale, link } = *g;
        if d == 0 || c == 0 {
            return Err(Error::InvalidParameter("model dimensions must be positive".into()));
        }
        if !(noise_scale > 0.0) || !(spectral_radius >= 0.0) {
            return Err(Error::InvalidParameter(
                "noise_scale must be positive and spectral_radius non-negative".into(),
            ));
        }
        let mut normal = |rows, cols, sd: f64| {
            DMatrix::from_fn(rows, cols, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
        };
        let mut f: Vec<_> = (0..=ar_order).map(|_| normal(d, d, 1.0 / (d as f64).sqrt())).collect();
        let b: Vec<_> = (0..=input_order).map(|_| normal(d, c, 1.0)).collect();
        let w = normal(d, d, 1.0);
        let noise_cov =
            ((&w * w.transpose()) / d as f64 + DMatrix::identity(d, d)) * (0.5 * noise_scale * noise_scale);

        // Scaling F_i by s^{i+1} scales every companion eigenvalue by s.
        let rho = companion_spectral_radius(&f);
        if rho > spectral_radius && rho > 0.0 {
            let s = spectral_radius / rho;
            for (i, fi) in f.iter_mut().enumerate() {
                *fi *= s.powi(i as i32 + 1);
            }
        }
        Self::new(f, b, noise_cov, link)
    }

    pub fn f(&self) -> &[DMatrix<f64>] {
        &self.f
    }

    pub fn b(&self) -> &[DMatrix<f64>] {
        &self.b
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn link(&self) -> LinkFn {
        self.link
    }

    /// Number of units `d`.
    pub fn d(&self) -> usize {
        self.f[0].nrows()
    }

    /// Control dimension `c`.
    pub fn c(&self) -> usize {
        self.b[0].ncols()
    }

    /// Largest activity delay `I`.
    pub fn ar_order(&self) -> usize {
        self.f.len() - 1
    }

    /// Largest control delay `J`.
    pub fn input_order(&self) -> usize {
        self.b.len() - 1
    }

    /// `m = d(I+1) + c(J+1)`.
    pub fn regressor_dim(&self) -> usize {
        self.d() * self.f.len() + self.c() * self.b.len()
    }

    /// Steps run with zero control before metrics are recorded: `max(I, J) + 1`.
    pub fn warmup_steps(&self) -> usize {
        self.ar_order().max(self.input_order()) + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub d: usize,
    pub c: usize,
    #[serde(rename = "i")]
    pub ar_order: usize,
    #[serde(rename = "j")]
    pub input_order: usize,
    #[serde(default = "default_spectral_radius")]
    pub spectral_radius: f64,
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    #[serde(default)]
    pub link: LinkFn,
}

fn default_spectral_radius() -> f64 {
    0.9
}

fn default_noise_scale() -> f64 {
    0.03
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            d: 3,
            c: 2,
            ar_order: 1,
            input_order: 0,
            spectral_radius: default_spectral_radius(),
            noise_scale: default_noise_scale(),
            link: LinkFn::Identity,
        }
    }
}

/// Spectral radius of the block companion matrix of `r ↦ Σ F_i r_{t−i}`.
pub fn companion_spectral_radius(f: &[DMatrix<f64>]) -> f64 {
    let d = f[0].nrows();
    let n = d * f.len();
    let mut comp = DMatrix::zeros(n, n);
    for (i, fi) in f.iter().enumerate() {
        comp.view_mut((0, i * d), (d, d)).copy_from(fi);
    }
    for k in d..n {
        comp[(k, k - d)] = 1.0;
    }
    comp.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Delayed activities and controls needed to evaluate the next step.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    /// `r_{t−I}, …, r_t`, oldest first.
    r: VecDeque<DVector<f64>>,
    /// `u_{t−J+1}, …, u_t`, oldest first.
    u: VecDeque<DVector<f64>>,
    c: usize,
    t: usize,
}

impl History {
    /// Zero-initialized buffers.
    pub fn new(spec: &ModelSpec) -> Self {
        Self::zeros(spec.d(), spec.c(), spec.ar_order(), spec.input_order())
    }

    pub fn zeros(d: usize, c: usize, ar_order: usize, input_order: usize) -> Self {
        Self {
            r: (0..=ar_order).map(|_| DVector::zeros(d)).collect(),
            u: (0..input_order).map(|_| DVector::zeros(c)).collect(),
            c,
            t: 0,
        }
    }

    /// Buffers given explicitly, oldest first.
    pub fn from_buffers(r: Vec<DVector<f64>>, u: Vec<DVector<f64>>, c: usize) -> Result<Self> {
        let d = r.first().map(|v| v.len()).ok_or_else(|| {
            Error::InvalidParameter("history needs at least one activity vector".into())
        })?;
        if r.iter().any(|v| v.len() != d) {
            return Err(Error::dims("activity history", d, "ragged vectors"));
        }
        if u.iter().any(|v| v.len() != c) {
            return Err(Error::dims("control history", c, "ragged vectors"));
        }
        Ok(Self { r: r.into(), u: u.into(), c, t: 0 })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Control dimension `c`.
    pub fn control_dim(&self) -> usize {
        self.c
    }

    /// Regressor length `m` implied by the buffers.
    pub fn regressor_dim(&self) -> usize {
        self.d() * self.r.len() + self.c * (self.u.len() + 1)
    }

    /// Most recent activity `r_t`.
    pub fn latest(&self) -> &DVector<f64> {
        self.r.back().expect("history holds I + 1 activity vectors")
    }

    pub fn activities(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.r.iter()
    }

    pub fn controls(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.u.iter()
    }

    fn d(&self) -> usize {
        self.latest().len()
    }

    /// Shift in `r_{t+1}` and `u_{t+1}`.
    pub fn push(&mut self, r_next: DVector<f64>, u_next: DVector<f64>) {
        self.r.pop_front();
        self.r.push_back(r_next);
        if !self.u.is_empty() {
            self.u.pop_front();
            self.u.push_back(u_next);
        }
        self.t += 1;
    }
}

/// Stacked regressor `x ∈ ℝᵐ`; the next control occupies the last `c` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor(DVector<f64>);

impl Regressor {
    pub fn from_vector(x: DVector<f64>) -> Self {
        Self(x)
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `[r_{t−I}; …; r_t; u_{t−J+1}; …; u_t; u_next]`.
pub fn build_regressor(h: &History, u_next: &DVector<f64>) -> Result<Regressor> {
    let c = h.c;
    if u_next.len() != c {
        return Err(Error::dims("next control", c, u_next.len()));
    }
    let d = h.d();
    let m = d * h.r.len() + c * (h.u.len() + 1);
    let mut x = DVector::zeros(m);
    let mut offset = 0;
    for v in h.r.iter().chain(h.u.iter()).chain(std::iter::once(u_next)) {
        x.rows_mut(offset, v.len()).copy_from(v);
        offset += v.len();
    }
    Ok(Regressor(x))
}

/// `A = [F_I, …, F_0, B_J, …, B_0]`, aligned with [`build_regressor`].
pub fn stack_parameters(spec: &ModelSpec) -> DMatrix<f64> {
    let (d, m) = (spec.d(), spec.regressor_dim());
    let mut a = DMatrix::zeros(d, m);
    let mut col = 0;
    for block in spec.f.iter().rev().chain(spec.b.iter().rev()) {
        a.view_mut((0, col), block.shape()).copy_from(block);
        col += block.ncols();
    }
    a
}

fn check_history(spec: &ModelSpec, h: &History, u_next: &DVector<f64>) -> Result<()> {
    if h.r.len() != spec.f.len() || h.u.len() != spec.input_order() || h.c != spec.c() {
        return Err(Error::dims(
            "history buffers",
            format!("{} activities, {} controls", spec.f.len(), spec.input_order()),
            format!("{} activities, {} controls", h.r.len(), h.u.len()),
        ));
    }
    if h.d() != spec.d() {
        return Err(Error::dims("activity vector", spec.d(), h.d()));
    }
    if u_next.len() != spec.c() {
        return Err(Error::dims("next control", spec.c(), u_next.len()));
    }
    Ok(())
}

/// One plant step with an explicit noise sample.
pub fn step_with_noise(
    spec: &ModelSpec,
    h: &History,
    u_next: &DVector<f64>,
    noise: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_history(spec, h, u_next)?;
    if noise.len() != spec.d() {
        return Err(Error::dims("noise vector", spec.d(), noise.len()));
    }
    let big_i = spec.ar_order();
    let big_j = spec.input_order();
    let mut drive = noise.clone();
    for (i, fi) in spec.f.iter().enumerate() {
        drive += fi * &h.r[big_i - i];
    }
    drive += &spec.b[0] * u_next;
    for j in 1..=big_j {
        drive += &spec.b[j] * &h.u[big_j - j];
    }
    Ok(spec.link.forward(&drive))
}

/// One plant step; returns the next activity and the injected noise `e ~ 𝒩(0, V_true)`.
pub fn step<R: Rng + ?Sized>(
    spec: &ModelSpec,
    h: &History,
    u_next: &DVector<f64>,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let l = spd_cholesky(&spec.noise_cov, "V_true")?.l();
    let z = DVector::from_fn(spec.d(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let e = l * z;
    let r = step_with_noise(spec, h, u_next, &e)?;
    Ok((r, e))
}

/// `y = g⁻¹(r)`.
pub fn linearize_observation(spec: &ModelSpec, r_next: &DVector<f64>) -> Result<DVector<f64>> {
    if r_next.len() != spec.d() {
        return Err(Error::dims("activity vector", spec.d(), r_next.len()));
    }
    spec.link.inverse(r_next)
}
