//! Stimulus selection.
//!
//! Both D-optimal laws act on the same quadratic `f(u) = x(u)ᵀ P x(u)` with
//! `P = K_t⁻¹` and `x(u) = [z; u]`, where `z` holds every regressor entry except
//! the next control. Parameter identification maximizes `f` over the domain;
//! noise identification minimizes it. Writing `P` in blocks conformal with
//! `[z; u]`,
//!
//! ```text
//! f(u) = zᵀP_zz z + 2 uᵀ P_uz z + uᵀ P_uu u
//! ```
//!
//! so the unconstrained minimizer is `u* = −P_uu⁻¹ P_uz z = K_uz K_zz⁻¹ z` with
//! value `zᵀ K_zz⁻¹ z`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{build_regressor, History, Regressor};
use crate::error::{Error, Result};
use crate::estimator::PosteriorState;
use crate::linalg::{lex_less, spd_cholesky, symmetrize};

/// Box maximization enumerates all `2^c` vertices up to this dimension.
pub const MAX_ENUMERATED_DIM: usize = 16;
const ASCENT_STARTS: usize = 8;
const ASCENT_SEED: u64 = 0x00C0_FFEE;
const DESCENT_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    /// `‖u‖_∞ ≤ bound`.
    #[default]
    Box,
    /// `‖u‖_2 ≤ bound`.
    Ball,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Lexicographically smallest optimal control.
    #[default]
    LexMin,
}

/// Admissible controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlDomain {
    #[serde(default)]
    pub kind: DomainKind,
    #[serde(default = "default_bound")]
    pub bound: f64,
    #[serde(default)]
    pub tie_break: TieBreak,
}

fn default_bound() -> f64 {
    1.0
}

impl Default for ControlDomain {
    fn default() -> Self {
        Self { kind: DomainKind::Box, bound: default_bound(), tie_break: TieBreak::LexMin }
    }
}

impl ControlDomain {
    pub fn boxed(bound: f64) -> Self {
        Self { kind: DomainKind::Box, bound, ..Default::default() }
    }

    pub fn ball(bound: f64) -> Self {
        Self { kind: DomainKind::Ball, bound, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bound.is_finite() && self.bound > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("control bound must be positive (got {})", self.bound)))
        }
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        match self.kind {
            DomainKind::Box => u.amax() <= self.bound + tol,
            DomainKind::Ball => u.norm() <= self.bound + tol,
        }
    }

    /// Euclidean projection onto the domain.
    pub fn project(&self, u: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            DomainKind::Box => u.map(|v| v.clamp(-self.bound, self.bound)),
            DomainKind::Ball => {
                let norm = u.norm();
                if norm > self.bound {
                    u * (self.bound / norm)
                } else {
                    u.clone()
                }
            }
        }
    }

    /// Uniform draw over the domain.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, c: usize, rng: &mut R) -> DVector<f64> {
        match self.kind {
            DomainKind::Box => DVector::from_fn(c, |_, _| rng.gen_range(-self.bound..=self.bound)),
            DomainKind::Ball => {
                let dir = DVector::from_fn(c, |_, _| rng.sample::<f64, _>(StandardNormal));
                let norm = dir.norm();
                let radius = self.bound * rng.gen::<f64>().powf(1.0 / c as f64);
                if norm > 0.0 {
                    dir * (radius / norm)
                } else {
                    DVector::zeros(c)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Infomax,
    NoiseOptimal,
    TauInfomax,
    TauZero,
    Random,
    Zero,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Infomax,
        StrategyKind::NoiseOptimal,
        StrategyKind::TauInfomax,
        StrategyKind::TauZero,
        StrategyKind::Random,
        StrategyKind::Zero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Infomax => "infomax",
            StrategyKind::NoiseOptimal => "noise_optimal",
            StrategyKind::TauInfomax => "tau_infomax",
            StrategyKind::TauZero => "tau_zero",
            StrategyKind::Random => "random",
            StrategyKind::Zero => "zero",
        }
    }
}

/// Minimizer used by the noise-optimal law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    /// Exact constrained minimizer of `x(u)ᵀ P x(u)`.
    #[default]
    Exact,
    /// `K_uu⁻¹ K_uz z`, projected onto the domain. Kept for comparison only.
    BlockFormula,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    /// Switching step for the `tau_*` strategies.
    #[serde(default)]
    pub tau: Option<usize>,
    #[serde(default)]
    pub domain: ControlDomain,
    /// Seed of the `random` strategy's generator.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise_law: NoiseLaw,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind) -> Self {
        Self { kind, tau: None, domain: ControlDomain::default(), seed: 0, noise_law: NoiseLaw::Exact }
    }

    pub fn with_tau(mut self, tau: usize) -> Self {
        self.tau = Some(tau);
        self
    }

    pub fn with_domain(mut self, domain: ControlDomain) -> Self {
        self.domain = domain;
        self
    }

    /// Stable label, e.g. `tau_infomax(500)`.
    pub fn label(&self) -> String {
        match (self.kind, self.tau) {
            (StrategyKind::TauInfomax | StrategyKind::TauZero, Some(tau)) => {
                format!("{}({tau})", self.kind.name())
            }
            (kind, _) => kind.name().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if matches!(self.kind, StrategyKind::TauInfomax | StrategyKind::TauZero) && self.tau.is_none() {
            return Err(Error::InvalidParameter(format!("strategy `{}` needs `tau`", self.kind.name())));
        }
        Ok(())
    }
}

/// `f(u) = constant + 2 gᵀu + uᵀ H u` for a fixed history.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlQuadratic {
    /// `P_uu`.
    pub hessian: DMatrix<f64>,
    /// `P_uz z`.
    pub linear: DVector<f64>,
    /// `zᵀ P_zz z`.
    pub constant: f64,
    /// The fixed part `z` of the regressor.
    pub fixed: DVector<f64>,
}

impl ControlQuadratic {
    pub fn new(s: &PosteriorState, h: &History) -> Result<Self> {
        let c = h.control_dim();
        let m = s.m();
        if h.regressor_dim() != m {
            return Err(Error::dims("history regressor", m, h.regressor_dim()));
        }
        let x0 = build_regressor(h, &DVector::zeros(c))?;
        let k = m - c;
        let z = x0.as_vector().rows(0, k).into_owned();
        let p = s.covariance();
        let hessian = symmetrize(&p.view((k, k), (c, c)).into_owned());
        let linear = p.view((k, 0), (c, k)) * &z;
        let constant = z.dot(&(p.view((0, 0), (k, k)) * &z));
        Ok(Self { hessian, linear, constant, fixed: z })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn value(&self, u: &DVector<f64>) -> f64 {
        self.constant + 2.0 * self.linear.dot(u) + u.dot(&(&self.hessian * u))
    }

    /// Unconstrained minimizer `−H⁻¹ g`.
    pub fn unconstrained_minimizer(&self) -> Result<DVector<f64>> {
        let chol = spd_cholesky(&self.hessian, "P_uu")
            .map_err(|_| Error::Numerical("control block of K⁻¹ is singular".into()))?;
        Ok(-chol.solve(&self.linear))
    }

    /// Maximizer over the domain, ties broken lexicographically.
    pub fn maximize(&self, dom: &ControlDomain) -> Result<DVector<f64>> {
        dom.validate()?;
        match dom.kind {
            DomainKind::Box if self.dim() <= MAX_ENUMERATED_DIM => Ok(self.max_box_vertices(dom.bound)),
            DomainKind::Box => Ok(self.max_box_ascent(dom.bound)),
            DomainKind::Ball => Ok(self.max_ball(dom.bound)),
        }
    }

    /// Minimizer over the domain.
    pub fn minimize(&self, dom: &ControlDomain) -> Result<DVector<f64>> {
        dom.validate()?;
        let free = self.unconstrained_minimizer()?;
        if dom.contains(&free, 0.0) {
            return Ok(free);
        }
        Ok(match dom.kind {
            DomainKind::Box => self.min_box(dom.bound, dom.project(&free)),
            DomainKind::Ball => self.min_ball(dom.bound),
        })
    }

    fn tie_tol(best: f64) -> f64 {
        1e-12 * best.abs().max(1.0)
    }

    fn max_box_vertices(&self, bound: f64) -> DVector<f64> {
        let c = self.dim();
        let vertex = |idx: usize| {
            DVector::from_fn(c, |k, _| if (idx >> (c - 1 - k)) & 1 == 1 { bound } else { -bound })
        };
        // Index order equals lexicographic order of the vertices, so the first
        // maximum found is the lexicographically smallest.
        let mut best = vertex(0);
        let mut best_val = self.value(&best);
        for idx in 1..(1usize << c) {
            let u = vertex(idx);
            let v = self.value(&u);
            if v > best_val + Self::tie_tol(best_val) {
                best = u;
                best_val = v;
            }
        }
        best
    }

    fn max_box_ascent(&self, bound: f64) -> DVector<f64> {
        let c = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(ASCENT_SEED);
        let mut best: Option<(DVector<f64>, f64)> = None;
        for start in 0..ASCENT_STARTS {
            let mut u = if start == 0 {
                DVector::from_element(c, -bound)
            } else {
                DVector::from_fn(c, |_, _| if rng.gen::<bool>() { bound } else { -bound })
            };
            self.ascend_vertices(&mut u);
            let v = self.value(&u);
            let better = match &best {
                None => true,
                Some((bu, bv)) => {
                    v > bv + Self::tie_tol(*bv) || ((v - bv).abs() <= Self::tie_tol(*bv) && lex_less(&u, bu))
                }
            };
            if better {
                best = Some((u, v));
            }
        }
        best.expect("at least one start").0
    }

    /// Single-coordinate sign flips until none improves. Each coordinate is
    /// convex, so its maximum over `[−b, b]` sits at an endpoint.
    fn ascend_vertices(&self, u: &mut DVector<f64>) {
        let c = self.dim();
        let h = &self.hessian;
        loop {
            let mut improved = false;
            for i in 0..c {
                let a = u[i];
                let cross: f64 = (0..c).filter(|&j| j != i).map(|j| h[(i, j)] * u[j]).sum();
                // f(flipped) − f(u)
                let delta = -4.0 * a * (self.linear[i] + cross);
                if delta > Self::tie_tol(self.value(u)) {
                    u[i] = -a;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
    }

    fn max_ball(&self, bound: f64) -> DVector<f64> {
        let c = self.dim();
        let eig = SymmetricEigen::new(self.hessian.clone());
        let h_max = eig.eigenvalues.max();
        let g = eig.eigenvectors.transpose() * &self.linear;
        let scale = h_max.abs().max(1.0);
        let top: Vec<usize> = (0..c).filter(|&i| eig.eigenvalues[i] >= h_max - 1e-12 * scale).collect();
        let g_top = top.iter().map(|&i| g[i] * g[i]).sum::<f64>().sqrt();
        let norm_at = |lambda: f64| {
            (0..c)
                .map(|i| {
                    let den = lambda - eig.eigenvalues[i];
                    (g[i] / den).powi(2)
                })
                .sum::<f64>()
                .sqrt()
        };
        let in_basis = |lambda: f64| DVector::from_fn(c, |i, _| g[i] / (lambda - eig.eigenvalues[i]));

        if g_top > 1e-12 * self.linear.norm() {
            // Secular equation ‖(λI − H)⁻¹ g‖ = b on λ > h_max.
            let mut lo = h_max;
            let mut hi = h_max + self.linear.norm() / bound + 1e-300;
            while norm_at(hi) > bound {
                hi = h_max + 2.0 * (hi - h_max);
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if norm_at(mid) > bound {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let u = &eig.eigenvectors * in_basis(hi);
            let len = u.norm();
            return u * (bound / len);
        }

        // Hard case: g has no component along the top eigenspace.
        let rest = DVector::from_fn(c, |i, _| {
            if top.contains(&i) {
                0.0
            } else {
                g[i] / (h_max - eig.eigenvalues[i])
            }
        });
        let rest = &eig.eigenvectors * rest;
        let radius = (bound * bound - rest.norm_squared()).max(0.0).sqrt();
        let basis = DMatrix::from_fn(c, top.len(), |r, k| eig.eigenvectors[(r, top[k])]);
        // Lexicographically smallest point of the sphere slice.
        for k in 0..c {
            let proj = basis.row(k).transpose();
            let len = proj.norm();
            if len > 1e-12 {
                return rest + &basis * (proj * (-radius / len));
            }
        }
        rest
    }

    fn min_box(&self, bound: f64, start: DVector<f64>) -> DVector<f64> {
        let c = self.dim();
        let h = &self.hessian;
        let mut u = start;
        for _ in 0..MAX_SWEEPS {
            let mut change: f64 = 0.0;
            for i in 0..c {
                let cross: f64 = (0..c).filter(|&j| j != i).map(|j| h[(i, j)] * u[j]).sum();
                let next = (-(self.linear[i] + cross) / h[(i, i)]).clamp(-bound, bound);
                change = change.max((next - u[i]).abs());
                u[i] = next;
            }
            if change < DESCENT_TOL {
                break;
            }
        }
        u
    }

    fn min_ball(&self, bound: f64) -> DVector<f64> {
        let c = self.dim();
        let eig = SymmetricEigen::new(self.hessian.clone());
        let g = eig.eigenvectors.transpose() * &self.linear;
        let norm_at = |mu: f64| {
            (0..c).map(|i| (g[i] / (eig.eigenvalues[i] + mu)).powi(2)).sum::<f64>().sqrt()
        };
        // ‖(H + μI)⁻¹ g‖ = b on μ > 0.
        let mut lo = 0.0;
        let mut hi = self.linear.norm() / bound;
        while norm_at(hi) > bound {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if norm_at(mid) > bound {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let u = &eig.eigenvectors * DVector::from_fn(c, |i, _| -g[i] / (eig.eigenvalues[i] + hi));
        let norm = u.norm();
        if norm > bound {
            u * (bound / norm)
        } else {
            u
        }
    }
}

/// `xᵀ P x`.
pub fn quadratic_form(s: &PosteriorState, x: &Regressor) -> Result<f64> {
    if x.len() != s.m() {
        return Err(Error::dims("regressor", s.m(), x.len()));
    }
    let x = x.as_vector();
    Ok(x.dot(&(s.covariance() * x)))
}

/// `x(u)ᵀ P x(u)` for a candidate control.
pub fn control_objective(s: &PosteriorState, h: &History, u: &DVector<f64>) -> Result<f64> {
    quadratic_form(s, &build_regressor(h, u)?)
}

/// `argmax_{u ∈ 𝒰} x(u)ᵀ K_t⁻¹ x(u)`.
pub fn infomax_control(s: &PosteriorState, h: &History, dom: &ControlDomain) -> Result<DVector<f64>> {
    ControlQuadratic::new(s, h)?.maximize(dom)
}

/// `argmin_{u ∈ 𝒰} x(u)ᵀ K_t⁻¹ x(u)`.
pub fn noise_optimal_control(s: &PosteriorState, h: &History, dom: &ControlDomain) -> Result<DVector<f64>> {
    ControlQuadratic::new(s, h)?.minimize(dom)
}

/// The block formula `u = (K_uu)⁻¹ K_uz z`, projected onto the domain.
///
/// This does not minimize `x(u)ᵀ K⁻¹ x(u)` in general (the minimizer is
/// `K_uz K_zz⁻¹ z`); it is provided to quantify the gap.
pub fn block_formula_control(s: &PosteriorState, h: &History, dom: &ControlDomain) -> Result<DVector<f64>> {
    dom.validate()?;
    let c = h.control_dim();
    let m = s.m();
    let quad = ControlQuadratic::new(s, h)?;
    let k = s.precision();
    let k_uu = k.view((m - c, m - c), (c, c)).into_owned();
    let k_uz = k.view((m - c, 0), (c, m - c)).into_owned();
    let u = spd_cholesky(&k_uu, "K_uu")?.solve(&(k_uz * &quad.fixed));
    Ok(dom.project(&u))
}

/// Dispatch on the strategy. `t` is the index of the step being controlled;
/// `rng` drives the `random` strategy only.
pub fn select_control<R: Rng + ?Sized>(
    strategy: &StrategySpec,
    s: &PosteriorState,
    h: &History,
    t: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    strategy.validate()?;
    let c = h.control_dim();
    let dom = &strategy.domain;
    let noise_law = |s, h| match strategy.noise_law {
        NoiseLaw::Exact => noise_optimal_control(s, h, dom),
        NoiseLaw::BlockFormula => block_formula_control(s, h, dom),
    };
    let tau = strategy.tau.unwrap_or(0);
    match strategy.kind {
        StrategyKind::Infomax => infomax_control(s, h, dom),
        StrategyKind::NoiseOptimal => noise_law(s, h),
        StrategyKind::TauInfomax if t < tau => infomax_control(s, h, dom),
        StrategyKind::TauInfomax => noise_law(s, h),
        StrategyKind::TauZero if t < tau => infomax_control(s, h, dom),
        StrategyKind::TauZero | StrategyKind::Zero => Ok(DVector::zeros(c)),
        StrategyKind::Random => Ok(dom.sample_uniform(c, rng)),
    }
}
