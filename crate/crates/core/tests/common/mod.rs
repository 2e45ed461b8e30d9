#![allow(dead_code)]

use active_sysid::control::ControlQuadratic;
use active_sysid::dynamics::History;
use active_sysid::estimator::PosteriorState;
use active_sysid::lemmas::{random_matrix, random_spd, random_vector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Posterior with random mean, precision and scatter.
pub fn random_state<R: Rng>(d: usize, m: usize, floor: f64, rng: &mut R) -> PosteriorState {
    PosteriorState::init(
        random_matrix(d, m, rng),
        random_spd(m, floor, rng),
        random_spd(d, 0.5, rng),
        d as f64 + 2.0,
    )
    .unwrap()
}

/// `I = J = 0` history holding a random `r_t`.
pub fn random_history<R: Rng>(d: usize, c: usize, rng: &mut R) -> History {
    History::from_buffers(vec![random_vector(d, rng)], vec![], c).unwrap()
}

pub fn scalar_history(r: f64) -> History {
    History::from_buffers(vec![DVector::from_element(1, r)], vec![], 1).unwrap()
}

pub fn state_with_precision(k: DMatrix<f64>) -> PosteriorState {
    let m = k.nrows();
    PosteriorState::init(DMatrix::zeros(1, m), k, DMatrix::identity(1, 1), 3.0).unwrap()
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Sense {
    Max,
    Min,
}

impl Sense {
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Sense::Max => a > b,
            Sense::Min => a < b,
        }
    }
}

/// Best value of `f` on an axis grid `center ± half_width` with `2·steps+1`
/// points per axis, restricted to `feasible`.
fn grid_pass(
    f: &dyn Fn(&[f64]) -> f64,
    feasible: &dyn Fn(&[f64]) -> bool,
    center: &[f64],
    half_width: f64,
    steps: i64,
    sense: Sense,
) -> Option<(f64, Vec<f64>)> {
    let c = center.len();
    let h = half_width / steps as f64;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx = vec![-steps; c];
    let mut u = vec![0.0; c];
    loop {
        for k in 0..c {
            u[k] = center[k] + idx[k] as f64 * h;
        }
        if feasible(&u) {
            let v = f(&u);
            if best.as_ref().is_none_or(|(b, _)| sense.better(v, *b)) {
                best = Some((v, u.clone()));
            }
        }
        let mut k = 0;
        loop {
            if k == c {
                return best;
            }
            idx[k] += 1;
            if idx[k] <= steps {
                break;
            }
            idx[k] = -steps;
            k += 1;
        }
    }
}

/// Dense grid search at resolution `1e−3` over `[−b, b]ᶜ ∩ feasible`,
/// followed by two zoomed passes around the incumbent.
pub fn grid_optimum(
    f: &dyn Fn(&[f64]) -> f64,
    feasible: &dyn Fn(&[f64]) -> bool,
    c: usize,
    bound: f64,
    sense: Sense,
) -> Option<(f64, Vec<f64>)> {
    let steps = (bound / 1e-3).round() as i64;
    // grid end points can overshoot the bound by an ulp
    let in_box = |u: &[f64]| u.iter().all(|v| v.abs() <= bound * (1.0 + 1e-12)) && feasible(u);
    let feasible = &in_box;
    let mut best = grid_pass(f, feasible, &vec![0.0; c], bound, steps, sense)?;
    let mut width = 2e-3;
    for _ in 0..2 {
        if let Some(next) = grid_pass(f, feasible, &best.1.clone(), width, 100, sense) {
            if !sense.better(best.0, next.0) {
                best = next;
            }
        }
        width /= 50.0;
    }
    Some(best)
}

/// Best value over the circle of radius `bound` (`c = 2`), by an angle grid
/// at resolution `1e−3` with two zoomed passes.
pub fn circle_optimum(f: &dyn Fn(&[f64]) -> f64, bound: f64, sense: Sense) -> (f64, Vec<f64>) {
    let at = |theta: f64| vec![bound * theta.cos(), bound * theta.sin()];
    let scan = |lo: f64, hi: f64, n: usize| {
        let mut best = (f(&at(lo)), lo);
        for i in 1..=n {
            let th = lo + (hi - lo) * i as f64 / n as f64;
            let v = f(&at(th));
            if sense.better(v, best.0) {
                best = (v, th);
            }
        }
        best
    };
    let tau = std::f64::consts::TAU;
    let mut best = scan(0.0, tau, (tau / 1e-3).ceil() as usize);
    let mut width = 2e-3;
    for _ in 0..2 {
        let next = scan(best.1 - width, best.1 + width, 200);
        if !sense.better(best.0, next.0) {
            best = next;
        }
        width /= 100.0;
    }
    (best.0, at(best.1))
}

/// `f(u) = constant + 2 gᵀu + uᵀ H u`, evaluated without allocating.
pub fn quadratic_fn(q: &ControlQuadratic) -> impl Fn(&[f64]) -> f64 + '_ {
    move |u: &[f64]| {
        let mut v = q.constant;
        for i in 0..u.len() {
            v += 2.0 * q.linear[i] * u[i];
            for j in 0..u.len() {
                v += u[i] * q.hessian[(i, j)] * u[j];
            }
        }
        v
    }
}
