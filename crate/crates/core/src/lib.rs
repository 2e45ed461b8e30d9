//! Online identification of stochastic recurrent networks
//! `r_{t+1} = g(Σ F_i r_{t−i} + Σ B_j u_{t+1−j} + e_{t+1})` with exact
//! matrix-normal / inverse-Wishart posterior updates and D-optimal
//! (infomax) stimulus selection.

pub mod config;
pub mod control;
pub mod distributions;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod lemmas;
pub mod linalg;
pub mod quad;
pub mod special;

pub use error::{Error, Result};
