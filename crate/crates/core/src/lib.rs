//! Nonintrusive parametric surrogates for quantities defined as limits of
//! matrix-power algorithms (inverses, linear solves, log-determinants) of
//! affinely parametrized matrices.
//!
//! The coefficient function `g(k, mu) = prod_l alpha_l(mu)^{k_l}` is
//! approximated by the Empirical Interpolation Method over the multi-index
//! set `{k : |k| <= m}`. The online weights `lambda(mu)` then combine
//! snapshots computed at the greedily selected parameters.

pub mod baselines;
pub mod bench;
pub mod eim;
pub mod error;
pub mod family;
pub mod linalg;
pub mod io;
pub mod multiindex;
pub mod sampling;
pub mod surrogate;

pub use error::{Error, Result};
