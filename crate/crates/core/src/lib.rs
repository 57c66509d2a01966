//! Nonconventional large-deviation rate functions on finite alphabets.
//!
//! Sums of the form `S_N = Σ_{n≤N} F(X(q₁(n)), …, X(q_ℓ(n)))` sample one
//! process along several time schedules at once. This crate computes the
//! limiting log-moment functionals `Q` and rate functions `J` for such sums
//! over Markov chains, i.i.d. sequences, continuous-time chains and
//! subshifts of finite type, together with brute-force and Monte-Carlo
//! oracles to check them against.

pub mod config;
pub mod ctime;
pub mod error;
pub mod lattice;
pub mod linalg;
pub mod markov;
pub mod legendre;
pub mod model;
pub mod montecarlo;
pub mod optim;
pub mod sampling;
pub mod symbolic;

pub use error::{Error, Result};
