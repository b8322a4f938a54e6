//! Bayesian reconstruction of the potential coefficient in
//! `-Laplace(u) + q u = f` from noisy interior observations of `u`.
//!
//! The pieces: uniform-grid fields and finite-difference forward solves,
//! Gaussian prior covariances with exact square-root sampling, a
//! persistence-pair penalty on the knot values (with total-variation and
//! plain-Gaussian baselines), a preconditioned Crank-Nicolson sampler over
//! the discretized field, and preset experiment configurations with CSV
//! emission.

pub mod error;
pub mod experiment;
pub mod forward;
pub mod grid;
pub mod linalg;
pub mod pcn;
pub mod prior;
pub mod targets;
pub mod topo;

pub use error::{Error, Result};
pub use grid::{relative_l2_error, Field, Grid, Grid1D, Grid2D};
