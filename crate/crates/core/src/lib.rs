//! l1-penalized quasi-likelihood and robust estimation for high-dimensional
//! generalized linear models.
//!
//! The crate is organized around the pieces needed to fit and to check an
//! l1-penalized estimator:
//!
//! - [`family`]: quasi-likelihood and robust losses, regret, regularity constants.
//! - [`design`]: design matrices, compatibility constants, restricted eigenvalues,
//!   weighted Gram matrices and the irrepresentable constant.
//! - [`solver`]: proximal-gradient fits certified by their KKT conditions, the
//!   restricted (oracle) fit and the soft-thresholding closed form.
//! - [`calibration`]: tuning levels, confidence levels, preconditions and bounds.
//! - [`simulation`]: seeded Monte-Carlo replications that check the oracle and
//!   selection inequalities run by run.
//! - [`io`] and [`cli`]: file formats and the `qlasso` command line.

pub mod calibration;
pub mod cli;
pub mod design;
pub mod error;
pub mod family;
pub mod io;
pub mod quadrature;
pub mod simulation;
pub mod solver;

pub use error::{Error, Result};
