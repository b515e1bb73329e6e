//! Hyperparameter tuning by minimizing approximate leave-one-out
//! cross-validation (ALO).
//!
//! For a regularized generalized linear model
//!
//! ```text
//! beta_hat(lambda) = argmin_beta  sum_i l_i(x_i' beta) + sum_j r_{j,lambda}(beta_j)
//! ```
//!
//! the ALO estimate of out-of-sample loss is a closed-form function of the
//! single full-data fit. This crate evaluates ALO together with its exact
//! gradient and hessian with respect to `lambda`, and minimizes it with a
//! trust-region method.
//!
//! Module map:
//! - [`dataset`]: CSV ingestion, standardization, intercept column, folds.
//! - [`glm`]: loss families and separable regularizers with all the partial
//!   derivatives the ALO chain rule consumes.
//! - [`inner`]: Newton solver for `beta_hat` and the two factorizations of
//!   `H = X'AX + W` (dense Cholesky when `n >= p`, Woodbury when `p > n`).
//! - [`alo`]: ALO value, gradient and hessian.
//! - [`trust_region`]: exact trust-region subproblem solver and outer loop.
//! - [`fd_check`]: forward-difference validation of the exact derivatives.
//! - [`grid`]: grid-search baseline.
//! - [`cli`]: the `alo-tune` command line driver.

pub mod alo;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod fd_check;
pub mod glm;
pub mod grid;
pub mod inner;
pub mod synthetic;
pub mod trust_region;

pub use error::{Error, Result};
pub use glm::{Loss, Model, Regularizer};
