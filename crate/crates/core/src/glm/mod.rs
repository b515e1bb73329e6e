//! Loss families and separable regularizers.
//!
//! Everything the ALO derivative chain needs from a model is exposed here
//! as plain values: loss derivatives in the linear predictor `u` through
//! fourth order ([`LossDerivs`]) and, per coordinate, penalty derivatives in
//! `beta_j` through fourth order together with their mixed partials in the
//! hyperparameters ([`RegDerivs`]).

mod bridge;
mod loss;
mod penalty;

pub use bridge::{bridge_reg_derivs, bridge_smoothing_coeffs, BridgeSmoothing, SMOOTHING_POWERS};
pub use loss::{logistic_loss_derivs, squared_loss_derivs, Loss, LossDerivs};
pub use penalty::{group_ridge_reg_derivs, ridge_reg_derivs, Penalty, RegDerivs, Regularizer};

use serde::{Deserialize, Serialize};

/// Default seam of the bridge smoothing polynomial.
pub const DEFAULT_BRIDGE_DELTA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub loss: Loss,
    pub reg: Regularizer,
}

impl Model {
    pub fn new(loss: Loss, reg: Regularizer) -> Self {
        Self { loss, reg }
    }

    /// Number of hyperparameters.
    pub fn n_hyper(&self) -> usize {
        self.reg.n_hyper()
    }
}
