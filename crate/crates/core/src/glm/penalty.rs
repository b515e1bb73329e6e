use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::bridge::{bridge_reg_derivs, bridge_smoothing_coeffs, BridgeSmoothing};
use crate::error::{Error, Result};

/// Derivatives of one coordinate's penalty `r_{j,lambda}(beta_j)`.
///
/// `dl_dk[s]` is the partial in `lambda_s` of the `k`-th `beta` derivative;
/// `dll_dk[(s, t)]` is the second partial in `(lambda_s, lambda_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegDerivs {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    pub dl_d1: Vec<f64>,
    pub dl_d2: Vec<f64>,
    pub dl_d3: Vec<f64>,
    pub dll_d1: DMatrix<f64>,
    pub dll_d2: DMatrix<f64>,
}

impl RegDerivs {
    pub fn zero(q: usize) -> Self {
        Self {
            value: 0.0,
            d1: 0.0,
            d2: 0.0,
            d3: 0.0,
            d4: 0.0,
            dl_d1: vec![0.0; q],
            dl_d2: vec![0.0; q],
            dl_d3: vec![0.0; q],
            dll_d1: DMatrix::zeros(q, q),
            dll_d2: DMatrix::zeros(q, q),
        }
    }
}

/// `lambda^2 beta^2`.
pub fn ridge_reg_derivs(lambda: &[f64], beta: f64, is_intercept: bool) -> RegDerivs {
    quadratic_in_group(lambda, 0, beta, is_intercept)
}

/// `lambda_g^2 beta^2` where `g` is the coordinate's group.
pub fn group_ridge_reg_derivs(
    lambda: &[f64],
    group: usize,
    beta: f64,
    is_intercept: bool,
) -> Result<RegDerivs> {
    if group >= lambda.len() {
        return Err(Error::InvalidArgument(format!(
            "group {group} out of range for {} hyperparameters",
            lambda.len()
        )));
    }
    Ok(quadratic_in_group(lambda, group, beta, is_intercept))
}

fn quadratic_in_group(lambda: &[f64], g: usize, beta: f64, is_intercept: bool) -> RegDerivs {
    let q = lambda.len();
    let mut out = RegDerivs::zero(q);
    if is_intercept {
        return out;
    }
    let l = lambda[g];
    let l2 = l * l;
    out.value = l2 * beta * beta;
    out.d1 = 2.0 * l2 * beta;
    out.d2 = 2.0 * l2;
    out.dl_d1[g] = 4.0 * l * beta;
    out.dl_d2[g] = 4.0 * l;
    out.dll_d1[(g, g)] = 4.0 * beta;
    out.dll_d2[(g, g)] = 4.0;
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    /// `lambda^2 ||beta||^2`, one hyperparameter.
    Ridge,
    /// `sum_j lambda_{g_j}^2 beta_j^2`; `groups[j]` is the group of feature
    /// column `j`, and there are `n_groups` hyperparameters.
    GroupRidge { groups: Vec<usize>, n_groups: usize },
    /// `lambda_1^2 |beta_j|^(1 + lambda_2^2)`, smoothed by a polynomial on
    /// `|beta_j| < delta`.
    Bridge { delta: f64 },
}

impl Regularizer {
    pub fn group_ridge(groups: Vec<usize>) -> Result<Self> {
        let n_groups = groups.iter().max().map_or(0, |g| g + 1);
        if n_groups == 0 {
            return Err(Error::InvalidArgument("empty group list".into()));
        }
        Ok(Regularizer::GroupRidge { groups, n_groups })
    }

    pub fn bridge() -> Self {
        Regularizer::Bridge {
            delta: super::DEFAULT_BRIDGE_DELTA,
        }
    }

    pub fn n_hyper(&self) -> usize {
        match self {
            Regularizer::Ridge => 1,
            Regularizer::GroupRidge { n_groups, .. } => *n_groups,
            Regularizer::Bridge { .. } => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regularizer::Ridge => "ridge",
            Regularizer::GroupRidge { .. } => "group_ridge",
            Regularizer::Bridge { .. } => "bridge",
        }
    }

    /// Checks that every non-intercept column has a penalty definition.
    pub fn check_columns(&self, intercept_mask: &[bool]) -> Result<()> {
        if let Regularizer::GroupRidge { groups, n_groups } = self {
            for (j, &icpt) in intercept_mask.iter().enumerate() {
                if icpt {
                    continue;
                }
                match groups.get(j) {
                    Some(&g) if g < *n_groups => {}
                    Some(&g) => {
                        return Err(Error::InvalidArgument(format!(
                            "column {j} assigned to group {g} >= {n_groups}"
                        )))
                    }
                    None => {
                        return Err(Error::InvalidArgument(format!(
                            "no group given for column {j}"
                        )))
                    }
                }
            }
        }
        if let Regularizer::Bridge { delta } = self {
            if !(*delta > 0.0) {
                return Err(Error::InvalidArgument("bridge delta must be positive".into()));
            }
        }
        Ok(())
    }

    /// Binds hyperparameter values, precomputing anything that depends only
    /// on `lambda` (the bridge smoothing polynomial).
    pub fn at(&self, lambda: &[f64]) -> Result<Penalty<'_>> {
        if lambda.len() != self.n_hyper() {
            return Err(Error::InvalidArgument(format!(
                "{} regularizer takes {} hyperparameters, got {}",
                self.name(),
                self.n_hyper(),
                lambda.len()
            )));
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite hyperparameter".into()));
        }
        let smoothing = match self {
            Regularizer::Bridge { delta } => Some(bridge_smoothing_coeffs(lambda[1], *delta)?),
            _ => None,
        };
        Ok(Penalty {
            reg: self,
            lambda: lambda.to_vec(),
            smoothing,
        })
    }
}

/// A regularizer with its hyperparameters fixed.
#[derive(Debug, Clone)]
pub struct Penalty<'a> {
    reg: &'a Regularizer,
    lambda: Vec<f64>,
    smoothing: Option<BridgeSmoothing>,
}

impl Penalty<'_> {
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn smoothing(&self) -> Option<&BridgeSmoothing> {
        self.smoothing.as_ref()
    }

    pub fn derivs(&self, j: usize, beta: f64, is_intercept: bool) -> RegDerivs {
        match self.reg {
            Regularizer::Ridge => ridge_reg_derivs(&self.lambda, beta, is_intercept),
            Regularizer::GroupRidge { groups, .. } => {
                if is_intercept {
                    RegDerivs::zero(self.lambda.len())
                } else {
                    quadratic_in_group(&self.lambda, groups[j], beta, false)
                }
            }
            Regularizer::Bridge { .. } => bridge_reg_derivs(
                &self.lambda,
                beta,
                self.smoothing.as_ref().expect("bridge smoothing"),
                is_intercept,
            ),
        }
    }

    /// `(r, r', r'')` at `beta`, the pieces the inner Newton solver needs.
    pub fn curvature(&self, j: usize, beta: f64, is_intercept: bool) -> (f64, f64, f64) {
        if is_intercept {
            return (0.0, 0.0, 0.0);
        }
        match self.reg {
            Regularizer::Ridge | Regularizer::GroupRidge { .. } => {
                let g = match self.reg {
                    Regularizer::GroupRidge { groups, .. } => groups[j],
                    _ => 0,
                };
                let l2 = self.lambda[g] * self.lambda[g];
                (l2 * beta * beta, 2.0 * l2 * beta, 2.0 * l2)
            }
            Regularizer::Bridge { .. } => {
                let d = self.derivs(j, beta, false);
                (d.value, d.d1, d.d2)
            }
        }
    }
}
