use nalgebra::DVector;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::Model;
use crate::inner::{fit, FitOptions, FitState};
use crate::trust_region::{minimize, Evaluation, TrustRegionConfig, TrustRegionOutcome};

use super::{alo_gradient, alo_value, evaluate, AloReport};

/// ALO as a function of `lambda`: each call refits the inner problem,
/// warm-started from the last converged coefficients.
#[derive(Debug, Clone)]
pub struct AloObjective<'a> {
    ds: &'a Dataset,
    model: &'a Model,
    opts: FitOptions,
    warm: Option<DVector<f64>>,
    warm_start: bool,
    fits: usize,
}

impl<'a> AloObjective<'a> {
    pub fn new(ds: &'a Dataset, model: &'a Model) -> Self {
        Self::with_options(ds, model, FitOptions::default())
    }

    pub fn with_options(ds: &'a Dataset, model: &'a Model, opts: FitOptions) -> Self {
        Self {
            ds,
            model,
            opts,
            warm: None,
            warm_start: true,
            fits: 0,
        }
    }

    /// Every fit starts from zero when disabled.
    pub fn set_warm_start(&mut self, on: bool) {
        self.warm_start = on;
        if !on {
            self.warm = None;
        }
    }

    pub fn seed(&mut self, beta: DVector<f64>) {
        self.warm = Some(beta);
    }

    pub fn fits(&self) -> usize {
        self.fits
    }

    pub fn dataset(&self) -> &Dataset {
        self.ds
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    /// Converged inner fit at `lambda`; non-convergence is an error.
    pub fn fit_at(&mut self, lambda: &[f64]) -> Result<FitState> {
        if lambda.len() != self.model.n_hyper() {
            return Err(Error::InvalidArgument(format!(
                "{} regularizer takes {} hyperparameters, got {}",
                self.model.reg.name(),
                self.model.n_hyper(),
                lambda.len()
            )));
        }
        let init = if self.warm_start { self.warm.as_ref() } else { None };
        let state = fit(self.ds, self.model, lambda, init, &self.opts)?;
        self.fits += 1;
        if !state.converged {
            return Err(Error::Evaluation(format!(
                "inner solver did not converge at lambda = {lambda:?} (gradient norm {:.3e})",
                state.grad_norm
            )));
        }
        if self.warm_start {
            self.warm = Some(state.beta.clone());
        }
        Ok(state)
    }

    pub fn value(&mut self, lambda: &[f64]) -> Result<f64> {
        let st = self.fit_at(lambda)?;
        alo_value(&st, self.ds, self.model.loss)
    }

    pub fn value_and_gradient(&mut self, lambda: &[f64]) -> Result<(f64, DVector<f64>)> {
        let st = self.fit_at(lambda)?;
        let v = alo_value(&st, self.ds, self.model.loss)?;
        let (g, _) = alo_gradient(&st, self.ds, self.model, lambda)?;
        Ok((v, g))
    }

    pub fn evaluate(&mut self, lambda: &[f64]) -> Result<AloReport> {
        let st = self.fit_at(lambda)?;
        evaluate(&st, self.ds, self.model, lambda)
    }

    /// Trust-region minimization of ALO from `lambda0`.
    pub fn minimize(&mut self, lambda0: &[f64], cfg: &TrustRegionConfig) -> Result<TrustRegionOutcome> {
        let x0 = DVector::from_row_slice(lambda0);
        minimize(
            |lam| {
                let rep = self.evaluate(lam.as_slice())?;
                Ok(Evaluation {
                    value: rep.value,
                    gradient: rep.gradient,
                    hessian: rep.hessian,
                })
            },
            &x0,
            cfg,
        )
    }
}
