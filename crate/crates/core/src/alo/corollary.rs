//! Closed-form ALO derivatives for single-parameter ridge models, written
//! independently of the general chain with explicit dense inverses. They
//! serve as cross-checks of [`super::evaluate`].
//!
//! The penalty is `lambda^2 ||D beta||^2` where `D` masks out an intercept.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::{Loss, Model, Regularizer};
use crate::inner::{fit, FitOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorollaryEval {
    pub value: f64,
    pub gradient: f64,
    pub hessian: f64,
}

fn penalty_mask(ds: &Dataset) -> DVector<f64> {
    DVector::from_iterator(
        ds.p(),
        ds.intercept_mask().iter().map(|&b| if b { 0.0 } else { 1.0 }),
    )
}

fn dense_inverse(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let norm = m.amax();
    let inv = m
        .try_inverse()
        .ok_or(Error::Singular { condition: f64::INFINITY })?;
    let cond = norm * inv.amax();
    if !cond.is_finite() {
        return Err(Error::Singular { condition: cond });
    }
    Ok(inv)
}

/// Row-wise quadratic forms `x_i' M x_i`.
fn quad_forms(x: &DMatrix<f64>, m: &DMatrix<f64>) -> DVector<f64> {
    let xm = x * m;
    DVector::from_iterator(
        x.nrows(),
        xm.row_iter().zip(x.row_iter()).map(|(a, b)| a.dot(&b)),
    )
}

/// Ridge regression with loss `(y - u)^2` and penalty `lambda^2 ||D beta||^2`.
pub fn ridge_corollary_eval(ds: &Dataset, lambda: f64) -> Result<CorollaryEval> {
    let x = ds.features();
    let y = ds.responses();
    let n = ds.n() as f64;
    let d = DMatrix::from_diagonal(&penalty_mask(ds));
    let g = dense_inverse(x.tr_mul(x) + &d * (lambda * lambda))?;
    let beta = &g * x.tr_mul(y);
    let yhat = x * &beta;
    let eps = y - &yhat;

    let gd = &g * &d;
    let gdb = &gd * &beta;
    let gdg = &gd * &g;
    let h = quad_forms(x, &g) * 0.5;
    let dyhat = (x * &gdb) * (-2.0 * lambda);
    let dh = quad_forms(x, &gdg) * (-lambda);
    let d2yhat = (x * (&gd * &gdb)) * (8.0 * lambda * lambda) - (x * &gdb) * 2.0;
    let d2h = quad_forms(x, &(&gd * &gdg)) * (4.0 * lambda * lambda) - quad_forms(x, &gdg);

    let (mut value, mut grad, mut hess) = (0.0, 0.0, 0.0);
    for i in 0..ds.n() {
        let c = 1.0 - 2.0 * h[i];
        if !(c > super::POLE_TOLERANCE) {
            return Err(Error::Pole { index: i, denominator: c });
        }
        let e_loo = eps[i] / c;
        // partials of the leave-one-out prediction in (yhat, h)
        let py = 1.0 / c;
        let ph = -2.0 * eps[i] / (c * c);
        let pyh = 2.0 / (c * c);
        let phh = -8.0 * eps[i] / (c * c * c);
        let dl = py * dyhat[i] + ph * dh[i];
        let d2l = py * d2yhat[i] + 2.0 * pyh * dyhat[i] * dh[i] + ph * d2h[i] + phh * dh[i] * dh[i];
        value += e_loo * e_loo;
        grad += -2.0 * e_loo * dl;
        hess += 2.0 * dl * dl - 2.0 * e_loo * d2l;
    }
    Ok(CorollaryEval {
        value: value / n,
        gradient: grad / n,
        hessian: hess / n,
    })
}

/// Logistic regression with penalty `lambda^2 ||D beta||^2`. The fit itself
/// comes from the Newton solver; every derivative is formed from dense
/// inverses.
pub fn logistic_ridge_corollary_eval(ds: &Dataset, lambda: f64) -> Result<CorollaryEval> {
    let model = Model::new(Loss::Logistic, Regularizer::Ridge);
    let state = fit(ds, &model, &[lambda], None, &FitOptions::default())?;
    if !state.converged {
        return Err(Error::Evaluation("logistic ridge fit did not converge".into()));
    }
    let x = ds.features();
    let y = ds.responses();
    let n = ds.n();
    let beta = &state.beta;
    let u = x * beta;
    let lds: Vec<_> = (0..n).map(|i| Loss::Logistic.derivs(y[i], u[i])).collect();
    let col = |f: &dyn Fn(usize) -> f64| DVector::from_fn(n, |i, _| f(i));
    let l1 = col(&|i| lds[i].d1);
    let l2 = col(&|i| lds[i].d2);
    let l3 = col(&|i| lds[i].d3);
    let l4 = col(&|i| lds[i].d4);

    let d = DMatrix::from_diagonal(&penalty_mask(ds));
    let weighted = |w: &DVector<f64>| {
        let mut wx = x.clone();
        for (mut row, &wi) in wx.row_iter_mut().zip(w.iter()) {
            row *= wi;
        }
        x.tr_mul(&wx)
    };
    let hinv = dense_inverse(weighted(&l2) + &d * (2.0 * lambda * lambda))?;
    let h = quad_forms(x, &hinv);

    let hdb = &hinv * (&d * beta);
    let du = (x * &hdb) * (-4.0 * lambda);
    let du2 = du.component_mul(&du);
    let dh_mat = weighted(&l3.component_mul(&du)) + &d * (4.0 * lambda);
    let d2u = -(x * (&hinv * x.tr_mul(&l3.component_mul(&du2))))
        + (x * (&hinv * (&d * &hdb))) * (32.0 * lambda * lambda)
        - (x * &hdb) * 4.0;
    let d2h_mat = weighted(&(l3.component_mul(&d2u) + l4.component_mul(&du2))) + &d * 4.0;
    let a = &hinv * &dh_mat * &hinv;
    let dh = -quad_forms(x, &a);
    let d2h = quad_forms(x, &(&a * &dh_mat * &hinv)) * 2.0 - quad_forms(x, &(&hinv * d2h_mat * &hinv));

    let (mut value, mut grad, mut hess) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let c = 1.0 - l2[i] * h[i];
        if !(c > super::POLE_TOLERANCE) {
            return Err(Error::Pole { index: i, denominator: c });
        }
        let (a1, a2, a3, a4, hi) = (l1[i], l2[i], l3[i], l4[i], h[i]);
        let ut = u[i] + a1 * hi / c;
        let pu = 1.0 / c + a1 * a3 * hi * hi / (c * c);
        let ph = a1 / (c * c);
        let puu = a3 * hi / (c * c)
            + (a2 * a3 + a1 * a4) * hi * hi / (c * c)
            + 2.0 * a1 * a3 * a3 * hi.powi(3) / c.powi(3);
        let puh = a2 / (c * c) + 2.0 * a1 * a3 * hi / c.powi(3);
        let phh = 2.0 * a1 * a2 / c.powi(3);
        let dut = pu * du[i] + ph * dh[i];
        let d2ut = pu * d2u[i] + puu * du[i] * du[i] + 2.0 * puh * du[i] * dh[i] + ph * d2h[i] + phh * dh[i] * dh[i];
        let at = Loss::Logistic.derivs(y[i], ut);
        value += at.value;
        grad += at.d1 * dut;
        hess += at.d2 * dut * dut + at.d1 * d2ut;
    }
    let nf = n as f64;
    Ok(CorollaryEval {
        value: value / nf,
        gradient: grad / nf,
        hessian: hess / nf,
    })
}
