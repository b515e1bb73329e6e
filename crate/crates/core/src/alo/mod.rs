//! Approximate leave-one-out cross-validation and its exact derivatives.
//!
//! With `u_i = x_i' beta_hat` and `h_i = x_i' H^-1 x_i`, the approximate
//! out-of-sample predictor is
//!
//! ```text
//! u~_i = u_i + l_i'(u_i) h_i / (1 - l_i''(u_i) h_i)
//! ```
//!
//! and ALO is `f(lambda) = mean_i l_i(u~_i)`. The gradient and hessian follow
//! by differentiating `beta_hat` implicitly through the stationarity
//! condition of the inner problem and `h_i` through `d(H^-1) = -H^-1 dH H^-1`.
//!
//! `dh_i / dlambda_s = -t_i' (dH/dlambda_s) t_i` with `t_i = H^-1 x_i`, and
//! `d2h_i = 2 x_i' H^-1 H_s H^-1 H_t H^-1 x_i - t_i' H_st t_i`. The first
//! term of the second derivative is `2 r_si . r_ti` with
//! `r_si = L^-1 H_s t_i` on the dense path; on the Woodbury path it is
//! `2 (H_s t_i) . H^-1 (H_t t_i)`.

pub mod corollary;
mod objective;

pub use corollary::{logistic_ridge_corollary_eval, ridge_corollary_eval, CorollaryEval};
pub use objective::AloObjective;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::{Loss, LossDerivs, Model, RegDerivs};
use crate::inner::{gram, FitState, Path};

/// Smallest admissible `1 - l''(u_i) h_i`.
pub const POLE_TOLERANCE: f64 = 1e-12;

/// `u~` and its partials in `(u, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UtildeDerivs {
    pub utilde: f64,
    pub du: f64,
    pub dh: f64,
    pub duu: f64,
    pub duh: f64,
    pub dhh: f64,
}

/// Partials of `u~ = u + l' h / (1 - l'' h)`, treating the loss derivatives
/// as functions of `u`.
pub fn utilde_derivs(u: f64, ld: &LossDerivs, h: f64) -> UtildeDerivs {
    let LossDerivs { d1, d2, d3, d4, .. } = *ld;
    let inv = 1.0 / (1.0 - d2 * h);
    let inv2 = inv * inv;
    let inv3 = inv2 * inv;
    let h2 = h * h;
    UtildeDerivs {
        utilde: u + d1 * h * inv,
        du: inv + d1 * d3 * h2 * inv2,
        dh: d1 * inv2,
        duu: d3 * h * inv2 + (d2 * d3 + d1 * d4) * h2 * inv2 + 2.0 * d1 * d3 * d3 * h2 * h * inv3,
        duh: d2 * inv2 + 2.0 * d1 * d3 * h * inv3,
        dhh: 2.0 * d1 * d2 * inv3,
    }
}

/// Loss derivatives at every `u_i`, rejecting states where some
/// `1 - l''(u_i) h_i` is at or below [`POLE_TOLERANCE`].
fn checked_loss_derivs(state: &FitState, ds: &Dataset, loss: Loss) -> Result<Vec<LossDerivs>> {
    let y = ds.responses();
    let mut out = Vec::with_capacity(ds.n());
    for i in 0..ds.n() {
        let ld = loss.derivs(y[i], state.u[i]);
        let denominator = 1.0 - ld.d2 * state.h[i];
        if !(denominator > POLE_TOLERANCE) {
            return Err(Error::Pole { index: i, denominator });
        }
        out.push(ld);
    }
    Ok(out)
}

/// `mean_i l_i(u~_i)`.
pub fn alo_value(state: &FitState, ds: &Dataset, loss: Loss) -> Result<f64> {
    let lds = checked_loss_derivs(state, ds, loss)?;
    let y = ds.responses();
    let total: f64 = lds
        .iter()
        .enumerate()
        .map(|(i, ld)| {
            let ut = state.u[i] + ld.d1 * state.h[i] / (1.0 - ld.d2 * state.h[i]);
            loss.value(y[i], ut)
        })
        .sum();
    Ok(total / ds.n() as f64)
}

/// Quantities shared between the gradient and hessian at one `lambda`.
#[derive(Debug, Clone)]
pub struct AloIntermediates {
    pub lambda: Vec<f64>,
    /// `d beta_hat / d lambda_s`, `p x q`
    pub dbeta: DMatrix<f64>,
    /// `d u_i / d lambda_s`, `n x q`
    pub du: DMatrix<f64>,
    /// `d h_i / d lambda_s`, `n x q`
    pub dh: DMatrix<f64>,
    /// `d A_ii / d lambda_s`, `n x q`
    pub da: DMatrix<f64>,
    /// `d W_jj / d lambda_s`, `p x q`
    pub dw: DMatrix<f64>,
    /// `d u~_i / d lambda_s`, `n x q`
    pub dutilde: DMatrix<f64>,
    /// `T = H^-1 X'`; column `i` is `t_i`.
    pub t: DMatrix<f64>,
    /// `(dH/dlambda_s) T`, one `p x n` block per hyperparameter.
    pub dh_t: Vec<DMatrix<f64>>,
    /// Materialized `dH/dlambda_s` (dense path only).
    pub dh_dense: Option<Vec<DMatrix<f64>>>,
    /// Woodbury path: elementwise squares of `M = X T` and of `T`.
    woodbury_squares: Option<(DMatrix<f64>, DMatrix<f64>)>,
    loss_at_u: Vec<LossDerivs>,
    loss_at_utilde: Vec<LossDerivs>,
    utilde: Vec<UtildeDerivs>,
    reg: Vec<RegDerivs>,
}

impl AloIntermediates {
    /// `(dH/dlambda_s) V = X' diag(dA_s) X V + diag(dW_s) V`, never forming
    /// the `p x p` matrix.
    pub fn apply_dh(&self, s: usize, x: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut xv = x * v;
        for (mut row, &a) in xv.row_iter_mut().zip(self.da.column(s).iter()) {
            row *= a;
        }
        let mut out = x.tr_mul(&xv);
        for (mut row, (&w, vrow)) in out
            .row_iter_mut()
            .zip(self.dw.column(s).iter().zip(v.row_iter()))
        {
            row += w * vrow;
        }
        out
    }

    pub fn utilde_values(&self) -> Vec<f64> {
        self.utilde.iter().map(|u| u.utilde).collect()
    }
}

#[derive(Debug, Clone)]
pub struct AloReport {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub intermediates: AloIntermediates,
}

fn column_dots(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        a.ncols(),
        a.column_iter().zip(b.column_iter()).map(|(x, y)| x.dot(&y)),
    )
}

/// Gradient of ALO in `lambda` at a converged fit.
pub fn alo_gradient(
    state: &FitState,
    ds: &Dataset,
    model: &Model,
    lambda: &[f64],
) -> Result<(DVector<f64>, AloIntermediates)> {
    let (n, p) = (ds.n(), ds.p());
    let q = model.n_hyper();
    let x = ds.features();
    let y = ds.responses();
    let factor = &state.factorization;
    let pen = model.reg.at(lambda)?;
    let mask = ds.intercept_mask();

    let loss_at_u = checked_loss_derivs(state, ds, model.loss)?;
    let reg: Vec<RegDerivs> = (0..p)
        .map(|j| pen.derivs(j, state.beta[j], mask[j]))
        .collect();

    // d beta / d lambda_s = -H^-1 d(grad R)/d lambda_s
    let rhs = DMatrix::from_fn(p, q, |j, s| reg[j].dl_d1[s]);
    let dbeta = -factor.solve_mat(&rhs);
    let du = x * &dbeta;
    let da = DMatrix::from_fn(n, q, |i, s| loss_at_u[i].d3 * du[(i, s)]);
    let dw = DMatrix::from_fn(p, q, |j, s| reg[j].dl_d2[s] + reg[j].d3 * dbeta[(j, s)]);

    let (t, _) = factor.inverse_times_xt(x);
    let mut dh = DMatrix::zeros(n, q);
    let mut dh_t = Vec::with_capacity(q);
    let mut dh_dense = None;
    let mut woodbury_squares = None;
    match factor.path() {
        Path::NOverP => {
            let mut mats = Vec::with_capacity(q);
            for s in 0..q {
                let mut hs = gram(x, &da.column(s).into_owned());
                for j in 0..p {
                    hs[(j, j)] += dw[(j, s)];
                }
                let hst = &hs * &t;
                dh.set_column(s, &(-column_dots(&t, &hst)));
                dh_t.push(hst);
                mats.push(hs);
            }
            dh_dense = Some(mats);
        }
        Path::POverN => {
            let m = x * &t;
            let m_sq = m.component_mul(&m);
            let t_sq = t.component_mul(&t);
            for s in 0..q {
                // H_s T = X' diag(dA_s) M + diag(dW_s) T
                let mut am = m.clone();
                for (mut row, &a) in am.row_iter_mut().zip(da.column(s).iter()) {
                    row *= a;
                }
                let mut hst = x.tr_mul(&am);
                for (mut row, (&w, trow)) in hst.row_iter_mut().zip(dw.column(s).iter().zip(t.row_iter())) {
                    row += w * trow;
                }
                let quad = m_sq.tr_mul(&da.column(s)) + t_sq.tr_mul(&dw.column(s));
                dh.set_column(s, &(-quad));
                dh_t.push(hst);
            }
            woodbury_squares = Some((m_sq, t_sq));
        }
    }

    let utilde: Vec<UtildeDerivs> = (0..n)
        .map(|i| utilde_derivs(state.u[i], &loss_at_u[i], state.h[i]))
        .collect();
    let loss_at_utilde: Vec<LossDerivs> = (0..n)
        .map(|i| model.loss.derivs(y[i], utilde[i].utilde))
        .collect();
    let dutilde = DMatrix::from_fn(n, q, |i, s| {
        utilde[i].du * du[(i, s)] + utilde[i].dh * dh[(i, s)]
    });
    let gradient = DVector::from_fn(q, |s, _| {
        (0..n)
            .map(|i| loss_at_utilde[i].d1 * dutilde[(i, s)])
            .sum::<f64>()
            / n as f64
    });

    Ok((
        gradient,
        AloIntermediates {
            lambda: lambda.to_vec(),
            dbeta,
            du,
            dh,
            da,
            dw,
            dutilde,
            t,
            dh_t,
            dh_dense,
            woodbury_squares,
            loss_at_u,
            loss_at_utilde,
            utilde,
            reg,
        },
    ))
}

/// Hessian of ALO in `lambda`, reusing the gradient's intermediates.
/// Entries are computed for `s <= t` and mirrored.
pub fn alo_hessian(
    state: &FitState,
    ds: &Dataset,
    model: &Model,
    lambda: &[f64],
    inter: &AloIntermediates,
) -> Result<DMatrix<f64>> {
    if inter.lambda != lambda {
        return Err(Error::InvalidArgument(
            "intermediates were computed at a different lambda".into(),
        ));
    }
    let (n, p) = (ds.n(), ds.p());
    let q = model.n_hyper();
    let x = ds.features();
    let factor = &state.factorization;
    let path = factor.path();
    let lu = &inter.loss_at_u;
    let reg = &inter.reg;
    let (dbeta, du, dh) = (&inter.dbeta, &inter.du, &inter.dh);

    // r_si = L^-1 H_s t_i on the dense path; H^-1 H_s t_i on the Woodbury path.
    let r: Vec<DMatrix<f64>> = inter
        .dh_t
        .iter()
        .map(|hst| match path {
            Path::NOverP => factor
                .half_solve_mat(hst)
                .expect("dense path carries a cholesky factor"),
            Path::POverN => factor.solve_mat(hst),
        })
        .collect();

    let mut hess = DMatrix::zeros(q, q);
    for s in 0..q {
        for t in s..q {
            // second derivative of beta_hat
            let loss_term = DVector::from_fn(n, |i, _| lu[i].d3 * du[(i, s)] * du[(i, t)]);
            let mut rhs = x.tr_mul(&loss_term);
            for j in 0..p {
                let rj = &reg[j];
                rhs[j] += rj.dl_d2[s] * dbeta[(j, t)]
                    + rj.dl_d2[t] * dbeta[(j, s)]
                    + rj.dll_d1[(s, t)]
                    + rj.d3 * dbeta[(j, s)] * dbeta[(j, t)];
            }
            let d2beta = -factor.solve(&rhs);
            let d2u = x * &d2beta;
            let d2a = DVector::from_fn(n, |i, _| {
                lu[i].d3 * d2u[i] + lu[i].d4 * du[(i, s)] * du[(i, t)]
            });
            let d2w = DVector::from_fn(p, |j, _| {
                let rj = &reg[j];
                rj.dll_d2[(s, t)]
                    + rj.dl_d3[s] * dbeta[(j, t)]
                    + rj.dl_d3[t] * dbeta[(j, s)]
                    + rj.d3 * d2beta[j]
                    + rj.d4 * dbeta[(j, s)] * dbeta[(j, t)]
            });

            // t_i' H_st t_i and the cross term
            let (quad, cross) = match path {
                Path::NOverP => {
                    let mut hst = gram(x, &d2a);
                    for j in 0..p {
                        hst[(j, j)] += d2w[j];
                    }
                    let quad = column_dots(&inter.t, &(hst * &inter.t));
                    (quad, column_dots(&r[s], &r[t]))
                }
                Path::POverN => {
                    let (m_sq, t_sq) = inter
                        .woodbury_squares
                        .as_ref()
                        .expect("Woodbury intermediates");
                    let quad = m_sq.tr_mul(&d2a) + t_sq.tr_mul(&d2w);
                    (quad, column_dots(&inter.dh_t[s], &r[t]))
                }
            };

            let mut acc = 0.0;
            for i in 0..n {
                let ut = &inter.utilde[i];
                let d2h = 2.0 * cross[i] - quad[i];
                let d2ut = ut.du * d2u[i]
                    + ut.duu * du[(i, s)] * du[(i, t)]
                    + ut.duh * (du[(i, s)] * dh[(i, t)] + du[(i, t)] * dh[(i, s)])
                    + ut.dh * d2h
                    + ut.dhh * dh[(i, s)] * dh[(i, t)];
                let lt = &inter.loss_at_utilde[i];
                acc += lt.d2 * inter.dutilde[(i, s)] * inter.dutilde[(i, t)] + lt.d1 * d2ut;
            }
            let v = acc / n as f64;
            hess[(s, t)] = v;
            hess[(t, s)] = v;
        }
    }
    Ok(hess)
}

/// Value, gradient and hessian in one pass.
pub fn evaluate(state: &FitState, ds: &Dataset, model: &Model, lambda: &[f64]) -> Result<AloReport> {
    let (gradient, intermediates) = alo_gradient(state, ds, model, lambda)?;
    let hessian = alo_hessian(state, ds, model, lambda, &intermediates)?;
    let n = ds.n() as f64;
    let value = intermediates.loss_at_utilde.iter().map(|l| l.value).sum::<f64>() / n;
    Ok(AloReport {
        value,
        gradient,
        hessian,
        intermediates,
    })
}
