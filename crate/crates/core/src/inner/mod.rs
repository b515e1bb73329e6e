//! The inner problem: `beta_hat = argmin sum_i l_i(x_i' beta) + R_lambda(beta)`
//! at fixed hyperparameters, solved by damped Newton iterations.

mod factor;

pub use factor::{assemble_dense, HFactorization, Path, PathHint};
pub(crate) use factor::gram;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::{LossDerivs, Model, Penalty};

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const POLISH_STEPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stationarity tolerance on the infinity norm of the gradient. `None`
    /// uses `1e-10 * max(1, ||X' l'(0)||_inf)`.
    pub grad_tol: Option<f64>,
    pub path: PathHint,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            grad_tol: None,
            path: PathHint::Auto,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitState {
    pub beta: DVector<f64>,
    /// `u_i = x_i' beta`
    pub u: DVector<f64>,
    /// `A_ii = l_i''(u_i)`
    pub a_diag: DVector<f64>,
    /// `W_jj = r_j''(beta_j)`
    pub w_diag: DVector<f64>,
    pub factorization: HFactorization,
    /// `h_i = x_i' H^-1 x_i`
    pub h: DVector<f64>,
    pub converged: bool,
    pub grad_norm: f64,
    pub grad_tol: f64,
    pub iterations: usize,
    /// Objective value after each accepted iterate, starting at the initial point.
    pub objective_trace: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl FitState {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("objective trace is never empty")
    }
}

/// Everything evaluated at one `beta`.
struct Point {
    beta: DVector<f64>,
    u: DVector<f64>,
    loss: Vec<LossDerivs>,
    objective: f64,
    gradient: DVector<f64>,
    w: DVector<f64>,
}

impl Point {
    fn new(ds: &Dataset, model: &Model, pen: &Penalty, mask: &[bool], beta: DVector<f64>) -> Point {
        let x = ds.features();
        let y = ds.responses();
        let u = x * &beta;
        let loss: Vec<LossDerivs> = u
            .iter()
            .zip(y.iter())
            .map(|(&ui, &yi)| model.loss.derivs(yi, ui))
            .collect();
        let d1 = DVector::from_iterator(loss.len(), loss.iter().map(|d| d.d1));
        let mut gradient = x.tr_mul(&d1);
        let mut objective: f64 = loss.iter().map(|d| d.value).sum();
        let mut w = DVector::zeros(beta.len());
        for j in 0..beta.len() {
            let (r, r1, r2) = pen.curvature(j, beta[j], mask[j]);
            objective += r;
            gradient[j] += r1;
            w[j] = r2;
        }
        Point {
            beta,
            u,
            loss,
            objective,
            gradient,
            w,
        }
    }

    fn a_diag(&self) -> DVector<f64> {
        DVector::from_iterator(self.loss.len(), self.loss.iter().map(|d| d.d2))
    }

    fn grad_norm(&self) -> f64 {
        self.gradient.amax()
    }
}

/// Newton's method with backtracking (step halving, Armijo constant 1e-4).
///
/// Returns `Ok` with `converged == false` when `max_iter` is exhausted, and
/// an error when `H` is not positive definite at some iterate.
pub fn fit(
    ds: &Dataset,
    model: &Model,
    lambda: &[f64],
    init: Option<&DVector<f64>>,
    opts: &FitOptions,
) -> Result<FitState> {
    let (n, p) = (ds.n(), ds.p());
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    model.loss.check_responses(ds.responses().as_slice())?;
    let mask = ds.intercept_mask();
    model.reg.check_columns(&mask)?;
    let pen = model.reg.at(lambda)?;
    let x = ds.features();

    let beta0 = match init {
        Some(b) if b.len() == p && b.iter().all(|v| v.is_finite()) => b.clone(),
        Some(b) => {
            return Err(Error::InvalidArgument(format!(
                "warm start has length {} but the design has {p} columns",
                b.len()
            )))
        }
        None => DVector::zeros(p),
    };
    let grad_tol = opts.grad_tol.unwrap_or_else(|| {
        let at_zero = Point::new(ds, model, &pen, &mask, DVector::zeros(p));
        1e-10 * at_zero.grad_norm().max(1.0)
    });

    let mut cur = Point::new(ds, model, &pen, &mask, beta0);
    let mut trace = vec![cur.objective];
    let mut converged = cur.grad_norm() <= grad_tol;
    let mut iterations = 0;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let factor = HFactorization::new(x, &cur.a_diag(), &cur.w, opts.path)?;
        let step = -factor.solve(&cur.gradient);
        let slope = cur.gradient.dot(&step);
        if !(slope < 0.0) {
            // H is positive definite so this only happens once the gradient
            // has underflowed.
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = Point::new(ds, model, &pen, &mask, &cur.beta + t * &step);
            if trial.objective <= cur.objective + ARMIJO * t * slope {
                accepted = Some(trial);
                break;
            }
            // Near the optimum the predicted decrease drops below the
            // rounding error of the objective; accept a full step that
            // keeps the objective level and shrinks the gradient.
            if t == 1.0
                && trial.objective <= cur.objective + 4.0 * f64::EPSILON * cur.objective.abs()
                && trial.grad_norm() < cur.grad_norm()
            {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some(next) => {
                cur = next;
                trace.push(cur.objective);
                converged = cur.grad_norm() <= grad_tol;
            }
            None => break,
        }
    }

    if converged {
        // A couple of extra full Newton steps drive the gradient to rounding
        // level, which derivative evaluations downstream rely on.
        for _ in 0..POLISH_STEPS {
            let factor = HFactorization::new(x, &cur.a_diag(), &cur.w, opts.path)?;
            let trial = Point::new(ds, model, &pen, &mask, &cur.beta - factor.solve(&cur.gradient));
            if trial.grad_norm() < cur.grad_norm()
                && trial.objective <= cur.objective + 4.0 * f64::EPSILON * cur.objective.abs()
            {
                cur = trial;
                trace.push(cur.objective);
            } else {
                break;
            }
        }
    }

    let a_diag = cur.a_diag();
    let factorization = HFactorization::new(x, &a_diag, &cur.w, opts.path)?;
    let h = factorization.leverage(x);
    Ok(FitState {
        grad_norm: cur.grad_norm(),
        beta: cur.beta,
        u: cur.u,
        a_diag,
        w_diag: cur.w,
        factorization,
        h,
        converged,
        grad_tol,
        iterations,
        objective_trace: trace,
        lambda: lambda.to_vec(),
    })
}

/// Re-factors `H` for a fitted state, optionally on a different path.
pub fn assemble_factorization(
    state: &FitState,
    ds: &Dataset,
    hint: PathHint,
) -> Result<HFactorization> {
    HFactorization::new(ds.features(), &state.a_diag, &state.w_diag, hint)
}

/// `h_i = x_i' H^-1 x_i` from the state's factorization.
pub fn leverage_vector(state: &FitState, ds: &Dataset) -> DVector<f64> {
    state.factorization.leverage(ds.features())
}

/// Infinity norm of `sum_i l_i'(u_i) x_i + grad R(beta)` at `beta`, computed
/// from scratch.
pub fn stationarity_residual(ds: &Dataset, model: &Model, lambda: &[f64], beta: &DVector<f64>) -> Result<f64> {
    let pen = model.reg.at(lambda)?;
    let mask = ds.intercept_mask();
    Ok(Point::new(ds, model, &pen, &mask, beta.clone()).grad_norm())
}

/// Dense `H` at a fitted state; for tests and diagnostics.
pub fn dense_hessian(state: &FitState, x: &DMatrix<f64>) -> DMatrix<f64> {
    assemble_dense(x, &state.a_diag, &state.w_diag)
}
