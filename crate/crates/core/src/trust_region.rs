//! Trust-region minimization with an exact dense subproblem solver.
//!
//! Each iteration minimizes `g's + s'Bs/2` over `||s|| <= delta` through an
//! eigendecomposition of `B`, including the hard case, then accepts or
//! rejects the step from the ratio of actual to predicted reduction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustRegionConfig {
    pub delta0: f64,
    pub delta_max: f64,
    pub eta_accept: f64,
    pub shrink: f64,
    pub expand: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            delta0: 1.0,
            delta_max: 100.0,
            eta_accept: 0.1,
            shrink: 0.25,
            expand: 2.0,
            grad_tol: 1e-6,
            max_iter: 100,
        }
    }
}

impl TrustRegionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("trust region: {m}")));
        if !(self.eta_accept > 0.0 && self.eta_accept < 0.25) {
            return bad("eta_accept must lie in (0, 0.25)");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink must lie in (0, 1)");
        }
        if !(self.expand > 1.0 && self.expand.is_finite()) {
            return bad("expand must exceed 1");
        }
        if !(self.delta0 > 0.0 && self.delta0 <= self.delta_max && self.delta_max.is_finite()) {
            return bad("need 0 < delta0 <= delta_max");
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub step: DVector<f64>,
    /// `-(g's + s'Bs/2)`
    pub predicted_reduction: f64,
    /// Multiplier `nu` with `(B + nu I) s = -g`.
    pub multiplier: f64,
    pub hard_case: bool,
}

fn model_reduction(g: &DVector<f64>, b: &DMatrix<f64>, s: &DVector<f64>) -> f64 {
    -(g.dot(s) + 0.5 * s.dot(&(b * s)))
}

/// Exact minimizer of `g's + s'Bs/2` subject to `||s|| <= delta`.
pub fn solve_subproblem(g: &DVector<f64>, b: &DMatrix<f64>, delta: f64) -> Result<SubproblemSolution> {
    let q = g.len();
    if b.nrows() != q || b.ncols() != q {
        return Err(Error::InvalidArgument(format!(
            "subproblem: gradient has length {q} but B is {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("subproblem: radius must be positive, got {delta}")));
    }
    if g.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("subproblem: non-finite input".into()));
    }
    let scale = b.amax().max(1.0);
    if (b - b.transpose()).amax() > 1e-10 * scale {
        return Err(Error::InvalidArgument("subproblem: B is not symmetric".into()));
    }

    let eig = SymmetricEigen::new(b.clone());
    let lam = &eig.eigenvalues;
    let qmat = &eig.eigenvectors;
    let gt = qmat.tr_mul(g);
    let (imin, lmin) = lam
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });

    let step_at = |nu: f64, skip: &dyn Fn(usize) -> bool| -> DVector<f64> {
        let coeffs = DVector::from_fn(q, |i, _| if skip(i) { 0.0 } else { -gt[i] / (lam[i] + nu) });
        qmat * coeffs
    };
    let finish = |s: DVector<f64>, nu: f64, hard: bool| SubproblemSolution {
        predicted_reduction: model_reduction(g, b, &s),
        step: s,
        multiplier: nu,
        hard_case: hard,
    };

    let eig_tol = 1e-12 * scale;
    if lmin > eig_tol {
        let s = step_at(0.0, &|_| false);
        if s.norm() <= delta {
            return Ok(finish(s, 0.0, false));
        }
    }

    let nu_low = (-lmin).max(0.0);
    let g_tol = 1e-12 * g.norm().max(1e-300);
    let in_min_space = |i: usize| lam[i] - lmin <= eig_tol;
    let orthogonal = (0..q).filter(|&i| in_min_space(i)).all(|i| gt[i].abs() <= g_tol);
    if orthogonal {
        let base = step_at(nu_low, &in_min_space);
        let bn = base.norm();
        if bn <= delta {
            // hard case: move along the leftmost eigenvector to the boundary
            let tau = (delta * delta - bn * bn).max(0.0).sqrt();
            let z = qmat.column(imin).into_owned();
            let candidates = [&base + &z * tau, &base - &z * tau];
            let s = candidates
                .into_iter()
                .max_by(|a, b2| model_reduction(g, b, a).total_cmp(&model_reduction(g, b, b2)))
                .expect("two candidates");
            return Ok(finish(s, nu_low, lmin < -eig_tol || bn < delta));
        }
    }

    // ||s(nu)|| decreases strictly on (nu_low, inf); solve 1/||s(nu)|| = 1/delta.
    let norm_and_slope = |nu: f64| {
        let mut n2 = 0.0;
        let mut d = 0.0;
        for i in 0..q {
            let c = gt[i] / (lam[i] + nu);
            n2 += c * c;
            d += c * c / (lam[i] + nu);
        }
        (n2.sqrt(), d)
    };
    let mut lo = nu_low;
    let mut hi = nu_low.max(g.norm() / delta - lmin) * (1.0 + 1e-12) + 1e-300;
    let mut nu = hi;
    for _ in 0..500 {
        let (sn, d) = norm_and_slope(nu);
        if (sn - delta).abs() <= 1e-13 * delta {
            break;
        }
        if sn > delta {
            lo = nu;
        } else {
            hi = nu;
        }
        // Newton on phi(nu) = 1/||s|| - 1/delta, phi' = d / ||s||^3
        let phi = 1.0 / sn - 1.0 / delta;
        let next = nu - phi * sn * sn * sn / d;
        nu = if next > lo && next < hi && next.is_finite() {
            next
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            break;
        }
    }
    let s = step_at(nu, &|_| false);
    if !s.iter().all(|v| v.is_finite()) {
        return Err(Error::Evaluation("subproblem: secular equation failed".into()));
    }
    Ok(finish(s, nu, false))
}

/// Value, gradient and hessian of the objective at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationStatus {
    Converged,
    MaxIter,
    SubproblemFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustRegionRecord {
    pub iteration: usize,
    /// Iterate at the start of the iteration.
    pub lambda: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub delta: f64,
    /// `None` when the trial point could not be evaluated.
    pub rho: Option<f64>,
    pub step_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustRegionTrace {
    pub records: Vec<TrustRegionRecord>,
    pub status: TerminationStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustRegionOutcome {
    pub lambda: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub trace: TrustRegionTrace,
    pub evaluations: usize,
}

impl TrustRegionOutcome {
    pub fn iterations(&self) -> usize {
        self.trace.records.len()
    }

    pub fn grad_norm(&self) -> f64 {
        self.gradient.amax()
    }
}

const MAX_CONSECUTIVE_FAILURES: usize = 20;

/// Minimizes `objective` from `x0`. Fails only if `x0` itself cannot be
/// evaluated; later trouble is reported through the terminal status.
pub fn minimize<F>(mut objective: F, x0: &DVector<f64>, cfg: &TrustRegionConfig) -> Result<TrustRegionOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<Evaluation>,
{
    cfg.validate()?;
    let mut x = x0.clone();
    let mut cur = objective(&x)?;
    let mut evaluations = 1;
    let check = |e: &Evaluation| {
        e.value.is_finite() && e.gradient.iter().chain(e.hessian.iter()).all(|v| v.is_finite())
    };
    if !check(&cur) {
        return Err(Error::Evaluation("objective is not finite at the starting point".into()));
    }
    let mut delta = cfg.delta0;
    let mut records = Vec::new();
    let mut failures = 0;

    let status = loop {
        if cur.gradient.amax() <= cfg.grad_tol {
            break TerminationStatus::Converged;
        }
        if records.len() >= cfg.max_iter {
            break TerminationStatus::MaxIter;
        }
        let sub = match solve_subproblem(&cur.gradient, &cur.hessian, delta) {
            Ok(s) => s,
            Err(_) => break TerminationStatus::SubproblemFailure,
        };
        let step_norm = sub.step.norm();
        let trial = &x + &sub.step;
        let result = objective(&trial).and_then(|e| {
            if check(&e) {
                Ok(e)
            } else {
                Err(Error::Evaluation("non-finite objective".into()))
            }
        });
        evaluations += 1;
        let mut record = TrustRegionRecord {
            iteration: records.len(),
            lambda: x.iter().copied().collect(),
            value: cur.value,
            grad_norm: cur.gradient.amax(),
            delta,
            rho: None,
            step_norm,
            accepted: false,
        };
        match result {
            Err(_) => {
                failures += 1;
                delta *= cfg.shrink;
            }
            Ok(next) => {
                failures = 0;
                let actual = cur.value - next.value;
                let rho = if sub.predicted_reduction > 0.0 {
                    actual / sub.predicted_reduction
                } else {
                    f64::NEG_INFINITY
                };
                record.rho = Some(rho);
                if rho < 0.25 {
                    delta *= cfg.shrink;
                } else if rho > 0.75 && step_norm >= delta * (1.0 - 1e-9) {
                    delta = (cfg.expand * delta).min(cfg.delta_max);
                }
                if rho > cfg.eta_accept && next.value < cur.value {
                    record.accepted = true;
                    x = trial;
                    cur = next;
                }
            }
        }
        records.push(record);
        if failures >= MAX_CONSECUTIVE_FAILURES || delta <= 1e-15 * x.norm().max(1.0) {
            break TerminationStatus::SubproblemFailure;
        }
    };

    Ok(TrustRegionOutcome {
        lambda: x,
        value: cur.value,
        gradient: cur.gradient,
        hessian: cur.hessian,
        trace: TrustRegionTrace { records, status },
        evaluations,
    })
}
