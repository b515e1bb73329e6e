//! Bridge penalty `lambda_1^2 |beta|^m` with `m = 1 + lambda_2^2`.
//!
//! Near zero the power is replaced by
//! `p(t) = a1 t^2 + a2 t^4 + a3 t^5 + a4 t^6 + a5 t^7`, whose coefficients
//! make `p` agree with `t^m` at `t = delta` in value and four derivatives, so
//! the penalty is C^4 everywhere. The coefficients depend on `m`; their first
//! and second `m`-derivatives come from solving the same 5x5 system with
//! differentiated right-hand sides.

use super::penalty::RegDerivs;
use crate::error::{Error, Result};

pub const SMOOTHING_POWERS: [i32; 5] = [2, 4, 5, 6, 7];

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSmoothing {
    pub delta: f64,
    /// `m = 1 + lambda_2^2`
    pub exponent: f64,
    pub coeffs: [f64; 5],
    /// `d coeffs / dm`
    pub dcoeffs: [f64; 5],
    /// `d^2 coeffs / dm^2`
    pub ddcoeffs: [f64; 5],
}

/// Falling factorial `m (m-1) ... (m-k+1)` and its first two derivatives in
/// `m`, for k = 0..=4.
fn falling(m: f64) -> [[f64; 3]; 5] {
    let mut out = [[0.0; 3]; 5];
    let (mut v, mut d, mut dd) = (1.0, 0.0, 0.0);
    out[0] = [v, d, dd];
    for k in 1..5 {
        let f = m - (k - 1) as f64;
        dd = dd * f + 2.0 * d;
        d = d * f + v;
        v *= f;
        out[k] = [v, d, dd];
    }
    out
}

/// Integer falling factorial `e (e-1) ... (e-k+1)`.
fn falling_int(e: i32, k: usize) -> f64 {
    (0..k as i32).map(|i| (e - i) as f64).product()
}

/// Lagrange basis polynomials over the smoothing powers, with their first
/// two derivatives, evaluated at `m`.
///
/// In the rescaled variable `t / delta` the matching conditions read
/// `V c = F(m)` with `V[k][j] = e_j (e_j - 1) ... (e_j - k + 1)` and
/// `F_k(m)` the falling factorial of `m` of order `k`. Each `F_k` has degree
/// `k <= 4`, so `c(m)` is a polynomial of degree at most four, and
/// `F(e_i) = V[:, i]` forces `c(e_i)` to be the `i`-th unit vector. Hence
/// `c_j` is the `j`-th Lagrange basis polynomial on the powers, which gives
/// exact zeros whenever `m` is itself one of the powers.
fn lagrange(m: f64) -> [[f64; 3]; 5] {
    std::array::from_fn(|j| {
        let ej = SMOOTHING_POWERS[j] as f64;
        let (mut v, mut d, mut dd) = (1.0, 0.0, 0.0);
        for (i, &ei) in SMOOTHING_POWERS.iter().enumerate() {
            if i == j {
                continue;
            }
            let denom = ej - ei as f64;
            let f = (m - ei as f64) / denom;
            let df = 1.0 / denom;
            dd = dd * f + 2.0 * d * df;
            d = d * f + v * df;
            v *= f;
        }
        [v, d, dd]
    })
}

/// Coefficients of the C^4 smoothing polynomial for exponent
/// `m = 1 + lambda2^2` and seam `delta`, with their `m`-sensitivities.
pub fn bridge_smoothing_coeffs(lambda2: f64, delta: f64) -> Result<BridgeSmoothing> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "smoothing threshold must be positive, got {delta}"
        )));
    }
    if !lambda2.is_finite() {
        return Err(Error::InvalidArgument("non-finite lambda2".into()));
    }
    let m = 1.0 + lambda2 * lambda2;
    let ln_delta = delta.ln();
    let basis = lagrange(m);
    let mut coeffs = [0.0; 5];
    let mut dcoeffs = [0.0; 5];
    let mut ddcoeffs = [0.0; 5];
    for j in 0..5 {
        // a_j = delta^(m - e_j) c_j(m)
        let scale = delta.powf(m - SMOOTHING_POWERS[j] as f64);
        let [c, dc, ddc] = basis[j];
        coeffs[j] = scale * c;
        dcoeffs[j] = scale * (dc + c * ln_delta);
        ddcoeffs[j] = scale * (ddc + 2.0 * dc * ln_delta + c * ln_delta * ln_delta);
    }
    Ok(BridgeSmoothing {
        delta,
        exponent: m,
        coeffs,
        dcoeffs,
        ddcoeffs,
    })
}

/// `[p(t), p'(t), ..., p''''(t)]` for coefficients `a`.
fn poly_derivs(a: &[f64; 5], t: f64) -> [f64; 5] {
    std::array::from_fn(|k| {
        SMOOTHING_POWERS
            .iter()
            .zip(a)
            .map(|(&e, &c)| {
                let ff = falling_int(e, k);
                if ff == 0.0 {
                    0.0
                } else {
                    c * ff * t.powi(e - k as i32)
                }
            })
            .sum()
    })
}

impl BridgeSmoothing {
    /// Value and first four derivatives of the smoothing polynomial at `t`.
    pub fn eval(&self, t: f64) -> [f64; 5] {
        poly_derivs(&self.coeffs, t)
    }

    /// Worst mismatch between `p` and `t^m` at the seam over value and four
    /// derivatives, each measured relative to `delta^m / delta^k` (the
    /// natural scale of the `k`-th derivative).
    pub fn seam_residual(&self) -> f64 {
        let (m, d) = (self.exponent, self.delta);
        let p = self.eval(d);
        let f = falling(m);
        (0..5)
            .map(|k| {
                let target = f[k][0] * d.powf(m - k as f64);
                (p[k] - target).abs() * d.powi(k as i32) / d.powf(m)
            })
            .fold(0.0, f64::max)
    }
}

/// Derivatives of the base function `b(beta; m)` (either `|beta|^m` or the
/// smoothing polynomial of `|beta|`): rows are (value, d/dm, d2/dm2),
/// columns are beta-derivative orders 0..=4.
fn base_derivs(beta: f64, sm: &BridgeSmoothing) -> [[f64; 5]; 3] {
    let t = beta.abs();
    let sign = if beta < 0.0 { -1.0 } else { 1.0 };
    let mut out = [[0.0; 5]; 3];
    if t >= sm.delta {
        let m = sm.exponent;
        let ln_t = t.ln();
        let f = falling(m);
        for k in 0..5 {
            let pw = t.powf(m - k as f64);
            let [v, dv, ddv] = f[k];
            out[0][k] = v * pw;
            out[1][k] = (dv + v * ln_t) * pw;
            out[2][k] = (ddv + 2.0 * dv * ln_t + v * ln_t * ln_t) * pw;
        }
    } else {
        out[0] = poly_derivs(&sm.coeffs, t);
        out[1] = poly_derivs(&sm.dcoeffs, t);
        out[2] = poly_derivs(&sm.ddcoeffs, t);
    }
    // d^k/dbeta^k g(|beta|) = sign^k g^(k)(|beta|)
    for row in out.iter_mut() {
        row[1] *= sign;
        row[3] *= sign;
    }
    out
}

/// All penalty partials for `lambda_1^2 b(beta; 1 + lambda_2^2)`.
pub fn bridge_reg_derivs(
    lambda: &[f64],
    beta: f64,
    smoothing: &BridgeSmoothing,
    is_intercept: bool,
) -> RegDerivs {
    let mut out = RegDerivs::zero(2);
    if is_intercept {
        return out;
    }
    let (l1, l2) = (lambda[0], lambda[1]);
    let c = l1 * l1;
    let [phi, phi_m, phi_mm] = base_derivs(beta, smoothing);
    // m = 1 + l2^2: d/dl2 = 2 l2 d/dm, d2/dl2^2 = 4 l2^2 d2/dm2 + 2 d/dm
    let dm = 2.0 * l2;

    out.value = c * phi[0];
    out.d1 = c * phi[1];
    out.d2 = c * phi[2];
    out.d3 = c * phi[3];
    out.d4 = c * phi[4];

    let partials = |k: usize| -> ([f64; 2], [[f64; 2]; 2]) {
        let d_l1 = 2.0 * l1 * phi[k];
        let d_l2 = c * dm * phi_m[k];
        let d_l1l1 = 2.0 * phi[k];
        let d_l1l2 = 2.0 * l1 * dm * phi_m[k];
        let d_l2l2 = c * (dm * dm * phi_mm[k] + 2.0 * phi_m[k]);
        ([d_l1, d_l2], [[d_l1l1, d_l1l2], [d_l1l2, d_l2l2]])
    };
    let (g1, h1) = partials(1);
    let (g2, h2) = partials(2);
    let (g3, _) = partials(3);
    out.dl_d1 = g1.to_vec();
    out.dl_d2 = g2.to_vec();
    out.dl_d3 = g3.to_vec();
    for s in 0..2 {
        for t in 0..2 {
            out.dll_d1[(s, t)] = h1[s][t];
            out.dll_d2[(s, t)] = h2[s][t];
        }
    }
    out
}
