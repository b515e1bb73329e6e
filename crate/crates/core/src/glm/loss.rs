use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss `l(u)` and its first four derivatives in `u`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossDerivs {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// `(y - u)^2`
    Squared,
    /// `log(1 + exp(-y u))` with `y` in {-1, +1}
    Logistic,
}

impl Loss {
    /// Derivatives at `(y, u)`. For the logistic loss `y` must be ±1; callers
    /// validate responses once up front.
    #[inline]
    pub fn derivs(self, y: f64, u: f64) -> LossDerivs {
        match self {
            Loss::Squared => squared_loss_derivs(y, u),
            Loss::Logistic => logistic_unchecked(y, u),
        }
    }

    #[inline]
    pub fn value(self, y: f64, u: f64) -> f64 {
        match self {
            Loss::Squared => (y - u) * (y - u),
            Loss::Logistic => softplus(-y * u),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Loss::Squared => "squared",
            Loss::Logistic => "logistic",
        }
    }

    pub fn check_responses(self, y: &[f64]) -> Result<()> {
        if self == Loss::Logistic {
            if let Some(i) = y.iter().position(|&v| v != 1.0 && v != -1.0) {
                return Err(Error::InvalidDataset(format!(
                    "logistic loss needs responses in {{-1, +1}}, row {} has {}",
                    i + 1,
                    y[i]
                )));
            }
        }
        Ok(())
    }
}

pub fn squared_loss_derivs(y: f64, u: f64) -> LossDerivs {
    let r = y - u;
    LossDerivs {
        value: r * r,
        d1: -2.0 * r,
        d2: 2.0,
        d3: 0.0,
        d4: 0.0,
    }
}

pub fn logistic_loss_derivs(y: f64, u: f64) -> Result<LossDerivs> {
    if y != 1.0 && y != -1.0 {
        return Err(Error::InvalidArgument(format!(
            "logistic response must be -1 or +1, got {y}"
        )));
    }
    Ok(logistic_unchecked(y, u))
}

/// `log(1 + exp(z))` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `(sigmoid(u), 1 - sigmoid(u))`, each computed without cancellation.
#[inline]
fn sigmoid_pair(u: f64) -> (f64, f64) {
    if u >= 0.0 {
        let e = (-u).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = u.exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    }
}

#[inline]
fn logistic_unchecked(y: f64, u: f64) -> LossDerivs {
    let (p, q) = sigmoid_pair(u);
    // d1 = -y / (1 + exp(y u)) = -y * sigmoid(-y u)
    let d1 = if y > 0.0 { -q } else { p };
    let pq = p * q;
    let diff = q - p;
    LossDerivs {
        value: softplus(-y * u),
        d1,
        d2: pq,
        d3: pq * diff,
        // pq(q^2 + p^2) - 4 q^2 p^2, rearranged to avoid cancellation near u = 0
        d4: pq * diff * diff - 2.0 * pq * pq,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn squared_examples() {
        assert_eq!(
            squared_loss_derivs(2.0, 0.5),
            LossDerivs { value: 2.25, d1: -3.0, d2: 2.0, d3: 0.0, d4: 0.0 }
        );
        assert_eq!(
            squared_loss_derivs(1.7, 1.7),
            LossDerivs { value: 0.0, d1: 0.0, d2: 2.0, d3: 0.0, d4: 0.0 }
        );
        assert_eq!(
            squared_loss_derivs(0.0, 1.0),
            LossDerivs { value: 1.0, d1: 2.0, d2: 2.0, d3: 0.0, d4: 0.0 }
        );
    }

    #[test]
    fn logistic_at_origin() {
        let plus = logistic_loss_derivs(1.0, 0.0).unwrap();
        assert_relative_eq!(plus.value, 2f64.ln(), epsilon = 1e-15);
        assert_eq!((plus.d1, plus.d2, plus.d3, plus.d4), (-0.5, 0.25, 0.0, -0.125));
        let minus = logistic_loss_derivs(-1.0, 0.0).unwrap();
        assert_eq!((minus.d1, minus.d2, minus.d3, minus.d4), (0.5, 0.25, 0.0, -0.125));
        assert!(logistic_loss_derivs(0.0, 1.0).is_err());
    }

    #[test]
    fn logistic_matches_central_differences() {
        let h = 1e-5;
        for &y in &[1.0, -1.0] {
            for &u in &[-4.0, -1.3, -0.2, 0.0, 0.4, 1.3, 3.5] {
                let at = |v| logistic_loss_derivs(y, v).unwrap();
                let (lo, hi, mid) = (at(u - h), at(u + h), at(u));
                let fd = [
                    (hi.value - lo.value) / (2.0 * h),
                    (hi.d1 - lo.d1) / (2.0 * h),
                    (hi.d2 - lo.d2) / (2.0 * h),
                    (hi.d3 - lo.d3) / (2.0 * h),
                ];
                let exact = [mid.d1, mid.d2, mid.d3, mid.d4];
                for (e, a) in exact.iter().zip(fd) {
                    assert!(
                        (e - a).abs() <= 1e-6 * e.abs().max(1e-3),
                        "y={y} u={u}: exact {e} fd {a}"
                    );
                }
            }
        }
    }

    #[test]
    fn logistic_is_stable_for_large_margins() {
        for &u in &[-700.0, -50.0, 50.0, 700.0] {
            for &y in &[1.0, -1.0] {
                let d = logistic_loss_derivs(y, u).unwrap();
                assert!([d.value, d.d1, d.d2, d.d3, d.d4].iter().all(|v| v.is_finite()));
            }
        }
        let d = logistic_loss_derivs(1.0, 700.0).unwrap();
        assert!(d.value > 0.0 && d.value < 1e-300);
        assert_relative_eq!(logistic_loss_derivs(-1.0, 700.0).unwrap().value, 700.0);
    }

    proptest::proptest! {
        #[test]
        fn logistic_curvature_bounds(u in -60.0f64..60.0, positive in proptest::bool::ANY) {
            let y = if positive { 1.0 } else { -1.0 };
            let d = logistic_loss_derivs(y, u).unwrap();
            proptest::prop_assert!(d.d2 > 0.0 && d.d2 <= 0.25);
            proptest::prop_assert!(d.d3.abs() <= d.d2);
        }
    }
}
