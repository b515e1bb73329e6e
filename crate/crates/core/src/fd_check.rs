//! Forward-difference validation of the exact ALO derivatives.
//!
//! Gradients are checked against `(f(lambda + h e_j) - f(lambda)) / h`;
//! hessians against forward differences of the exact gradient, symmetrized.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::alo::AloObjective;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::Model;

/// Step used by the validation protocol.
pub const DEFAULT_STEP: f64 = 1e-6;

fn check_step(step: f64) -> Result<()> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")))
    }
}

/// `|exact - approx| / max(1, |exact|)`
pub fn floored_rel_error(exact: f64, approx: f64) -> f64 {
    (exact - approx).abs() / exact.abs().max(1.0)
}

pub fn fd_gradient<F>(mut f: F, lambda: &[f64], step: f64) -> Result<DVector<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_step(step)?;
    let f0 = f(lambda)?;
    let mut out = DVector::zeros(lambda.len());
    let mut probe = lambda.to_vec();
    for j in 0..lambda.len() {
        probe[j] = lambda[j] + step;
        out[j] = (f(&probe)? - f0) / step;
        probe[j] = lambda[j];
    }
    Ok(out)
}

/// Forward differences of `grad`, returned as `(M + M') / 2`.
pub fn fd_hessian<G>(mut grad: G, lambda: &[f64], step: f64) -> Result<DMatrix<f64>>
where
    G: FnMut(&[f64]) -> Result<DVector<f64>>,
{
    Ok(symmetrize(&fd_jacobian(&mut grad, lambda, step)?))
}

/// Unsymmetrized forward-difference jacobian of `grad`; column `j` is the
/// difference in direction `j`.
pub fn fd_jacobian<G>(mut grad: G, lambda: &[f64], step: f64) -> Result<DMatrix<f64>>
where
    G: FnMut(&[f64]) -> Result<DVector<f64>>,
{
    check_step(step)?;
    let q = lambda.len();
    let g0 = grad(lambda)?;
    if g0.len() != q {
        return Err(Error::InvalidArgument("gradient length differs from lambda".into()));
    }
    let mut m = DMatrix::zeros(q, q);
    let mut probe = lambda.to_vec();
    for j in 0..q {
        probe[j] = lambda[j] + step;
        let gj = grad(&probe)?;
        m.set_column(j, &((gj - &g0) / step));
        probe[j] = lambda[j];
    }
    Ok(m)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdRow {
    pub lambda: Vec<f64>,
    /// `df/dl1`, `d2f/dl1dl2`, ... or `fit_failed`.
    pub quantity: String,
    pub exact: f64,
    pub approx: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub rows: Vec<FdRow>,
    pub worst_rel_error: f64,
    /// Lambda points whose evaluation failed.
    pub failed: Vec<Vec<f64>>,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.failed.is_empty() && self.worst_rel_error <= tol
    }

    /// Header `l1,...,lq,quantity,exact,approx,rel_error`.
    pub fn write_csv<W: Write>(&self, out: W, q: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=q).map(|k| format!("lambda{k}")).collect();
        header.extend(["quantity", "exact", "approx", "rel_error"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.lambda.iter().map(|v| format!("{v}")).collect();
            rec.push(r.quantity.clone());
            rec.extend([r.exact, r.approx, r.rel_error].map(|v| format!("{v:.12e}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Evaluation(format!("writing csv: {e}")))?;
        Ok(())
    }

    /// Aligned plain-text table in the same column order as the CSV.
    pub fn to_text(&self, q: usize) -> String {
        let mut cells: Vec<Vec<String>> = Vec::with_capacity(self.rows.len() + 1);
        let mut header: Vec<String> = (1..=q).map(|k| format!("lambda{k}")).collect();
        header.extend(["quantity", "exact", "approx", "rel_error"].map(String::from));
        cells.push(header);
        for r in &self.rows {
            let mut rec: Vec<String> = r.lambda.iter().map(|v| format!("{v:.4}")).collect();
            rec.push(r.quantity.clone());
            rec.push(format!("{:.6}", r.exact));
            rec.push(format!("{:.6}", r.approx));
            rec.push(format!("{:.2e}", r.rel_error));
            cells.push(rec);
        }
        let ncol = cells[0].len();
        let widths: Vec<usize> = (0..ncol)
            .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for r in &cells {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(v, &w)| format!("{v:>w$}"))
                .collect();
            s.push_str(line.join("  ").trim_end());
            s.push('\n');
        }
        s
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Evaluation(format!("writing csv: {e}"))
}

fn derivative_name(idx: &[usize]) -> String {
    match idx {
        [s] => format!("df/dl{}", s + 1),
        [s, t] if s == t => format!("d2f/dl{}^2", s + 1),
        [s, t] => format!("d2f/dl{}dl{}", s + 1, t + 1),
        _ => unreachable!(),
    }
}

/// Exact-vs-forward-difference comparison at every point; gradient entries
/// first, then the upper triangle of the hessian. Points are processed in
/// lexicographic order and a failed point is recorded without stopping the
/// run.
pub fn emit_fd_table(ds: &Dataset, model: &Model, lambda_points: &[Vec<f64>], step: f64) -> Result<FdReport> {
    check_step(step)?;
    let q = model.n_hyper();
    if let Some(bad) = lambda_points.iter().find(|l| l.len() != q) {
        return Err(Error::InvalidArgument(format!(
            "lambda point {bad:?} has length {}, model takes {q}",
            bad.len()
        )));
    }
    let mut points = lambda_points.to_vec();
    points.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));

    let mut rows = Vec::new();
    let mut failed = Vec::new();
    let mut worst: f64 = 0.0;
    for lam in points {
        match point_rows(ds, model, &lam, step) {
            Ok(r) => {
                for row in &r {
                    worst = worst.max(row.rel_error);
                }
                rows.extend(r);
            }
            Err(e) => {
                rows.push(FdRow {
                    lambda: lam.clone(),
                    quantity: format!("fit_failed: {e}"),
                    exact: f64::NAN,
                    approx: f64::NAN,
                    rel_error: f64::NAN,
                });
                failed.push(lam);
            }
        }
    }
    Ok(FdReport {
        rows,
        worst_rel_error: worst,
        failed,
    })
}

fn point_rows(ds: &Dataset, model: &Model, lam: &[f64], step: f64) -> Result<Vec<FdRow>> {
    let q = lam.len();
    let mut obj = AloObjective::new(ds, model);
    let report = obj.evaluate(lam)?;
    let fd_g = fd_gradient(|l| obj.value(l), lam, step)?;
    let fd_h = fd_hessian(|l| obj.value_and_gradient(l).map(|(_, g)| g), lam, step)?;
    let mut rows = Vec::new();
    let mut push = |idx: &[usize], exact: f64, approx: f64| {
        rows.push(FdRow {
            lambda: lam.to_vec(),
            quantity: derivative_name(idx),
            exact,
            approx,
            rel_error: floored_rel_error(exact, approx),
        })
    };
    for s in 0..q {
        push(&[s], report.gradient[s], fd_g[s]);
    }
    for s in 0..q {
        for t in s..q {
            push(&[s, t], report.hessian[(s, t)], fd_h[(s, t)]);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn forward_difference_of_square() {
        let g = fd_gradient(|l| Ok(l[0] * l[0]), &[1.0], 1e-6).unwrap();
        assert_abs_diff_eq!(g[0], 2.000001, epsilon = 1e-9);
    }

    #[test]
    fn constant_function_has_zero_derivatives() {
        let g = fd_gradient(|_| Ok(3.5), &[1.0, 2.0], 1e-6).unwrap();
        assert_eq!(g, DVector::zeros(2));
        let h = fd_hessian(|_| Ok(DVector::from_row_slice(&[1.0, -2.0])), &[0.3, 0.4], 1e-6).unwrap();
        assert_eq!(h, DMatrix::zeros(2, 2));
    }

    #[test]
    fn hessian_of_separable_quadratic() {
        let h = fd_hessian(|l| Ok(DVector::from_row_slice(&[2.0 * l[0], 2.0 * l[1]])), &[0.7, -1.1], 1e-6).unwrap();
        assert!((h - DMatrix::identity(2, 2) * 2.0).amax() < 1e-9);
    }

    #[test]
    fn symmetrization_averages() {
        let jac = fd_jacobian(|l| Ok(DVector::from_row_slice(&[l[1], 0.0])), &[0.0, 0.0], 1e-3).unwrap();
        assert_abs_diff_eq!(jac[(0, 1)], 1.0, epsilon = 1e-12);
        let h = symmetrize(&jac);
        assert_abs_diff_eq!(h[(0, 1)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(h[(1, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_step_and_propagates_failure() {
        assert!(fd_gradient(|_| Ok(0.0), &[1.0], 0.0).is_err());
        assert!(fd_gradient(|l| if l[0] > 1.0 { Err(Error::Evaluation("x".into())) } else { Ok(0.0) }, &[1.0], 1e-6).is_err());
    }

    #[test]
    fn floored_error() {
        assert_eq!(floored_rel_error(0.0, 1e-3), 1e-3);
        assert_eq!(floored_rel_error(100.0, 101.0), 0.01);
    }

    #[test]
    fn text_table_is_aligned() {
        let rep = FdReport {
            rows: vec![FdRow {
                lambda: vec![1.0],
                quantity: "df/dl1".into(),
                exact: -1.5,
                approx: -1.5000001,
                rel_error: 6.7e-8,
            }],
            worst_rel_error: 6.7e-8,
            failed: vec![],
        };
        let text = rep.to_text(1);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("lambda1"));
        let mut buf = Vec::new();
        rep.write_csv(&mut buf, 1).unwrap();
        let csv_text = String::from_utf8(buf).unwrap();
        assert!(csv_text.starts_with("lambda1,quantity,exact,approx,rel_error\n1,df/dl1,"));
    }
}
