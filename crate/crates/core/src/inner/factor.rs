//! Factorizations of `H = X' A X + W` with `A`, `W` diagonal.
//!
//! Two evaluation orders are supported. When `n >= p` the `p x p` matrix is
//! formed and Cholesky-factored. When `p > n` the matrix inversion lemma is
//! applied to the penalized coordinates,
//!
//! ```text
//! H_ff^-1 = W_f^-1 - W_f^-1 X_f' (A^-1 + X_f W_f^-1 X_f')^-1 X_f W_f^-1
//! ```
//!
//! which only needs a Cholesky factor of the `n x n` capacitance matrix.
//! Coordinates with a zero (or negative) penalty curvature, such as an
//! unpenalized intercept, are eliminated through a small Schur complement.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    NOverP,
    POverN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathHint {
    #[default]
    Auto,
    NOverP,
    POverN,
}

impl PathHint {
    pub fn resolve(self, n: usize, p: usize) -> Path {
        match self {
            PathHint::Auto if n >= p => Path::NOverP,
            PathHint::Auto => Path::POverN,
            PathHint::NOverP => Path::NOverP,
            PathHint::POverN => Path::POverN,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HFactorization {
    kind: Kind,
    p: usize,
}

#[derive(Debug, Clone)]
enum Kind {
    Dense(Cholesky<f64, Dyn>),
    Woodbury(Box<Woodbury>),
}

#[derive(Debug, Clone)]
struct Woodbury {
    free: Vec<usize>,
    fixed: Vec<usize>,
    x_free: DMatrix<f64>,
    w_free_inv: DVector<f64>,
    capacitance: Cholesky<f64, Dyn>,
    block: Option<FixedBlock>,
}

/// Elimination data for the unpenalized coordinates `k`:
/// `H_fk`, `G = H_ff^-1 H_fk`, and the Schur complement `H_kk - H_fk' G`.
#[derive(Debug, Clone)]
struct FixedBlock {
    h_fk: DMatrix<f64>,
    g: DMatrix<f64>,
    schur: Cholesky<f64, Dyn>,
}

/// `X' diag(a) X`.
pub(crate) fn gram(x: &DMatrix<f64>, a: &DVector<f64>) -> DMatrix<f64> {
    let mut xa = x.clone();
    for (mut row, &ai) in xa.row_iter_mut().zip(a.iter()) {
        row *= ai;
    }
    x.tr_mul(&xa)
}

/// Dense `X' diag(a) X + diag(w)`.
pub fn assemble_dense(x: &DMatrix<f64>, a: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut h = gram(x, a);
    for (j, &wj) in w.iter().enumerate() {
        h[(j, j)] += wj;
    }
    h
}

impl HFactorization {
    pub fn new(
        x: &DMatrix<f64>,
        a_diag: &DVector<f64>,
        w_diag: &DVector<f64>,
        hint: PathHint,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        debug_assert_eq!(a_diag.len(), n);
        debug_assert_eq!(w_diag.len(), p);
        let kind = match hint.resolve(n, p) {
            Path::NOverP => {
                let h = assemble_dense(x, a_diag, w_diag);
                let chol = Cholesky::new(h).ok_or_else(|| {
                    Error::NotPositiveDefinite(format!("hessian of the fit objective ({p} x {p})"))
                })?;
                Kind::Dense(chol)
            }
            Path::POverN => Kind::Woodbury(Box::new(Woodbury::new(x, a_diag, w_diag)?)),
        };
        Ok(Self { kind, p })
    }

    pub fn path(&self) -> Path {
        match self.kind {
            Kind::Dense(_) => Path::NOverP,
            Kind::Woodbury(_) => Path::POverN,
        }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    /// `H^-1 b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        self.solve_mat(&m).column(0).into_owned()
    }

    /// `H^-1 B`, column by column.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.kind {
            Kind::Dense(chol) => chol.solve(b),
            Kind::Woodbury(wb) => wb.solve_mat(b),
        }
    }

    /// Lower Cholesky factor of `H` when it was formed explicitly.
    pub fn cholesky_factor(&self) -> Option<DMatrix<f64>> {
        match &self.kind {
            Kind::Dense(chol) => Some(chol.l()),
            Kind::Woodbury(_) => None,
        }
    }

    /// `L^-1 B` on the dense path.
    pub fn half_solve_mat(&self, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        match &self.kind {
            Kind::Dense(chol) => chol.l_dirty().solve_lower_triangular(b),
            Kind::Woodbury(_) => None,
        }
    }

    /// Returns `T = H^-1 X'` (column `i` is `t_i = H^-1 x_i`) and the
    /// leverages `h_i = x_i' H^-1 x_i`.
    ///
    /// On the dense path `h_i = ||L^-1 x_i||^2`; on the Woodbury path
    /// `h_i = x_i . t_i`.
    pub fn inverse_times_xt(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let xt = x.transpose();
        match &self.kind {
            Kind::Dense(chol) => {
                let l = chol.l_dirty();
                let z = l
                    .solve_lower_triangular(&xt)
                    .expect("cholesky factor has a nonzero diagonal");
                let h = DVector::from_iterator(z.ncols(), z.column_iter().map(|c| c.norm_squared()));
                let t = l
                    .tr_solve_lower_triangular(&z)
                    .expect("cholesky factor has a nonzero diagonal");
                (t, h)
            }
            Kind::Woodbury(wb) => {
                let t = wb.solve_mat(&xt);
                let h = DVector::from_iterator(
                    t.ncols(),
                    t.column_iter().zip(xt.column_iter()).map(|(ti, xi)| ti.dot(&xi)),
                );
                (t, h)
            }
        }
    }

    pub fn leverage(&self, x: &DMatrix<f64>) -> DVector<f64> {
        match &self.kind {
            Kind::Dense(chol) => {
                let z = chol
                    .l_dirty()
                    .solve_lower_triangular(&x.transpose())
                    .expect("cholesky factor has a nonzero diagonal");
                DVector::from_iterator(z.ncols(), z.column_iter().map(|c| c.norm_squared()))
            }
            Kind::Woodbury(_) => self.inverse_times_xt(x).1,
        }
    }
}

impl Woodbury {
    fn new(x: &DMatrix<f64>, a: &DVector<f64>, w: &DVector<f64>) -> Result<Self> {
        let n = x.nrows();
        if let Some(i) = a.iter().position(|&ai| !(ai > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "p > n factorization needs A_ii > 0, observation {i} has {}",
                a[i]
            )));
        }
        let (free, fixed): (Vec<usize>, Vec<usize>) = (0..w.len()).partition(|&j| w[j] > 0.0);
        let x_free = x.select_columns(&free);
        let w_free_inv = DVector::from_iterator(free.len(), free.iter().map(|&j| 1.0 / w[j]));

        // A^-1 + X_f W_f^-1 X_f'
        let mut xw = x_free.clone();
        for (mut col, &wi) in xw.column_iter_mut().zip(w_free_inv.iter()) {
            col *= wi;
        }
        let mut cap = &xw * x_free.transpose();
        for i in 0..n {
            cap[(i, i)] += 1.0 / a[i];
        }
        let capacitance = Cholesky::new(cap).ok_or_else(|| {
            Error::NotPositiveDefinite(format!("capacitance matrix ({n} x {n})"))
        })?;

        let mut wb = Woodbury {
            free,
            fixed,
            x_free,
            w_free_inv,
            capacitance,
            block: None,
        };
        if !wb.fixed.is_empty() {
            let x_fixed = x.select_columns(&wb.fixed);
            let mut ax = x_fixed.clone();
            for (mut row, &ai) in ax.row_iter_mut().zip(a.iter()) {
                row *= ai;
            }
            let h_fk = wb.x_free.tr_mul(&ax);
            let mut h_kk = x_fixed.tr_mul(&ax);
            for (slot, &j) in wb.fixed.iter().enumerate() {
                h_kk[(slot, slot)] += w[j];
            }
            let g = wb.solve_free(&h_fk);
            let schur = h_kk - h_fk.tr_mul(&g);
            let schur = Cholesky::new(schur).ok_or_else(|| {
                Error::NotPositiveDefinite(format!(
                    "Schur complement of the {} unpenalized coordinates",
                    wb.fixed.len()
                ))
            })?;
            wb.block = Some(FixedBlock { h_fk, g, schur });
        }
        Ok(wb)
    }

    /// `H_ff^-1 B` through the matrix inversion lemma.
    fn solve_free(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = b.clone();
        for (mut row, &wi) in y.row_iter_mut().zip(self.w_free_inv.iter()) {
            row *= wi;
        }
        if self.free.is_empty() {
            return y;
        }
        let z = &self.x_free * &y;
        let c = self.capacitance.solve(&z);
        let mut corr = self.x_free.tr_mul(&c);
        for (mut row, &wi) in corr.row_iter_mut().zip(self.w_free_inv.iter()) {
            row *= wi;
        }
        y - corr
    }

    fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let b_free = b.select_rows(&self.free);
        let y = self.solve_free(&b_free);
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        match &self.block {
            None => {
                for (slot, &j) in self.free.iter().enumerate() {
                    out.set_row(j, &y.row(slot));
                }
            }
            Some(blk) => {
                let b_fixed = b.select_rows(&self.fixed);
                let z_fixed = blk.schur.solve(&(b_fixed - blk.h_fk.tr_mul(&y)));
                let z_free = y - &blk.g * &z_fixed;
                for (slot, &j) in self.free.iter().enumerate() {
                    out.set_row(j, &z_free.row(slot));
                }
                for (slot, &j) in self.fixed.iter().enumerate() {
                    out.set_row(j, &z_fixed.row(slot));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(n: usize, p: usize, zero_w: &[usize], seed: u64) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        for &j in zero_w {
            x.column_mut(j).fill(1.0);
        }
        let a = DVector::from_fn(n, |_, _| rng.random_range(0.2..2.0));
        let w = DVector::from_fn(p, |j, _| if zero_w.contains(&j) { 0.0 } else { rng.random_range(0.5..3.0) });
        (x, a, w)
    }

    fn direct_solve(x: &DMatrix<f64>, a: &DVector<f64>, w: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        assemble_dense(x, a, w).lu().solve(b).unwrap()
    }

    fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).amax() / b.amax().max(1e-300)
    }

    #[test]
    fn both_paths_agree_with_dense_solve() {
        let (x, a, w) = random_problem(6, 3, &[], 1);
        let b = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let exact = direct_solve(&x, &a, &w, &b);
        let dense = HFactorization::new(&x, &a, &w, PathHint::NOverP).unwrap();
        let wood = HFactorization::new(&x, &a, &w, PathHint::POverN).unwrap();
        assert_eq!(dense.path(), Path::NOverP);
        assert_eq!(wood.path(), Path::POverN);
        assert!(rel(&dense.solve(&b), &exact) < 1e-10);
        assert!(rel(&wood.solve(&b), &exact) < 1e-10);
    }

    #[test]
    fn woodbury_block_path_handles_unpenalized_intercept() {
        let (x, a, w) = random_problem(3, 5, &[4], 2);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0, 3.0]);
        let exact = direct_solve(&x, &a, &w, &b);
        let wood = HFactorization::new(&x, &a, &w, PathHint::Auto).unwrap();
        assert_eq!(wood.path(), Path::POverN);
        assert!(rel(&wood.solve(&b), &exact) < 1e-8);
    }

    #[test]
    fn leverage_paths_agree_with_dense_inverse() {
        let (x, a, w) = random_problem(4, 7, &[6], 3);
        let hinv = assemble_dense(&x, &a, &w).try_inverse().unwrap();
        let oracle = DVector::from_fn(4, |i, _| {
            let xi = x.row(i).transpose();
            xi.dot(&(&hinv * &xi))
        });
        let wood = HFactorization::new(&x, &a, &w, PathHint::POverN).unwrap();
        assert!(rel(&wood.leverage(&x), &oracle) < 1e-8);
        let dense = HFactorization::new(&x, &a, &w, PathHint::NOverP).unwrap();
        assert!(rel(&dense.leverage(&x), &oracle) < 1e-8);
    }

    #[test]
    fn large_penalty_limit_is_diagonal() {
        let (x, a, _) = random_problem(5, 3, &[], 4);
        let w = DVector::from_element(3, 2.0 * 1e8);
        let b = DVector::from_vec(vec![1.0, 2.0, -3.0]);
        for hint in [PathHint::NOverP, PathHint::POverN] {
            let z = HFactorization::new(&x, &a, &w, hint).unwrap().solve(&b);
            let limit = &b / 2e8;
            assert!(rel(&z, &limit) < 1e-6);
        }
    }

    #[test]
    fn rejects_zero_curvature_on_woodbury_path() {
        let (x, mut a, w) = random_problem(3, 5, &[], 5);
        a[1] = 0.0;
        assert!(HFactorization::new(&x, &a, &w, PathHint::POverN).is_err());
    }

    #[test]
    fn rejects_indefinite_matrix() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let a = DVector::from_element(2, 1.0);
        let w = DVector::from_vec(vec![-5.0, 1.0]);
        assert!(matches!(
            HFactorization::new(&x, &a, &w, PathHint::NOverP),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn paths_agree_on_random_instances(n in 1usize..20, p in 1usize..20, seed in 0u64..500, intercept in proptest::bool::ANY) {
            let zero: Vec<usize> = if intercept && p > 1 { vec![p - 1] } else { vec![] };
            let (x, a, w) = random_problem(n, p, &zero, seed);
            let dense = HFactorization::new(&x, &a, &w, PathHint::NOverP);
            let wood = HFactorization::new(&x, &a, &w, PathHint::POverN);
            if let (Ok(d), Ok(wd)) = (dense, wood) {
                let hd = d.leverage(&x);
                let hw = wd.leverage(&x);
                proptest::prop_assert!(rel(&hw, &hd) < 1e-8, "{} vs {}", hw, hd);
            }
        }
    }
}
