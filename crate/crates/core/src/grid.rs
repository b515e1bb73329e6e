//! Grid-search baseline over log-spaced hyperparameter grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alo::alo_value;
use crate::dataset::{Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::glm::Model;
use crate::inner::{fit, FitOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Alo,
    KFoldCv,
}

/// Log-spaced values per dimension; the grid is their cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<Vec<f64>>,
}

/// `points` values from `min` to `max`, evenly spaced in `log10`.
pub fn log_space(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min && max.is_finite()) || points == 0 {
        return Err(Error::InvalidArgument(format!(
            "log grid needs 0 < min <= max and at least one point, got [{min}, {max}] x {points}"
        )));
    }
    if points == 1 {
        return Ok(vec![min]);
    }
    let (a, b) = (min.log10(), max.log10());
    Ok((0..points)
        .map(|k| match k {
            0 => min,
            k if k == points - 1 => max,
            k => 10f64.powf(a + (b - a) * k as f64 / (points - 1) as f64),
        })
        .collect())
}

impl GridSpec {
    /// The same log axis in each of `q` dimensions.
    pub fn uniform(q: usize, min: f64, max: f64, points: usize) -> Result<Self> {
        let axis = log_space(min, max, points)?;
        Ok(Self { axes: vec![axis; q] })
    }

    pub fn singleton(lambda: &[f64]) -> Self {
        Self {
            axes: lambda.iter().map(|&l| vec![l]).collect(),
        }
    }

    /// All grid points in lexicographic order.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = vec![vec![]];
        for axis in &self.axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub lambda: Vec<f64>,
    /// `None` when the point failed.
    pub value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub points: Vec<GridPoint>,
    /// `None` when every point failed.
    pub best: Option<usize>,
    pub criterion: Criterion,
}

impl GridResult {
    pub fn best_point(&self) -> Option<&GridPoint> {
        self.best.map(|i| &self.points[i])
    }

    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.value.is_none()).count()
    }
}

/// Mean over folds of the held-out mean loss, fitting on each training part.
pub fn kfold_cv_loss(ds: &Dataset, model: &Model, lambda: &[f64], folds: &FoldAssignment) -> Result<f64> {
    if folds.fold_of.len() != ds.n() {
        return Err(Error::InvalidArgument(format!(
            "fold assignment covers {} rows, dataset has {}",
            folds.fold_of.len(),
            ds.n()
        )));
    }
    let mut total = 0.0;
    for k in 0..folds.k {
        let (train, test) = folds.split(k);
        let tr = ds.subset(&train);
        let te = ds.subset(&test);
        let st = fit(&tr, model, lambda, None, &FitOptions::default())?;
        if !st.converged {
            return Err(Error::Evaluation(format!("fold {k}: inner solver did not converge")));
        }
        total += held_out_loss(&te, model, &st.beta);
    }
    Ok(total / folds.k as f64)
}

/// Mean loss of `beta` on `ds`.
pub fn held_out_loss(ds: &Dataset, model: &Model, beta: &nalgebra::DVector<f64>) -> f64 {
    let u = ds.features() * beta;
    let y = ds.responses();
    u.iter()
        .zip(y.iter())
        .map(|(&ui, &yi)| model.loss.value(yi, ui))
        .sum::<f64>()
        / ds.n() as f64
}

fn evaluate_point(
    ds: &Dataset,
    model: &Model,
    lambda: &[f64],
    criterion: Criterion,
    folds: Option<&FoldAssignment>,
) -> Result<f64> {
    match criterion {
        Criterion::Alo => {
            let st = fit(ds, model, lambda, None, &FitOptions::default())?;
            if !st.converged {
                return Err(Error::Evaluation("inner solver did not converge".into()));
            }
            alo_value(&st, ds, model.loss)
        }
        Criterion::KFoldCv => kfold_cv_loss(ds, model, lambda, folds.expect("checked by caller")),
    }
}

/// Evaluates the criterion at every grid point in parallel. Failed points are
/// kept with `value = None`; ties go to the lexicographically smaller `lambda`.
pub fn grid_search(
    ds: &Dataset,
    model: &Model,
    grid: &GridSpec,
    criterion: Criterion,
    folds: Option<&FoldAssignment>,
) -> Result<GridResult> {
    if grid.axes.len() != model.n_hyper() {
        return Err(Error::InvalidArgument(format!(
            "grid has {} axes, model takes {} hyperparameters",
            grid.axes.len(),
            model.n_hyper()
        )));
    }
    if grid.axes.iter().any(|a| a.is_empty()) {
        return Err(Error::InvalidArgument("grid axis is empty".into()));
    }
    if criterion == Criterion::KFoldCv && folds.is_none() {
        return Err(Error::InvalidArgument("k-fold criterion needs a fold assignment".into()));
    }
    let points: Vec<GridPoint> = grid
        .points()
        .into_par_iter()
        .map(|lambda| match evaluate_point(ds, model, &lambda, criterion, folds) {
            Ok(v) if v.is_finite() => GridPoint { lambda, value: Some(v), error: None },
            Ok(v) => GridPoint { lambda, value: None, error: Some(format!("non-finite value {v}")) },
            Err(e) => GridPoint { lambda, value: None, error: Some(e.to_string()) },
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, p) in points.iter().enumerate() {
        let Some(v) = p.value else { continue };
        best = match best {
            None => Some(i),
            Some(b) => {
                let bv = points[b].value.expect("best has a value");
                let smaller = points[i].lambda.partial_cmp(&points[b].lambda) == Some(std::cmp::Ordering::Less);
                if v < bv || (v == bv && smaller) { Some(i) } else { Some(b) }
            }
        };
    }
    Ok(GridResult { points, best, criterion })
}
