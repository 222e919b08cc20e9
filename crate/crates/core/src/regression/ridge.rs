use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-wise standardization learned on a training set.
///
/// Indicator columns pass through untouched. Numeric columns with zero
/// training variance are centered only and flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub numeric: Vec<bool>,
    pub zero_variance: Vec<bool>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>], numeric: &[bool]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidArgument("standardization needs at least two rows".into()));
        }
        let p = numeric.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidArgument("row width does not match column mask".into()));
        }
        let n = rows.len() as f64;
        let mut s = Self {
            means: vec![0.0; p],
            sds: vec![1.0; p],
            numeric: numeric.to_vec(),
            zero_variance: vec![false; p],
        };
        for j in (0..p).filter(|&j| numeric[j]) {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            s.means[j] = mean;
            if var > 1e-24 {
                s.sds[j] = var.sqrt();
            } else {
                s.zero_variance[j] = true;
            }
        }
        if s.zero_variance.iter().any(|z| *z) {
            tracing::debug!(columns = ?s.zero_variance, "zero-variance columns centered only");
        }
        Ok(s)
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &x)| (x - self.means[j]) / self.sds[j])
            .collect()
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    /// One weight per (standardized) column.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<Standardizer>,
}

impl RidgeModel {
    /// Predicts from rows in the space the model was fit in.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
    }

    /// Predicts from raw rows, applying the stored standardizer if any.
    pub fn predict(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter()
            .map(|r| match &self.standardizer {
                Some(s) => self.predict_row(&s.transform_row(r)),
                None => self.predict_row(r),
            })
            .collect()
    }
}

/// Minimizes `Σ (y − b − w·x)² + λ‖w‖²` with an unpenalized intercept `b`.
///
/// Solved in closed form on centered data: `(XcᵀXc + λI) w = Xcᵀyc`,
/// `b = ȳ − w·x̄`. With `λ = 0` a rank-deficient design is an error.
pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<RidgeModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and ≥ 0, got {lambda}"
        )));
    }
    let n = x.len();
    if n == 0 || n != y.len() {
        return Err(Error::InvalidArgument(format!("{n} rows but {} targets", y.len())));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidArgument("ragged design matrix".into()));
    }
    let nf = n as f64;
    let x_mean: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let y_mean = y.iter().sum::<f64>() / nf;
    let xc = DMatrix::from_fn(n, p, |i, j| x[i][j] - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let mut gram = xc.tr_mul(&xc);
    if lambda == 0.0 {
        let eig = gram.clone().symmetric_eigenvalues();
        let max = eig.iter().cloned().fold(0.0_f64, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if p > 0 && min <= max.max(1.0) * 1e-10 {
            return Err(Error::Singular(lambda));
        }
    }
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    let rhs = xc.tr_mul(&yc);
    let weights = if p == 0 {
        DVector::zeros(0)
    } else {
        gram.cholesky().ok_or(Error::Singular(lambda))?.solve(&rhs)
    };
    let intercept = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(RidgeModel {
        weights: weights.iter().copied().collect(),
        intercept,
        lambda,
        standardizer: None,
    })
}

/// Gradient of the ridge objective at `(intercept, weights)`; zero at the optimum.
pub fn objective_gradient(x: &[Vec<f64>], y: &[f64], model: &RidgeModel) -> (f64, Vec<f64>) {
    let p = model.weights.len();
    let mut g_b = 0.0;
    let mut g_w = vec![0.0; p];
    for (row, &t) in x.iter().zip(y) {
        let r = model.predict_row(row) - t;
        g_b += 2.0 * r;
        for j in 0..p {
            g_w[j] += 2.0 * r * row[j];
        }
    }
    for j in 0..p {
        g_w[j] += 2.0 * model.lambda * model.weights[j];
    }
    (g_b, g_w)
}
