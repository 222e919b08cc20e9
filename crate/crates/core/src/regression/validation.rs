use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ridge::{fit_ridge, RidgeModel, Standardizer};
use crate::error::{Error, Result};
use crate::metrics::{mean, mse, population_variance, r_squared};

pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.1, 1.0, 10.0, 100.0, 500.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub n_folds: usize,
    /// Folds of the nested split used to pick λ inside each training fold.
    pub inner_folds: usize,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            n_folds: 5,
            inner_folds: 5,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with a seeded generator and cuts it into `n_folds`
/// contiguous chunks; the first `n % n_folds` chunks get one extra row.
pub fn kfold_splits(n: usize, n_folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument(format!("n_folds must be ≥ 2, got {n_folds}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / n_folds;
    let extra = n % n_folds;
    let mut splits = Vec::with_capacity(n_folds);
    let mut start = 0;
    for fold in 0..n_folds {
        let size = base + usize::from(fold < extra);
        if size < 2 {
            return Err(Error::FoldTooSmall { fold, size });
        }
        let mut test = order[start..start + size].to_vec();
        let mut train: Vec<usize> = order[..start].iter().chain(&order[start + size..]).copied().collect();
        test.sort_unstable();
        train.sort_unstable();
        splits.push(FoldSplit { fold, train, test });
        start += size;
    }
    Ok(splits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub mse: f64,
    pub r2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_folds: usize,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub mse_mean: f64,
    /// Population (ddof = 0) standard deviation across folds.
    pub mse_sd: f64,
    pub r2_mean: f64,
    pub r2_sd: f64,
}

/// Runs `predict` on every fold of a seeded split and scores its held-out
/// predictions. The closure returns predictions for `split.test` in order,
/// plus the λ it used if any.
pub fn evaluate_folds<F>(targets: &[f64], n_folds: usize, seed: u64, mut predict: F) -> Result<EvaluationReport>
where
    F: FnMut(&FoldSplit) -> Result<(Vec<f64>, Option<f64>)>,
{
    let splits = kfold_splits(targets.len(), n_folds, seed)?;
    let mut folds = Vec::with_capacity(splits.len());
    for split in &splits {
        let (pred, lambda) = predict(split)?;
        if pred.len() != split.test.len() {
            return Err(Error::InvalidArgument(format!(
                "fold {} returned {} predictions for {} rows",
                split.fold,
                pred.len(),
                split.test.len()
            )));
        }
        let y: Vec<f64> = split.test.iter().map(|&i| targets[i]).collect();
        let r2 = r_squared(&y, &pred).ok_or(Error::ConstantFold(split.fold))?;
        folds.push(FoldReport {
            fold: split.fold,
            n_train: split.train.len(),
            n_test: split.test.len(),
            mse: mse(&y, &pred),
            r2,
            lambda,
        });
    }
    let mses: Vec<f64> = folds.iter().map(|f| f.mse).collect();
    let r2s: Vec<f64> = folds.iter().map(|f| f.r2).collect();
    Ok(EvaluationReport {
        n_folds,
        seed,
        mse_mean: mean(&mses),
        mse_sd: population_variance(&mses).sqrt(),
        r2_mean: mean(&r2s),
        r2_sd: population_variance(&r2s).sqrt(),
        folds,
    })
}

fn gather<T: Clone>(xs: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| xs[i].clone()).collect()
}

/// Standardizes on `x`, fits at `lambda`, and keeps the standardizer with the model.
pub fn fit_pipeline(x: &[Vec<f64>], y: &[f64], numeric: &[bool], lambda: f64) -> Result<RidgeModel> {
    let s = Standardizer::fit(x, numeric)?;
    let mut model = fit_ridge(&s.transform(x), y, lambda)?;
    model.standardizer = Some(s);
    Ok(model)
}

/// Mean validation MSE of every grid value under an inner k-fold split.
pub fn lambda_curve(
    x: &[Vec<f64>],
    y: &[f64],
    numeric: &[bool],
    grid: &[f64],
    n_folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let splits = kfold_splits(y.len(), n_folds, seed)?;
    grid.iter()
        .map(|&lambda| {
            let mut total = 0.0;
            for split in &splits {
                let model = fit_pipeline(&gather(x, &split.train), &gather(y, &split.train), numeric, lambda)?;
                total += mse(&gather(y, &split.test), &model.predict(&gather(x, &split.test)));
            }
            Ok(total / splits.len() as f64)
        })
        .collect()
}

/// Picks the grid value with the lowest inner-CV MSE; ties go to the smaller λ.
pub fn select_lambda(
    x: &[Vec<f64>],
    y: &[f64],
    numeric: &[bool],
    grid: &[f64],
    n_folds: usize,
    seed: u64,
) -> Result<f64> {
    match grid {
        [] => Err(Error::InvalidArgument("empty λ grid".into())),
        [only] => Ok(*only),
        _ => {
            let curve = lambda_curve(x, y, numeric, grid, n_folds, seed)?;
            let mut best = (curve[0], grid[0]);
            for (&m, &l) in curve.iter().zip(grid).skip(1) {
                if m < best.0 || (m == best.0 && l < best.1) {
                    best = (m, l);
                }
            }
            Ok(best.1)
        }
    }
}

fn inner_seed(seed: u64, fold: usize) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15_u64.wrapping_mul(fold as u64 + 1)
}

/// Nested k-fold evaluation: each outer training fold is standardized,
/// has λ chosen by inner CV, and is fit; the held-out fold is scored.
pub fn cross_validate(x: &[Vec<f64>], y: &[f64], numeric: &[bool], config: &CvConfig) -> Result<EvaluationReport> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} rows but {} targets",
            x.len(),
            y.len()
        )));
    }
    evaluate_folds(y, config.n_folds, config.seed, |split| {
        let x_train = gather(x, &split.train);
        let y_train = gather(y, &split.train);
        let lambda = select_lambda(
            &x_train,
            &y_train,
            numeric,
            &config.lambda_grid,
            config.inner_folds,
            inner_seed(config.seed, split.fold),
        )?;
        let model = fit_pipeline(&x_train, &y_train, numeric, lambda)?;
        tracing::debug!(fold = split.fold, lambda, "fold fitted");
        Ok((model.predict(&gather(x, &split.test)), Some(lambda)))
    })
}

/// Unpenalized linear regression under the same harness.
pub fn lr_baseline(x: &[Vec<f64>], y: &[f64], numeric: &[bool], n_folds: usize, seed: u64) -> Result<EvaluationReport> {
    let config = CvConfig {
        n_folds,
        lambda_grid: vec![0.0],
        seed,
        ..CvConfig::default()
    };
    cross_validate(x, y, numeric, &config)
}
