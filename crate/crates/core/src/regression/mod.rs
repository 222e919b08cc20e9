//! Item features from simulation matrices, ridge regression on β, and the
//! k-fold evaluation harness.

mod features;
mod ridge;
mod validation;

pub use features::{aggregate, extract_features, topic_one_hot, FeatureTable, ItemFeatureVector};
pub use ridge::{fit_ridge, objective_gradient, RidgeModel, Standardizer};
pub use validation::{
    cross_validate, evaluate_folds, fit_pipeline, kfold_splits, lambda_curve, lr_baseline, select_lambda, CvConfig,
    EvaluationReport, FoldReport, FoldSplit, DEFAULT_LAMBDA_GRID,
};
