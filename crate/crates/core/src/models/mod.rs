//! Predictive models for the two targets: random forests, linear and
//! logistic regression, trivial baselines, cross-validation and
//! hyper-parameter search.

mod baseline;
mod cv;
mod forest;
mod linear;
mod search;
pub mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::features::{Dataset, FEATURE_NAMES};

pub use baseline::Baseline;
pub use cv::{
    cross_validate, kfold_indices, stratified_folds, CvScheme, Metric, MetricsReport, DEFAULT_REPETITIONS, FOLDS,
};
pub use forest::{Forest, ForestConfig, MaxFeatures, FOREST_FORMAT, FOREST_FORMAT_VERSION};
pub use linear::{fit_linear, fit_logistic, LinearModel, LogisticModel};
pub use search::{random_search, SearchResult, SearchSpace, Trial};
pub use tree::{fit_tree, Node, Tree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Long-glance yes/no; predictions are class-1 probabilities.
    Classification,
    /// Total center-stack glance duration in ms.
    Regression,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("no training data")]
    EmptyData,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{rows} rows is too few for {folds}-fold cross-validation")]
    TooFewRows { rows: usize, folds: usize },
    #[error("cannot stratify: a class has {count} rows, fewer than {folds} folds")]
    UnstratifiableData { count: usize, folds: usize },
    #[error("classification targets must be 0 or 1, found {0}")]
    NonBinaryTarget(f64),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("node {node} has no positive cover")]
    MissingCover { node: usize },
    #[error("invalid model file: {0}")]
    Format(String),
    #[error("unsupported model format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        if data.len() != n_rows * n_cols {
            return Err(ModelError::DimensionMismatch {
                expected: n_rows * n_cols,
                found: data.len(),
            });
        }
        Ok(Matrix { n_rows, n_cols, data })
    }

    /// Panics if rows have different lengths.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), n_cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix {
            n_rows: rows.len(),
            n_cols,
            data,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n_cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows).map(|r| self.row(r))
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.get(r, c)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            n_rows: idx.len(),
            n_cols: self.n_cols,
            data,
        }
    }
}

/// Features, target and task in model-ready form.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub task: Task,
    pub feature_names: Vec<String>,
}

impl TrainingSet {
    pub fn new(x: Matrix, y: Vec<f64>, task: Task, feature_names: Vec<String>) -> Result<Self, ModelError> {
        if x.n_rows() == 0 {
            return Err(ModelError::EmptyData);
        }
        if y.len() != x.n_rows() {
            return Err(ModelError::DimensionMismatch {
                expected: x.n_rows(),
                found: y.len(),
            });
        }
        if feature_names.len() != x.n_cols() {
            return Err(ModelError::DimensionMismatch {
                expected: x.n_cols(),
                found: feature_names.len(),
            });
        }
        if task == Task::Classification {
            if let Some(&bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(ModelError::NonBinaryTarget(bad));
            }
        }
        Ok(TrainingSet {
            x,
            y,
            task,
            feature_names,
        })
    }

    /// The long-glance labels or TGD targets of a dataset, with all 25
    /// features.
    pub fn from_dataset(ds: &Dataset, task: Task) -> Result<Self, ModelError> {
        let rows = ds.feature_rows();
        let y = match task {
            Task::Classification => ds.long_glance_targets(),
            Task::Regression => ds.tgd_targets(),
        };
        let names = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
        TrainingSet::new(Matrix::from_rows(&rows), y, task, names)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> TrainingSet {
        TrainingSet {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            task: self.task,
            feature_names: self.feature_names.clone(),
        }
    }
}

/// What to fit; the forest variant carries its hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Baseline,
    Linear,
    RandomForest(ForestConfig),
}

impl ModelSpec {
    /// Display name; depends on the task for the linear family.
    pub fn name(&self, task: Task) -> &'static str {
        match (self, task) {
            (ModelSpec::Baseline, _) => "baseline",
            (ModelSpec::Linear, Task::Classification) => "logistic",
            (ModelSpec::Linear, Task::Regression) => "linear",
            (ModelSpec::RandomForest(_), _) => "random_forest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Baseline(Baseline),
    Linear(LinearModel),
    Logistic(LogisticModel),
    RandomForest(Forest),
}

impl FittedModel {
    pub fn fit(spec: &ModelSpec, data: &TrainingSet, seed: u64, exec: Execution) -> Result<Self, ModelError> {
        if data.is_empty() {
            return Err(ModelError::EmptyData);
        }
        Ok(match (spec, data.task) {
            (ModelSpec::Baseline, task) => FittedModel::Baseline(Baseline::fit(task, &data.y, seed)),
            (ModelSpec::Linear, Task::Regression) => FittedModel::Linear(fit_linear(&data.x, &data.y)?),
            (ModelSpec::Linear, Task::Classification) => FittedModel::Logistic(fit_logistic(&data.x, &data.y)?),
            (ModelSpec::RandomForest(cfg), _) => {
                let cfg = ForestConfig { seed, ..cfg.clone() };
                FittedModel::RandomForest(Forest::fit(data, &cfg, exec)?)
            }
        })
    }

    /// Raw outputs: probabilities for classification (coin flips for the
    /// baseline), values for regression.
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        match self {
            FittedModel::Baseline(b) => b.predict(x.n_rows()),
            FittedModel::Linear(m) => x.rows().map(|r| m.predict(r)).collect(),
            FittedModel::Logistic(m) => x.rows().map(|r| m.predict_proba(r)).collect(),
            FittedModel::RandomForest(f) => x.rows().map(|r| f.predict_row(r)).collect(),
        }
    }
}
