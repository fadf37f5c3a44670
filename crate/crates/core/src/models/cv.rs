use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FittedModel, ModelError, ModelSpec, Task, TrainingSet};
use crate::exec::{derive_seed, Execution};

pub const FOLDS: usize = 10;
pub const DEFAULT_REPETITIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum CvScheme {
    Repeated10Fold { repetitions: usize },
    Stratified10Fold,
}

impl CvScheme {
    /// Repeated plain folds for regression, stratified folds for
    /// classification.
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Regression => CvScheme::Repeated10Fold {
                repetitions: DEFAULT_REPETITIONS,
            },
            Task::Classification => CvScheme::Stratified10Fold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    MaeMs,
}

impl Metric {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification => Metric::Accuracy,
            Task::Regression => Metric::MaeMs,
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == Metric::Accuracy
    }

    /// Accuracy thresholds predictions at 0.5.
    pub fn score(self, predicted: &[f64], actual: &[f64]) -> f64 {
        let n = actual.len() as f64;
        match self {
            Metric::Accuracy => {
                predicted
                    .iter()
                    .zip(actual)
                    .filter(|(p, a)| f64::from(u8::from(**p > 0.5)) == **a)
                    .count() as f64
                    / n
            }
            Metric::MaeMs => predicted.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub metric: Metric,
    pub folds: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across folds.
    pub std: f64,
}

impl MetricsReport {
    pub fn from_folds(model: &str, metric: Metric, folds: Vec<f64>) -> Self {
        let n = folds.len() as f64;
        let mean = folds.iter().sum::<f64>() / n;
        let std = if folds.len() > 1 {
            (folds.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MetricsReport {
            model: model.to_string(),
            metric,
            folds,
            mean,
            std,
        }
    }
}

/// Shuffled partition of `0..n` into `k` test folds whose sizes differ by
/// at most one.
pub fn kfold_indices(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>, ModelError> {
    if k == 0 || n < k {
        return Err(ModelError::TooFewRows { rows: n, folds: k });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    Ok(folds)
}

/// Folds dealt class by class, so each fold holds within one row of the
/// global per-class share.
pub fn stratified_folds(labels: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>, ModelError> {
    if k == 0 || labels.len() < k {
        return Err(ModelError::TooFewRows {
            rows: labels.len(),
            folds: k,
        });
    }
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0;
    for class in [0.0, 1.0] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(ModelError::UnstratifiableData {
                count: members.len(),
                folds: k,
            });
        }
        members.shuffle(rng);
        for i in members {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Per-fold accuracy (classification) or MAE (regression) of `spec`
/// trained on the complementary folds.
pub fn cross_validate(
    data: &TrainingSet,
    spec: &ModelSpec,
    scheme: CvScheme,
    seed: u64,
    exec: Execution,
) -> Result<MetricsReport, ModelError> {
    if data.len() < FOLDS {
        return Err(ModelError::TooFewRows {
            rows: data.len(),
            folds: FOLDS,
        });
    }
    let repetitions = match scheme {
        CvScheme::Repeated10Fold { repetitions } => repetitions.max(1),
        CvScheme::Stratified10Fold => 1,
    };
    let mut jobs = Vec::new();
    for rep in 0..repetitions {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64);
        let folds = match scheme {
            CvScheme::Repeated10Fold { .. } => kfold_indices(data.len(), FOLDS, &mut rng)?,
            CvScheme::Stratified10Fold => stratified_folds(&data.y, FOLDS, &mut rng)?,
        };
        for (f, test) in folds.into_iter().enumerate() {
            jobs.push((derive_seed(seed, rep as u64, f as u64), test));
        }
    }
    let metric = Metric::for_task(data.task);
    let scores = exec.map(&jobs, |(fold_seed, test)| {
        let mut is_test = vec![false; data.len()];
        for &i in test {
            is_test[i] = true;
        }
        let train: Vec<usize> = (0..data.len()).filter(|&i| !is_test[i]).collect();
        let model = FittedModel::fit(spec, &data.subset(&train), *fold_seed, exec)?;
        let held_out = data.subset(test);
        Ok(metric.score(&model.predict(&held_out.x), &held_out.y))
    });
    let folds = scores.into_iter().collect::<Result<Vec<f64>, ModelError>>()?;
    Ok(MetricsReport::from_folds(spec.name(data.task), metric, folds))
}
