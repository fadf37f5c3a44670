use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, Tree, TreeParams};
use super::{ModelError, Task, TrainingSet};
use crate::exec::Execution;

pub const FOREST_FORMAT: &str = "visdemand-forest";
pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    /// sqrt for classification, all features for regression.
    Auto,
    Sqrt,
    All,
}

impl MaxFeatures {
    pub fn resolve(self, task: Task, n_features: usize) -> usize {
        let sqrt = ((n_features as f64).sqrt().floor() as usize).max(1);
        match (self, task) {
            (MaxFeatures::Sqrt, _) | (MaxFeatures::Auto, Task::Classification) => sqrt,
            (MaxFeatures::All, _) | (MaxFeatures::Auto, Task::Regression) => n_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub max_features: MaxFeatures,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestConfig {
    /// Tuned settings for the long-glance classifier.
    pub fn long_glance() -> Self {
        ForestConfig {
            n_estimators: 200,
            max_features: MaxFeatures::Auto,
            max_depth: 10,
            min_samples_split: 5,
            min_samples_leaf: 2,
            bootstrap: true,
            seed: 0,
        }
    }

    /// Tuned settings for the TGD regressor.
    pub fn tgd() -> Self {
        ForestConfig {
            n_estimators: 1600,
            max_features: MaxFeatures::Auto,
            max_depth: 60,
            min_samples_split: 2,
            min_samples_leaf: 4,
            bootstrap: true,
            seed: 0,
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification => Self::long_glance(),
            Task::Regression => Self::tgd(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.n_estimators == 0 {
            return fail("n_estimators must be at least 1");
        }
        if self.max_depth == 0 {
            return fail("max_depth must be at least 1");
        }
        if self.min_samples_split < 2 {
            return fail("min_samples_split must be at least 2");
        }
        if self.min_samples_leaf == 0 {
            return fail("min_samples_leaf must be at least 1");
        }
        Ok(())
    }
}

/// A bagged ensemble of CART trees. Predictions are the plain mean of the
/// tree outputs (class-1 probability for classification).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format: String,
    pub version: u32,
    pub task: Task,
    pub config: ForestConfig,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
}

/// Random stream for tree `t`: the seed fixes the key and the tree index the
/// stream, so trees are independent of fitting order.
fn tree_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    rng
}

impl Forest {
    pub fn fit(data: &TrainingSet, config: &ForestConfig, exec: Execution) -> Result<Self, ModelError> {
        config.validate()?;
        if data.is_empty() {
            return Err(ModelError::EmptyData);
        }
        let n = data.len();
        let params = TreeParams {
            task: data.task,
            max_depth: config.max_depth,
            min_samples_split: config.min_samples_split,
            min_samples_leaf: config.min_samples_leaf,
            max_features: config.max_features.resolve(data.task, data.x.n_cols()),
        };
        let all: Vec<usize> = (0..n).collect();
        let trees = exec.map_range(config.n_estimators, |t| {
            let mut rng = tree_rng(config.seed, t);
            let rows: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                all.clone()
            };
            fit_tree(&data.x, &data.y, &rows, &params, &mut rng)
        });
        Ok(Forest {
            format: FOREST_FORMAT.to_string(),
            version: FOREST_FORMAT_VERSION,
            task: data.task,
            config: config.clone(),
            feature_names: data.feature_names.clone(),
            trees: trees.into_iter().collect::<Result<_, _>>()?,
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Mean tree output. `x` must have `n_features()` entries.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.n_features() {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features(),
                found: x.len(),
            });
        }
        Ok(self.predict_row(x))
    }

    /// Mean of the trees' cover-weighted leaf averages; the SHAP base value.
    pub fn expected_value(&self) -> f64 {
        self.trees.iter().map(Tree::expected_value).sum::<f64>() / self.trees.len() as f64
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.format != FOREST_FORMAT {
            return Err(ModelError::Format(format!("unexpected format tag {:?}", self.format)));
        }
        if self.version != FOREST_FORMAT_VERSION {
            return Err(ModelError::Version {
                expected: FOREST_FORMAT_VERSION,
                found: self.version,
            });
        }
        if self.trees.is_empty() {
            return Err(ModelError::Format("forest has no trees".into()));
        }
        self.trees.iter().try_for_each(|t| t.validate(self.n_features()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    /// Parses and validates a forest document.
    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let f: Forest = serde_json::from_str(s).map_err(|e| ModelError::Format(e.to_string()))?;
        f.validate()?;
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()).map_err(|e| ModelError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let s = std::fs::read_to_string(path).map_err(|e| ModelError::Io(e.to_string()))?;
        Self::from_json(&s)
    }
}
