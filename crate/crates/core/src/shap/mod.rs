//! Exact SHAP attributions for forest predictions and the data behind
//! force, beeswarm and dependence plots.
//!
//! Conditioning is path-dependent: a feature outside the coalition averages
//! over both branches of a split, weighted by training cover. Classification
//! forests are explained in probability space, regression forests in ms.

mod brute;
mod plots;
mod treeshap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::models::{Forest, Matrix};

pub use brute::{brute_force_shap, MAX_BRUTE_FORCE_FEATURES};
pub use plots::{
    beeswarm_data, dependence_data, force_data, BeeswarmRow, Contribution, DependenceData, ForceData,
    DEFAULT_BEESWARM_TOP_K, MIN_DEPENDENCE_INSTANCES,
};

#[derive(Debug, Error, PartialEq)]
pub enum ShapError {
    #[error("{features} features exceed the brute-force limit of {max}")]
    TooManyFeatures { features: usize, max: usize },
    #[error("tree {tree} node {node} has no positive cover")]
    MissingCover { tree: usize, node: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{found} instances, at least {required} required")]
    TooFewInstances { found: usize, required: usize },
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
}

/// How features outside a coalition are marginalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    #[default]
    PathDependent,
}

/// Additive attribution of one prediction:
/// `base_value + Σ phi = model_output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub base_value: f64,
    pub phi: Vec<f64>,
    pub model_output: f64,
    pub instance: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl Explanation {
    /// `|base + Σφ − output|`.
    pub fn local_accuracy_error(&self) -> f64 {
        (self.base_value + self.phi.iter().sum::<f64>() - self.model_output).abs()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("explanation serializes")
    }
}

/// A forest checked for cover statistics, ready to explain instances.
#[derive(Debug, Clone)]
pub struct TreeExplainer<'a> {
    forest: &'a Forest,
    base_value: f64,
    pub conditioning: Conditioning,
}

impl<'a> TreeExplainer<'a> {
    pub fn new(forest: &'a Forest) -> Result<Self, ShapError> {
        for (t, tree) in forest.trees.iter().enumerate() {
            if let Some(node) = tree
                .nodes
                .iter()
                .position(|n| !(n.cover() > 0.0 && n.cover().is_finite()))
            {
                return Err(ShapError::MissingCover { tree: t, node });
            }
        }
        Ok(TreeExplainer {
            forest,
            base_value: forest.expected_value(),
            conditioning: Conditioning::PathDependent,
        })
    }

    pub fn base_value(&self) -> f64 {
        self.base_value
    }

    pub fn explain(&self, x: &[f64]) -> Result<Explanation, ShapError> {
        let m = self.forest.n_features();
        if x.len() != m {
            return Err(ShapError::DimensionMismatch {
                expected: m,
                found: x.len(),
            });
        }
        let mut phi = vec![0.0; m];
        for tree in &self.forest.trees {
            treeshap::tree_shap_into(tree, x, &mut phi);
        }
        let n = self.forest.trees.len() as f64;
        for p in &mut phi {
            *p /= n;
        }
        Ok(Explanation {
            base_value: self.base_value,
            phi,
            model_output: self.forest.predict_row(x),
            instance: x.to_vec(),
            feature_names: self.forest.feature_names.clone(),
        })
    }

    pub fn explain_all(&self, x: &Matrix, exec: Execution) -> Result<Vec<Explanation>, ShapError> {
        let rows: Vec<&[f64]> = x.rows().collect();
        exec.map(&rows, |r| self.explain(r)).into_iter().collect()
    }

    /// Explains every row and aggregates the result.
    pub fn summarize(&self, x: &Matrix, exec: Execution) -> Result<GlobalSummary, ShapError> {
        GlobalSummary::from_explanations(&self.explain_all(x, exec)?)
    }
}

/// SHAP values of one forest at `x`; each tree is explained exactly and the
/// per-tree attributions are averaged like the predictions.
pub fn tree_shap(forest: &Forest, x: &[f64]) -> Result<Explanation, ShapError> {
    TreeExplainer::new(forest)?.explain(x)
}

/// Attributions across a dataset, with features ranked by mean |φ|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSummary {
    pub feature_names: Vec<String>,
    pub base_value: f64,
    /// `phi[k][j]`: instance k, feature j.
    pub phi: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub importance: Vec<f64>,
    /// Feature indices by descending importance, ties by index.
    pub ranking: Vec<usize>,
}

impl GlobalSummary {
    pub fn from_explanations(expl: &[Explanation]) -> Result<Self, ShapError> {
        let first = expl
            .first()
            .ok_or(ShapError::TooFewInstances { found: 0, required: 1 })?;
        let m = first.phi.len();
        if let Some(bad) = expl.iter().find(|e| e.phi.len() != m || e.instance.len() != m) {
            return Err(ShapError::DimensionMismatch {
                expected: m,
                found: bad.phi.len(),
            });
        }
        Ok(Self::new(
            first.feature_names.clone(),
            first.base_value,
            expl.iter().map(|e| e.phi.clone()).collect(),
            expl.iter().map(|e| e.instance.clone()).collect(),
        ))
    }

    /// Builds the summary from raw matrices; computes importance and ranking.
    pub fn new(feature_names: Vec<String>, base_value: f64, phi: Vec<Vec<f64>>, values: Vec<Vec<f64>>) -> Self {
        let m = feature_names.len();
        let n = phi.len().max(1) as f64;
        let importance: Vec<f64> = (0..m)
            .map(|j| phi.iter().map(|r| r[j].abs()).sum::<f64>() / n)
            .collect();
        let mut ranking: Vec<usize> = (0..m).collect();
        ranking.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
        GlobalSummary {
            feature_names,
            base_value,
            phi,
            values,
            importance,
            ranking,
        }
    }

    pub fn n_instances(&self) -> usize {
        self.phi.len()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize, ShapError> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ShapError::UnknownFeature(name.to_string()))
    }

    pub fn phi_column(&self, j: usize) -> Vec<f64> {
        self.phi.iter().map(|r| r[j]).collect()
    }

    pub fn value_column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }
}

#[cfg(test)]
mod tests;
