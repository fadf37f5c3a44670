use crate::models::{Forest, Node, Tree};

use super::{Explanation, ShapError};

pub const MAX_BRUTE_FORCE_FEATURES: usize = 20;

/// Tree-conditional expectation: splits on features in `mask` follow `x`,
/// others average both branches by cover.
fn conditional(tree: &Tree, node: usize, x: &[f64], mask: u32) -> f64 {
    match tree.nodes[node] {
        Node::Leaf { value, .. } => value,
        Node::Split {
            feature,
            threshold,
            left,
            right,
            cover,
        } => {
            if mask & (1 << feature) != 0 {
                let next = if x[feature] <= threshold { left } else { right };
                conditional(tree, next, x, mask)
            } else {
                let wl = tree.nodes[left].cover();
                let wr = tree.nodes[right].cover();
                (wl * conditional(tree, left, x, mask) + wr * conditional(tree, right, x, mask)) / cover
            }
        }
    }
}

/// Shapley values by enumerating all 2^M feature subsets.
pub fn brute_force_shap(forest: &Forest, x: &[f64]) -> Result<Explanation, ShapError> {
    let m = forest.n_features();
    if m > MAX_BRUTE_FORCE_FEATURES {
        return Err(ShapError::TooManyFeatures {
            features: m,
            max: MAX_BRUTE_FORCE_FEATURES,
        });
    }
    if x.len() != m {
        return Err(ShapError::DimensionMismatch {
            expected: m,
            found: x.len(),
        });
    }
    let subsets = 1usize << m;
    let n_trees = forest.trees.len() as f64;
    let f: Vec<f64> = (0..subsets)
        .map(|mask| {
            forest
                .trees
                .iter()
                .map(|t| conditional(t, 0, x, mask as u32))
                .sum::<f64>()
                / n_trees
        })
        .collect();
    // weight(|S|) = |S|! (M - |S| - 1)! / M! = 1 / (M * C(M-1, |S|))
    let weight: Vec<f64> = (0..m)
        .map(|s| {
            let mut binom = 1.0;
            for k in 0..s {
                binom = binom * (m - 1 - k) as f64 / (k + 1) as f64;
            }
            1.0 / (m as f64 * binom)
        })
        .collect();
    let mut phi = vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in (0..subsets).filter(|s| s & bit == 0) {
            *p += weight[mask.count_ones() as usize] * (f[mask | bit] - f[mask]);
        }
    }
    Ok(Explanation {
        base_value: f[0],
        phi,
        model_output: forest.predict_row(x),
        instance: x.to_vec(),
        feature_names: forest.feature_names.clone(),
    })
}
