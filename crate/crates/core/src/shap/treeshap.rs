//! Exact path-dependent TreeSHAP for a single tree.
//!
//! Walks the tree once, maintaining for the current root-to-node path the
//! proportion of all feature subsets that reach it. At each leaf the
//! contribution of every feature on the path is read off by "unwinding" it.

use crate::models::{Node, Tree};

#[derive(Debug, Clone, Copy)]
struct PathElem {
    /// Feature index; `usize::MAX` marks the root placeholder.
    feature: usize,
    /// Fraction of "feature absent" paths flowing through.
    zero: f64,
    /// 1 if `x` follows this branch, else 0.
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: usize) {
    let l = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    let denom = (l + 1) as f64;
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / denom;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / denom;
    }
}

fn unwind(path: &mut Vec<PathElem>, i: usize) {
    let l = path.len() - 1;
    let PathElem { zero, one, .. } = path[i];
    let mut next = path[l].weight;
    let denom = (l + 1) as f64;
    for j in (0..l).rev() {
        if one != 0.0 {
            let tmp = path[j].weight;
            path[j].weight = next * denom / ((j + 1) as f64 * one);
            next = tmp - path[j].weight * zero * (l - j) as f64 / denom;
        } else {
            path[j].weight = path[j].weight * denom / (zero * (l - j) as f64);
        }
    }
    for j in i..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

/// Total weight of the path with element `i` removed, without mutating it.
fn unwound_sum(path: &[PathElem], i: usize) -> f64 {
    let l = path.len() - 1;
    let PathElem { zero, one, .. } = path[i];
    let denom = (l + 1) as f64;
    let mut total = 0.0;
    if one != 0.0 {
        let mut next = path[l].weight;
        for j in (0..l).rev() {
            let tmp = next * denom / ((j + 1) as f64 * one);
            total += tmp;
            next = path[j].weight - tmp * zero * (l - j) as f64 / denom;
        }
    } else {
        for j in (0..l).rev() {
            total += path[j].weight * denom / (zero * (l - j) as f64);
        }
    }
    total
}

struct Walker<'a> {
    tree: &'a Tree,
    x: &'a [f64],
    phi: &'a mut [f64],
}

impl Walker<'_> {
    fn recurse(&mut self, node: usize, mut path: Vec<PathElem>, zero: f64, one: f64, feature: usize) {
        extend(&mut path, zero, one, feature);
        match self.tree.nodes[node] {
            Node::Leaf { value, .. } => {
                for i in 1..path.len() {
                    let w = unwound_sum(&path, i);
                    let e = path[i];
                    self.phi[e.feature] += w * (e.one - e.zero) * value;
                }
            }
            Node::Split {
                feature: split,
                threshold,
                left,
                right,
                cover,
            } => {
                let (hot, cold) = if self.x[split] <= threshold {
                    (left, right)
                } else {
                    (right, left)
                };
                let (mut iz, mut io) = (1.0, 1.0);
                if let Some(k) = path.iter().skip(1).position(|e| e.feature == split) {
                    let k = k + 1;
                    iz = path[k].zero;
                    io = path[k].one;
                    unwind(&mut path, k);
                }
                let hot_frac = self.tree.nodes[hot].cover() / cover;
                let cold_frac = self.tree.nodes[cold].cover() / cover;
                self.recurse(hot, path.clone(), iz * hot_frac, io, split);
                self.recurse(cold, path, iz * cold_frac, 0.0, split);
            }
        }
    }
}

/// Adds the SHAP values of one tree at `x` into `phi`. Covers must be
/// positive (checked by the caller).
pub(crate) fn tree_shap_into(tree: &Tree, x: &[f64], phi: &mut [f64]) {
    let mut w = Walker { tree, x, phi };
    w.recurse(0, Vec::with_capacity(16), 1.0, 1.0, usize::MAX);
}
