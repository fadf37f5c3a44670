//! CART regression / classification trees stored as a flat node arena.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Matrix, ModelError, Task};

/// Relative impurity decrease below which a split is not worth making.
const MIN_RELATIVE_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        cover: f64,
    },
    Leaf {
        value: f64,
        cover: f64,
    },
}

impl Node {
    /// Training-sample weight that reached this node.
    pub fn cover(&self) -> f64 {
        match *self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => cover,
        }
    }
}

/// A binary tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TreeArrays", try_from = "TreeArrays")]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64, cover: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value, cover }],
        }
    }

    /// Index of the leaf `x` lands in.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Cover-weighted mean of the leaf values.
    pub fn expected_value(&self) -> f64 {
        let root = self.nodes[0].cover();
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Leaf { value, cover } => Some(value * cover / root),
                Node::Split { .. } => None,
            })
            .sum()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Features tested by at least one split.
    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            Node::Split { feature, .. } => Some(feature),
            Node::Leaf { .. } => None,
        })
    }

    /// Structural checks: every node reachable exactly once from the root,
    /// finite thresholds and values, positive covers, and each split's cover
    /// equal to the sum of its children's (up to rounding).
    pub fn validate(&self, n_features: usize) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidTree(msg));
        if self.nodes.is_empty() {
            return bad("tree has no nodes".into());
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut seen[i], true) {
                return bad(format!("node {i} reachable twice"));
            }
            let node = self.nodes[i];
            if !(node.cover().is_finite() && node.cover() > 0.0) {
                return Err(ModelError::MissingCover { node: i });
            }
            match node {
                Node::Leaf { value, .. } if !value.is_finite() => {
                    return bad(format!("leaf {i} has non-finite value"));
                }
                Node::Leaf { .. } => {}
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    cover,
                } => {
                    if feature >= n_features {
                        return bad(format!("node {i} splits on feature {feature} of {n_features}"));
                    }
                    if !threshold.is_finite() {
                        return bad(format!("node {i} has non-finite threshold"));
                    }
                    if left >= self.nodes.len() || right >= self.nodes.len() || left == i || right == i {
                        return bad(format!("node {i} has invalid children"));
                    }
                    let children = self.nodes[left].cover() + self.nodes[right].cover();
                    if (children - cover).abs() > 1e-9 * cover.max(1.0) {
                        return bad(format!("node {i} cover {cover} != children {children}"));
                    }
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return bad(format!("node {orphan} unreachable"));
        }
        Ok(())
    }
}

/// Column-array layout used on disk: leaves have `feature = -1` and
/// children `-1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TreeArrays {
    feature: Vec<i64>,
    threshold: Vec<f64>,
    left: Vec<i64>,
    right: Vec<i64>,
    value: Vec<f64>,
    cover: Vec<f64>,
}

impl From<Tree> for TreeArrays {
    fn from(t: Tree) -> Self {
        let n = t.nodes.len();
        let mut a = TreeArrays {
            feature: Vec::with_capacity(n),
            threshold: Vec::with_capacity(n),
            left: Vec::with_capacity(n),
            right: Vec::with_capacity(n),
            value: Vec::with_capacity(n),
            cover: Vec::with_capacity(n),
        };
        for node in t.nodes {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    cover,
                } => {
                    a.feature.push(feature as i64);
                    a.threshold.push(threshold);
                    a.left.push(left as i64);
                    a.right.push(right as i64);
                    a.value.push(0.0);
                    a.cover.push(cover);
                }
                Node::Leaf { value, cover } => {
                    a.feature.push(-1);
                    a.threshold.push(0.0);
                    a.left.push(-1);
                    a.right.push(-1);
                    a.value.push(value);
                    a.cover.push(cover);
                }
            }
        }
        a
    }
}

impl TryFrom<TreeArrays> for Tree {
    type Error = String;

    fn try_from(a: TreeArrays) -> Result<Self, Self::Error> {
        let n = a.feature.len();
        if [
            a.threshold.len(),
            a.left.len(),
            a.right.len(),
            a.value.len(),
            a.cover.len(),
        ]
        .iter()
        .any(|&len| len != n)
        {
            return Err("tree arrays have different lengths".into());
        }
        let idx = |v: i64| usize::try_from(v).map_err(|_| format!("invalid node index {v}"));
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            nodes.push(if a.feature[i] < 0 {
                Node::Leaf {
                    value: a.value[i],
                    cover: a.cover[i],
                }
            } else {
                Node::Split {
                    feature: idx(a.feature[i])?,
                    threshold: a.threshold[i],
                    left: idx(a.left[i])?,
                    right: idx(a.right[i])?,
                    cover: a.cover[i],
                }
            });
        }
        Ok(Tree { nodes })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub task: Task,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Number of candidate features drawn per node.
    pub max_features: usize,
}

struct Builder<'a, R> {
    x: &'a Matrix,
    y: &'a [f64],
    params: TreeParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

/// Weighted impurity of a node holding `n` rows with target sum `sum` and
/// sum of squares `sum_sq`: n·Gini for classification, SSE for regression.
fn impurity(task: Task, n: f64, sum: f64, sum_sq: f64) -> f64 {
    match task {
        Task::Classification => {
            let p = sum / n;
            n * 2.0 * p * (1.0 - p)
        }
        Task::Regression => (sum_sq - sum * sum / n).max(0.0),
    }
}

impl<R: Rng> Builder<'_, R> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let n = rows.len();
        let (sum, sum_sq) = rows.iter().fold((0.0, 0.0), |(s, q), &r| {
            let v = self.y[r];
            (s + v, q + v * v)
        });
        let value = sum / n as f64;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value, cover: n as f64 });

        let first = self.y[rows[0]];
        let pure = rows.iter().all(|&r| self.y[r] == first);
        if pure || n < self.params.min_samples_split || depth >= self.params.max_depth {
            return id;
        }
        let parent = impurity(self.params.task, n as f64, sum, sum_sq);
        let Some(best) = self.best_split(&rows, parent) else {
            return id;
        };

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&r| self.x.get(r, best.feature) <= best.threshold);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            cover: n as f64,
        };
        id
    }

    fn best_split(&mut self, rows: &[usize], parent: f64) -> Option<Candidate> {
        let n_cols = self.x.n_cols();
        let k = self.params.max_features.clamp(1, n_cols);
        let mut features = index::sample(self.rng, n_cols, k).into_vec();
        features.sort_unstable();

        let min_leaf = self.params.min_samples_leaf.max(1);
        let n = rows.len();
        let mut best: Option<Candidate> = None;
        let mut order: Vec<(f64, f64)> = Vec::with_capacity(n);
        for feature in features {
            order.clear();
            order.extend(rows.iter().map(|&r| (self.x.get(r, feature), self.y[r])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total_sum: f64 = order.iter().map(|p| p.1).sum();
            let total_sq: f64 = order.iter().map(|p| p.1 * p.1).sum();
            let (mut ls, mut lq) = (0.0, 0.0);
            for p in 1..n {
                let (xv, yv) = order[p - 1];
                ls += yv;
                lq += yv * yv;
                let next = order[p].0;
                if xv == next || p < min_leaf || n - p < min_leaf {
                    continue;
                }
                let score = impurity(self.params.task, p as f64, ls, lq)
                    + impurity(self.params.task, (n - p) as f64, total_sum - ls, total_sq - lq);
                if best.as_ref().is_none_or(|b| score < b.impurity) {
                    let mut threshold = xv + (next - xv) / 2.0;
                    if threshold >= next {
                        threshold = xv;
                    }
                    best = Some(Candidate {
                        feature,
                        threshold,
                        impurity: score,
                    });
                }
            }
        }
        best.filter(|b| {
            let gain = parent - b.impurity;
            gain > 0.0 && gain > MIN_RELATIVE_GAIN * parent
        })
    }
}

/// Grows one tree on the given (possibly repeated) row indices. Each node
/// greedily picks the impurity-minimizing split among `max_features`
/// randomly drawn features, with thresholds at midpoints between consecutive
/// distinct values.
pub fn fit_tree<R: Rng>(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    params: &TreeParams,
    rng: &mut R,
) -> Result<Tree, ModelError> {
    if rows.is_empty() || x.n_rows() == 0 {
        return Err(ModelError::EmptyData);
    }
    if y.len() != x.n_rows() {
        return Err(ModelError::DimensionMismatch {
            expected: x.n_rows(),
            found: y.len(),
        });
    }
    let mut b = Builder {
        x,
        y,
        params: *params,
        rng,
        nodes: Vec::new(),
    };
    b.build(rows.to_vec(), 0);
    Ok(Tree { nodes: b.nodes })
}
