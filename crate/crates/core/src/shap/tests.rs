use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::models::{ForestConfig, MaxFeatures, Node, Task, TrainingSet, Tree, FOREST_FORMAT, FOREST_FORMAT_VERSION};

fn names(m: usize) -> Vec<String> {
    (0..m).map(|j| format!("f{j}")).collect()
}

fn forest_of(trees: Vec<Tree>, m: usize) -> Forest {
    Forest {
        format: FOREST_FORMAT.into(),
        version: FOREST_FORMAT_VERSION,
        task: Task::Regression,
        config: ForestConfig {
            n_estimators: trees.len(),
            ..ForestConfig::tgd()
        },
        feature_names: names(m),
        trees,
    }
}

fn stump(feature: usize, threshold: f64, a: f64, b: f64, wl: f64, wr: f64) -> Tree {
    Tree {
        nodes: vec![
            Node::Split {
                feature,
                threshold,
                left: 1,
                right: 2,
                cover: wl + wr,
            },
            Node::Leaf { value: a, cover: wl },
            Node::Leaf { value: b, cover: wr },
        ],
    }
}

/// Random data with an interaction so fitted trees use several features.
fn random_forest(seed: u64, m: usize, depth: usize, n_trees: usize, task: Task) -> (Forest, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..80)
        .map(|_| (0..m).map(|_| rng.random_range(0..6) as f64).collect())
        .collect();
    let y = rows
        .iter()
        .map(|r| {
            let v = r[0] * r[m - 1] + r.iter().sum::<f64>() + rng.random_range(-1.0..1.0);
            match task {
                Task::Regression => v,
                Task::Classification => f64::from(u8::from(v > 3.0 * m as f64)),
            }
        })
        .collect();
    let data = TrainingSet::new(Matrix::from_rows(&rows), y, task, names(m)).unwrap();
    let cfg = ForestConfig {
        n_estimators: n_trees,
        max_depth: depth,
        min_samples_split: 2,
        min_samples_leaf: 1,
        max_features: MaxFeatures::Sqrt,
        bootstrap: true,
        seed,
    };
    (Forest::fit(&data, &cfg, Execution::Serial).unwrap(), rows)
}

#[test]
fn single_leaf_has_no_attribution() {
    let f = forest_of(vec![Tree::leaf(7.5, 10.0)], 3);
    for e in [
        tree_shap(&f, &[1.0, 2.0, 3.0]).unwrap(),
        brute_force_shap(&f, &[1.0, 2.0, 3.0]).unwrap(),
    ] {
        assert_eq!(e.base_value, 7.5);
        assert_eq!(e.phi, vec![0.0; 3]);
    }
}

#[test]
fn stump_matches_two_subset_enumeration() {
    let (a, b, wl, wr) = (2.0, 10.0, 3.0, 1.0);
    let f = forest_of(vec![stump(0, 0.5, a, b, wl, wr)], 2);
    let base = (wl * a + wr * b) / (wl + wr);
    let x = [1.0, 0.0];
    for e in [tree_shap(&f, &x).unwrap(), brute_force_shap(&f, &x).unwrap()] {
        assert_eq!(e.base_value, base);
        assert!((e.phi[0] - (b - base)).abs() < 1e-12);
        assert_eq!(e.phi[1], 0.0);
        assert_eq!(e.model_output, b);
    }
}

#[test]
fn tree_shap_equals_brute_force_on_random_forests() {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let m = 2 + (seed as usize % 11);
        let depth = 1 + (seed as usize % 4);
        let task = if seed % 2 == 0 {
            Task::Regression
        } else {
            Task::Classification
        };
        let (f, rows) = random_forest(seed, m, depth, 30, task);
        let ex = TreeExplainer::new(&f).unwrap();
        for x in rows.iter().take(3) {
            let fast = ex.explain(x).unwrap();
            let slow = brute_force_shap(&f, x).unwrap();
            assert!((fast.base_value - slow.base_value).abs() < 1e-9);
            for (p, q) in fast.phi.iter().zip(&slow.phi) {
                worst = worst.max((p - q).abs());
            }
            assert!(fast.local_accuracy_error() < 1e-9);
            assert!(slow.local_accuracy_error() < 1e-9);
        }
    }
    assert!(worst < 1e-9, "max |tree_shap - brute| = {worst}");
}

#[test]
fn never_split_feature_gets_exact_zero() {
    let (f, rows) = random_forest(5, 6, 3, 20, Task::Regression);
    let used: std::collections::HashSet<usize> = f.trees.iter().flat_map(|t| t.split_features()).collect();
    // append an unused constant column by widening the feature list
    let mut wide = f.clone();
    wide.feature_names.push("unused".into());
    for x in rows.iter().take(10) {
        let mut xw = x.clone();
        xw.push(123.0);
        let e = tree_shap(&wide, &xw).unwrap();
        assert_eq!(e.phi[6], 0.0);
        for j in (0..6).filter(|j| !used.contains(j)) {
            assert_eq!(e.phi[j], 0.0);
        }
    }
}

#[test]
fn symmetric_features_share_credit() {
    // x0 AND x1 built once with each feature at the root
    let and_tree = |first: usize, second: usize| Tree {
        nodes: vec![
            Node::Split {
                feature: first,
                threshold: 0.5,
                left: 1,
                right: 2,
                cover: 4.0,
            },
            Node::Leaf { value: 0.0, cover: 2.0 },
            Node::Split {
                feature: second,
                threshold: 0.5,
                left: 3,
                right: 4,
                cover: 2.0,
            },
            Node::Leaf { value: 0.0, cover: 1.0 },
            Node::Leaf { value: 1.0, cover: 1.0 },
        ],
    };
    let f = forest_of(vec![and_tree(0, 1), and_tree(1, 0)], 3);
    for x in [[1.0, 1.0, 0.0], [0.0, 0.0, 5.0]] {
        let e = tree_shap(&f, &x).unwrap();
        assert!((e.phi[0] - e.phi[1]).abs() < 1e-15, "{:?}", e.phi);
        assert_eq!(e.phi[2], 0.0);
    }
}

#[test]
fn forest_explanation_is_mean_of_tree_explanations() {
    let (f, rows) = random_forest(11, 5, 4, 8, Task::Regression);
    let x = &rows[0];
    let whole = tree_shap(&f, x).unwrap();
    let mut mean = vec![0.0; 5];
    for t in &f.trees {
        let e = tree_shap(&forest_of(vec![t.clone()], 5), x).unwrap();
        for (m, p) in mean.iter_mut().zip(&e.phi) {
            *m += p / f.trees.len() as f64;
        }
    }
    for (a, b) in whole.phi.iter().zip(&mean) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn brute_force_feature_limit_and_dimension_errors() {
    let f = forest_of(vec![Tree::leaf(1.0, 1.0)], 21);
    assert_eq!(
        brute_force_shap(&f, &[0.0; 21]),
        Err(ShapError::TooManyFeatures { features: 21, max: 20 })
    );
    let g = forest_of(vec![Tree::leaf(1.0, 1.0)], 2);
    assert_eq!(
        tree_shap(&g, &[0.0]),
        Err(ShapError::DimensionMismatch { expected: 2, found: 1 })
    );
}

#[test]
fn zero_cover_is_rejected() {
    let f = forest_of(vec![stump(0, 0.5, 1.0, 2.0, 0.0, 1.0)], 1);
    assert_eq!(tree_shap(&f, &[0.0]), Err(ShapError::MissingCover { tree: 0, node: 1 }));
}

fn explanation(phi: Vec<f64>, base: f64) -> Explanation {
    let m = phi.len();
    Explanation {
        base_value: base,
        model_output: base + phi.iter().sum::<f64>(),
        instance: vec![0.0; m],
        feature_names: names(m),
        phi,
    }
}

#[test]
fn force_bars_sort_and_truncate() {
    let fd = force_data(&explanation(vec![0.01, 0.2, -0.05], 0.3), 2);
    let bars: Vec<f64> = fd.bars.iter().map(|c| c.phi).collect();
    assert_eq!(bars, vec![0.2, -0.05]);
    assert_eq!(fd.residual, 0.01);
    assert_eq!(fd.positive().count(), 1);
    assert_eq!(fd.negative().count(), 1);

    let empty = force_data(&explanation(vec![0.0; 4], 0.5), 3);
    assert!(empty.bars.is_empty());
    assert_eq!((empty.residual, empty.model_output), (0.0, 0.5));
}

#[test]
fn beeswarm_rows_follow_recomputed_importance() {
    let (f, rows) = random_forest(21, 8, 4, 10, Task::Classification);
    let s = TreeExplainer::new(&f)
        .unwrap()
        .summarize(&Matrix::from_rows(&rows), Execution::Serial)
        .unwrap();
    let bees = beeswarm_data(&s, DEFAULT_BEESWARM_TOP_K);
    assert_eq!(bees.len(), 8);
    for w in bees.windows(2) {
        assert!(w[0].importance >= w[1].importance);
    }
    for row in &bees {
        let recomputed = s.phi.iter().map(|p| p[row.feature].abs()).sum::<f64>() / rows.len() as f64;
        assert!((row.importance - recomputed).abs() < 1e-15);
        assert_eq!(row.phi.len(), rows.len());
    }
    assert_eq!(beeswarm_data(&s, 3).len(), 3);

    let one = GlobalSummary::from_explanations(&[explanation(vec![0.1, -0.2], 0.0)]).unwrap();
    let rows = beeswarm_data(&one, 19);
    assert_eq!(rows.iter().map(|r| r.phi.len()).collect::<Vec<_>>(), vec![1, 1]);
    assert_eq!(rows[0].feature, 1);
}

#[test]
fn dependence_finds_planted_interaction() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 400;
    let values: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let phi: Vec<Vec<f64>> = values
        .iter()
        .map(|v| vec![v[0] * v[2], rng.random_range(-0.1..0.1), 0.0, 0.0])
        .collect();
    let s = GlobalSummary::new(names(4), 0.0, phi, values);
    let d = dependence_data(&s, 0).unwrap();
    assert_eq!(d.color_feature, 2);
    assert_eq!(d.values.len(), n);
    assert_eq!(d.phi.len(), n);
    assert_eq!(d.color_values.len(), n);
    assert_eq!(d.interaction_scores[0], 0.0);
}

#[test]
fn dependence_constant_phi_ties_to_lowest_index() {
    let values: Vec<Vec<f64>> = (0..30)
        .map(|k| vec![k as f64, (k % 7) as f64, (k % 3) as f64])
        .collect();
    let phi = vec![vec![0.5, 0.5, 0.5]; 30];
    let s = GlobalSummary::new(names(3), 0.0, phi, values);
    let d = dependence_data(&s, 0).unwrap();
    assert_eq!(d.color_feature, 1);
    assert!(d.interaction_scores.iter().all(|&v| v == 0.0));
    assert_eq!(dependence_data(&s, 1).unwrap().color_feature, 0);
}

#[test]
fn dependence_needs_twenty_instances() {
    let s = GlobalSummary::new(names(2), 0.0, vec![vec![0.0; 2]; 19], vec![vec![0.0; 2]; 19]);
    assert_eq!(
        dependence_data(&s, 0),
        Err(ShapError::TooFewInstances {
            found: 19,
            required: 20
        })
    );
}

#[test]
fn explanation_json_roundtrip() {
    let e = explanation(vec![0.25, -1.5e-3], 0.4);
    let back: Explanation = serde_json::from_str(&e.to_json()).unwrap();
    assert_eq!(back, e);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn local_accuracy_and_bar_sums(seed in 0u64..10_000, k in 0usize..6) {
        let (f, rows) = random_forest(seed, 6, 5, 6, Task::Regression);
        let ex = TreeExplainer::new(&f).unwrap();
        for x in rows.iter().take(5) {
            let e = ex.explain(x).unwrap();
            prop_assert!(e.local_accuracy_error() < 1e-9);
            let fd = force_data(&e, k);
            let total = fd.base_value + fd.bars.iter().map(|c| c.phi).sum::<f64>() + fd.residual;
            prop_assert!((total - e.model_output).abs() < 1e-9);
        }
    }
}
