use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cross_validate, CvScheme, ForestConfig, MaxFeatures, MetricsReport, ModelError, ModelSpec, TrainingSet};
use crate::exec::Execution;

/// Cartesian grid of forest hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub n_estimators: Vec<usize>,
    pub max_features: Vec<MaxFeatures>,
    pub max_depth: Vec<usize>,
    pub min_samples_split: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
    pub bootstrap: Vec<bool>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            n_estimators: vec![100, 200, 400, 800, 1200, 1600, 2000],
            max_features: vec![MaxFeatures::Auto, MaxFeatures::Sqrt],
            max_depth: vec![10, 20, 30, 40, 60, 80, 100],
            min_samples_split: vec![2, 5, 10],
            min_samples_leaf: vec![1, 2, 4],
            bootstrap: vec![true, false],
        }
    }
}

impl SearchSpace {
    pub fn size(&self) -> usize {
        self.n_estimators.len()
            * self.max_features.len()
            * self.max_depth.len()
            * self.min_samples_split.len()
            * self.min_samples_leaf.len()
            * self.bootstrap.len()
    }

    /// Decodes a grid index (mixed radix, last list fastest).
    pub fn config_at(&self, mut i: usize, seed: u64) -> ForestConfig {
        let mut pick = |len: usize| {
            let k = i % len;
            i /= len;
            k
        };
        let bootstrap = self.bootstrap[pick(self.bootstrap.len())];
        let min_samples_leaf = self.min_samples_leaf[pick(self.min_samples_leaf.len())];
        let min_samples_split = self.min_samples_split[pick(self.min_samples_split.len())];
        let max_depth = self.max_depth[pick(self.max_depth.len())];
        let max_features = self.max_features[pick(self.max_features.len())];
        let n_estimators = self.n_estimators[pick(self.n_estimators.len())];
        ForestConfig {
            n_estimators,
            max_features,
            max_depth,
            min_samples_split,
            min_samples_leaf,
            bootstrap,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub config: ForestConfig,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ForestConfig,
    pub best_index: usize,
    /// In sampling order.
    pub trials: Vec<Trial>,
}

/// Cross-validates `budget` distinct grid configurations drawn uniformly
/// and returns the best by mean CV metric. A budget beyond the grid size
/// evaluates the whole grid.
pub fn random_search(
    data: &TrainingSet,
    space: &SearchSpace,
    budget: usize,
    scheme: CvScheme,
    seed: u64,
    exec: Execution,
) -> Result<SearchResult, ModelError> {
    let grid = space.size();
    if grid == 0 {
        return Err(ModelError::Config("search space has an empty dimension".into()));
    }
    if budget == 0 {
        return Err(ModelError::Config("search budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, grid, budget.min(grid)).into_vec();
    let mut trials = Vec::with_capacity(picks.len());
    for i in picks {
        let config = space.config_at(i, seed);
        let report = cross_validate(data, &ModelSpec::RandomForest(config.clone()), scheme, seed, exec)?;
        trials.push(Trial { config, report });
    }
    let better = |a: &MetricsReport, b: &MetricsReport| {
        if a.metric.higher_is_better() {
            a.mean > b.mean
        } else {
            a.mean < b.mean
        }
    };
    let mut best_index = 0;
    for (i, t) in trials.iter().enumerate().skip(1) {
        if better(&t.report, &trials[best_index].report) {
            best_index = i;
        }
    }
    Ok(SearchResult {
        best: trials[best_index].config.clone(),
        best_index,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Matrix, Task};
    use std::collections::HashSet;

    #[test]
    fn default_grid_size_and_decoding_is_bijective() {
        let s = SearchSpace::default();
        assert_eq!(s.size(), 7 * 2 * 7 * 3 * 3 * 2);
        let all: HashSet<ForestConfig> = (0..s.size()).map(|i| s.config_at(i, 0)).collect();
        assert_eq!(all.len(), s.size());
    }

    fn tiny_space() -> SearchSpace {
        SearchSpace {
            n_estimators: vec![3, 6],
            max_features: vec![MaxFeatures::All],
            max_depth: vec![1, 4],
            min_samples_split: vec![2],
            min_samples_leaf: vec![1, 8],
            bootstrap: vec![true],
        }
    }

    fn data() -> TrainingSet {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, ((i * 13) % 7) as f64]).collect();
        let y = rows.iter().map(|r| r[0] * r[0] / 10.0 + r[1]).collect();
        TrainingSet::new(
            Matrix::from_rows(&rows),
            y,
            Task::Regression,
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn single_config_space_returns_it() {
        let mut s = tiny_space();
        s.n_estimators.truncate(1);
        s.max_depth.truncate(1);
        s.min_samples_leaf.truncate(1);
        let scheme = CvScheme::Repeated10Fold { repetitions: 1 };
        let r = random_search(&data(), &s, 5, scheme, 2, Execution::Serial).unwrap();
        assert_eq!(r.trials.len(), 1);
        assert_eq!(r.best, s.config_at(0, 2));
    }

    #[test]
    fn best_beats_every_trial() {
        let scheme = CvScheme::Repeated10Fold { repetitions: 1 };
        let r = random_search(&data(), &tiny_space(), 6, scheme, 4, Execution::Serial).unwrap();
        assert_eq!(r.trials.len(), 6);
        let best = r.trials[r.best_index].report.mean;
        for (i, t) in r.trials.iter().enumerate() {
            assert!(best <= t.report.mean);
            if t.report.mean == best {
                assert!(r.best_index <= i);
            }
        }
    }
}
