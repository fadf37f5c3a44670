use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Task;
use crate::features::quantile;

/// Trivial reference model: a fair coin for classification, the training
/// median for regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub task: Task,
    pub median: f64,
    pub seed: u64,
}

impl Baseline {
    pub fn fit(task: Task, y: &[f64], seed: u64) -> Self {
        let median = if y.is_empty() {
            0.0
        } else {
            let mut s = y.to_vec();
            s.sort_by(f64::total_cmp);
            quantile(&s, 0.5)
        };
        Baseline { task, median, seed }
    }

    pub fn predict(&self, n: usize) -> Vec<f64> {
        match self.task {
            Task::Regression => vec![self.median; n],
            Task::Classification => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_training_targets() {
        assert_eq!(
            Baseline::fit(Task::Regression, &[5.0, 1.0, 3.0], 0).predict(2),
            vec![3.0, 3.0]
        );
        assert_eq!(Baseline::fit(Task::Regression, &[4.0, 1.0, 3.0, 2.0], 0).median, 2.5);
    }

    #[test]
    fn coin_is_seeded_and_fair() {
        let b = Baseline::fit(Task::Classification, &[0.0, 1.0], 11);
        let p = b.predict(10_000);
        assert_eq!(p, b.predict(10_000));
        let ones = p.iter().sum::<f64>() / p.len() as f64;
        assert!((ones - 0.5).abs() < 0.02, "{ones}");
    }
}
