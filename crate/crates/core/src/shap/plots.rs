use serde::{Deserialize, Serialize};

use super::{Explanation, GlobalSummary, ShapError};

pub const DEFAULT_BEESWARM_TOP_K: usize = 19;
pub const MIN_DEPENDENCE_INSTANCES: usize = 20;
const DEPENDENCE_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: usize,
    pub name: String,
    pub value: f64,
    pub phi: f64,
}

/// Force-plot bars: the `top_k` largest contributions by |φ| plus the sum of
/// all others, so `base_value + Σ bars + residual = model_output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceData {
    pub base_value: f64,
    pub model_output: f64,
    pub bars: Vec<Contribution>,
    pub residual: f64,
}

impl ForceData {
    pub fn positive(&self) -> impl Iterator<Item = &Contribution> {
        self.bars.iter().filter(|c| c.phi > 0.0)
    }

    pub fn negative(&self) -> impl Iterator<Item = &Contribution> {
        self.bars.iter().filter(|c| c.phi < 0.0)
    }
}

pub fn force_data(expl: &Explanation, top_k: usize) -> ForceData {
    let mut order: Vec<usize> = (0..expl.phi.len()).filter(|&j| expl.phi[j] != 0.0).collect();
    order.sort_by(|&a, &b| expl.phi[b].abs().total_cmp(&expl.phi[a].abs()).then(a.cmp(&b)));
    let residual = order.iter().skip(top_k).map(|&j| expl.phi[j]).sum();
    let bars = order
        .into_iter()
        .take(top_k)
        .map(|j| Contribution {
            feature: j,
            name: expl.feature_names.get(j).cloned().unwrap_or_default(),
            value: expl.instance[j],
            phi: expl.phi[j],
        })
        .collect();
    ForceData {
        base_value: expl.base_value,
        model_output: expl.model_output,
        bars,
        residual,
    }
}

/// One beeswarm row: a dot per instance, colored by the feature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeeswarmRow {
    pub feature: usize,
    pub name: String,
    pub importance: f64,
    pub phi: Vec<f64>,
    pub values: Vec<f64>,
}

/// The `top_k` most important features, most important first.
pub fn beeswarm_data(summary: &GlobalSummary, top_k: usize) -> Vec<BeeswarmRow> {
    summary
        .ranking
        .iter()
        .take(top_k)
        .map(|&j| BeeswarmRow {
            feature: j,
            name: summary.feature_names[j].clone(),
            importance: summary.importance[j],
            phi: summary.phi_column(j),
            values: summary.value_column(j),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceData {
    pub feature: usize,
    pub name: String,
    pub values: Vec<f64>,
    pub phi: Vec<f64>,
    pub color_feature: usize,
    pub color_name: String,
    pub color_values: Vec<f64>,
    /// Interaction score per feature; the plotted feature itself scores 0.
    pub interaction_scores: Vec<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Interaction score of `j` on `phi_i`: instances are binned into deciles of
/// `x_i`; inside each bin they are split at the median of `x_j` and the
/// absolute difference of mean `φ_i` between the halves is accumulated.
fn interaction_score(bins: &[Vec<usize>], phi_i: &[f64], xj: &[f64]) -> f64 {
    let mut score = 0.0;
    for bin in bins {
        if bin.len() < 2 {
            continue;
        }
        let mut v: Vec<f64> = bin.iter().map(|&k| xj[k]).collect();
        v.sort_by(f64::total_cmp);
        let med = crate::features::quantile(&v, 0.5);
        let strict = bin.iter().any(|&k| xj[k] > med);
        let is_high = |k: usize| if strict { xj[k] > med } else { xj[k] >= med };
        let hi = mean(bin.iter().filter(|&&k| is_high(k)).map(|&k| phi_i[k]));
        let lo = mean(bin.iter().filter(|&&k| !is_high(k)).map(|&k| phi_i[k]));
        if let (Some(h), Some(l)) = (hi, lo) {
            score += (h - l).abs();
        }
    }
    score
}

/// φ of `feature` against its values, colored by the feature with the
/// strongest interaction score (ties to the lowest index).
pub fn dependence_data(summary: &GlobalSummary, feature: usize) -> Result<DependenceData, ShapError> {
    let m = summary.feature_names.len();
    if feature >= m {
        return Err(ShapError::UnknownFeature(feature.to_string()));
    }
    let n = summary.n_instances();
    if n < MIN_DEPENDENCE_INSTANCES {
        return Err(ShapError::TooFewInstances {
            found: n,
            required: MIN_DEPENDENCE_INSTANCES,
        });
    }
    let xi = summary.value_column(feature);
    let phi_i = summary.phi_column(feature);
    let mut by_rank: Vec<usize> = (0..n).collect();
    by_rank.sort_by(|&a, &b| xi[a].total_cmp(&xi[b]).then(a.cmp(&b)));
    let mut bins = vec![Vec::new(); DEPENDENCE_BINS];
    for (rank, k) in by_rank.into_iter().enumerate() {
        bins[rank * DEPENDENCE_BINS / n].push(k);
    }
    let scores: Vec<f64> = (0..m)
        .map(|j| {
            if j == feature {
                0.0
            } else {
                interaction_score(&bins, &phi_i, &summary.value_column(j))
            }
        })
        .collect();
    let mut color = usize::MAX;
    for j in (0..m).filter(|&j| j != feature) {
        if color == usize::MAX || scores[j] > scores[color] {
            color = j;
        }
    }
    let color = if color == usize::MAX { feature } else { color };
    Ok(DependenceData {
        feature,
        name: summary.feature_names[feature].clone(),
        values: xi,
        phi: phi_i,
        color_feature: color,
        color_name: summary.feature_names[color].clone(),
        color_values: summary.value_column(color),
        interaction_scores: scores,
    })
}
