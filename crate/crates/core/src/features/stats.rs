use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureError, FEATURE_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdKind {
    /// n − 1 denominator.
    #[default]
    Sample,
    Population,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Quantile of sorted data, interpolating linearly between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(name: &str, values: &[f64], std_kind: StdKind) -> ColumnSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let denom = match std_kind {
        StdKind::Sample if values.len() > 1 => n - 1.0,
        StdKind::Sample => 1.0,
        StdKind::Population => n,
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    ColumnSummary {
        name: name.to_string(),
        mean,
        std: (ss / denom).sqrt(),
        min: sorted[0],
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    }
}

/// Summary row for every feature, then the label and glance columns.
pub fn summary_stats(ds: &Dataset, std_kind: StdKind) -> Result<Vec<ColumnSummary>, FeatureError> {
    if ds.is_empty() {
        return Err(FeatureError::EmptyDataset);
    }
    let rows = ds.feature_rows();
    let mut out: Vec<ColumnSummary> = FEATURE_NAMES
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            summarize(name, &col, std_kind)
        })
        .collect();
    let label_columns: [(&str, fn(&crate::features::LabeledEngagement) -> f64); 5] = [
        ("tgd_ms", |r| r.glance.tgd_center_ms as f64),
        ("long_glance", |r| f64::from(u8::from(r.glance.has_long_glance))),
        ("n_glances_center", |r| r.glance.n_glances_center as f64),
        ("n_long_glances", |r| r.glance.n_long_glances as f64),
        ("avg_glance_ms", |r| r.glance.avg_glance_ms),
    ];
    for (name, get) in label_columns {
        let col: Vec<f64> = ds.rows.iter().map(get).collect();
        out.push(summarize(name, &col, std_kind));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_interpolate() {
        let s = summarize("x", &[1.0, 2.0, 3.0, 4.0, 5.0], StdKind::Sample);
        assert_eq!((s.q1, s.median, s.q3), (2.0, 3.0, 4.0));
        assert_eq!((s.min, s.max, s.mean), (1.0, 5.0, 3.0));
        assert!((s.std - 2.5f64.sqrt()).abs() < 1e-15);
        let p = summarize("x", &[1.0, 2.0, 3.0, 4.0, 5.0], StdKind::Population);
        assert!((p.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[10.0, 20.0], 0.25), 12.5);
    }

    #[test]
    fn constant_column_has_zero_std() {
        let s = summarize("c", &[7.0; 9], StdKind::Sample);
        assert_eq!(s.std, 0.0);
        assert_eq!(summarize("one", &[3.0], StdKind::Sample).std, 0.0);
    }

    #[test]
    fn empty_dataset_errors() {
        assert_eq!(
            summary_stats(&Dataset::default(), StdKind::Sample),
            Err(FeatureError::EmptyDataset)
        );
    }
}
