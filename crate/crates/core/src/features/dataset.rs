use std::io::{Read, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureVector, LabeledEngagement, FEATURE_COUNT, FEATURE_NAMES};
use crate::glance::GlanceMetrics;
use crate::segmentation::DropStats;

pub const DATASET_SCHEMA_VERSION: u32 = 1;
const MANIFEST_PREFIX: &str = "# ";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetFilter {
    /// Rows with more interactions than this are dropped.
    pub n_cap: u32,
    /// A windowed speed at or below this counts as a full stop.
    pub full_stop_kmh: f64,
}

impl Default for DatasetFilter {
    fn default() -> Self {
        DatasetFilter {
            n_cap: 41,
            full_stop_kmh: 0.1,
        }
    }
}

/// Where the rows came from and what was discarded on the way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub segmentation: DropStats,
    pub too_many_interactions: usize,
    pub passenger_present: usize,
    pub full_stop: usize,
    /// Majority-class rows discarded by undersampling.
    pub undersampled: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub rows: Vec<LabeledEngagement>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(rows: Vec<LabeledEngagement>) -> Self {
        Dataset {
            rows,
            provenance: Provenance::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_rows(&self) -> Vec<[f64; FEATURE_COUNT]> {
        self.rows.iter().map(|r| r.features.to_row()).collect()
    }

    pub fn tgd_targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.tgd_ms() as f64).collect()
    }

    pub fn long_glance_targets(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| if r.long_glance() { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.rows.iter().filter(|r| r.long_glance()).count();
        (self.rows.len() - pos, pos)
    }
}

/// Drops rows with too many interactions, a passenger present, or a full
/// stop, in that order; each dropped row is counted against the first rule it
/// violates.
pub fn filter_dataset(rows: Vec<LabeledEngagement>, filter: &DatasetFilter) -> Dataset {
    let mut prov = Provenance::default();
    let rows = rows
        .into_iter()
        .filter(|r| {
            if r.features.n > filter.n_cap {
                prov.too_many_interactions += 1;
                false
            } else if r.passenger_present {
                prov.passenger_present += 1;
                false
            } else if r.min_speed_kmh <= filter.full_stop_kmh {
                prov.full_stop += 1;
                false
            } else {
                true
            }
        })
        .collect();
    Dataset { rows, provenance: prov }
}

/// Random undersampling of the majority long-glance class down to the
/// minority count. Kept rows retain their original order.
pub fn balance_undersample(ds: &Dataset, seed: u64) -> Result<Dataset, FeatureError> {
    let (neg, pos): (Vec<usize>, Vec<usize>) = (0..ds.rows.len()).partition(|&i| !ds.rows[i].long_glance());
    if neg.is_empty() || pos.is_empty() {
        return Err(FeatureError::OneClassOnly);
    }
    let (minority, majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; ds.rows.len()];
    for i in &minority {
        keep[*i] = true;
    }
    for j in index::sample(&mut rng, majority.len(), minority.len()) {
        keep[majority[j]] = true;
    }
    let rows: Vec<_> = ds
        .rows
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(r, _)| r.clone())
        .collect();
    let mut provenance = ds.provenance;
    provenance.undersampled += majority.len() - minority.len();
    Ok(Dataset { rows, provenance })
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema: String,
    version: u32,
    columns: Vec<String>,
    provenance: Provenance,
}

const LEADING: [&str; 2] = ["trip_id", "start_ms"];
const TRAILING: [&str; 7] = [
    "tgd_ms",
    "long_glance",
    "n_glances_center",
    "n_long_glances",
    "avg_glance_ms",
    "passenger_present",
    "min_speed_kmh",
];

fn columns() -> Vec<String> {
    LEADING
        .iter()
        .chain(FEATURE_NAMES.iter())
        .chain(TRAILING.iter())
        .map(|s| s.to_string())
        .collect()
}

/// Writes the dataset as CSV preceded by a one-line JSON manifest. Floats use
/// the shortest representation that parses back to the same bits.
pub fn write_dataset<W: Write>(ds: &Dataset, mut out: W) -> Result<(), FeatureError> {
    let io = |e: std::io::Error| FeatureError::Io(e.to_string());
    let manifest = Manifest {
        schema: "visdemand-dataset".into(),
        version: DATASET_SCHEMA_VERSION,
        columns: columns(),
        provenance: ds.provenance,
    };
    writeln!(
        out,
        "{MANIFEST_PREFIX}{}",
        serde_json::to_string(&manifest).expect("manifest serializes")
    )
    .map_err(io)?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| FeatureError::Io(e.to_string());
    w.write_record(columns()).map_err(csv_err)?;
    for r in &ds.rows {
        let mut rec: Vec<String> = vec![r.trip_id.clone(), r.start_ms.to_string()];
        let row = r.features.to_row();
        rec.extend(row.iter().map(|v| v.to_string()));
        rec.push(r.glance.tgd_center_ms.to_string());
        rec.push(u8::from(r.glance.has_long_glance).to_string());
        rec.push(r.glance.n_glances_center.to_string());
        rec.push(r.glance.n_long_glances.to_string());
        rec.push(r.glance.avg_glance_ms.to_string());
        rec.push(u8::from(r.passenger_present).to_string());
        rec.push(r.min_speed_kmh.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut input: R) -> Result<Dataset, FeatureError> {
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|e| FeatureError::Io(e.to_string()))?;
    let (first, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    let manifest: Manifest = first
        .strip_prefix(MANIFEST_PREFIX)
        .ok_or_else(|| "missing manifest line".to_string())
        .and_then(|m| serde_json::from_str(m).map_err(|e| e.to_string()))
        .map_err(|reason| FeatureError::Format { line: 1, reason })?;
    if manifest.version != DATASET_SCHEMA_VERSION || manifest.columns != columns() {
        return Err(FeatureError::Format {
            line: 1,
            reason: format!(
                "unsupported dataset schema version {} or column layout",
                manifest.version
            ),
        });
    }

    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        // manifest + csv header precede the first record
        let line = i + 3;
        let fmt_err = |reason: String| FeatureError::Format { line, reason };
        let rec = rec.map_err(|e| fmt_err(e.to_string()))?;
        if rec.len() != manifest.columns.len() {
            return Err(fmt_err(format!(
                "expected {} fields, found {}",
                manifest.columns.len(),
                rec.len()
            )));
        }
        let num = |j: usize| -> Result<f64, FeatureError> {
            rec[j]
                .parse::<f64>()
                .map_err(|_| fmt_err(format!("column {}: invalid number `{}`", manifest.columns[j], &rec[j])))
        };
        let int = |j: usize| -> Result<i64, FeatureError> {
            rec[j]
                .parse::<i64>()
                .map_err(|_| fmt_err(format!("column {}: invalid integer `{}`", manifest.columns[j], &rec[j])))
        };
        let base = LEADING.len();
        let mut feature_row = [0.0; FEATURE_COUNT];
        for (k, slot) in feature_row.iter_mut().enumerate() {
            *slot = num(base + k)?;
        }
        let features = FeatureVector::from_row(&feature_row).map_err(|e| fmt_err(e.to_string()))?;
        let t = base + FEATURE_COUNT;
        let glance = GlanceMetrics {
            tgd_center_ms: int(t)?,
            has_long_glance: int(t + 1)? == 1,
            n_glances_center: int(t + 2)? as u32,
            n_long_glances: int(t + 3)? as u32,
            avg_glance_ms: num(t + 4)?,
        };
        rows.push(LabeledEngagement {
            trip_id: rec[0].to_string(),
            start_ms: int(1)?,
            features,
            glance,
            passenger_present: int(t + 5)? == 1,
            min_speed_kmh: num(t + 6)?,
        });
    }
    Ok(Dataset {
        rows,
        provenance: manifest.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::ElementType;

    pub(crate) fn row(n: u32, long: bool, passenger: bool, min_speed: f64) -> LabeledEngagement {
        let mut features = FeatureVector {
            n,
            n_tap: n,
            d_avg: if n > 1 { 12.5 } else { 0.0 },
            v_avg: 50.0 + n as f64 / 3.0,
            theta_avg: -0.1,
            ..FeatureVector::default()
        };
        features.element_counts[ElementType::Button.index()] = n;
        LabeledEngagement {
            trip_id: format!("trip-{n}"),
            start_ms: 1000 * n as i64,
            features,
            glance: GlanceMetrics {
                tgd_center_ms: 700 * n as i64,
                n_glances_center: n,
                n_long_glances: u32::from(long),
                avg_glance_ms: 700.0,
                has_long_glance: long,
            },
            passenger_present: passenger,
            min_speed_kmh: min_speed,
        }
    }

    #[test]
    fn filter_rules() {
        let rows = vec![
            row(42, false, false, 30.0),
            row(5, false, false, 0.0),
            row(41, false, false, 30.0),
            row(3, true, true, 30.0),
            row(50, true, true, 0.0),
        ];
        let ds = filter_dataset(rows, &DatasetFilter::default());
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.rows[0].features.n, 41);
        assert_eq!(ds.provenance.too_many_interactions, 2);
        assert_eq!(ds.provenance.passenger_present, 1);
        assert_eq!(ds.provenance.full_stop, 1);
    }

    fn mixed(pos: usize, neg: usize) -> Dataset {
        let rows = (0..pos + neg)
            .map(|i| row(1 + (i % 40) as u32, i < pos, false, 20.0))
            .collect();
        Dataset::new(rows)
    }

    #[test]
    fn undersampling() {
        let ds = mixed(10, 40);
        let balanced = balance_undersample(&ds, 3).unwrap();
        assert_eq!(balanced.class_counts(), (10, 10));
        assert_eq!(balanced.provenance.undersampled, 30);
        assert_eq!(balance_undersample(&ds, 3).unwrap(), balanced);
        assert!(balanced.rows.iter().all(|r| ds.rows.contains(r)));

        let even = mixed(7, 7);
        assert_eq!(balance_undersample(&even, 9).unwrap().rows, even.rows);

        assert_eq!(balance_undersample(&mixed(0, 5), 1), Err(FeatureError::OneClassOnly));
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let mut ds = mixed(3, 4);
        ds.rows[0].features.v_avg = 0.1 + 0.2;
        ds.rows[1].features.d_avg = std::f64::consts::PI * 1e5;
        ds.rows[2].glance.avg_glance_ms = 1.0 / 3.0;
        ds.provenance.full_stop = 4;
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.rows.iter().zip(&ds.rows) {
            assert_eq!(a.features.v_avg.to_bits(), b.features.v_avg.to_bits());
        }
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(
            read_dataset("trip_id,x\n".as_bytes()),
            Err(FeatureError::Format { line: 1, .. })
        ));
        let mut buf = Vec::new();
        write_dataset(&mixed(1, 1), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("12.5", "abc");
        assert!(matches!(
            read_dataset(text.as_bytes()),
            Err(FeatureError::Format { line: 4, .. })
        ));
    }
}
