//! The 25 per-engagement input features, gesture classification, and the
//! dataset-level operations (filtering, balancing, statistics, persistence).

mod dataset;
mod stats;

use std::collections::BTreeMap;
use std::fmt;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::exec::Execution;
use crate::glance::{glance_metrics, GlanceMetrics, DEFAULT_LONG_GLANCE_MS};
use crate::segmentation::{assemble_engagements, DropStats, SecondaryTaskEngagement, SegmentConfig};
use crate::telemetry::{ElementType, Millis, Point, TouchEvent, TripLog, MAX_SPEED_KMH};

pub use dataset::{
    balance_undersample, filter_dataset, read_dataset, write_dataset, Dataset, DatasetFilter, Provenance,
    DATASET_SCHEMA_VERSION,
};
pub use stats::{quantile, summary_stats, ColumnSummary, StdKind};

pub const FEATURE_COUNT: usize = 25;

/// Column order of every feature row.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "n_Button",
    "n_List",
    "n_Map",
    "n_Slider",
    "n_Homebar",
    "n_CoverFlow",
    "n_AppIcon",
    "n_Tab",
    "n_Keyboard",
    "n_Browser",
    "n_RemoteUI",
    "n_ControlBar",
    "n_PopUp",
    "n_ClickGuard",
    "n_Other",
    "n_Unknown",
    "n_Tap",
    "n_Drag",
    "n_Multitouch",
    "d_avg",
    "N",
    "v_avg",
    "theta_avg",
    "a_acc",
    "a_sa",
];

pub const IDX_TAP: usize = 16;
pub const IDX_DRAG: usize = 17;
pub const IDX_MULTITOUCH: usize = 18;
pub const IDX_D_AVG: usize = 19;
pub const IDX_N: usize = 20;
pub const IDX_V_AVG: usize = 21;
pub const IDX_THETA_AVG: usize = 22;
pub const IDX_ACC: usize = 23;
pub const IDX_SA: usize = 24;

pub const DEFAULT_DRAG_THRESHOLD_PX: f64 = 10.0;

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

/// Column index of an element-type count.
pub fn element_index(e: ElementType) -> usize {
    e.index()
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("invalid feature vector: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<FieldError>),
    #[error("dataset contains only one class")]
    OneClassOnly,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset format error at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub reason: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gesture {
    Tap,
    Drag,
    Multitouch,
}

/// Multitouch iff two or more fingers; otherwise Drag iff the single finger
/// moved at least `drag_threshold_px`; otherwise Tap.
pub fn classify_gesture(e: &TouchEvent, drag_threshold_px: f64) -> Gesture {
    match e.fingers.as_slice() {
        [single] if single.displacement() >= drag_threshold_px => Gesture::Drag,
        [_] | [] => Gesture::Tap,
        _ => Gesture::Multitouch,
    }
}

/// Mean of the finger start positions.
pub fn touch_centroid(e: &TouchEvent) -> Point {
    let n = e.fingers.len().max(1) as f64;
    let (sx, sy) = e
        .fingers
        .iter()
        .fold((0.0, 0.0), |(x, y), f| (x + f.start.x, y + f.start.y));
    Point::new(sx / n, sy / n)
}

/// One engagement's model input.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureVector {
    /// Indexed by [`ElementType::index`].
    pub element_counts: [u32; ElementType::COUNT],
    pub n_tap: u32,
    pub n_drag: u32,
    pub n_multitouch: u32,
    /// Mean distance between consecutive touch centroids in px; 0 for N = 1.
    pub d_avg: f64,
    pub n: u32,
    pub v_avg: f64,
    pub theta_avg: f64,
    pub a_acc: bool,
    pub a_sa: bool,
}

impl FeatureVector {
    pub fn count(&self, e: ElementType) -> u32 {
        self.element_counts[e.index()]
    }

    pub fn to_row(&self) -> [f64; FEATURE_COUNT] {
        let mut row = [0.0; FEATURE_COUNT];
        for (slot, c) in row.iter_mut().zip(self.element_counts) {
            *slot = c as f64;
        }
        row[IDX_TAP] = self.n_tap as f64;
        row[IDX_DRAG] = self.n_drag as f64;
        row[IDX_MULTITOUCH] = self.n_multitouch as f64;
        row[IDX_D_AVG] = self.d_avg;
        row[IDX_N] = self.n as f64;
        row[IDX_V_AVG] = self.v_avg;
        row[IDX_THETA_AVG] = self.theta_avg;
        row[IDX_ACC] = if self.a_acc { 1.0 } else { 0.0 };
        row[IDX_SA] = if self.a_sa { 1.0 } else { 0.0 };
        row
    }

    /// Rebuilds and validates a vector from a row in [`FEATURE_NAMES`] order.
    pub fn from_row(row: &[f64]) -> Result<Self, FeatureError> {
        if row.len() != FEATURE_COUNT {
            return Err(FeatureError::Invalid(vec![FieldError {
                field: "<row>".into(),
                reason: format!("expected {FEATURE_COUNT} values, found {}", row.len()),
            }]));
        }
        let named: BTreeMap<String, f64> = FEATURE_NAMES
            .iter()
            .zip(row)
            .map(|(n, v)| (n.to_string(), *v))
            .collect();
        Self::from_named(&named)
    }

    /// Builds a vector from named values, reporting every offending field.
    pub fn from_named(values: &BTreeMap<String, f64>) -> Result<Self, FeatureError> {
        let mut errors = Vec::new();
        for key in values.keys() {
            if feature_index(key).is_none() {
                errors.push(FieldError {
                    field: key.clone(),
                    reason: "unknown feature".into(),
                });
            }
        }
        let mut row = [0.0; FEATURE_COUNT];
        for (i, name) in FEATURE_NAMES.iter().enumerate() {
            match values.get(*name) {
                Some(v) if v.is_finite() => row[i] = *v,
                Some(v) => errors.push(FieldError {
                    field: name.to_string(),
                    reason: format!("not a finite number ({v})"),
                }),
                None => errors.push(FieldError {
                    field: name.to_string(),
                    reason: "missing".into(),
                }),
            }
        }
        if !errors.is_empty() {
            return Err(FeatureError::Invalid(errors));
        }

        let mut count = |i: usize| -> u32 {
            let v = row[i];
            if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                errors.push(FieldError {
                    field: FEATURE_NAMES[i].into(),
                    reason: format!("must be a non-negative integer, got {v}"),
                });
                0
            } else {
                v as u32
            }
        };
        let mut fv = FeatureVector::default();
        for i in 0..ElementType::COUNT {
            fv.element_counts[i] = count(i);
        }
        fv.n_tap = count(IDX_TAP);
        fv.n_drag = count(IDX_DRAG);
        fv.n_multitouch = count(IDX_MULTITOUCH);
        fv.n = count(IDX_N);
        let acc = count(IDX_ACC);
        let sa = count(IDX_SA);
        for (idx, v) in [(IDX_ACC, acc), (IDX_SA, sa)] {
            if v > 1 {
                errors.push(FieldError {
                    field: FEATURE_NAMES[idx].into(),
                    reason: format!("must be 0 or 1, got {v}"),
                });
            }
        }
        fv.a_acc = acc == 1;
        fv.a_sa = sa == 1;
        fv.d_avg = row[IDX_D_AVG];
        fv.v_avg = row[IDX_V_AVG];
        fv.theta_avg = row[IDX_THETA_AVG];
        if !errors.is_empty() {
            return Err(FeatureError::Invalid(errors));
        }
        fv.validate()?;
        Ok(fv)
    }

    /// Cross-field invariants.
    pub fn validate(&self) -> Result<(), FeatureError> {
        let mut errors = Vec::new();
        let mut bad = |field: &str, reason: String| {
            errors.push(FieldError {
                field: field.into(),
                reason,
            })
        };
        if self.n == 0 {
            bad("N", "must be at least 1".into());
        }
        let elements: u64 = self.element_counts.iter().map(|&c| c as u64).sum();
        if elements != self.n as u64 {
            bad(
                "N",
                format!("element-type counts sum to {elements}, not N = {}", self.n),
            );
        }
        let gestures = self.n_tap as u64 + self.n_drag as u64 + self.n_multitouch as u64;
        if gestures != self.n as u64 {
            bad("N", format!("gesture counts sum to {gestures}, not N = {}", self.n));
        }
        if !(self.d_avg >= 0.0) {
            bad("d_avg", format!("must be >= 0, got {}", self.d_avg));
        }
        if self.n == 1 && self.d_avg != 0.0 {
            bad("d_avg", "must be 0 for a single interaction".into());
        }
        if !(0.0..=MAX_SPEED_KMH).contains(&self.v_avg) {
            bad("v_avg", format!("must lie in [0, {MAX_SPEED_KMH}], got {}", self.v_avg));
        }
        if !self.theta_avg.is_finite() {
            bad("theta_avg", "must be finite".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(FeatureError::Invalid(errors))
        }
    }
}

/// Counts serialize as integers and the ACC/SA flags as 0/1.
impl Serialize for FeatureVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let row = self.to_row();
        let mut map = serializer.serialize_map(Some(FEATURE_COUNT))?;
        for (i, name) in FEATURE_NAMES.iter().enumerate() {
            match i {
                IDX_D_AVG | IDX_V_AVG | IDX_THETA_AVG => map.serialize_entry(name, &row[i])?,
                _ => map.serialize_entry(name, &(row[i] as u64))?,
            }
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for FeatureVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let named = BTreeMap::<String, f64>::deserialize(deserializer)?;
        FeatureVector::from_named(&named).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub segment: SegmentConfig,
    pub drag_threshold_px: f64,
    pub long_glance_ms: Millis,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            segment: SegmentConfig::default(),
            drag_threshold_px: DEFAULT_DRAG_THRESHOLD_PX,
            long_glance_ms: DEFAULT_LONG_GLANCE_MS,
        }
    }
}

/// Table-style feature vector of one assembled, glance-filtered engagement.
pub fn extract_features(s: &SecondaryTaskEngagement, drag_threshold_px: f64) -> FeatureVector {
    let touches = &s.interactions.interactions;
    let mut fv = FeatureVector {
        n: touches.len() as u32,
        a_acc: s.driving.acc_active,
        a_sa: s.driving.sa_active,
        ..FeatureVector::default()
    };
    for e in touches {
        fv.element_counts[e.element_type.index()] += 1;
        match classify_gesture(e, drag_threshold_px) {
            Gesture::Tap => fv.n_tap += 1,
            Gesture::Drag => fv.n_drag += 1,
            Gesture::Multitouch => fv.n_multitouch += 1,
        }
    }
    if touches.len() > 1 {
        let total: f64 = touches
            .windows(2)
            .map(|w| touch_centroid(&w[0]).distance(touch_centroid(&w[1])))
            .sum();
        fv.d_avg = total / (touches.len() - 1) as f64;
    }
    let samples = &s.driving.samples;
    if !samples.is_empty() {
        let n = samples.len() as f64;
        fv.v_avg = samples.iter().map(|d| d.speed).sum::<f64>() / n;
        fv.theta_avg = samples.iter().map(|d| d.steering_angle).sum::<f64>() / n;
    }
    fv
}

/// One dataset row: features, both labels and the fields needed by the
/// dataset filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEngagement {
    pub trip_id: String,
    pub start_ms: Millis,
    pub features: FeatureVector,
    pub glance: GlanceMetrics,
    pub passenger_present: bool,
    pub min_speed_kmh: f64,
}

impl LabeledEngagement {
    pub fn long_glance(&self) -> bool {
        self.glance.has_long_glance
    }

    pub fn tgd_ms(&self) -> Millis {
        self.glance.tgd_center_ms
    }
}

pub fn label_engagement(s: &SecondaryTaskEngagement, cfg: &FeatureConfig) -> LabeledEngagement {
    LabeledEngagement {
        trip_id: s.trip_id.clone(),
        start_ms: s.interactions.first_ms(),
        features: extract_features(s, cfg.drag_threshold_px),
        glance: glance_metrics(&s.glances.glances, cfg.long_glance_ms),
        passenger_present: s.driving.passenger_present,
        min_speed_kmh: s.driving.min_speed(),
    }
}

/// Trip logs to unfiltered dataset rows, trips processed independently.
pub fn trips_to_rows(trips: &[TripLog], cfg: &FeatureConfig, exec: Execution) -> (Vec<LabeledEngagement>, DropStats) {
    let per_trip = exec.map(trips, |trip| {
        let (engagements, stats) = assemble_engagements(trip, &cfg.segment);
        let rows: Vec<_> = engagements.iter().map(|s| label_engagement(s, cfg)).collect();
        (rows, stats)
    });
    let mut rows = Vec::new();
    let mut stats = DropStats::default();
    for (r, s) in per_trip {
        rows.extend(r);
        stats.merge(&s);
    }
    (rows, stats)
}
