//! AOI aggregation, the glance-quality filter and per-engagement glance
//! metrics.
//!
//! The filter applies four interpolation rules in a fixed order:
//!
//! 1. tracking loss shorter than 300 ms between two equal AOIs,
//! 2. any glance shorter than 120 ms,
//! 3. tracking loss shorter than 120 ms between different AOIs,
//! 4. eye-lid closures shorter than 500 ms.
//!
//! Interpolating a segment hands its time to its neighbours: it becomes part
//! of the neighbouring glance when both neighbours share an AOI, it is split
//! at its midpoint when they differ, and it is absorbed whole when it sits at
//! the edge of the stream. Interpolation can create new short segments next
//! to equal AOIs, so the rule sequence is repeated until a full round changes
//! nothing. Segments only ever grow, so this terminates after at most one
//! round per removed segment and the result is a fixpoint (the filter is
//! idempotent). Time is never deleted, so the covered span is conserved.

use serde::{Deserialize, Serialize};

use crate::telemetry::{Aoi, Millis, RawGlanceSegment};

/// Default threshold above which a single center-stack glance is "long".
pub const DEFAULT_LONG_GLANCE_MS: Millis = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Tracking loss between equal AOIs shorter than this is interpolated.
    pub tracking_loss_same_aoi_ms: Millis,
    /// Glances shorter than this are interpolated.
    pub min_glance_ms: Millis,
    /// Tracking loss between different AOIs shorter than this is interpolated.
    pub tracking_loss_between_ms: Millis,
    /// Eye-lid closures shorter than this are treated as blinks.
    pub blink_ms: Millis,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            tracking_loss_same_aoi_ms: 300,
            min_glance_ms: 120,
            tracking_loss_between_ms: 120,
            blink_ms: 500,
        }
    }
}

/// Folds mirror, window and cluster codes into `OffRoad`.
pub fn aggregate_aoi(raw: RawGlanceSegment) -> RawGlanceSegment {
    let target = match raw.target {
        Aoi::RearViewMirror | Aoi::SideMirror | Aoi::SideWindow | Aoi::InstrumentCluster => Aoi::OffRoad,
        other => other,
    };
    RawGlanceSegment { target, ..raw }
}

pub fn aggregate_stream(raw: &[RawGlanceSegment]) -> Vec<RawGlanceSegment> {
    raw.iter().copied().map(aggregate_aoi).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rule {
    TrackingLossSameAoi,
    ShortGlance,
    TrackingLossBetween,
    Blink,
}

const RULE_ORDER: [Rule; 4] = [
    Rule::TrackingLossSameAoi,
    Rule::ShortGlance,
    Rule::TrackingLossBetween,
    Rule::Blink,
];

fn eligible(rule: Rule, segs: &[RawGlanceSegment], i: usize, cfg: &FilterConfig) -> bool {
    let seg = segs[i];
    let d = seg.duration();
    let prev = i.checked_sub(1).map(|j| segs[j]);
    let next = segs.get(i + 1).copied();
    let has_neighbour = prev.is_some() || next.is_some();
    match rule {
        Rule::TrackingLossSameAoi => {
            seg.target == Aoi::TrackingLoss
                && d < cfg.tracking_loss_same_aoi_ms
                && matches!((prev, next), (Some(p), Some(n)) if p.target == n.target)
        }
        Rule::ShortGlance => !seg.target.is_artifact() && d < cfg.min_glance_ms && has_neighbour,
        Rule::TrackingLossBetween => {
            seg.target == Aoi::TrackingLoss && d < cfg.tracking_loss_between_ms && has_neighbour
        }
        Rule::Blink => seg.target == Aoi::EyesClosed && d < cfg.blink_ms && has_neighbour,
    }
}

/// Hands segment `i`'s time to its neighbours and removes it.
fn interpolate(segs: &mut Vec<RawGlanceSegment>, i: usize) {
    let seg = segs[i];
    let has_prev = i > 0;
    let has_next = i + 1 < segs.len();
    match (has_prev, has_next) {
        (true, true) if segs[i - 1].target == segs[i + 1].target => {
            segs[i - 1].end_ms = segs[i + 1].end_ms;
            segs.drain(i..=i + 1);
        }
        (true, true) => {
            let mid = seg.start_ms + seg.duration() / 2;
            segs[i - 1].end_ms = mid;
            segs[i + 1].start_ms = mid;
            segs.remove(i);
        }
        (true, false) => {
            segs[i - 1].end_ms = seg.end_ms;
            segs.remove(i);
        }
        (false, true) => {
            segs[i + 1].start_ms = seg.start_ms;
            segs.remove(i);
        }
        (false, false) => {}
    }
}

/// Merges runs of adjacent segments that share an AOI.
pub fn merge_adjacent(segs: &mut Vec<RawGlanceSegment>) {
    segs.dedup_by(|next, prev| {
        if next.target == prev.target {
            prev.end_ms = next.end_ms;
            true
        } else {
            false
        }
    });
}

fn apply_rule(segs: &mut Vec<RawGlanceSegment>, rule: Rule, cfg: &FilterConfig) -> bool {
    let mut changed = false;
    let mut i = 0;
    while i < segs.len() {
        if eligible(rule, segs, i, cfg) {
            interpolate(segs, i);
            merge_adjacent(segs);
            changed = true;
            // Only neighbours of the removed segment can change eligibility.
            i = i.saturating_sub(2);
        } else {
            i += 1;
        }
    }
    changed
}

/// Cleans a contiguous, AOI-aggregated glance stream.
pub fn filter_glances(seq: &[RawGlanceSegment], cfg: &FilterConfig) -> Vec<RawGlanceSegment> {
    let mut segs = seq.to_vec();
    merge_adjacent(&mut segs);
    loop {
        let mut changed = false;
        for rule in RULE_ORDER {
            changed |= apply_rule(&mut segs, rule, cfg);
        }
        if !changed {
            break;
        }
    }
    merge_adjacent(&mut segs);
    segs
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GlanceMetrics {
    /// Total center-stack glance duration.
    pub tgd_center_ms: Millis,
    pub n_glances_center: u32,
    pub n_long_glances: u32,
    pub avg_glance_ms: f64,
    pub has_long_glance: bool,
}

/// Centre-stack metrics of a filtered glance sequence. A glance is long iff
/// its duration is strictly greater than `long_threshold_ms`.
pub fn glance_metrics(seq: &[RawGlanceSegment], long_threshold_ms: Millis) -> GlanceMetrics {
    let mut m = GlanceMetrics::default();
    for g in seq.iter().filter(|g| g.target == Aoi::CenterStack) {
        m.tgd_center_ms += g.duration();
        m.n_glances_center += 1;
        if g.duration() > long_threshold_ms {
            m.n_long_glances += 1;
        }
    }
    if m.n_glances_center > 0 {
        m.avg_glance_ms = m.tgd_center_ms as f64 / m.n_glances_center as f64;
    }
    m.has_long_glance = m.n_long_glances > 0;
    m
}
