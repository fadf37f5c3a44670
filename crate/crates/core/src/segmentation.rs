//! Sessionization of a trip into secondary task engagements: interaction
//! sequences split on inter-touch gaps, each paired with its buffered
//! driving window and the glances overlapping it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::glance::{aggregate_stream, filter_glances, FilterConfig};
use crate::telemetry::{
    validate_sampling, DrivingSample, Millis, RawGlanceSegment, StateEvent, StateKind, TouchEvent, TripLog,
    DEFAULT_SAMPLING_TOLERANCE_MS, SAMPLE_PERIOD_MS,
};

pub const DEFAULT_DELTA_T_MAX_MS: Millis = 10_000;
pub const DEFAULT_BUFFER_MS: Millis = 2_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegmentError {
    #[error("no driving sample inside window ({start}, {end})")]
    EmptyWindow { start: Millis, end: Millis },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentConfig {
    /// Maximum gap between two touches of the same sequence (inclusive).
    pub delta_t_max_ms: Millis,
    /// Driving window padding before the first and after the last touch.
    pub buffer_ms: Millis,
    pub sampling_tolerance_ms: Millis,
    pub filter: FilterConfig,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            delta_t_max_ms: DEFAULT_DELTA_T_MAX_MS,
            buffer_ms: DEFAULT_BUFFER_MS,
            sampling_tolerance_ms: DEFAULT_SAMPLING_TOLERANCE_MS,
            filter: FilterConfig::default(),
        }
    }
}

/// Touches with no gap larger than the configured maximum. Never empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSequence {
    pub interactions: Vec<TouchEvent>,
}

impl InteractionSequence {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn first_ms(&self) -> Millis {
        self.interactions[0].timestamp
    }

    pub fn last_ms(&self) -> Millis {
        self.interactions[self.interactions.len() - 1].timestamp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowWarning {
    /// ACC changed state after the first interaction; the start value is kept.
    AccToggled { at: Millis },
    /// SA changed state after the first interaction; the start value is kept.
    SaToggled { at: Millis },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingSequence {
    pub samples: Vec<DrivingSample>,
    pub acc_active: bool,
    pub sa_active: bool,
    /// A passenger belt was fastened at some point during the window.
    pub passenger_present: bool,
    pub warnings: Vec<WindowWarning>,
}

impl DrivingSequence {
    pub fn min_speed(&self) -> f64 {
        self.samples.iter().map(|s| s.speed).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlanceSequence {
    pub glances: Vec<RawGlanceSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondaryTaskEngagement {
    pub trip_id: String,
    pub interactions: InteractionSequence,
    pub glances: GlanceSequence,
    pub driving: DrivingSequence,
}

/// Splits a sorted touch stream wherever the gap to the previous touch
/// exceeds `delta_t_max`. A gap exactly equal to the bound stays in-sequence.
pub fn segment_interactions(touch: &[TouchEvent], delta_t_max: Millis) -> Vec<InteractionSequence> {
    let mut out: Vec<InteractionSequence> = Vec::new();
    let mut prev_ts: Option<Millis> = None;
    for event in touch {
        match (prev_ts, out.last_mut()) {
            (Some(prev), Some(current)) if event.timestamp - prev <= delta_t_max => {
                current.interactions.push(event.clone());
            }
            _ => out.push(InteractionSequence {
                interactions: vec![event.clone()],
            }),
        }
        prev_ts = Some(event.timestamp);
    }
    out
}

/// Driving samples strictly inside `(t_first - buffer, t_last + buffer)`.
///
/// ACC and SA status are the latest state at or before the first touch.
/// Passenger presence is the belt state at the window start or any belt-on
/// event inside the window.
pub fn window_driving(
    driving: &[DrivingSample],
    states: &[StateEvent],
    seq: &InteractionSequence,
    buffer_ms: Millis,
) -> Result<DrivingSequence, SegmentError> {
    let start = seq.first_ms() - buffer_ms;
    let end = seq.last_ms() + buffer_ms;
    let lo = driving.partition_point(|s| s.timestamp <= start);
    let hi = driving.partition_point(|s| s.timestamp < end);
    if lo >= hi {
        return Err(SegmentError::EmptyWindow { start, end });
    }

    let t_first = seq.first_ms();
    let mut acc = false;
    let mut sa = false;
    let mut belt_at_start = false;
    let mut belt_in_window = false;
    let mut warnings = Vec::new();
    for ev in states {
        if ev.timestamp >= end {
            break;
        }
        let before_first = ev.timestamp <= t_first;
        match ev.kind {
            StateKind::AccActive | StateKind::AccInactive => {
                let on = ev.kind == StateKind::AccActive;
                if before_first {
                    acc = on;
                } else if on != acc {
                    warnings.push(WindowWarning::AccToggled { at: ev.timestamp });
                }
            }
            StateKind::SaActive | StateKind::SaInactive => {
                let on = ev.kind == StateKind::SaActive;
                if before_first {
                    sa = on;
                } else if on != sa {
                    warnings.push(WindowWarning::SaToggled { at: ev.timestamp });
                }
            }
            StateKind::PassengerBeltOn if ev.timestamp > start => belt_in_window = true,
            StateKind::PassengerBeltOn => belt_at_start = true,
            StateKind::PassengerBeltOff if ev.timestamp <= start => belt_at_start = false,
            StateKind::PassengerBeltOff => {}
        }
    }

    Ok(DrivingSequence {
        samples: driving[lo..hi].to_vec(),
        acc_active: acc,
        sa_active: sa,
        passenger_present: belt_at_start || belt_in_window,
        warnings,
    })
}

/// Whole glances overlapping `[t_first, t_last]` (endpoints inclusive).
///
/// A glance qualifies when its start or end lies inside the interval, or when
/// it spans the whole interval (a fragmented boundary glance, kept whole).
pub fn attach_glances(glances: &[RawGlanceSegment], seq: &InteractionSequence) -> GlanceSequence {
    let (first, last) = (seq.first_ms(), seq.last_ms());
    let lo = glances.partition_point(|g| g.end_ms < first);
    let selected = glances[lo..]
        .iter()
        .take_while(|g| g.start_ms <= last)
        .copied()
        .collect();
    GlanceSequence { glances: selected }
}

/// Why candidate engagements were discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DropStats {
    pub interaction_sequences: usize,
    pub missing_driving: usize,
    pub invalid_sampling: usize,
    pub missing_glances: usize,
    /// Kept engagements whose ACC/SA status toggled mid-window.
    pub state_toggle_warnings: usize,
}

impl DropStats {
    pub fn merge(&mut self, other: &DropStats) {
        self.interaction_sequences += other.interaction_sequences;
        self.missing_driving += other.missing_driving;
        self.invalid_sampling += other.invalid_sampling;
        self.missing_glances += other.missing_glances;
        self.state_toggle_warnings += other.state_toggle_warnings;
    }

    pub fn dropped(&self) -> usize {
        self.missing_driving + self.invalid_sampling + self.missing_glances
    }
}

/// The window must be covered end to end at the nominal rate.
fn window_covered(ds: &DrivingSequence, seq: &InteractionSequence, cfg: &SegmentConfig) -> bool {
    let max_gap = SAMPLE_PERIOD_MS + cfg.sampling_tolerance_ms;
    let start = seq.first_ms() - cfg.buffer_ms;
    let end = seq.last_ms() + cfg.buffer_ms;
    let (first, last) = (ds.samples[0].timestamp, ds.samples[ds.samples.len() - 1].timestamp);
    validate_sampling(&ds.samples, cfg.sampling_tolerance_ms) && first - start <= max_gap && end - last <= max_gap
}

/// Builds every complete engagement of a trip. The trip's glance stream is
/// AOI-aggregated and filtered once up front; engagements without a valid
/// driving window or without glances are dropped and counted.
pub fn assemble_engagements(trip: &TripLog, cfg: &SegmentConfig) -> (Vec<SecondaryTaskEngagement>, DropStats) {
    let glances = filter_glances(&aggregate_stream(&trip.glances), &cfg.filter);
    let sequences = segment_interactions(&trip.touch, cfg.delta_t_max_ms);
    let mut stats = DropStats {
        interaction_sequences: sequences.len(),
        ..DropStats::default()
    };
    let mut out = Vec::new();
    for seq in sequences {
        let driving = match window_driving(&trip.driving, &trip.states, &seq, cfg.buffer_ms) {
            Ok(d) => d,
            Err(SegmentError::EmptyWindow { .. }) => {
                stats.missing_driving += 1;
                continue;
            }
        };
        if !window_covered(&driving, &seq, cfg) {
            stats.invalid_sampling += 1;
            continue;
        }
        let glance_seq = attach_glances(&glances, &seq);
        if glance_seq.glances.is_empty() {
            stats.missing_glances += 1;
            continue;
        }
        if !driving.warnings.is_empty() {
            stats.state_toggle_warnings += 1;
        }
        out.push(SecondaryTaskEngagement {
            trip_id: trip.trip_id.clone(),
            interactions: seq,
            glances: glance_seq,
            driving,
        });
    }
    (out, stats)
}
