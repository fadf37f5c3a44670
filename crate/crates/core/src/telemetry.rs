//! Raw per-trip telemetry: touch events, gaze segments, 4 Hz driving samples
//! and on-change state events, plus the line-delimited trip log format.
//!
//! A trip log is one record per line. Two dialects are supported:
//!
//! * `jsonl`: one JSON object per line, discriminated by a `"kind"` field.
//! * `tsv`: tab-separated fields, the first field being the record kind.
//!
//! The first non-comment record must be the trip header. Timestamps are
//! integer milliseconds; the header's optional `epoch_ms` is subtracted so
//! in-memory timestamps are always relative to the trip start. Blank lines
//! and lines starting with `#` are ignored. See `docs/trip-log-format.md` for
//! the field-by-field reference.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Milliseconds since trip start.
pub type Millis = i64;

/// Nominal driving-signal period (4 Hz).
pub const SAMPLE_PERIOD_MS: Millis = 250;
/// Default tolerance around [`SAMPLE_PERIOD_MS`] for [`validate_sampling`].
pub const DEFAULT_SAMPLING_TOLERANCE_MS: Millis = 50;
/// Samples above this speed are rejected at ingestion.
pub const MAX_SPEED_KMH: f64 = 250.0;
/// Samples above this speed are accepted but flagged.
pub const FLAG_SPEED_KMH: f64 = 210.0;

#[derive(Debug, Error, PartialEq)]
pub enum TelemetryError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: {kind} timestamp {found} precedes previous timestamp {previous}")]
    UnsortedTimestamps {
        line: usize,
        kind: &'static str,
        previous: Millis,
        found: Millis,
    },
    #[error("line {line}: glance starts at {found} but the previous glance ended at {expected}")]
    GlanceGap {
        line: usize,
        expected: Millis,
        found: Millis,
    },
    #[error("missing trip header record")]
    MissingHeader,
    #[error("trip contains no events")]
    EmptyTrip,
    #[error("unknown log format `{0}` (expected `jsonl` or `tsv`)")]
    UnknownFormat(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{path}: {source}")]
    InFile { path: String, source: Box<TelemetryError> },
}

fn malformed(line: usize, reason: impl Into<String>) -> TelemetryError {
    TelemetryError::MalformedRecord {
        line,
        reason: reason.into(),
    }
}

/// UI element categories a touch can land on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ElementType {
    Button,
    List,
    Map,
    Slider,
    Homebar,
    CoverFlow,
    AppIcon,
    Tab,
    Keyboard,
    Browser,
    RemoteUI,
    ControlBar,
    PopUp,
    ClickGuard,
    Other,
    Unknown,
}

impl ElementType {
    pub const COUNT: usize = 16;
    pub const ALL: [ElementType; Self::COUNT] = [
        ElementType::Button,
        ElementType::List,
        ElementType::Map,
        ElementType::Slider,
        ElementType::Homebar,
        ElementType::CoverFlow,
        ElementType::AppIcon,
        ElementType::Tab,
        ElementType::Keyboard,
        ElementType::Browser,
        ElementType::RemoteUI,
        ElementType::ControlBar,
        ElementType::PopUp,
        ElementType::ClickGuard,
        ElementType::Other,
        ElementType::Unknown,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementType::Button => "Button",
            ElementType::List => "List",
            ElementType::Map => "Map",
            ElementType::Slider => "Slider",
            ElementType::Homebar => "Homebar",
            ElementType::CoverFlow => "CoverFlow",
            ElementType::AppIcon => "AppIcon",
            ElementType::Tab => "Tab",
            ElementType::Keyboard => "Keyboard",
            ElementType::Browser => "Browser",
            ElementType::RemoteUI => "RemoteUI",
            ElementType::ControlBar => "ControlBar",
            ElementType::PopUp => "PopUp",
            ElementType::ClickGuard => "ClickGuard",
            ElementType::Other => "Other",
            ElementType::Unknown => "Unknown",
        }
    }

    /// Unrecognized names map to [`ElementType::Unknown`].
    pub fn from_name_lenient(name: &str) -> ElementType {
        ElementType::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(name))
            .unwrap_or(ElementType::Unknown)
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Start and end position of one finger over the course of a gesture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Finger {
    pub start: Point,
    pub end: Point,
}

impl Finger {
    pub fn tap(at: Point) -> Self {
        Finger { start: at, end: at }
    }

    pub fn displacement(&self) -> f64 {
        self.start.distance(self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TouchEvent {
    pub timestamp: Millis,
    pub element_id: String,
    pub element_type: ElementType,
    pub fingers: Vec<Finger>,
}

/// Gaze target codes as reported by the driver camera, including the
/// fine-grained off-road codes that get folded into [`Aoi::OffRoad`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Aoi {
    OnRoad,
    OffRoad,
    CenterStack,
    RearViewMirror,
    SideMirror,
    SideWindow,
    InstrumentCluster,
    TrackingLoss,
    EyesClosed,
}

impl Aoi {
    pub const ALL: [Aoi; 9] = [
        Aoi::OnRoad,
        Aoi::OffRoad,
        Aoi::CenterStack,
        Aoi::RearViewMirror,
        Aoi::SideMirror,
        Aoi::SideWindow,
        Aoi::InstrumentCluster,
        Aoi::TrackingLoss,
        Aoi::EyesClosed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aoi::OnRoad => "OnRoad",
            Aoi::OffRoad => "OffRoad",
            Aoi::CenterStack => "CenterStack",
            Aoi::RearViewMirror => "RearViewMirror",
            Aoi::SideMirror => "SideMirror",
            Aoi::SideWindow => "SideWindow",
            Aoi::InstrumentCluster => "InstrumentCluster",
            Aoi::TrackingLoss => "TrackingLoss",
            Aoi::EyesClosed => "EyesClosed",
        }
    }

    /// True for the gaze-quality pseudo targets.
    pub fn is_artifact(self) -> bool {
        matches!(self, Aoi::TrackingLoss | Aoi::EyesClosed)
    }
}

impl FromStr for Aoi {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Aoi::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown glance target `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawGlanceSegment {
    pub start_ms: Millis,
    pub end_ms: Millis,
    pub target: Aoi,
}

impl RawGlanceSegment {
    pub fn new(start_ms: Millis, end_ms: Millis, target: Aoi) -> Self {
        RawGlanceSegment {
            start_ms,
            end_ms,
            target,
        }
    }

    pub fn duration(&self) -> Millis {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrivingSample {
    pub timestamp: Millis,
    /// km/h
    pub speed: f64,
    /// degrees
    pub steering_angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateKind {
    AccActive,
    AccInactive,
    SaActive,
    SaInactive,
    PassengerBeltOn,
    PassengerBeltOff,
}

impl StateKind {
    pub const ALL: [StateKind; 6] = [
        StateKind::AccActive,
        StateKind::AccInactive,
        StateKind::SaActive,
        StateKind::SaInactive,
        StateKind::PassengerBeltOn,
        StateKind::PassengerBeltOff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StateKind::AccActive => "AccActive",
            StateKind::AccInactive => "AccInactive",
            StateKind::SaActive => "SaActive",
            StateKind::SaInactive => "SaInactive",
            StateKind::PassengerBeltOn => "PassengerBeltOn",
            StateKind::PassengerBeltOff => "PassengerBeltOff",
        }
    }
}

impl FromStr for StateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StateKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown state kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateEvent {
    pub timestamp: Millis,
    pub kind: StateKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripLog {
    pub trip_id: String,
    /// (width, height) in px
    pub screen_size: (u32, u32),
    pub touch: Vec<TouchEvent>,
    pub glances: Vec<RawGlanceSegment>,
    pub driving: Vec<DrivingSample>,
    pub states: Vec<StateEvent>,
}

impl TripLog {
    pub fn empty(trip_id: impl Into<String>, screen_size: (u32, u32)) -> Self {
        TripLog {
            trip_id: trip_id.into(),
            screen_size,
            touch: Vec::new(),
            glances: Vec::new(),
            driving: Vec::new(),
            states: Vec::new(),
        }
    }

    /// Latest timestamp of any event, or 0 for an empty trip.
    pub fn duration_ms(&self) -> Millis {
        let touch = self.touch.last().map(|e| e.timestamp);
        let glance = self.glances.last().map(|g| g.end_ms);
        let driving = self.driving.last().map(|d| d.timestamp);
        let state = self.states.last().map(|s| s.timestamp);
        [touch, glance, driving, state].into_iter().flatten().max().unwrap_or(0)
    }

    /// Number of driving samples above the plausibility flag (210 km/h).
    pub fn flagged_speed_count(&self) -> usize {
        self.driving.iter().filter(|d| d.speed > FLAG_SPEED_KMH).count()
    }

    /// Checks every type invariant. Record positions in errors are 1-based
    /// indices into the record stream as [`write_trip`] would lay it out.
    pub fn validate(&self) -> Result<(), TelemetryError> {
        let text = write_trip(self, LogFormat::Jsonl);
        parse_trip(&text, LogFormat::Jsonl).map(|_| ())
    }
}

/// Record dialect of a trip log file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    #[default]
    Jsonl,
    Tsv,
}

impl LogFormat {
    pub fn extension(self) -> &'static str {
        match self {
            LogFormat::Jsonl => "jsonl",
            LogFormat::Tsv => "tsv",
        }
    }

    /// Format implied by a file extension, if any.
    pub fn from_path(path: &Path) -> Option<LogFormat> {
        path.extension()?.to_str()?.parse().ok()
    }
}

impl FromStr for LogFormat {
    type Err = TelemetryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" | "ndjson" => Ok(LogFormat::Jsonl),
            "tsv" => Ok(LogFormat::Tsv),
            other => Err(TelemetryError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for LogFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

/// Wire shape of one JSONL record.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum Record {
    Header {
        trip_id: String,
        screen_width: u32,
        screen_height: u32,
        #[serde(default, skip_serializing_if = "is_zero")]
        epoch_ms: Millis,
    },
    Touch {
        t: Millis,
        element_id: String,
        element_type: String,
        /// `[start_x, start_y, end_x, end_y]` per finger
        fingers: Vec<[f64; 4]>,
    },
    Glance {
        start: Millis,
        end: Millis,
        target: String,
    },
    Driving {
        t: Millis,
        speed: f64,
        steering: f64,
    },
    State {
        t: Millis,
        state: String,
    },
}

fn is_zero(v: &Millis) -> bool {
    *v == 0
}

fn parse_json_line(line: &str, lineno: usize) -> Result<Record, TelemetryError> {
    serde_json::from_str(line).map_err(|e| malformed(lineno, e.to_string()))
}

fn parse_tsv_line(line: &str, lineno: usize) -> Result<Record, TelemetryError> {
    let fields: Vec<&str> = line.split('\t').collect();
    let want = |n: usize| -> Result<(), TelemetryError> {
        if fields.len() == n {
            Ok(())
        } else {
            Err(malformed(
                lineno,
                format!("`{}` record needs {n} fields, found {}", fields[0], fields.len()),
            ))
        }
    };
    fn num<T: FromStr>(s: &str, what: &str, lineno: usize) -> Result<T, TelemetryError> {
        s.trim()
            .parse()
            .map_err(|_| malformed(lineno, format!("invalid {what} `{s}`")))
    }
    match fields[0] {
        "header" => {
            if fields.len() != 4 && fields.len() != 5 {
                return Err(malformed(lineno, "`header` record needs 4 or 5 fields"));
            }
            Ok(Record::Header {
                trip_id: fields[1].to_string(),
                screen_width: num(fields[2], "screen width", lineno)?,
                screen_height: num(fields[3], "screen height", lineno)?,
                epoch_ms: match fields.get(4) {
                    Some(s) => num(s, "epoch", lineno)?,
                    None => 0,
                },
            })
        }
        "touch" => {
            want(5)?;
            let mut fingers = Vec::new();
            for finger in fields[4].split(';').filter(|s| !s.is_empty()) {
                let coords: Vec<&str> = finger.split(',').collect();
                if coords.len() != 4 {
                    return Err(malformed(lineno, format!("finger `{finger}` needs 4 coordinates")));
                }
                let mut out = [0.0; 4];
                for (slot, c) in out.iter_mut().zip(&coords) {
                    *slot = num(c, "coordinate", lineno)?;
                }
                fingers.push(out);
            }
            Ok(Record::Touch {
                t: num(fields[1], "timestamp", lineno)?,
                element_id: fields[2].to_string(),
                element_type: fields[3].to_string(),
                fingers,
            })
        }
        "glance" => {
            want(4)?;
            Ok(Record::Glance {
                start: num(fields[1], "start", lineno)?,
                end: num(fields[2], "end", lineno)?,
                target: fields[3].to_string(),
            })
        }
        "driving" => {
            want(4)?;
            Ok(Record::Driving {
                t: num(fields[1], "timestamp", lineno)?,
                speed: num(fields[2], "speed", lineno)?,
                steering: num(fields[3], "steering angle", lineno)?,
            })
        }
        "state" => {
            want(3)?;
            Ok(Record::State {
                t: num(fields[1], "timestamp", lineno)?,
                state: fields[2].to_string(),
            })
        }
        other => Err(malformed(lineno, format!("unknown record kind `{other}`"))),
    }
}

/// Incrementally validates records and assembles the trip.
struct TripAssembler {
    trip: Option<TripLog>,
    epoch: Millis,
}

impl TripAssembler {
    fn normalize(&self, t: Millis, lineno: usize) -> Result<Millis, TelemetryError> {
        let rel = t
            .checked_sub(self.epoch)
            .ok_or_else(|| malformed(lineno, "timestamp overflow"))?;
        if rel < 0 {
            return Err(malformed(
                lineno,
                format!("timestamp {t} precedes trip start {}", self.epoch),
            ));
        }
        Ok(rel)
    }

    fn push(&mut self, record: Record, lineno: usize) -> Result<(), TelemetryError> {
        if let Record::Header {
            trip_id,
            screen_width,
            screen_height,
            epoch_ms,
        } = record
        {
            if self.trip.is_some() {
                return Err(malformed(lineno, "duplicate header record"));
            }
            if screen_width == 0 || screen_height == 0 {
                return Err(malformed(lineno, "screen size must be positive"));
            }
            self.epoch = epoch_ms;
            self.trip = Some(TripLog::empty(trip_id, (screen_width, screen_height)));
            return Ok(());
        }
        let epoch_check = |t| self.normalize(t, lineno);
        let record = match record {
            Record::Touch {
                t,
                element_id,
                element_type,
                fingers,
            } => Record::Touch {
                t: epoch_check(t)?,
                element_id,
                element_type,
                fingers,
            },
            Record::Glance { start, end, target } => Record::Glance {
                start: epoch_check(start)?,
                end: epoch_check(end)?,
                target,
            },
            Record::Driving { t, speed, steering } => Record::Driving {
                t: epoch_check(t)?,
                speed,
                steering,
            },
            Record::State { t, state } => Record::State {
                t: epoch_check(t)?,
                state,
            },
            Record::Header { .. } => unreachable!(),
        };
        let trip = self.trip.as_mut().ok_or(TelemetryError::MissingHeader)?;
        match record {
            Record::Touch {
                t,
                element_id,
                element_type,
                fingers,
            } => {
                if fingers.is_empty() {
                    return Err(malformed(lineno, "touch event without fingers"));
                }
                let (w, h) = (trip.screen_size.0 as f64, trip.screen_size.1 as f64);
                let mut parsed = Vec::with_capacity(fingers.len());
                for [sx, sy, ex, ey] in fingers {
                    for (v, bound, axis) in [(sx, w, "x"), (sy, h, "y"), (ex, w, "x"), (ey, h, "y")] {
                        if !(v.is_finite() && (0.0..=bound).contains(&v)) {
                            return Err(malformed(lineno, format!("{axis} coordinate {v} outside screen")));
                        }
                    }
                    parsed.push(Finger {
                        start: Point::new(sx, sy),
                        end: Point::new(ex, ey),
                    });
                }
                if let Some(prev) = trip.touch.last() {
                    if t < prev.timestamp {
                        return Err(TelemetryError::UnsortedTimestamps {
                            line: lineno,
                            kind: "touch",
                            previous: prev.timestamp,
                            found: t,
                        });
                    }
                }
                trip.touch.push(TouchEvent {
                    timestamp: t,
                    element_id,
                    element_type: ElementType::from_name_lenient(&element_type),
                    fingers: parsed,
                });
            }
            Record::Glance { start, end, target } => {
                let target: Aoi = target.parse().map_err(|e: String| malformed(lineno, e))?;
                if end <= start {
                    return Err(malformed(lineno, format!("glance end {end} not after start {start}")));
                }
                if let Some(prev) = trip.glances.last() {
                    if start < prev.end_ms && start < prev.start_ms {
                        return Err(TelemetryError::UnsortedTimestamps {
                            line: lineno,
                            kind: "glance",
                            previous: prev.start_ms,
                            found: start,
                        });
                    }
                    if start != prev.end_ms {
                        return Err(TelemetryError::GlanceGap {
                            line: lineno,
                            expected: prev.end_ms,
                            found: start,
                        });
                    }
                }
                trip.glances.push(RawGlanceSegment::new(start, end, target));
            }
            Record::Driving { t, speed, steering } => {
                if !speed.is_finite() || !(0.0..=MAX_SPEED_KMH).contains(&speed) {
                    return Err(malformed(
                        lineno,
                        format!("speed {speed} outside [0, {MAX_SPEED_KMH}] km/h"),
                    ));
                }
                if !steering.is_finite() {
                    return Err(malformed(lineno, "non-finite steering angle"));
                }
                if let Some(prev) = trip.driving.last() {
                    if t <= prev.timestamp {
                        return Err(TelemetryError::UnsortedTimestamps {
                            line: lineno,
                            kind: "driving",
                            previous: prev.timestamp,
                            found: t,
                        });
                    }
                }
                trip.driving.push(DrivingSample {
                    timestamp: t,
                    speed,
                    steering_angle: steering,
                });
            }
            Record::State { t, state } => {
                let kind: StateKind = state.parse().map_err(|e: String| malformed(lineno, e))?;
                if let Some(prev) = trip.states.last() {
                    if t < prev.timestamp {
                        return Err(TelemetryError::UnsortedTimestamps {
                            line: lineno,
                            kind: "state",
                            previous: prev.timestamp,
                            found: t,
                        });
                    }
                }
                trip.states.push(StateEvent { timestamp: t, kind });
            }
            Record::Header { .. } => unreachable!(),
        }
        Ok(())
    }
}

/// Parses a whole trip log held in memory.
pub fn parse_trip(text: &str, format: LogFormat) -> Result<TripLog, TelemetryError> {
    let mut asm = TripAssembler { trip: None, epoch: 0 };
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let record = match format {
            LogFormat::Jsonl => parse_json_line(line, lineno)?,
            LogFormat::Tsv => parse_tsv_line(line, lineno)?,
        };
        asm.push(record, lineno)?;
    }
    let trip = asm.trip.ok_or(TelemetryError::MissingHeader)?;
    if trip.duration_ms() <= 0 {
        return Err(TelemetryError::EmptyTrip);
    }
    Ok(trip)
}

/// Reads and parses one trip log file.
pub fn ingest_trip(path: impl AsRef<Path>, format: LogFormat) -> Result<TripLog, TelemetryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| TelemetryError::Io(format!("{}: {e}", path.display())))?;
    parse_trip(&text, format)
}

/// Parses every `.jsonl`/`.json`/`.ndjson`/`.tsv` file in a directory, in
/// file-name order. Errors name the offending file.
pub fn ingest_dir(dir: impl AsRef<Path>) -> Result<Vec<TripLog>, TelemetryError> {
    let dir = dir.as_ref();
    let io = |e: std::io::Error| TelemetryError::Io(format!("{}: {e}", dir.display()));
    let mut files: Vec<(std::path::PathBuf, LogFormat)> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            let format = LogFormat::from_path(&path)?;
            path.is_file().then_some((path, format))
        })
        .collect();
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
        .into_iter()
        .map(|(path, format)| {
            ingest_trip(&path, format).map_err(|e| match e {
                TelemetryError::Io(_) => e,
                other => TelemetryError::InFile {
                    path: path.display().to_string(),
                    source: Box::new(other),
                },
            })
        })
        .collect()
}

/// Serializes a trip in the given dialect. Records are grouped by kind in the
/// order header, touch, glance, driving, state.
pub fn write_trip(trip: &TripLog, format: LogFormat) -> String {
    let mut records =
        Vec::with_capacity(1 + trip.touch.len() + trip.glances.len() + trip.driving.len() + trip.states.len());
    records.push(Record::Header {
        trip_id: trip.trip_id.clone(),
        screen_width: trip.screen_size.0,
        screen_height: trip.screen_size.1,
        epoch_ms: 0,
    });
    records.extend(trip.touch.iter().map(|e| {
        Record::Touch {
            t: e.timestamp,
            element_id: e.element_id.clone(),
            element_type: e.element_type.name().to_string(),
            fingers: e
                .fingers
                .iter()
                .map(|f| [f.start.x, f.start.y, f.end.x, f.end.y])
                .collect(),
        }
    }));
    records.extend(trip.glances.iter().map(|g| Record::Glance {
        start: g.start_ms,
        end: g.end_ms,
        target: g.target.name().to_string(),
    }));
    records.extend(trip.driving.iter().map(|d| Record::Driving {
        t: d.timestamp,
        speed: d.speed,
        steering: d.steering_angle,
    }));
    records.extend(trip.states.iter().map(|s| Record::State {
        t: s.timestamp,
        state: s.kind.name().to_string(),
    }));

    let mut out = String::new();
    for record in &records {
        match format {
            LogFormat::Jsonl => {
                out.push_str(&serde_json::to_string(record).expect("records always serialize"));
            }
            LogFormat::Tsv => write_tsv_record(&mut out, record),
        }
        out.push('\n');
    }
    out
}

fn write_tsv_record(out: &mut String, record: &Record) {
    // f64 Display is the shortest representation that parses back exactly.
    let _ = match record {
        Record::Header {
            trip_id,
            screen_width,
            screen_height,
            epoch_ms,
        } => write!(out, "header\t{trip_id}\t{screen_width}\t{screen_height}\t{epoch_ms}"),
        Record::Touch {
            t,
            element_id,
            element_type,
            fingers,
        } => {
            let fingers: Vec<String> = fingers.iter().map(|[a, b, c, d]| format!("{a},{b},{c},{d}")).collect();
            write!(out, "touch\t{t}\t{element_id}\t{element_type}\t{}", fingers.join(";"))
        }
        Record::Glance { start, end, target } => write!(out, "glance\t{start}\t{end}\t{target}"),
        Record::Driving { t, speed, steering } => write!(out, "driving\t{t}\t{speed}\t{steering}"),
        Record::State { t, state } => write!(out, "state\t{t}\t{state}"),
    };
}

/// True iff every successive sample gap lies within
/// `SAMPLE_PERIOD_MS ± tolerance_ms`.
pub fn validate_sampling(driving: &[DrivingSample], tolerance_ms: Millis) -> bool {
    driving.windows(2).all(|pair| {
        let gap = pair[1].timestamp - pair[0].timestamp;
        (gap - SAMPLE_PERIOD_MS).abs() <= tolerance_ms
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> &'static str {
        r#"{"kind":"header","trip_id":"t1","screen_width":1920,"screen_height":720}"#
    }

    fn samples(gaps: &[Millis]) -> Vec<DrivingSample> {
        let mut t = 0;
        let mut out = vec![DrivingSample {
            timestamp: 0,
            speed: 50.0,
            steering_angle: 0.0,
        }];
        for g in gaps {
            t += g;
            out.push(DrivingSample {
                timestamp: t,
                speed: 50.0,
                steering_angle: 0.0,
            });
        }
        out
    }

    #[test]
    fn parses_record_counts() {
        let mut text = String::from(header());
        text.push('\n');
        for i in 0..3 {
            text.push_str(&format!(
                r#"{{"kind":"touch","t":{},"element_id":"e{i}","element_type":"List","fingers":[[10,10,10,10]]}}"#,
                1000 + i * 500
            ));
            text.push('\n');
        }
        for i in 0..5 {
            text.push_str(&format!(
                r#"{{"kind":"glance","start":{},"end":{},"target":"OnRoad"}}"#,
                i * 400,
                (i + 1) * 400
            ));
            text.push('\n');
        }
        for i in 0..40 {
            text.push_str(&format!(
                r#"{{"kind":"driving","t":{},"speed":80.5,"steering":-1.25}}"#,
                i * 250
            ));
            text.push('\n');
        }
        let trip = parse_trip(&text, LogFormat::Jsonl).unwrap();
        assert_eq!(trip.touch.len(), 3);
        assert_eq!(trip.glances.len(), 5);
        assert_eq!(trip.driving.len(), 40);
        assert_eq!(trip.trip_id, "t1");
    }

    #[test]
    fn contiguous_glances_accepted() {
        let text = format!(
            "{}\n{}\n{}\n",
            header(),
            r#"{"kind":"glance","start":0,"end":500,"target":"OnRoad"}"#,
            r#"{"kind":"glance","start":500,"end":900,"target":"CenterStack"}"#
        );
        let trip = parse_trip(&text, LogFormat::Jsonl).unwrap();
        assert_eq!(trip.glances[1].target, Aoi::CenterStack);
    }

    #[test]
    fn glance_gap_rejected_with_position() {
        let text = format!(
            "{}\n{}\n{}\n",
            header(),
            r#"{"kind":"glance","start":0,"end":500,"target":"OnRoad"}"#,
            r#"{"kind":"glance","start":600,"end":900,"target":"OnRoad"}"#
        );
        assert_eq!(
            parse_trip(&text, LogFormat::Jsonl),
            Err(TelemetryError::GlanceGap {
                line: 3,
                expected: 500,
                found: 600
            })
        );
    }

    #[test]
    fn unknown_element_type_maps_to_unknown() {
        let text = format!(
            "{}\n{}\n",
            header(),
            r#"{"kind":"touch","t":5,"element_id":"x","element_type":"HoloDeck","fingers":[[1,1,1,1]]}"#
        );
        let trip = parse_trip(&text, LogFormat::Jsonl).unwrap();
        assert_eq!(trip.touch[0].element_type, ElementType::Unknown);
    }

    #[test]
    fn malformed_and_unsorted_records() {
        let bad_json = format!("{}\n{{\"kind\":\"touch\"\n", header());
        assert!(matches!(
            parse_trip(&bad_json, LogFormat::Jsonl),
            Err(TelemetryError::MalformedRecord { line: 2, .. })
        ));

        let unsorted = format!(
            "{}\n{}\n{}\n",
            header(),
            r#"{"kind":"driving","t":500,"speed":10,"steering":0}"#,
            r#"{"kind":"driving","t":250,"speed":10,"steering":0}"#
        );
        assert!(matches!(
            parse_trip(&unsorted, LogFormat::Jsonl),
            Err(TelemetryError::UnsortedTimestamps {
                line: 3,
                kind: "driving",
                ..
            })
        ));

        let too_fast = format!(
            "{}\n{}\n",
            header(),
            r#"{"kind":"driving","t":0,"speed":251,"steering":0}"#
        );
        assert!(matches!(
            parse_trip(&too_fast, LogFormat::Jsonl),
            Err(TelemetryError::MalformedRecord { line: 2, .. })
        ));

        let off_screen = format!(
            "{}\n{}\n",
            header(),
            r#"{"kind":"touch","t":5,"element_id":"x","element_type":"Map","fingers":[[1,1,2000,1]]}"#
        );
        assert!(parse_trip(&off_screen, LogFormat::Jsonl).is_err());

        let no_fingers = format!(
            "{}\n{}\n",
            header(),
            r#"{"kind":"touch","t":5,"element_id":"x","element_type":"Map","fingers":[]}"#
        );
        assert!(parse_trip(&no_fingers, LogFormat::Jsonl).is_err());

        let headless = r#"{"kind":"driving","t":0,"speed":1,"steering":0}"#;
        assert_eq!(
            parse_trip(headless, LogFormat::Jsonl),
            Err(TelemetryError::MissingHeader)
        );
        assert_eq!(parse_trip(header(), LogFormat::Jsonl), Err(TelemetryError::EmptyTrip));
    }

    #[test]
    fn epoch_is_subtracted() {
        let text = "header\tt9\t800\t480\t1700000000000\n\
                    driving\t1700000000250\t12.5\t0\n\
                    state\t1700000000300\tAccActive\n";
        let trip = parse_trip(text, LogFormat::Tsv).unwrap();
        assert_eq!(trip.driving[0].timestamp, 250);
        assert_eq!(trip.states[0].timestamp, 300);
    }

    #[test]
    fn speed_above_flag_is_counted_not_rejected() {
        let text = format!(
            "{}\n{}\n",
            header(),
            r#"{"kind":"driving","t":10,"speed":230,"steering":0}"#
        );
        let trip = parse_trip(&text, LogFormat::Jsonl).unwrap();
        assert_eq!(trip.flagged_speed_count(), 1);
    }

    #[test]
    fn sampling_validation() {
        assert!(validate_sampling(&samples(&[250; 20]), 50));
        let mut gaps = vec![250; 10];
        gaps[4] = 1000;
        assert!(!validate_sampling(&samples(&gaps), 50));
        // every gap in 240..=260 sits inside 250 ± 25
        let jittered: Vec<Millis> = (0..21).map(|i| 240 + i).collect();
        assert!(validate_sampling(&samples(&jittered), 25));
        assert!(!validate_sampling(&samples(&[250, 224]), 25));
        assert!(validate_sampling(&[], 0));
    }

    #[test]
    fn format_names() {
        assert_eq!("TSV".parse::<LogFormat>().unwrap(), LogFormat::Tsv);
        assert!("xml".parse::<LogFormat>().is_err());
    }
}
