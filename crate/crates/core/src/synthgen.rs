//! Synthetic trip logs with planted feature→glance effects.
//!
//! Every session is laid out glance-first: the center-stack glances that
//! realize the planted TGD are placed, then the first interaction is put
//! inside the first of them and the last interaction inside the last. Road
//! glances fill everything else. Speed follows a mean-reverting random walk
//! between engagements and is held at the session's drawn value across each
//! driving window, so the window mean equals the value used in the planted
//! formula.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{derive_seed, Execution};
use crate::glance::DEFAULT_LONG_GLANCE_MS;
use crate::segmentation::{DEFAULT_BUFFER_MS, DEFAULT_DELTA_T_MAX_MS};
use crate::telemetry::{
    Aoi, DrivingSample, ElementType, Finger, Millis, Point, RawGlanceSegment, StateEvent, StateKind, TouchEvent,
    TripLog, FLAG_SPEED_KMH, SAMPLE_PERIOD_MS,
};

/// Shortest generated glance of any kind.
pub const MIN_SEGMENT_MS: Millis = 150;
/// Floor applied to the planted TGD.
pub const MIN_TGD_MS: Millis = 150;
/// Largest gap between consecutive generated interactions.
pub const MAX_INTERACTION_GAP_MS: Millis = 8_000;
const FIRST_INTERACTION_MS: Millis = 3_000;
const MIN_SHORT_GLANCE_MS: Millis = 300;
const LEAD_ROAD_MS: Millis = 500;

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible session {session}: {reason}")]
    InfeasibleSpec { session: usize, reason: String },
}

/// Planted TGD = α·N + β·v_avg + γ·n_List + δ·n_Homebar + noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TgdEffects {
    pub alpha_n_ms: f64,
    pub beta_v_ms_per_kmh: f64,
    pub gamma_list_ms: f64,
    pub delta_home_ms: f64,
    pub noise_sd_ms: f64,
}

impl TgdEffects {
    pub fn mean_ms(&self, n: u32, v_avg: f64, n_list: u32, n_home: u32) -> f64 {
        self.alpha_n_ms * f64::from(n)
            + self.beta_v_ms_per_kmh * v_avg
            + self.gamma_list_ms * f64::from(n_list)
            + self.delta_home_ms * f64::from(n_home)
    }
}

/// Logit of the long-glance probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongGlanceLogit {
    pub intercept: f64,
    pub per_interaction: f64,
    pub per_list: f64,
    pub per_homebar: f64,
    pub per_kmh: f64,
    pub acc: f64,
}

impl LongGlanceLogit {
    pub fn probability(&self, n: u32, n_list: u32, n_home: u32, v_avg: f64, acc: bool) -> f64 {
        let z = self.intercept
            + self.per_interaction * f64::from(n)
            + self.per_list * f64::from(n_list)
            + self.per_homebar * f64::from(n_home)
            + self.per_kmh * v_avg
            + if acc { self.acc } else { 0.0 };
        1.0 / (1.0 + (-z).exp())
    }
}

/// Mean-reverting speed process in km/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedRegime {
    pub mean_kmh: f64,
    /// Reversion rate per second.
    pub reversion: f64,
    /// Stationary standard deviation.
    pub sd_kmh: f64,
    pub min_kmh: f64,
    pub max_kmh: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GestureMix {
    pub tap: f64,
    pub drag: f64,
    pub multitouch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub sessions_per_trip: (usize, usize),
    /// N = 1 + Poisson(mean_extra_interactions), capped at `max_interactions`.
    pub mean_extra_interactions: f64,
    pub max_interactions: u32,
    pub element_mix: BTreeMap<ElementType, f64>,
    pub gesture_mix: GestureMix,
    pub speed: SpeedRegime,
    pub tgd: TgdEffects,
    pub long_glance: LongGlanceLogit,
    pub p_acc: f64,
    pub p_sa: f64,
    pub p_passenger: f64,
    pub screen_size: (u32, u32),
    /// Gap between the last interaction of one session and the first of
    /// the next.
    pub session_gap_ms: (Millis, Millis),
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        use ElementType::*;
        let element_mix = [
            (Button, 0.25),
            (List, 0.15),
            (Map, 0.05),
            (Slider, 0.03),
            (Homebar, 0.15),
            (CoverFlow, 0.02),
            (AppIcon, 0.08),
            (Tab, 0.04),
            (Keyboard, 0.06),
            (Browser, 0.01),
            (RemoteUI, 0.05),
            (ControlBar, 0.04),
            (PopUp, 0.03),
            (ClickGuard, 0.01),
            (Other, 0.02),
            (Unknown, 0.01),
        ]
        .into_iter()
        .collect();
        GeneratorSpec {
            sessions_per_trip: (4, 12),
            mean_extra_interactions: 4.0,
            max_interactions: 41,
            element_mix,
            gesture_mix: GestureMix {
                tap: 0.8,
                drag: 0.15,
                multitouch: 0.05,
            },
            speed: SpeedRegime {
                mean_kmh: 80.0,
                reversion: 0.02,
                sd_kmh: 30.0,
                min_kmh: 5.0,
                max_kmh: 180.0,
            },
            tgd: TgdEffects {
                alpha_n_ms: 800.0,
                beta_v_ms_per_kmh: 10.0,
                gamma_list_ms: 600.0,
                delta_home_ms: -400.0,
                noise_sd_ms: 500.0,
            },
            long_glance: LongGlanceLogit {
                intercept: -1.0,
                per_interaction: 0.15,
                per_list: 0.4,
                per_homebar: -0.4,
                per_kmh: -0.01,
                acc: 0.5,
            },
            p_acc: 0.4,
            p_sa: 0.3,
            p_passenger: 0.0,
            screen_size: (1920, 720),
            session_gap_ms: (12_000, 40_000),
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), GenError> {
        let fail = |m: String| Err(GenError::InvalidSpec(m));
        let (lo, hi) = self.sessions_per_trip;
        if lo == 0 || lo > hi {
            return fail(format!(
                "sessions_per_trip {lo}..={hi} must be a non-empty range of positive counts"
            ));
        }
        if !(self.tgd.noise_sd_ms >= 0.0) {
            return fail("noise sd must be non-negative".into());
        }
        if !(self.mean_extra_interactions >= 0.0) || self.max_interactions == 0 {
            return fail("interaction count distribution is invalid".into());
        }
        let mix_sum: f64 = self.element_mix.values().sum();
        if self.element_mix.values().any(|&w| !(w >= 0.0)) || (mix_sum - 1.0).abs() > 1e-9 {
            return fail(format!("element mix must be non-negative and sum to 1 (sum {mix_sum})"));
        }
        let g = self.gesture_mix;
        let g_sum = g.tap + g.drag + g.multitouch;
        if [g.tap, g.drag, g.multitouch].iter().any(|&w| !(w >= 0.0)) || (g_sum - 1.0).abs() > 1e-9 {
            return fail(format!("gesture mix must be non-negative and sum to 1 (sum {g_sum})"));
        }
        for (name, p) in [
            ("p_acc", self.p_acc),
            ("p_sa", self.p_sa),
            ("p_passenger", self.p_passenger),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must be a probability"));
            }
        }
        let s = self.speed;
        if !(s.min_kmh >= 0.0 && s.min_kmh <= s.max_kmh && s.max_kmh <= FLAG_SPEED_KMH)
            || !(s.reversion > 0.0 && s.sd_kmh >= 0.0)
        {
            return fail("speed regime must satisfy 0 <= min <= max <= 210, reversion > 0, sd >= 0".into());
        }
        let (w, h) = self.screen_size;
        if w < 700 || h < 200 {
            return fail("screen must be at least 700x200 px".into());
        }
        let (g_lo, g_hi) = self.session_gap_ms;
        if g_lo <= DEFAULT_DELTA_T_MAX_MS || g_lo > g_hi {
            return fail(format!("session gap must exceed {DEFAULT_DELTA_T_MAX_MS} ms"));
        }
        Ok(())
    }
}

/// Planted values of one generated session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTruth {
    pub first_ms: Millis,
    pub last_ms: Millis,
    pub n: u32,
    pub n_list: u32,
    pub n_homebar: u32,
    pub v_avg: f64,
    pub acc: bool,
    pub sa: bool,
    pub passenger: bool,
    /// Noise-free formula value.
    pub tgd_mean_ms: f64,
    /// Realized center-stack glance total.
    pub tgd_ms: Millis,
    pub long_glance_probability: f64,
    pub long_glance: bool,
    /// The drawn long-glance outcome could not be realized (TGD too short,
    /// or a single-interaction session) and was replaced.
    pub long_glance_adjusted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedTrip {
    pub trip: TripLog,
    pub truth: Vec<SessionTruth>,
}

fn lognormal_with_mode(rng: &mut ChaCha8Rng, mode_ms: f64, sigma: f64) -> f64 {
    let mu = mode_ms.ln() + sigma * sigma;
    LogNormal::new(mu, sigma).expect("valid lognormal").sample(rng)
}

/// Center-stack glance durations summing to `tgd`. With `want_long`, one
/// glance exceeds the long-glance threshold; otherwise none does.
fn plan_center_glances(rng: &mut ChaCha8Rng, tgd: Millis, n: u32, want_long: bool) -> (Vec<Millis>, bool) {
    if n == 1 {
        return (vec![tgd], tgd > DEFAULT_LONG_GLANCE_MS);
    }
    let long = want_long && tgd > DEFAULT_LONG_GLANCE_MS;
    let mut pieces = Vec::new();
    let mut rem = tgd;
    if long {
        let drawn = lognormal_with_mode(rng, 2_800.0, 0.3).round() as Millis;
        let mut l = drawn.clamp(DEFAULT_LONG_GLANCE_MS + 1, tgd);
        if tgd - l < MIN_SHORT_GLANCE_MS {
            l = tgd;
        }
        pieces.push(l);
        rem = tgd - l;
    }
    while rem > 0 {
        if rem <= DEFAULT_LONG_GLANCE_MS {
            pieces.push(rem);
            break;
        }
        let mut d = (lognormal_with_mode(rng, 1_000.0, 0.5).round() as Millis)
            .clamp(MIN_SHORT_GLANCE_MS, DEFAULT_LONG_GLANCE_MS);
        if rem - d < MIN_SHORT_GLANCE_MS {
            d = rem - MIN_SHORT_GLANCE_MS;
        }
        pieces.push(d);
        rem -= d;
    }
    pieces.shuffle(rng);
    (pieces, long)
}

fn road_aoi(rng: &mut ChaCha8Rng) -> Aoi {
    const OFF: [Aoi; 3] = [Aoi::InstrumentCluster, Aoi::RearViewMirror, Aoi::SideMirror];
    if rng.random_bool(0.85) {
        Aoi::OnRoad
    } else {
        OFF[rng.random_range(0..OFF.len())]
    }
}

/// A session's glances on a timeline where the first center glance starts
/// at 0, with the first and last interaction times.
struct Layout {
    glances: Vec<(Millis, Millis, Aoi)>,
    t_first: Millis,
    t_last: Millis,
}

fn layout_session(rng: &mut ChaCha8Rng, centers: &[Millis], n: u32, session: usize) -> Result<Layout, GenError> {
    let infeasible = |reason: String| GenError::InfeasibleSpec { session, reason };
    let max_span = MAX_INTERACTION_GAP_MS * Millis::from(n.saturating_sub(1));
    let k = centers.len();
    if k == 1 {
        let c = centers[0];
        let (t_first, t_last) = if n == 1 {
            (c / 2, c / 2)
        } else {
            let margin = (c / 4).min(50);
            let span = (c - 2 * margin).min(max_span);
            if span < Millis::from(n - 1) {
                return Err(infeasible(format!("{n} interactions do not fit a {c} ms glance")));
            }
            let t_first = (c - span) / 2;
            (t_first, t_first + span)
        };
        return Ok(Layout {
            glances: vec![(0, c, Aoi::CenterStack)],
            t_first,
            t_last,
        });
    }

    let mut roads: Vec<(Millis, Aoi)> = (1..k).map(|_| (rng.random_range(400..=1_500), road_aoi(rng))).collect();
    let off_first = (centers[0] / 2).min(100);
    let off_last = (centers[k - 1] / 2).min(100);
    let span = |roads: &[(Millis, Aoi)]| {
        off_first + centers[1..k - 1].iter().sum::<Millis>() + roads.iter().map(|r| r.0).sum::<Millis>() + off_last
    };
    if span(&roads) > max_span {
        for r in &mut roads {
            r.0 = MIN_SEGMENT_MS;
        }
    }
    let total = span(&roads);
    if total > max_span {
        return Err(infeasible(format!(
            "{k} center glances need {total} ms between first and last interaction, more than {max_span} ms"
        )));
    }
    let mut glances = Vec::with_capacity(2 * k - 1);
    let mut t = 0;
    for (i, &c) in centers.iter().enumerate() {
        glances.push((t, t + c, Aoi::CenterStack));
        t += c;
        if let Some(&(r, aoi)) = roads.get(i) {
            glances.push((t, t + r, aoi));
            t += r;
        }
    }
    let t_first = centers[0] - off_first;
    let t_last = glances[2 * (k - 1)].0 + off_last;
    debug_assert_eq!(t_last - t_first, total);
    Ok(Layout {
        glances,
        t_first,
        t_last,
    })
}

fn draw_gesture(rng: &mut ChaCha8Rng, mix: &GestureMix, screen: (u32, u32)) -> Vec<Finger> {
    let (w, h) = (f64::from(screen.0), f64::from(screen.1));
    let margin = 320.0_f64.min(w / 4.0);
    let at = |rng: &mut ChaCha8Rng| {
        Point::new(
            rng.random_range(margin..w - margin).round(),
            rng.random_range(40.0..h - 40.0).round(),
        )
    };
    let u: f64 = rng.random();
    if u < mix.tap {
        vec![Finger::tap(at(rng))]
    } else if u < mix.tap + mix.drag {
        let start = at(rng);
        let len = rng.random_range(30.0..280.0_f64.min(margin - 10.0));
        let end = Point::new((start.x + len).round(), start.y);
        vec![Finger { start, end }]
    } else {
        let a = at(rng);
        let b = Point::new(a.x + rng.random_range(20.0..80.0_f64).round(), a.y);
        vec![Finger::tap(a), Finger::tap(b)]
    }
}

/// Driving samples on the fixed 4 Hz grid, generated lazily.
struct SpeedTrack {
    samples: Vec<DrivingSample>,
    value: f64,
}

impl SpeedTrack {
    fn next_ts(&self) -> Millis {
        self.samples.len() as Millis * SAMPLE_PERIOD_MS
    }

    fn ou_step(&self, rng: &mut ChaCha8Rng, v: f64, s: &SpeedRegime, dt_s: f64) -> f64 {
        let decay = (-s.reversion * dt_s).exp();
        let sd = s.sd_kmh * (1.0 - decay * decay).sqrt();
        let eps: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
        s.mean_kmh + (v - s.mean_kmh) * decay + sd * eps
    }

    fn steering(rng: &mut ChaCha8Rng) -> f64 {
        (Normal::new(0.0, 4.0).expect("normal").sample(rng) * 10.0_f64).round() / 10.0
    }

    /// Random walk up to (excluding) `until`, bent so it arrives at `target`.
    fn walk_to(&mut self, rng: &mut ChaCha8Rng, until: Millis, target: f64, s: &SpeedRegime) {
        let dt = SAMPLE_PERIOD_MS as f64 / 1000.0;
        let mut path = Vec::new();
        let mut v = self.value;
        let mut ts = self.next_ts();
        while ts < until {
            v = self.ou_step(rng, v, s, dt);
            path.push(v);
            ts += SAMPLE_PERIOD_MS;
        }
        let end = self.ou_step(rng, v, s, dt);
        let k = path.len() as f64 + 1.0;
        for (j, p) in path.into_iter().enumerate() {
            let bent = p + (target - end) * (j as f64 + 1.0) / k;
            let timestamp = self.next_ts();
            self.samples.push(DrivingSample {
                timestamp,
                speed: (bent.clamp(s.min_kmh, s.max_kmh) * 100.0).round() / 100.0,
                steering_angle: Self::steering(rng),
            });
        }
        self.value = target;
    }

    fn hold_through(&mut self, rng: &mut ChaCha8Rng, last: Millis, v: f64) {
        while self.next_ts() <= last {
            let timestamp = self.next_ts();
            self.samples.push(DrivingSample {
                timestamp,
                speed: v,
                steering_angle: Self::steering(rng),
            });
        }
        self.value = v;
    }
}

/// One synthetic trip and the planted values of each of its sessions.
pub fn generate_trip(spec: &GeneratorSpec, seed: u64) -> Result<GeneratedTrip, GenError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (types, weights): (Vec<ElementType>, Vec<f64>) = spec.element_mix.iter().map(|(k, v)| (*k, *v)).unzip();
    let element_dist = WeightedIndex::new(&weights).map_err(|e| GenError::InvalidSpec(e.to_string()))?;
    let extra = if spec.mean_extra_interactions > 0.0 {
        Some(Poisson::new(spec.mean_extra_interactions).map_err(|e| GenError::InvalidSpec(e.to_string()))?)
    } else {
        None
    };
    let noise = Normal::new(0.0, spec.tgd.noise_sd_ms).map_err(|e| GenError::InvalidSpec(e.to_string()))?;

    let mut trip = TripLog::empty(format!("synth-{seed:016x}"), spec.screen_size);
    trip.states = vec![
        StateEvent {
            timestamp: 0,
            kind: StateKind::AccInactive,
        },
        StateEvent {
            timestamp: 0,
            kind: StateKind::SaInactive,
        },
        StateEvent {
            timestamp: 0,
            kind: StateKind::PassengerBeltOff,
        },
    ];
    let mut speed = SpeedTrack {
        samples: Vec::new(),
        value: spec.speed.mean_kmh.clamp(spec.speed.min_kmh, spec.speed.max_kmh),
    };
    let (mut acc, mut sa) = (false, false);
    let mut glance_end: Millis = 0;
    let mut prev_last: Option<Millis> = None;
    let mut truth = Vec::new();

    let n_sessions = rng.random_range(spec.sessions_per_trip.0..=spec.sessions_per_trip.1);
    for session in 0..n_sessions {
        // interactions and context
        let n = (1 + extra.map_or(0, |p| p.sample(&mut rng) as u32)).min(spec.max_interactions);
        let elements: Vec<ElementType> = (0..n).map(|_| types[element_dist.sample(&mut rng)]).collect();
        let n_list = elements.iter().filter(|&&e| e == ElementType::List).count() as u32;
        let n_home = elements.iter().filter(|&&e| e == ElementType::Homebar).count() as u32;
        let gap = rng.random_range(spec.session_gap_ms.0..=spec.session_gap_ms.1);
        let v = {
            let raw = speed.ou_step(&mut rng, speed.value, &spec.speed, gap as f64 / 1000.0);
            (raw.clamp(spec.speed.min_kmh, spec.speed.max_kmh) * 100.0).round() / 100.0
        };
        let new_acc = rng.random_bool(spec.p_acc);
        let new_sa = rng.random_bool(spec.p_sa);
        let passenger = rng.random_bool(spec.p_passenger);

        // planted targets
        let tgd_mean = spec.tgd.mean_ms(n, v, n_list, n_home);
        let tgd = ((tgd_mean + noise.sample(&mut rng)).round() as Millis).max(MIN_TGD_MS);
        let p_long = spec.long_glance.probability(n, n_list, n_home, v, new_acc);
        let want_long = rng.random_bool(p_long);
        let (centers, long) = plan_center_glances(&mut rng, tgd, n, want_long);
        let layout = layout_session(&mut rng, &centers, n, session)?;

        // place on the trip timeline
        let mut t_first = glance_end + LEAD_ROAD_MS + layout.t_first;
        t_first = t_first.max(FIRST_INTERACTION_MS);
        if let Some(prev) = prev_last {
            t_first = t_first.max(prev + gap);
        }
        let origin = t_first - layout.t_first;
        let t_last = origin + layout.t_last;

        trip.glances
            .push(RawGlanceSegment::new(glance_end, origin, Aoi::OnRoad));
        for &(s, e, aoi) in &layout.glances {
            trip.glances.push(RawGlanceSegment::new(origin + s, origin + e, aoi));
        }
        glance_end = origin + layout.glances.last().expect("non-empty layout").1;

        let window_start = t_first - DEFAULT_BUFFER_MS;
        let window_end = t_last + DEFAULT_BUFFER_MS;
        let state_at = window_start - 500;
        if new_acc != acc {
            let kind = if new_acc {
                StateKind::AccActive
            } else {
                StateKind::AccInactive
            };
            trip.states.push(StateEvent {
                timestamp: state_at,
                kind,
            });
            acc = new_acc;
        }
        if new_sa != sa {
            let kind = if new_sa {
                StateKind::SaActive
            } else {
                StateKind::SaInactive
            };
            trip.states.push(StateEvent {
                timestamp: state_at,
                kind,
            });
            sa = new_sa;
        }
        if passenger {
            trip.states.push(StateEvent {
                timestamp: state_at,
                kind: StateKind::PassengerBeltOn,
            });
            trip.states.push(StateEvent {
                timestamp: window_end + 500,
                kind: StateKind::PassengerBeltOff,
            });
        }

        speed.walk_to(&mut rng, window_start, v, &spec.speed);
        speed.hold_through(&mut rng, window_end, v);

        let span = t_last - t_first;
        for (i, &element_type) in elements.iter().enumerate() {
            let timestamp = if n == 1 {
                t_first
            } else {
                t_first + span * i as Millis / Millis::from(n - 1)
            };
            trip.touch.push(TouchEvent {
                timestamp,
                element_id: format!("{}-{}", element_type.name().to_lowercase(), rng.random_range(0..12)),
                element_type,
                fingers: draw_gesture(&mut rng, &spec.gesture_mix, spec.screen_size),
            });
        }

        truth.push(SessionTruth {
            first_ms: t_first,
            last_ms: t_last,
            n,
            n_list,
            n_homebar: n_home,
            v_avg: v,
            acc,
            sa,
            passenger,
            tgd_mean_ms: tgd_mean,
            tgd_ms: tgd,
            long_glance_probability: p_long,
            long_glance: long,
            long_glance_adjusted: long != want_long,
        });
        prev_last = Some(t_last);
    }

    let end = glance_end.max(prev_last.unwrap_or(0) + DEFAULT_BUFFER_MS) + 3_000;
    trip.glances.push(RawGlanceSegment::new(glance_end, end, Aoi::OnRoad));
    let mean = spec.speed.mean_kmh;
    speed.walk_to(
        &mut rng,
        end + SAMPLE_PERIOD_MS,
        mean.clamp(spec.speed.min_kmh, spec.speed.max_kmh),
        &spec.speed,
    );
    trip.driving = speed.samples;
    Ok(GeneratedTrip { trip, truth })
}

/// `n_trips` trips seeded from the spec seed and the trip index.
pub fn generate_corpus(spec: &GeneratorSpec, n_trips: usize, exec: Execution) -> Result<Vec<GeneratedTrip>, GenError> {
    spec.validate()?;
    exec.map_range(n_trips, |i| generate_trip(spec, derive_seed(spec.seed, i as u64, 0)))
        .into_iter()
        .collect()
}

/// Numbers of each artifact to insert; durations in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArtifactSpec {
    pub tracking_losses: usize,
    pub tracking_loss_ms: Millis,
    pub micro_glances: usize,
    pub micro_glance_ms: (Millis, Millis),
    pub blinks: usize,
    pub blink_ms: (Millis, Millis),
    pub seed: u64,
}

impl Default for ArtifactSpec {
    fn default() -> Self {
        ArtifactSpec {
            tracking_losses: 0,
            tracking_loss_ms: 200,
            micro_glances: 0,
            micro_glance_ms: (60, 110),
            blinks: 0,
            blink_ms: (100, 450),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArtifactCounts {
    pub tracking_losses: usize,
    pub micro_glances: usize,
    pub blinks: usize,
}

/// Splits a real glance into `piece, artifact, piece`, keeping both pieces at
/// least [`MIN_SEGMENT_MS`] long. Returns false when no glance is long
/// enough.
fn split_in(
    rng: &mut ChaCha8Rng,
    glances: &mut Vec<RawGlanceSegment>,
    len: Millis,
    pick_aoi: impl Fn(Aoi) -> Aoi,
) -> bool {
    let eligible: Vec<usize> = (0..glances.len())
        .filter(|&i| !glances[i].target.is_artifact() && glances[i].duration() >= len + 2 * MIN_SEGMENT_MS)
        .collect();
    let Some(&i) = eligible.get(rng.random_range(0..eligible.len().max(1))) else {
        return false;
    };
    let g = glances[i];
    let at = rng.random_range(g.start_ms + MIN_SEGMENT_MS..=g.end_ms - MIN_SEGMENT_MS - len);
    let artifact = RawGlanceSegment::new(at, at + len, pick_aoi(g.target));
    glances.splice(
        i..=i,
        [
            RawGlanceSegment::new(g.start_ms, at, g.target),
            artifact,
            RawGlanceSegment::new(at + len, g.end_ms, g.target),
        ],
    );
    true
}

/// Inserts sensor artifacts the glance filter is meant to remove:
/// tracking losses inside a glance, micro-glances to another AOI, and
/// short blinks. Contiguity is preserved.
pub fn inject_artifacts(trip: &TripLog, spec: &ArtifactSpec) -> (TripLog, ArtifactCounts) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = trip.clone();
    let mut counts = ArtifactCounts::default();
    for _ in 0..spec.tracking_losses {
        if !split_in(&mut rng, &mut out.glances, spec.tracking_loss_ms, |_| Aoi::TrackingLoss) {
            break;
        }
        counts.tracking_losses += 1;
    }
    for _ in 0..spec.micro_glances {
        let len = rng.random_range(spec.micro_glance_ms.0..=spec.micro_glance_ms.1);
        let other = |a: Aoi| {
            if a == Aoi::CenterStack {
                Aoi::OnRoad
            } else {
                Aoi::CenterStack
            }
        };
        if !split_in(&mut rng, &mut out.glances, len, other) {
            break;
        }
        counts.micro_glances += 1;
    }
    for _ in 0..spec.blinks {
        let len = rng.random_range(spec.blink_ms.0..=spec.blink_ms.1);
        if !split_in(&mut rng, &mut out.glances, len, |_| Aoi::EyesClosed) {
            break;
        }
        counts.blinks += 1;
    }
    (out, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{trips_to_rows, FeatureConfig};
    use crate::glance::{aggregate_stream, filter_glances, FilterConfig};
    use crate::telemetry::{write_trip, LogFormat};

    fn quiet(alpha: f64) -> GeneratorSpec {
        GeneratorSpec {
            tgd: TgdEffects {
                alpha_n_ms: alpha,
                beta_v_ms_per_kmh: 0.0,
                gamma_list_ms: 0.0,
                delta_home_ms: 0.0,
                noise_sd_ms: 0.0,
            },
            ..GeneratorSpec::default()
        }
    }

    #[test]
    fn five_interactions_at_800ms_each_give_4000ms() {
        let spec = GeneratorSpec {
            sessions_per_trip: (1, 1),
            mean_extra_interactions: 0.0,
            ..quiet(800.0)
        };
        // force N = 5 through the cap on a large Poisson draw
        let spec = GeneratorSpec {
            mean_extra_interactions: 50.0,
            max_interactions: 5,
            ..spec
        };
        for seed in 0..20 {
            let g = generate_trip(&spec, seed).unwrap();
            assert_eq!(g.truth.len(), 1);
            assert_eq!(g.truth[0].n, 5);
            assert_eq!(g.truth[0].tgd_ms, 4_000);
            let (rows, _) = trips_to_rows(&[g.trip], &FeatureConfig::default(), Execution::Serial);
            assert_eq!(rows.len(), 1);
            assert_eq!(rows[0].tgd_ms(), 4_000);
            assert_eq!(rows[0].features.n, 5);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = GeneratorSpec::default();
        let a = generate_trip(&spec, 9).unwrap();
        let b = generate_trip(&spec, 9).unwrap();
        assert_eq!(
            write_trip(&a.trip, LogFormat::Jsonl),
            write_trip(&b.trip, LogFormat::Jsonl)
        );
        assert_ne!(a.trip, generate_trip(&spec, 10).unwrap().trip);
    }

    #[test]
    fn generated_trips_are_valid_and_filter_stable() {
        let spec = GeneratorSpec::default();
        for seed in 0..30 {
            let g = generate_trip(&spec, seed).unwrap();
            g.trip.validate().unwrap();
            let agg = aggregate_stream(&g.trip.glances);
            assert_eq!(filter_glances(&agg, &FilterConfig::default()), agg);
            assert!(g.trip.driving.iter().all(|d| d.speed <= FLAG_SPEED_KMH));
            assert!(g.truth[0].first_ms >= FIRST_INTERACTION_MS);
        }
    }

    #[test]
    fn pipeline_recovers_every_planted_session() {
        let spec = GeneratorSpec {
            tgd: TgdEffects {
                noise_sd_ms: 0.0,
                ..GeneratorSpec::default().tgd
            },
            ..GeneratorSpec::default()
        };
        let corpus = generate_corpus(&spec, 40, Execution::Serial).unwrap();
        let trips: Vec<TripLog> = corpus.iter().map(|g| g.trip.clone()).collect();
        let (rows, stats) = trips_to_rows(&trips, &FeatureConfig::default(), Execution::Serial);
        let truth: Vec<&SessionTruth> = corpus.iter().flat_map(|g| &g.truth).collect();
        assert_eq!(stats.dropped(), 0);
        assert_eq!(rows.len(), truth.len());
        for (r, t) in rows.iter().zip(truth) {
            assert_eq!(r.start_ms, t.first_ms);
            assert_eq!(r.features.n, t.n);
            assert_eq!(r.features.a_acc, t.acc);
            assert_eq!(r.features.a_sa, t.sa);
            assert!((r.features.v_avg - t.v_avg).abs() < 1e-9);
            assert_eq!(r.tgd_ms(), t.tgd_ms);
            assert!((r.tgd_ms() as f64 - t.tgd_mean_ms.max(MIN_TGD_MS as f64)).abs() <= 1.0);
            assert_eq!(r.long_glance(), t.long_glance);
        }
    }

    #[test]
    fn infeasible_and_invalid_specs_error() {
        let spec = GeneratorSpec {
            mean_extra_interactions: 0.0,
            max_interactions: 1,
            ..quiet(0.0)
        };
        assert!(generate_trip(&spec, 0).is_ok());
        let huge = GeneratorSpec {
            mean_extra_interactions: 50.0,
            max_interactions: 2,
            ..quiet(40_000.0)
        };
        assert!(matches!(generate_trip(&huge, 0), Err(GenError::InfeasibleSpec { .. })));
        let mut bad = GeneratorSpec::default();
        bad.element_mix.insert(ElementType::List, 0.9);
        assert!(matches!(bad.validate(), Err(GenError::InvalidSpec(_))));
        let neg = GeneratorSpec {
            tgd: TgdEffects {
                noise_sd_ms: -1.0,
                ..GeneratorSpec::default().tgd
            },
            ..GeneratorSpec::default()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn artifacts_are_counted_and_filtered_away() {
        let g = generate_trip(&GeneratorSpec::default(), 3).unwrap();
        let pristine = filter_glances(&aggregate_stream(&g.trip.glances), &FilterConfig::default());
        let spec = ArtifactSpec {
            tracking_losses: 10,
            micro_glances: 7,
            blinks: 5,
            seed: 1,
            ..ArtifactSpec::default()
        };
        let (dirty, counts) = inject_artifacts(&g.trip, &spec);
        assert_eq!(
            counts,
            ArtifactCounts {
                tracking_losses: 10,
                micro_glances: 7,
                blinks: 5
            }
        );
        assert_eq!(dirty.glances.len(), g.trip.glances.len() + 2 * 22);
        dirty.validate().unwrap();
        let tl = dirty.glances.iter().filter(|s| s.target == Aoi::TrackingLoss).count();
        assert_eq!(tl, 10);
        assert_eq!(
            filter_glances(&aggregate_stream(&dirty.glances), &FilterConfig::default()),
            pristine
        );
    }

    #[test]
    fn zero_rate_injection_is_identity() {
        let g = generate_trip(&GeneratorSpec::default(), 4).unwrap();
        let (same, counts) = inject_artifacts(&g.trip, &ArtifactSpec::default());
        assert_eq!(same, g.trip);
        assert_eq!(counts, ArtifactCounts::default());
    }
}
