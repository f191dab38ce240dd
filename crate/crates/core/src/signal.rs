//! Raw sensor streams and the seeded synthetic generator.
//!
//! The generator models each plate as an idle level (per-sensor baseline,
//! Gaussian white noise and a charge/discharge sawtooth) plus the disturbance
//! of a virtual hand moving above a 2×2 plate grid. The disturbance on a
//! plate follows an inverse-square law in the hand-to-plate distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, SensorId, SENSOR_COUNT};

/// One raw voltage reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawSample {
    pub sensor: SensorId,
    pub index: u64,
    pub value: f64,
}

/// Four equal-length voltage channels sampled at a common rate.
///
/// Sample indices are 1-based and consecutive; `first_index` is the index of
/// the first stored sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStream {
    pub sampling_rate: f64,
    pub first_index: u64,
    pub channels: [Vec<f64>; SENSOR_COUNT],
}

impl RawStream {
    pub fn new(sampling_rate: f64, first_index: u64, channels: [Vec<f64>; SENSOR_COUNT]) -> Result<Self> {
        if !(sampling_rate > 0.0 && sampling_rate.is_finite()) {
            return Err(Error::param(format!("sampling rate must be positive, got {sampling_rate}")));
        }
        if first_index == 0 {
            return Err(Error::param("sample indices are 1-based"));
        }
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidInput("channels have different lengths".into()));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite sample value".into()));
        }
        Ok(RawStream {
            sampling_rate,
            first_index,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, sensor: SensorId) -> &[f64] {
        &self.channels[sensor.slot()]
    }

    /// Values of all four sensors at storage position `k`.
    pub fn row(&self, k: usize) -> [f64; SENSOR_COUNT] {
        std::array::from_fn(|s| self.channels[s][k])
    }

    pub fn index_at(&self, k: usize) -> u64 {
        self.first_index + k as u64
    }

    pub fn samples(&self, sensor: SensorId) -> impl Iterator<Item = RawSample> + '_ {
        self.channel(sensor)
            .iter()
            .enumerate()
            .map(move |(k, &value)| RawSample {
                sensor,
                index: self.first_index + k as u64,
                value,
            })
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sampling_rate
    }
}

/// The ten gesture classes, numbered as in the command table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GestureClass {
    LeftToRight = 1,
    RightToLeft = 2,
    Up = 3,
    Down = 4,
    DownToLeft = 5,
    DownToRight = 6,
    LeftToDown = 7,
    RightToDown = 8,
    UpToLeft = 9,
    UpToRight = 10,
}

impl GestureClass {
    pub const ALL: [GestureClass; 10] = [
        GestureClass::LeftToRight,
        GestureClass::RightToLeft,
        GestureClass::Up,
        GestureClass::Down,
        GestureClass::DownToLeft,
        GestureClass::DownToRight,
        GestureClass::LeftToDown,
        GestureClass::RightToDown,
        GestureClass::UpToLeft,
        GestureClass::UpToRight,
    ];

    pub fn from_id(id: u8) -> Result<Self> {
        GestureClass::ALL
            .get((id as usize).wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::param(format!("class id {id} not in [1, 10]")))
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn label(self) -> &'static str {
        match self {
            GestureClass::LeftToRight => "Left to Right",
            GestureClass::RightToLeft => "Right to Left",
            GestureClass::Up => "UP",
            GestureClass::Down => "DOWN",
            GestureClass::DownToLeft => "Down to Left",
            GestureClass::DownToRight => "Down to Right",
            GestureClass::LeftToDown => "Left to Down",
            GestureClass::RightToDown => "Right to Down",
            GestureClass::UpToLeft => "Up to Left",
            GestureClass::UpToRight => "Up to Right",
        }
    }

    /// Expected sign of `peak_time(left column) - peak_time(right column)`,
    /// or `None` for the purely vertical classes.
    pub fn column_order(self) -> Option<std::cmp::Ordering> {
        use std::cmp::Ordering::*;
        match self {
            GestureClass::LeftToRight | GestureClass::LeftToDown => Some(Less),
            GestureClass::RightToLeft | GestureClass::RightToDown => Some(Greater),
            // the hand ends up over the left column
            GestureClass::DownToLeft | GestureClass::UpToLeft => Some(Greater),
            GestureClass::DownToRight | GestureClass::UpToRight => Some(Less),
            GestureClass::Up | GestureClass::Down => None,
        }
    }
}

/// Physical and calibration constants of the simulated sensor array.
///
/// The charge magnitudes are effective calibration knobs: together with the
/// Coulomb constant, permittivity and plate area they set the voltage scale
/// of the hand disturbance, `V = k_e·|q1·q2|·ε·A / d²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    /// Hz.
    pub sampling_rate: f64,
    pub dielectric_constant: f64,
    /// m².
    pub plate_area: f64,
    /// Distance (m) from the grid centre to each plate centre along x and y.
    pub plate_half_pitch: f64,
    /// N·m²/C².
    pub coulomb_constant: f64,
    /// C.
    pub hand_charge: f64,
    /// C.
    pub plate_charge: f64,
    /// Closest and farthest hand distance considered (m).
    pub distance_min: f64,
    pub distance_max: f64,
    /// Charge level (V) at which a plate discharges.
    pub capacity: f64,
    /// Samples between discharges.
    pub discharge_period: f64,
    pub discharge_enabled: bool,
    /// Standard deviation (V) of the idle white noise.
    pub idle_sigma: f64,
    /// Per-sensor idle level (V).
    pub baselines: [f64; SENSOR_COUNT],
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            sampling_rate: 76.5,
            dielectric_constant: 1.0,
            plate_area: 0.0025,
            plate_half_pitch: 0.03,
            coulomb_constant: 8.987_551_792_3e9,
            hand_charge: 3.5e-4,
            plate_charge: 3.5e-4,
            distance_min: 0.001,
            distance_max: 0.15,
            // a sawtooth of this height has a standard deviation of ~11 V
            capacity: 38.1,
            discharge_period: 1499.0,
            discharge_enabled: true,
            idle_sigma: 2.03,
            baselines: [312.0, 297.5, 324.0, 305.5],
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sampling_rate", self.sampling_rate),
            ("dielectric_constant", self.dielectric_constant),
            ("plate_area", self.plate_area),
            ("plate_half_pitch", self.plate_half_pitch),
            ("coulomb_constant", self.coulomb_constant),
            ("hand_charge", self.hand_charge),
            ("plate_charge", self.plate_charge),
            ("distance_min", self.distance_min),
            ("distance_max", self.distance_max),
            ("capacity", self.capacity),
            ("discharge_period", self.discharge_period),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.idle_sigma >= 0.0 && self.idle_sigma.is_finite()) {
            return Err(Error::param(format!("idle_sigma must be non-negative, got {}", self.idle_sigma)));
        }
        if self.distance_min >= self.distance_max {
            return Err(Error::param("distance_min must be below distance_max"));
        }
        if self.baselines.iter().any(|b| !b.is_finite()) {
            return Err(Error::param("baselines must be finite"));
        }
        Ok(())
    }

    /// `k_e·|q1·q2|·ε·A` in V·m².
    pub fn coupling(&self) -> f64 {
        self.coulomb_constant * (self.hand_charge * self.plate_charge).abs() * self.dielectric_constant * self.plate_area
    }

    /// Disturbance voltage for a hand at distance `d` (m) from a plate.
    pub fn field_amplitude(&self, d: f64) -> f64 {
        let d = d.clamp(self.distance_min, f64::INFINITY);
        self.coupling() / (d * d)
    }

    /// Plate centre (x, y) in metres; x grows to the right, y grows upward.
    pub fn plate_position(&self, sensor: SensorId) -> (f64, f64) {
        let a = self.plate_half_pitch;
        let x = if sensor.is_left_column() { -a } else { a };
        let y = if sensor.is_top_row() { a } else { -a };
        (x, y)
    }

    pub fn seconds_to_samples(&self, secs: f64) -> usize {
        (secs * self.sampling_rate).round().max(1.0) as usize
    }
}

/// Layout of a synthetic recording around its gestures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// Idle time before the first gesture (s). Must exceed the detector's
    /// offset initialisation period.
    pub lead_in_secs: f64,
    /// Idle time after the last gesture (s).
    pub tail_secs: f64,
    /// Idle gap between consecutive gestures is drawn from this range (s).
    pub gap_secs: (f64, f64),
}

impl Default for Scene {
    fn default() -> Self {
        Scene {
            lead_in_secs: 12.0,
            tail_secs: 4.0,
            gap_secs: (3.5, 5.0),
        }
    }
}

/// A point on a hand path. `at` is normalised time in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub at: f64,
    pub x: f64,
    pub y: f64,
    pub height: f64,
}

// Path geometry, metres.
const REACH: f64 = 0.12;
const HOVER: f64 = 0.03;
const SWEEP_LOW: f64 = 0.022;
const RISE_TO: f64 = 0.025;
const NEAR: f64 = 0.012;
/// Fraction of the gesture spent fading the hand in and out.
const TAPER: f64 = 0.1;

/// A virtual hand path for one gesture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureTrajectory {
    pub class: GestureClass,
    /// Samples.
    pub duration: usize,
    /// Multiplier on the disturbance amplitude (hand size).
    pub gain: f64,
    pub waypoints: Vec<Waypoint>,
}

impl GestureTrajectory {
    /// Nominal path for `class`, lasting one second.
    pub fn canonical(class: GestureClass, params: &PhysicsParams) -> Self {
        let far = params.distance_max;
        let wp = |at, x, height| Waypoint { at, x, y: 0.0, height };
        let waypoints = match class {
            GestureClass::LeftToRight => vec![wp(0.0, -REACH, HOVER), wp(1.0, REACH, HOVER)],
            GestureClass::RightToLeft => vec![wp(0.0, REACH, HOVER), wp(1.0, -REACH, HOVER)],
            GestureClass::Up => vec![wp(0.0, 0.0, NEAR), wp(1.0, 0.0, far)],
            GestureClass::Down => vec![wp(0.0, 0.0, far), wp(1.0, 0.0, NEAR)],
            GestureClass::DownToLeft => vec![wp(0.0, 0.0, far), wp(0.5, 0.0, NEAR), wp(1.0, -REACH, NEAR)],
            GestureClass::DownToRight => vec![wp(0.0, 0.0, far), wp(0.5, 0.0, NEAR), wp(1.0, REACH, NEAR)],
            GestureClass::LeftToDown => vec![wp(0.0, -REACH, SWEEP_LOW), wp(0.5, 0.0, SWEEP_LOW), wp(1.0, 0.0, NEAR)],
            GestureClass::RightToDown => vec![wp(0.0, REACH, SWEEP_LOW), wp(0.5, 0.0, SWEEP_LOW), wp(1.0, 0.0, NEAR)],
            GestureClass::UpToLeft => vec![wp(0.0, 0.0, NEAR), wp(0.5, 0.0, RISE_TO), wp(1.0, -REACH, RISE_TO)],
            GestureClass::UpToRight => vec![wp(0.0, 0.0, NEAR), wp(0.5, 0.0, RISE_TO), wp(1.0, REACH, RISE_TO)],
        };
        GestureTrajectory {
            class,
            duration: params.seconds_to_samples(1.0),
            gain: 1.0,
            waypoints,
        }
    }

    /// Canonical path with per-performance variation: duration 0.8–1.2 s,
    /// heights ±15 %, reach ±10 %, gain 0.8–1.25 and a small sideways offset.
    pub fn randomized<R: Rng + ?Sized>(class: GestureClass, params: &PhysicsParams, rng: &mut R) -> Self {
        let mut t = GestureTrajectory::canonical(class, params);
        t.duration = params.seconds_to_samples(rng.random_range(0.8..1.2));
        t.gain = rng.random_range(0.8..1.25);
        let height_scale = rng.random_range(0.85..1.15);
        let reach_scale = rng.random_range(0.9..1.1);
        let y_offset = rng.random_range(-0.004..0.004);
        for w in &mut t.waypoints {
            w.height = (w.height * height_scale).min(params.distance_max);
            w.x *= reach_scale;
            w.y += y_offset;
        }
        t
    }

    /// Multiplies every waypoint height by `factor`.
    pub fn with_height_scale(mut self, factor: f64) -> Self {
        for w in &mut self.waypoints {
            w.height *= factor;
        }
        self
    }

    /// Hand position at normalised time `u`, linearly interpolated.
    pub fn position(&self, u: f64) -> (f64, f64, f64) {
        let wps = &self.waypoints;
        let u = u.clamp(0.0, 1.0);
        let k = wps.iter().rposition(|w| w.at <= u).unwrap_or(0);
        let a = wps[k];
        let Some(b) = wps.get(k + 1) else {
            return (a.x, a.y, a.height);
        };
        let f = if b.at > a.at { (u - a.at) / (b.at - a.at) } else { 0.0 };
        (
            a.x + f * (b.x - a.x),
            a.y + f * (b.y - a.y),
            a.height + f * (b.height - a.height),
        )
    }

    /// Disturbance added to each plate, one value per gesture sample.
    pub fn amplitude_profile(&self, params: &PhysicsParams) -> [Vec<f64>; SENSOR_COUNT] {
        let n = self.duration;
        std::array::from_fn(|s| {
            let sensor = SensorId::ALL[s];
            let (px, py) = params.plate_position(sensor);
            (0..n)
                .map(|t| {
                    let u = (t as f64 + 0.5) / n as f64;
                    let (x, y, h) = self.position(u);
                    let d = ((x - px).powi(2) + (y - py).powi(2) + h * h).sqrt();
                    self.gain * params.field_amplitude(d) * taper(u)
                })
                .collect()
        })
    }

    /// Sample offset of the disturbance maximum on each plate.
    pub fn peak_offsets(&self, params: &PhysicsParams) -> [usize; SENSOR_COUNT] {
        let profile = self.amplitude_profile(params);
        std::array::from_fn(|s| argmax(&profile[s]))
    }
}

fn taper(u: f64) -> f64 {
    let edge = (u / TAPER).min((1.0 - u) / TAPER).clamp(0.0, 1.0);
    edge * edge * (3.0 - 2.0 * edge)
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Ground-truth interval of one gesture, inclusive, in sample indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GestureEvent {
    pub class_id: u8,
    pub true_start: u64,
    pub true_end: u64,
}

/// A raw stream with the gestures it contains.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecording {
    pub stream: RawStream,
    pub events: Vec<GestureEvent>,
}

impl LabeledRecording {
    pub fn validate(&self) -> Result<()> {
        let last = self.stream.first_index + self.stream.len() as u64;
        let mut prev_end = 0;
        for e in &self.events {
            GestureClass::from_id(e.class_id)?;
            if e.true_start >= e.true_end || e.true_end >= last || e.true_start < self.stream.first_index {
                return Err(Error::InvalidInput(format!(
                    "event [{}, {}] outside stream or empty",
                    e.true_start, e.true_end
                )));
            }
            if e.true_start <= prev_end {
                return Err(Error::InvalidInput("events overlap or are unsorted".into()));
            }
            prev_end = e.true_end;
        }
        Ok(())
    }
}

fn sensor_rng(seed: u64, sensor: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sensor as u64 + 1);
    rng
}

/// Idle signal: baseline + white noise + discharge sawtooth.
pub fn generate_idle(seed: u64, length: usize, params: &PhysicsParams) -> Result<RawStream> {
    params.validate()?;
    if length == 0 {
        return Err(Error::param("length must be positive"));
    }
    let channels = std::array::from_fn(|s| {
        let mut rng = sensor_rng(seed, s);
        let noise = Normal::new(0.0, params.idle_sigma).expect("validated sigma");
        let step = params.capacity / params.discharge_period;
        let mut level = rng.random_range(0.0..params.capacity);
        (0..length)
            .map(|_| {
                if params.discharge_enabled {
                    level += step;
                    if level >= params.capacity {
                        level -= params.capacity;
                    }
                }
                let n = if params.idle_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                let charge = if params.discharge_enabled { level } else { 0.0 };
                params.baselines[s] + charge + n
            })
            .collect()
    });
    RawStream::new(params.sampling_rate, 1, channels)
}

/// A single gesture embedded in idle signal, placed after the scene lead-in.
pub fn generate_gesture(
    seed: u64,
    params: &PhysicsParams,
    scene: &Scene,
    trajectory: &GestureTrajectory,
) -> Result<LabeledRecording> {
    generate_sequence(seed, params, scene, std::slice::from_ref(trajectory))
}

/// Several gestures separated by idle gaps drawn from `scene.gap_secs`.
pub fn generate_sequence(
    seed: u64,
    params: &PhysicsParams,
    scene: &Scene,
    trajectories: &[GestureTrajectory],
) -> Result<LabeledRecording> {
    params.validate()?;
    if trajectories.iter().any(|t| t.duration == 0) {
        return Err(Error::param("gesture duration must be positive"));
    }
    let (gap_lo, gap_hi) = scene.gap_secs;
    if !(scene.lead_in_secs >= 0.0 && scene.tail_secs >= 0.0 && gap_lo > 0.0 && gap_lo <= gap_hi) {
        return Err(Error::param("scene timings must be non-negative with a valid gap range"));
    }
    let mut layout_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ca9e);
    let mut offsets = Vec::with_capacity(trajectories.len());
    let mut cursor = params.seconds_to_samples(scene.lead_in_secs);
    for (k, t) in trajectories.iter().enumerate() {
        if k > 0 {
            let gap = if gap_hi > gap_lo { layout_rng.random_range(gap_lo..gap_hi) } else { gap_lo };
            cursor += params.seconds_to_samples(gap);
        }
        offsets.push(cursor);
        cursor += t.duration;
    }
    let length = cursor + params.seconds_to_samples(scene.tail_secs);

    let mut stream = generate_idle(seed, length, params)?;
    let mut events = Vec::with_capacity(trajectories.len());
    for (t, &off) in trajectories.iter().zip(&offsets) {
        let profile = t.amplitude_profile(params);
        for (channel, pulse) in stream.channels.iter_mut().zip(&profile) {
            for (v, p) in channel[off..off + t.duration].iter_mut().zip(pulse) {
                *v += p;
            }
        }
        let true_start = stream.index_at(off);
        events.push(GestureEvent {
            class_id: t.class.id(),
            true_start,
            true_end: true_start + t.duration as u64 - 1,
        });
    }
    Ok(LabeledRecording { stream, events })
}

/// Recording seed for the `i`-th performance of `class` (splitmix64).
fn recording_seed(seed: u64, class: GestureClass, i: usize) -> u64 {
    let mut z = seed
        .wrapping_add((class.id() as u64) << 32)
        .wrapping_add(i as u64)
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `n_per_class` single-gesture recordings of every class, interleaved by
/// class (1, 2, …, 10, 1, 2, …).
pub fn generate_dataset(
    seed: u64,
    n_per_class: usize,
    params: &PhysicsParams,
    scene: &Scene,
) -> Result<Vec<LabeledRecording>> {
    if n_per_class == 0 {
        return Err(Error::param("n_per_class must be positive"));
    }
    let mut out = Vec::with_capacity(n_per_class * GestureClass::ALL.len());
    for i in 0..n_per_class {
        for class in GestureClass::ALL {
            let rseed = recording_seed(seed, class, i);
            let mut rng = ChaCha8Rng::seed_from_u64(rseed);
            let traj = GestureTrajectory::randomized(class, params, &mut rng);
            out.push(generate_gesture(rseed, params, scene, &traj)?);
        }
    }
    Ok(out)
}

/// Random gestures (uniform over classes) in one continuous recording.
pub fn generate_session(
    seed: u64,
    n_gestures: usize,
    params: &PhysicsParams,
    scene: &Scene,
) -> Result<LabeledRecording> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(17));
    let trajectories: Vec<_> = (0..n_gestures)
        .map(|i| {
            let class = GestureClass::ALL[(i + rng.random_range(0..10)) % 10];
            GestureTrajectory::randomized(class, params, &mut rng)
        })
        .collect();
    generate_sequence(seed, params, scene, &trajectories)
}
