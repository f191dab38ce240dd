//! Adaptive-threshold gesture detection and frame extraction.
//!
//! Each sensor runs an independent state machine over its processed signal
//! `x̆`. The offset `λ` zero-centres the signal and the threshold `δ` sits a
//! floor `φ` above the recent offset-subtracted mean. Both are refreshed
//! every `p1` samples, but only while no frame is open on that sensor.
//!
//! An upward crossing of `δ` opens a frame `p_s` samples before the crossing;
//! the matching downward crossing closes it `p_e` samples after. Closed
//! per-sensor frames are merged into one multi-channel [`GestureFrame`].
//!
//! A sensor that stays above threshold for more than `p_safe` samples is
//! treated as a contact or malfunction: its open frame is discarded, `δ` is
//! recomputed from the recent signal, and detection on that sensor stays
//! suppressed until the next regular offset update.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How closed per-sensor frames become one global frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MergePolicy {
    /// Wait until every sensor is quiet, then span from the earliest start to
    /// the latest end.
    Union,
    /// The last sensor (in sensor order) with a closed frame sets START and
    /// END, and the frame is emitted when the current index equals END.
    LastSensor,
}

impl FromStr for MergePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" => Ok(MergePolicy::Union),
            "last-sensor" => Ok(MergePolicy::LastSensor),
            other => Err(Error::param(format!("unknown merge policy '{other}'"))),
        }
    }
}

impl fmt::Display for MergePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergePolicy::Union => "union",
            MergePolicy::LastSensor => "last-sensor",
        })
    }
}

/// Detector parameters. All periods are in samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Threshold floor (V).
    pub phi: f64,
    /// Offset/threshold update period.
    pub p1: usize,
    /// Frame margin before the upward crossing.
    pub p_s: usize,
    /// Frame margin after the downward crossing.
    pub p_e: usize,
    /// Samples above threshold before the safety recompute fires.
    pub p_safe: usize,
    /// Offset initialisation period.
    pub p_0a: usize,
    /// No frames are recorded before this index.
    pub p_0b: usize,
    /// Crossing pairs farther apart than this are counted as long crossings.
    pub max_crossing_window: usize,
    /// Drop long crossing pairs instead of framing them.
    pub enforce_crossing_window: bool,
    pub merge_policy: MergePolicy,
    /// Add `φ` to the safety recompute as well as to the regular update.
    pub safety_adds_phi: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig::for_rate(53.0)
    }
}

impl DetectorConfig {
    /// Default settings expressed for a given sampling rate: `φ` = 20,
    /// `p_s` = `p_e` = 70 samples, and `p1`, `p_0a`, `p_0b`, `p_safe` of 6, 10,
    /// 8 and 3 seconds.
    pub fn for_rate(sampling_rate: f64) -> Self {
        let secs = |s: f64| (s * sampling_rate).round().max(1.0) as usize;
        DetectorConfig {
            phi: 20.0,
            p1: secs(6.0),
            p_s: 70,
            p_e: 70,
            p_safe: secs(3.0),
            p_0a: secs(10.0),
            p_0b: secs(8.0),
            max_crossing_window: 50,
            enforce_crossing_window: false,
            merge_policy: MergePolicy::Union,
            safety_adds_phi: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::param(format!("phi must be positive, got {}", self.phi)));
        }
        let periods = [
            ("p1", self.p1),
            ("p_s", self.p_s),
            ("p_e", self.p_e),
            ("p_safe", self.p_safe),
            ("p_0a", self.p_0a),
            ("p_0b", self.p_0b),
            ("max_crossing_window", self.max_crossing_window),
        ];
        for (name, p) in periods {
            if p == 0 {
                return Err(Error::param(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Samples of processed history kept per sensor.
    pub fn history_capacity(&self) -> usize {
        (2 * (self.p_s + self.p_e + self.p_safe + self.p1)).max(self.p_0a)
    }
}

/// Per-sensor detector state.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorDetectorState {
    /// λ
    pub offset: f64,
    /// δ
    pub threshold: f64,
    /// Open frame bounds; 0 means unset.
    pub start: u64,
    pub end: u64,
    /// Raw processed values seen since the last offset update while no frame
    /// was open.
    pub init: Vec<f64>,
    /// Closed frames not yet merged.
    pub frames: Vec<(u64, u64)>,
    /// Consecutive samples above threshold.
    pub cnt: usize,
    crossed_at: u64,
    suppressed: bool,
    prev: f64,
}

impl SensorDetectorState {
    pub fn is_open(&self) -> bool {
        self.start != 0 || self.end != 0
    }

    pub fn is_suppressed(&self) -> bool {
        self.suppressed
    }
}

/// Offsets from the first `p_0a` processed samples of every channel.
pub fn initialize_offsets(prefix: &[Vec<f64>], cfg: &DetectorConfig) -> Result<Vec<SensorDetectorState>> {
    prefix
        .iter()
        .map(|ch| {
            if ch.len() < cfg.p_0a {
                return Err(Error::InsufficientData {
                    needed: cfg.p_0a,
                    got: ch.len(),
                });
            }
            let head = &ch[..cfg.p_0a];
            Ok(SensorDetectorState {
                offset: mean(head),
                threshold: cfg.phi,
                start: 0,
                end: 0,
                init: Vec::new(),
                frames: Vec::new(),
                cnt: 0,
                crossed_at: 0,
                suppressed: false,
                prev: head[head.len() - 1],
            })
        })
        .collect()
}

/// `δ = mean(window − λ) + φ` over exactly `p1` values.
pub fn update_threshold(window: &[f64], offset: f64, phi: f64, p1: usize) -> Result<f64> {
    if window.len() != p1 || p1 == 0 {
        return Err(Error::InvalidWindow {
            expected: p1,
            got: window.len(),
        });
    }
    let base = window.iter().map(|x| x - offset).sum::<f64>() / p1 as f64;
    Ok(base + phi)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// An extracted gesture window: offset-subtracted processed values for every
/// channel over `[start, end]` inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureFrame {
    /// 1-based frame ordinal.
    pub k: u64,
    pub start: u64,
    pub end: u64,
    pub channels: Vec<Vec<f64>>,
}

impl GestureFrame {
    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.channels.first().is_none_or(Vec::is_empty)
    }

    pub fn interval(&self) -> (u64, u64) {
        (self.start, self.end)
    }
}

/// Bounded per-channel history of raw processed values.
#[derive(Debug, Clone)]
pub struct History {
    capacity: usize,
    /// Index of the newest stored sample.
    newest: u64,
    channels: Vec<VecDeque<f64>>,
}

impl History {
    pub fn new(n_channels: usize, capacity: usize) -> Self {
        History {
            capacity,
            newest: 0,
            channels: vec![VecDeque::with_capacity(capacity); n_channels],
        }
    }

    pub fn push(&mut self, index: u64, values: &[f64]) {
        for (ch, &v) in self.channels.iter_mut().zip(values) {
            if ch.len() == self.capacity {
                ch.pop_front();
            }
            ch.push_back(v);
        }
        self.newest = index;
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, VecDeque::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn oldest(&self) -> u64 {
        self.newest + 1 - self.len() as u64
    }

    /// The newest `n` values of channel `c`, oldest first.
    pub fn tail(&self, c: usize, n: usize) -> impl Iterator<Item = f64> + '_ {
        let ch = &self.channels[c];
        ch.range(ch.len().saturating_sub(n)..).copied()
    }

    fn slice(&self, c: usize, start: u64, end: u64) -> Vec<f64> {
        let from = (start - self.oldest()) as usize;
        let to = (end - self.oldest()) as usize;
        self.channels[c].range(from..=to).copied().collect()
    }
}

/// Cuts `[start, end]` out of the history with each channel's current offset
/// subtracted.
pub fn extract_frame(history: &History, k: u64, start: u64, end: u64, offsets: &[f64]) -> Result<GestureFrame> {
    if start >= end {
        return Err(Error::InvalidInput(format!("frame start {start} not before end {end}")));
    }
    if history.is_empty() || start < history.oldest() || end > history.newest {
        return Err(Error::Capacity {
            start,
            end,
            oldest: if history.is_empty() { 0 } else { history.oldest() },
        });
    }
    let channels = offsets
        .iter()
        .enumerate()
        .map(|(c, &offset)| history.slice(c, start, end).into_iter().map(|v| v - offset).collect())
        .collect();
    Ok(GestureFrame { k, start, end, channels })
}

/// Counters for unusual events seen while detecting.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Downward crossings with no open frame.
    pub orphan_down_crossings: u64,
    /// Crossing pairs farther apart than `max_crossing_window`.
    pub long_crossings: u64,
    pub safety_recomputes: u64,
    /// Frame starts clamped to index 1.
    pub clamped_starts: u64,
    /// Frames closed before `p_0b` and dropped.
    pub early_frames: u64,
    /// Frames emitted early because the pending span outgrew the history.
    pub forced_flushes: u64,
    pub offset_updates: u64,
}

/// Streaming detector over any number of processed channels.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    n_channels: usize,
    warmup: Vec<Vec<f64>>,
    states: Vec<SensorDetectorState>,
    history: History,
    last_index: Option<u64>,
    next_k: u64,
    diag: Diagnostics,
}

impl Detector {
    pub fn new(cfg: DetectorConfig, n_channels: usize) -> Result<Self> {
        cfg.validate()?;
        if n_channels == 0 {
            return Err(Error::param("detector needs at least one channel"));
        }
        let capacity = cfg.history_capacity();
        Ok(Detector {
            warmup: vec![Vec::with_capacity(cfg.p_0a); n_channels],
            states: Vec::new(),
            history: History::new(n_channels, capacity),
            last_index: None,
            next_k: 1,
            diag: Diagnostics::default(),
            n_channels,
            cfg,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn is_initialized(&self) -> bool {
        !self.states.is_empty()
    }

    pub fn states(&self) -> &[SensorDetectorState] {
        &self.states
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diag
    }

    /// Feeds one processed sample per channel. Returns a frame when one is
    /// complete.
    pub fn push(&mut self, index: u64, values: &[f64]) -> Result<Option<GestureFrame>> {
        if values.len() != self.n_channels {
            return Err(Error::InvalidInput(format!(
                "expected {} channels, got {}",
                self.n_channels,
                values.len()
            )));
        }
        if let Some(last) = self.last_index {
            if index <= last {
                return Err(Error::OutOfOrder { last, got: index });
            }
        }
        if index == 0 {
            return Err(Error::InvalidInput("sample indices are 1-based".into()));
        }
        self.last_index = Some(index);
        self.history.push(index, values);

        if !self.is_initialized() {
            for (w, &v) in self.warmup.iter_mut().zip(values) {
                w.push(v);
            }
            if self.warmup[0].len() == self.cfg.p_0a {
                self.states = initialize_offsets(&self.warmup, &self.cfg)?;
                self.warmup = Vec::new();
            }
            return Ok(None);
        }

        for c in 0..self.n_channels {
            self.step_sensor(c, index, values[c]);
        }
        if index > self.cfg.p_0b as u64 {
            return self.merge(index);
        }
        Ok(None)
    }

    fn step_sensor(&mut self, c: usize, j: u64, v: f64) {
        let cfg = &self.cfg;
        let diag = &mut self.diag;
        let st = &mut self.states[c];
        let y = v - st.offset;
        let prev = st.prev - st.offset;
        st.prev = v;
        if !st.is_open() {
            st.init.push(v);
        }

        if y > st.threshold && prev <= st.threshold {
            if !st.suppressed {
                st.start = if j > cfg.p_s as u64 {
                    j - cfg.p_s as u64
                } else {
                    diag.clamped_starts += 1;
                    log::debug!("sensor {c}: frame start clamped to 1 at j={j}");
                    1
                };
                st.crossed_at = j;
            }
        } else if y > st.threshold {
            st.cnt += 1;
        } else if y < st.threshold && prev > st.threshold {
            if st.suppressed || st.start == 0 {
                diag.orphan_down_crossings += 1;
                log::debug!("sensor {c}: downward crossing without an open frame at j={j}");
            } else if j - st.crossed_at > cfg.max_crossing_window as u64 && cfg.enforce_crossing_window {
                diag.long_crossings += 1;
                log::debug!("sensor {c}: crossing pair {}..{j} too long, dropped", st.crossed_at);
                st.start = 0;
                st.end = 0;
            } else {
                if j - st.crossed_at > cfg.max_crossing_window as u64 {
                    diag.long_crossings += 1;
                }
                st.end = j + cfg.p_e as u64;
            }
            st.cnt = 0;
        } else if !st.is_open() && j % cfg.p1 as u64 == 0 && self.history.len() >= cfg.p1 {
            if !st.init.is_empty() {
                st.offset = mean(&st.init);
            }
            let window: Vec<f64> = self.history.tail(c, cfg.p1).collect();
            st.threshold = update_threshold(&window, st.offset, cfg.phi, cfg.p1).expect("window has p1 samples");
            st.init.clear();
            st.suppressed = false;
            diag.offset_updates += 1;
        }

        if y > st.threshold && st.cnt > cfg.p_safe {
            st.start = 0;
            st.end = 0;
            let recent = self.history.tail(c, cfg.p1).sum::<f64>() / cfg.p1.min(self.history.len()) as f64;
            st.threshold = if cfg.safety_adds_phi { recent + cfg.phi } else { recent };
            st.cnt = 0;
            st.suppressed = true;
            diag.safety_recomputes += 1;
            log::debug!("sensor {c}: sustained level at j={j}, threshold recomputed to {:.2}", st.threshold);
        }

        if st.end != 0 && j == st.end {
            if j > cfg.p_0b as u64 {
                st.frames.push((st.start, st.end));
            } else {
                diag.early_frames += 1;
            }
            st.start = 0;
            st.end = 0;
        }
    }

    fn merge(&mut self, j: u64) -> Result<Option<GestureFrame>> {
        let bounds = match self.cfg.merge_policy {
            MergePolicy::Union => {
                let mut all = self.states.iter().flat_map(|s| s.frames.iter());
                let Some(&first) = all.next() else {
                    return Ok(None);
                };
                let (start, end) = all.fold(first, |(s, e), &(a, b)| (s.min(a), e.max(b)));
                let open = self.states.iter().any(SensorDetectorState::is_open);
                let outgrown = (j - start) as usize + 1 >= self.history.capacity / 2;
                if open && outgrown {
                    self.diag.forced_flushes += 1;
                }
                (!open || outgrown).then_some((start, end))
            }
            MergePolicy::LastSensor => {
                let mut bounds = (0, 0);
                for s in &self.states {
                    if let Some(&last) = s.frames.last() {
                        bounds = last;
                    }
                }
                (bounds.0 != 0 && bounds.1 != 0 && j == bounds.1).then_some(bounds)
            }
        };
        let Some((start, end)) = bounds else {
            return Ok(None);
        };
        for s in &mut self.states {
            s.frames.clear();
        }
        let offsets: Vec<f64> = self.states.iter().map(|s| s.offset).collect();
        let frame = extract_frame(&self.history, self.next_k, start, end, &offsets)?;
        self.next_k += 1;
        Ok(Some(frame))
    }
}

/// Runs a detector over whole processed channels.
pub fn detect_all(first_index: u64, channels: &[Vec<f64>], cfg: &DetectorConfig) -> Result<(Vec<GestureFrame>, Diagnostics)> {
    let mut det = Detector::new(cfg.clone(), channels.len())?;
    let n = channels.first().map_or(0, Vec::len);
    let mut frames = Vec::new();
    let mut row = vec![0.0; channels.len()];
    for k in 0..n {
        for (r, c) in row.iter_mut().zip(channels) {
            *r = c[k];
        }
        if let Some(f) = det.push(first_index + k as u64, &row)? {
            frames.push(f);
        }
    }
    Ok((frames, det.diagnostics().clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn cfg() -> DetectorConfig {
        DetectorConfig::default()
    }

    // Processed-domain idle noise: level ~2.3 with small jitter.
    fn idle(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(2.3, 0.8).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn default_config_values() {
        let c = cfg();
        assert_eq!((c.phi, c.p_s, c.p_e), (20.0, 70, 70));
        assert_eq!(c.p1, 318);
        assert_eq!((c.p_0a, c.p_0b, c.p_safe), (530, 424, 159));
    }

    #[test]
    fn offsets_from_prefix() {
        let c = cfg();
        let zeros = vec![vec![0.0; c.p_0a]; 4];
        let st = initialize_offsets(&zeros, &c).unwrap();
        assert!(st.iter().all(|s| s.offset == 0.0 && s.threshold == 20.0 && !s.is_open()));
        let mixed = vec![(0..c.p_0a).map(|i| if i % 2 == 0 { 3.0 } else { 4.0 }).collect(); 4];
        let st = initialize_offsets(&mixed, &c).unwrap();
        assert_eq!(st[0].offset, 3.5);
        assert!(matches!(
            initialize_offsets(&[vec![0.0; 10]], &c),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn threshold_update_arithmetic() {
        assert_eq!(update_threshold(&[0.0; 318], 0.0, 20.0, 318).unwrap(), 20.0);
        assert_eq!(update_threshold(&[7.0; 318], 2.0, 20.0, 318).unwrap(), 25.0);
        assert!(matches!(
            update_threshold(&[0.0; 10], 0.0, 20.0, 318),
            Err(Error::InvalidWindow { expected: 318, got: 10 })
        ));
    }

    fn run(channels: &[Vec<f64>], c: &DetectorConfig) -> (Vec<GestureFrame>, Diagnostics) {
        detect_all(1, channels, c).unwrap()
    }

    #[test]
    fn single_pulse_gives_padded_frame() {
        let c = DetectorConfig { p_0a: 100, ..cfg() };
        let mut ch = vec![0.0; 1000];
        for v in &mut ch[499..559] {
            *v = 50.0; // indices 500..=559 above threshold, 560 back below
        }
        let (frames, _) = run(&vec![ch; 4], &c);
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].interval(), (430, 630));
        assert_eq!(frames[0].channels[0].len(), 201);
        assert_eq!(frames[0].k, 1);
        // λ = 0 so the frame is the raw slice
        assert_eq!(frames[0].channels[0][70], 50.0);
        assert_eq!(frames[0].channels[0][69], 0.0);
    }

    #[test]
    fn idle_input_is_silent() {
        let c = cfg();
        let chans: Vec<Vec<f64>> = (0..4).map(|s| idle(s, 53 * 60)).collect();
        let (frames, diag) = run(&chans, &c);
        assert!(frames.is_empty());
        assert!(diag.offset_updates > 0);
    }

    #[test]
    fn sustained_level_triggers_safety_without_frames() {
        let c = cfg();
        let chans: Vec<Vec<f64>> = (0..4)
            .map(|s| {
                let mut x = idle(10 + s, 3000);
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let jitter = Normal::new(0.0, 1.0).unwrap();
                for v in &mut x[800..1400] {
                    *v = 200.0 + jitter.sample(&mut rng);
                }
                x
            })
            .collect();
        let (frames, diag) = run(&chans, &c);
        assert!(frames.is_empty(), "{:?}", frames.iter().map(|f| f.interval()).collect::<Vec<_>>());
        assert!(diag.safety_recomputes >= 4);
    }

    #[test]
    fn offsets_frozen_while_frame_open() {
        let c = DetectorConfig {
            p1: 50,
            ..cfg()
        };
        let mut ch = idle(3, 1200);
        for v in &mut ch[595..640] {
            *v = 60.0; // spans index 600, a multiple of p1
        }
        let mut det = Detector::new(c, 1).unwrap();
        let mut seen_open = false;
        let mut last = None;
        for (k, &v) in ch.iter().enumerate() {
            det.push(k as u64 + 1, &[v]).unwrap();
            if det.is_initialized() {
                let s = &det.states()[0];
                if let Some((off, thr, was_open)) = last {
                    if was_open && s.is_open() {
                        seen_open = true;
                        assert_eq!((off, thr), (s.offset, s.threshold));
                    }
                }
                last = Some((s.offset, s.threshold, s.is_open()));
            }
        }
        assert!(seen_open);
    }

    #[test]
    fn orphan_and_long_crossings_are_ignored() {
        let c = cfg();
        // starts above threshold right after init, so the first event is a
        // downward crossing with nothing open
        let mut ch = vec![0.0; 1500];
        for v in &mut ch[525..560] {
            *v = 50.0;
        }
        // 80 samples above: longer than the 50-sample crossing window
        for v in &mut ch[900..980] {
            *v = 50.0;
        }
        let strict = DetectorConfig { enforce_crossing_window: true, ..c.clone() };
        let (frames, diag) = run(&vec![ch.clone(); 4], &strict);
        assert!(frames.is_empty());
        assert_eq!(diag.orphan_down_crossings, 4);
        assert_eq!(diag.long_crossings, 4);

        let (frames, diag) = run(&vec![ch; 4], &c);
        assert_eq!(frames.len(), 1);
        assert_eq!(diag.long_crossings, 4);
    }

    #[test]
    fn union_waits_for_the_last_sensor() {
        let c = cfg();
        let mut chans = vec![vec![0.0; 1200]; 4];
        for v in &mut chans[0][599..610] {
            *v = 40.0;
        }
        for v in &mut chans[3][639..650] {
            *v = 40.0;
        }
        let (frames, _) = run(&chans, &c);
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].interval(), (600 - 70, 651 + 70));

        let literal = DetectorConfig {
            merge_policy: MergePolicy::LastSensor,
            ..c
        };
        let (frames, _) = run(&chans, &literal);
        let spans: Vec<_> = frames.iter().map(|f| f.interval()).collect();
        assert_eq!(spans, vec![(530, 681), (570, 721)]);
    }

    #[test]
    fn rejects_out_of_order_samples() {
        let mut det = Detector::new(cfg(), 4).unwrap();
        det.push(5, &[0.0; 4]).unwrap();
        assert!(matches!(det.push(5, &[0.0; 4]), Err(Error::OutOfOrder { .. })));
        assert!(det.push(6, &[0.0; 3]).is_err());
    }

    #[test]
    fn start_underflow_clamps() {
        let c = DetectorConfig {
            p_0a: 20,
            p_0b: 10,
            ..cfg()
        };
        let mut ch = vec![0.0; 300];
        for v in &mut ch[29..35] {
            *v = 40.0;
        }
        let (frames, diag) = run(&vec![ch; 4], &c);
        assert_eq!(diag.clamped_starts, 4);
        assert_eq!(frames[0].start, 1);
    }

    #[test]
    fn extract_frame_capacity_error() {
        let mut h = History::new(2, 10);
        for i in 1..=30 {
            h.push(i, &[i as f64, 0.0]);
        }
        assert!(matches!(extract_frame(&h, 1, 5, 25, &[0.0, 0.0]), Err(Error::Capacity { .. })));
        let f = extract_frame(&h, 1, 22, 25, &[1.0, 0.0]).unwrap();
        assert_eq!(f.channels[0], vec![21.0, 22.0, 23.0, 24.0]);
    }
}
