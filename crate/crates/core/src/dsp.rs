//! Signal conditioning and spectral tools.
//!
//! The production path is the sensitivity-weighted sequential difference with
//! a short moving average ([`weighted_smoothed_difference`], or the streaming
//! [`Conditioner`]). Differencing removes the per-sensor baseline and the slow
//! charge ramp, so idle input settles near a small constant that the detector
//! then subtracts as its offset.
//!
//! The pairwise-difference and low-pass schemes are kept for comparison.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::signal::RawStream;
use crate::{Error, Result, SensorId, SENSOR_COUNT};

/// Conditioning scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// `|τ·x[j] − (1−τ)·x[j−1]|·2`, averaged over `w_smooth` samples.
    SequentialDifference,
    /// `τ·x[j] + (1−τ)·x[j−1]` averaged over `w_smooth` samples. Does not
    /// zero-centre idle input.
    WeightedSum,
    /// `|x_s[j] − x_s'[j]|` for all six sensor pairs.
    PairwiseDifference,
    /// Spectral low-pass at `lpf_cutoff`, then a moving average of `|x|`.
    LowPass,
}

impl Scheme {
    pub fn is_streaming(self) -> bool {
        matches!(self, Scheme::SequentialDifference | Scheme::WeightedSum)
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential-diff" => Ok(Scheme::SequentialDifference),
            "weighted-sum" => Ok(Scheme::WeightedSum),
            "pairwise-diff" => Ok(Scheme::PairwiseDifference),
            "low-pass" => Ok(Scheme::LowPass),
            other => Err(Error::param(format!(
                "unknown scheme '{other}' (expected sequential-diff, weighted-sum, pairwise-diff or low-pass)"
            ))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::SequentialDifference => "sequential-diff",
            Scheme::WeightedSum => "weighted-sum",
            Scheme::PairwiseDifference => "pairwise-diff",
            Scheme::LowPass => "low-pass",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DspConfig {
    /// Per-sensor weight τ on the current sample, in [0, 1].
    pub sensitivity: [f64; SENSOR_COUNT],
    /// Moving-average length (samples).
    pub w_smooth: usize,
    /// Offset period (samples); only checked for consistency here.
    pub p1: usize,
    /// Hz, used by the low-pass scheme.
    pub lpf_cutoff: f64,
    pub scheme: Scheme,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            sensitivity: [0.5; SENSOR_COUNT],
            w_smooth: 5,
            p1: 318,
            lpf_cutoff: 50.0,
            scheme: Scheme::SequentialDifference,
        }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w_smooth < 1 {
            return Err(Error::param("w_smooth must be at least 1"));
        }
        if self.p1 < self.w_smooth {
            return Err(Error::param("p1 must be at least w_smooth"));
        }
        if let Some(t) = self.sensitivity.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::param(format!("sensitivity {t} not in [0, 1]")));
        }
        if !(self.lpf_cutoff > 0.0) {
            return Err(Error::param("lpf_cutoff must be positive"));
        }
        Ok(())
    }
}

/// Conditioned multi-channel signal. `first_index` is the raw sample index of
/// the newest raw sample that contributed to the first output value.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedStream {
    pub sampling_rate: f64,
    pub first_index: u64,
    pub labels: Vec<String>,
    pub channels: Vec<Vec<f64>>,
}

impl ProcessedStream {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, k: usize) -> Vec<f64> {
        self.channels.iter().map(|c| c[k]).collect()
    }

    pub fn index_at(&self, k: usize) -> u64 {
        self.first_index + k as u64
    }
}

fn sensor_labels() -> Vec<String> {
    SensorId::ALL.iter().map(|s| s.to_string()).collect()
}

/// `|x[j] − x[j−1]|` per sensor; one sample shorter than the input.
pub fn sequential_difference(stream: &RawStream) -> Result<[Vec<f64>; SENSOR_COUNT]> {
    if stream.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: stream.len(),
        });
    }
    Ok(std::array::from_fn(|s| {
        stream.channels[s].windows(2).map(|w| (w[1] - w[0]).abs()).collect()
    }))
}

/// Per-sensor streaming state for the two sample-by-sample schemes.
#[derive(Debug, Clone)]
struct ChannelState {
    tau: f64,
    prev: Option<f64>,
    window: VecDeque<f64>,
}

/// Streaming form of the sequential-difference and weighted-sum schemes.
///
/// Emits one processed row per raw row once `w_smooth + 1` raw rows have
/// been seen.
#[derive(Debug, Clone)]
pub struct Conditioner {
    scheme: Scheme,
    w_smooth: usize,
    channels: [ChannelState; SENSOR_COUNT],
    last_index: Option<u64>,
}

impl Conditioner {
    pub fn new(cfg: &DspConfig) -> Result<Self> {
        cfg.validate()?;
        if !cfg.scheme.is_streaming() {
            return Err(Error::param(format!("scheme {} cannot run sample by sample", cfg.scheme)));
        }
        Ok(Conditioner {
            scheme: cfg.scheme,
            w_smooth: cfg.w_smooth,
            channels: std::array::from_fn(|s| ChannelState {
                tau: cfg.sensitivity[s],
                prev: None,
                window: VecDeque::with_capacity(cfg.w_smooth),
            }),
            last_index: None,
        })
    }

    pub fn push(&mut self, index: u64, values: [f64; SENSOR_COUNT]) -> Result<Option<[f64; SENSOR_COUNT]>> {
        if let Some(last) = self.last_index {
            if index != last + 1 {
                return Err(Error::OutOfOrder { last, got: index });
            }
        }
        self.last_index = Some(index);
        let mut out = [0.0; SENSOR_COUNT];
        let mut ready = true;
        for (ch, (&x, o)) in self.channels.iter_mut().zip(values.iter().zip(out.iter_mut())) {
            let Some(prev) = ch.prev.replace(x) else {
                ready = false;
                continue;
            };
            let term = match self.scheme {
                Scheme::WeightedSum => ch.tau * x + (1.0 - ch.tau) * prev,
                _ => (ch.tau * x - (1.0 - ch.tau) * prev).abs() * 2.0,
            };
            if ch.window.len() == self.w_smooth {
                ch.window.pop_front();
            }
            ch.window.push_back(term);
            if ch.window.len() < self.w_smooth {
                ready = false;
                continue;
            }
            // summed in window order so the result does not depend on history
            *o = ch.window.iter().sum::<f64>() / self.w_smooth as f64;
        }
        Ok(ready.then_some(out))
    }
}

/// Sensitivity-weighted sequential difference with moving-average smoothing.
///
/// With τ = 0.5 and `w_smooth` = 1 this is exactly [`sequential_difference`].
pub fn weighted_smoothed_difference(stream: &RawStream, cfg: &DspConfig) -> Result<ProcessedStream> {
    let cfg = DspConfig {
        scheme: if cfg.scheme == Scheme::WeightedSum {
            Scheme::WeightedSum
        } else {
            Scheme::SequentialDifference
        },
        ..cfg.clone()
    };
    let needed = cfg.w_smooth + 1;
    if stream.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            got: stream.len(),
        });
    }
    let mut cond = Conditioner::new(&cfg)?;
    let mut channels = vec![Vec::with_capacity(stream.len() - cfg.w_smooth); SENSOR_COUNT];
    for k in 0..stream.len() {
        if let Some(row) = cond.push(stream.index_at(k), stream.row(k))? {
            for (c, v) in channels.iter_mut().zip(row) {
                c.push(v);
            }
        }
    }
    Ok(ProcessedStream {
        sampling_rate: stream.sampling_rate,
        first_index: stream.first_index + cfg.w_smooth as u64,
        labels: sensor_labels(),
        channels,
    })
}

/// The six unordered sensor pairs, in lexicographic order.
pub fn sensor_pairs() -> Vec<(SensorId, SensorId)> {
    let mut pairs = Vec::with_capacity(6);
    for (i, &a) in SensorId::ALL.iter().enumerate() {
        for &b in &SensorId::ALL[i + 1..] {
            pairs.push((a, b));
        }
    }
    pairs
}

/// `|x_s[j] − x_s'[j]|`.
pub fn pairwise_sensor_difference(stream: &RawStream, s: SensorId, other: SensorId) -> Result<Vec<f64>> {
    if s == other {
        return Err(Error::InvalidPair(s.get()));
    }
    Ok(stream
        .channel(s)
        .iter()
        .zip(stream.channel(other))
        .map(|(a, b)| (a - b).abs())
        .collect())
}

/// Runs the configured scheme over a whole recording.
pub fn process(stream: &RawStream, cfg: &DspConfig) -> Result<ProcessedStream> {
    cfg.validate()?;
    match cfg.scheme {
        Scheme::SequentialDifference | Scheme::WeightedSum => weighted_smoothed_difference(stream, cfg),
        Scheme::PairwiseDifference => {
            let pairs = sensor_pairs();
            let channels = pairs
                .iter()
                .map(|&(a, b)| pairwise_sensor_difference(stream, a, b))
                .collect::<Result<Vec<_>>>()?;
            Ok(ProcessedStream {
                sampling_rate: stream.sampling_rate,
                first_index: stream.first_index,
                labels: pairs.iter().map(|(a, b)| format!("{a}-{b}")).collect(),
                channels,
            })
        }
        Scheme::LowPass => {
            let w = cfg.w_smooth;
            if stream.len() < w {
                return Err(Error::InsufficientData {
                    needed: w,
                    got: stream.len(),
                });
            }
            let channels = stream
                .channels
                .iter()
                .map(|c| {
                    let filtered = low_pass(c, stream.sampling_rate, cfg.lpf_cutoff, c.len())?;
                    Ok(filtered
                        .windows(w)
                        .map(|win| win.iter().map(|v| v.abs()).sum::<f64>() / w as f64)
                        .collect())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ProcessedStream {
                sampling_rate: stream.sampling_rate,
                first_index: stream.first_index + w as u64 - 1,
                labels: sensor_labels(),
                channels,
            })
        }
    }
}

/// Magnitude spectrum over all `N` bins of the zero-padded transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub magnitudes: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    /// Bins from DC up to and including Nyquist.
    pub fn one_sided(&self) -> Spectrum {
        let n = self.len() / 2 + 1;
        Spectrum {
            frequencies: self.frequencies[..n].to_vec(),
            magnitudes: self.magnitudes[..n].to_vec(),
        }
    }

    /// Index of the largest bin among the one-sided bins.
    pub fn dominant_bin(&self) -> usize {
        let half = self.len() / 2 + 1;
        self.magnitudes[..half]
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, &m)| if m > b.1 { (i, m) } else { b })
            .0
    }
}

/// FFT magnitudes of `signal`, zero-padded to the next power of two.
/// Bin `k` sits at `k·rate/N` Hz.
pub fn fft(signal: &[f64], sampling_rate: f64) -> Result<Spectrum> {
    if signal.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: signal.len(),
        });
    }
    if !(sampling_rate > 0.0) {
        return Err(Error::param("sampling rate must be positive"));
    }
    let n = signal.len().next_power_of_two();
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    Ok(Spectrum {
        frequencies: (0..n).map(|k| k as f64 * sampling_rate / n as f64).collect(),
        magnitudes: buf.iter().map(|c| c.norm()).collect(),
    })
}

/// Keeps the frequency components for which `keep(|f|)` holds and transforms
/// back. Works at the signal's own length, so no padding artefacts.
fn spectral_mask(signal: &[f64], sampling_rate: f64, keep: impl Fn(f64) -> bool) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * sampling_rate / n as f64;
        if !keep(f) {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Mean and standard deviation of the magnitude of a band-passed signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandStats {
    pub band: (f64, f64),
    pub mean: f64,
    pub std: f64,
}

/// Band-passes `signal` to each `[a, b]` Hz band by spectral masking and
/// reports statistics of `|y|`.
pub fn band_statistics(signal: &[f64], sampling_rate: f64, bands: &[(f64, f64)]) -> Result<Vec<BandStats>> {
    let nyquist = sampling_rate / 2.0;
    for &(low, high) in bands {
        if !(low >= 0.0 && low < high && high <= nyquist + 1e-9) {
            return Err(Error::InvalidBand { low, high, nyquist });
        }
    }
    if signal.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(bands
        .iter()
        .map(|&(low, high)| {
            let y = spectral_mask(signal, sampling_rate, |f| f >= low && f <= high);
            let n = y.len() as f64;
            let mean = y.iter().map(|v| v.abs()).sum::<f64>() / n;
            let var = y.iter().map(|v| (v.abs() - mean).powi(2)).sum::<f64>() / n;
            BandStats {
                band: (low, high),
                mean,
                std: var.sqrt(),
            }
        })
        .collect())
}

/// Default analysis bands for `band_statistics`, Hz.
pub const DEFAULT_BANDS: [(f64, f64); 5] = [
    (1.0, 100.0),
    (100.0, 200.0),
    (200.0, 300.0),
    (300.0, 400.0),
    (400.0, 500.0),
];

/// Spectral low-pass applied block by block over `window` samples.
///
/// Each output block is only available once its input block is complete, so
/// a live filter built this way lags by `window` samples. Pass
/// `window >= signal.len()` to filter the whole signal at once.
pub fn low_pass(signal: &[f64], sampling_rate: f64, cutoff: f64, window: usize) -> Result<Vec<f64>> {
    let nyquist = sampling_rate / 2.0;
    if !(cutoff > 0.0 && cutoff < nyquist) {
        return Err(Error::param(format!("cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz")));
    }
    if window == 0 {
        return Err(Error::param("low-pass window must be positive"));
    }
    Ok(signal
        .chunks(window)
        .flat_map(|block| spectral_mask(block, sampling_rate, |f| f <= cutoff))
        .collect())
}
