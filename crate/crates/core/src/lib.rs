//! Streaming detection and classification of hand-motion gestures from a
//! 2×2 array of capacitive proximity sensors.
//!
//! The crate is organised as a pipeline:
//!
//! - [`signal`] holds the raw stream types and a seeded synthetic generator
//!   (idle noise, discharge sawtooth, ten gesture trajectories).
//! - [`dsp`] conditions raw voltages into a zero-centred processed stream and
//!   provides spectral tooling.
//! - [`detector`] runs the adaptive-threshold state machine and cuts
//!   multi-channel gesture frames.
//! - [`classifier`] is a from-scratch GRU/LSTM network trained by plain
//!   gradient descent.
//! - [`metrics`] scores detection, frame extraction and classification.
//! - [`runtime`] wires everything into a threaded background pipeline that
//!   emits newline-delimited JSON commands over TCP.
//!
//! ```
//! use capstream::signal::{generate_gesture, GestureClass, GestureTrajectory, PhysicsParams, Scene};
//! use capstream::pipeline::detect_frames;
//! use capstream::dsp::DspConfig;
//! use capstream::detector::DetectorConfig;
//!
//! let params = PhysicsParams::default();
//! let traj = GestureTrajectory::canonical(GestureClass::LeftToRight, &params);
//! let rec = generate_gesture(7, &params, &Scene::default(), &traj).unwrap();
//!
//! let det = DetectorConfig::for_rate(params.sampling_rate);
//! let out = detect_frames(&rec.stream, &DspConfig::default(), &det).unwrap();
//! assert_eq!(out.frames.len(), 1);
//! ```

pub mod classifier;
pub mod config;
pub mod detector;
pub mod dsp;
mod error;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod runtime;
pub mod signal;

pub use error::{Error, Result};

use std::fmt;

/// Number of plates in the sensor array.
pub const SENSOR_COUNT: usize = 4;

/// One of the four plates, numbered 1 to 4.
///
/// Layout used throughout the crate (viewed from above):
///
/// ```text
///   s1  s2
///   s3  s4
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SensorId(u8);

impl SensorId {
    pub const ALL: [SensorId; SENSOR_COUNT] = [SensorId(1), SensorId(2), SensorId(3), SensorId(4)];

    pub fn new(index: u8) -> Result<Self> {
        if (1..=SENSOR_COUNT as u8).contains(&index) {
            Ok(SensorId(index))
        } else {
            Err(Error::param(format!("sensor index {index} not in [1, 4]")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based position, for indexing channel arrays.
    pub fn slot(self) -> usize {
        self.0 as usize - 1
    }

    pub fn is_left_column(self) -> bool {
        self.0 % 2 == 1
    }

    pub fn is_top_row(self) -> bool {
        self.0 <= 2
    }
}

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

// Book chapters are compiled as doctests so the snippets cannot rot.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/signal-model.md")]
    mod signal_model {}
    #[doc = include_str!("../../../book/src/conditioning.md")]
    mod conditioning {}
    #[doc = include_str!("../../../book/src/detection.md")]
    mod detection {}
    #[doc = include_str!("../../../book/src/classifier.md")]
    mod classifier {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/runtime.md")]
    mod runtime {}
}
