use serde::{Deserialize, Serialize};

use crate::detector::GestureFrame;
use crate::{Error, Result};

const SIGMA_FLOOR: f64 = 1e-6;

/// Fixed-length network input, stored time-major: `values[t * channels + c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTensor {
    pub len: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl FrameTensor {
    pub fn new(len: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != len * channels {
            return Err(Error::InvalidInput(format!(
                "{} values for a {len}x{channels} tensor",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("tensor contains non-finite values".into()));
        }
        Ok(FrameTensor { len, channels, values })
    }

    pub fn step(&self, t: usize) -> &[f64] {
        &self.values[t * self.channels..(t + 1) * self.channels]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.len).map(|t| self.values[t * self.channels + c]).collect()
    }
}

/// Linear resampling of one channel to `len` points. Endpoints are kept.
pub fn resample(x: &[f64], len: usize) -> Vec<f64> {
    let n = x.len();
    if n == 1 || len == 1 {
        return vec![x[0]; len];
    }
    let scale = (n - 1) as f64 / (len - 1) as f64;
    (0..len)
        .map(|t| {
            let u = t as f64 * scale;
            let i = (u.floor() as usize).min(n - 2);
            let a = u - i as f64;
            x[i] * (1.0 - a) + x[i + 1] * a
        })
        .collect()
}

fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(SIGMA_FLOOR);
    for v in x {
        *v = (*v - mean) / sd;
    }
}

/// Resamples every channel to `len` and standardises each to zero mean and
/// unit variance.
pub fn frame_to_tensor(frame: &GestureFrame, len: usize) -> Result<FrameTensor> {
    channels_to_tensor(&frame.channels, len)
}

pub fn channels_to_tensor(channels: &[Vec<f64>], len: usize) -> Result<FrameTensor> {
    if len == 0 {
        return Err(Error::param("tensor length must be positive"));
    }
    if channels.is_empty() || channels.iter().any(Vec::is_empty) {
        return Err(Error::InvalidInput("empty frame".into()));
    }
    let c = channels.len();
    let mut values = vec![0.0; len * c];
    for (ci, ch) in channels.iter().enumerate() {
        let mut r = resample(ch, len);
        standardize(&mut r);
        for (t, v) in r.into_iter().enumerate() {
            values[t * c + ci] = v;
        }
    }
    FrameTensor::new(len, c, values)
}
