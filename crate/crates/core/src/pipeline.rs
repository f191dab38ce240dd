//! Offline glue: conditioning and detection over whole recordings, and
//! turning labelled recordings into classifier training examples.

use rayon::prelude::*;

use crate::classifier::{frame_to_tensor, Example};
use crate::detector::{detect_all, Detector, DetectorConfig, Diagnostics, GestureFrame};
use crate::dsp::{self, Conditioner, DspConfig};
use crate::metrics::detection_rate;
use crate::signal::{LabeledRecording, RawStream};
use crate::{Result, SENSOR_COUNT};

/// Conditioner and detector fused into one sample-by-sample stage.
#[derive(Debug, Clone)]
pub struct FrontEnd {
    conditioner: Conditioner,
    detector: Detector,
    samples: u64,
}

impl FrontEnd {
    pub fn new(dsp: &DspConfig, det: &DetectorConfig) -> Result<Self> {
        Ok(FrontEnd {
            conditioner: Conditioner::new(dsp)?,
            detector: Detector::new(det.clone(), SENSOR_COUNT)?,
            samples: 0,
        })
    }

    /// Feeds one raw row; returns a frame when the detector emits one.
    pub fn push(&mut self, index: u64, row: [f64; SENSOR_COUNT]) -> Result<Option<GestureFrame>> {
        self.samples += 1;
        match self.conditioner.push(index, row)? {
            Some(x) => self.detector.push(index, &x),
            None => Ok(None),
        }
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        self.detector.diagnostics()
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }
}

#[derive(Debug, Clone)]
pub struct DetectionOutput {
    pub frames: Vec<GestureFrame>,
    pub diagnostics: Diagnostics,
}

/// Runs conditioning and detection over a whole recording. Streaming schemes
/// go through [`FrontEnd`]; the others are processed in one pass first.
pub fn detect_frames(stream: &RawStream, dsp_cfg: &DspConfig, det: &DetectorConfig) -> Result<DetectionOutput> {
    if dsp_cfg.scheme.is_streaming() {
        let mut fe = FrontEnd::new(dsp_cfg, det)?;
        let mut frames = Vec::new();
        for k in 0..stream.len() {
            if let Some(f) = fe.push(stream.index_at(k), stream.row(k))? {
                frames.push(f);
            }
        }
        return Ok(DetectionOutput {
            frames,
            diagnostics: fe.diagnostics().clone(),
        });
    }
    let p = dsp::process(stream, dsp_cfg)?;
    let (frames, diagnostics) = detect_all(p.first_index, &p.channels, det)?;
    Ok(DetectionOutput { frames, diagnostics })
}

/// How training frames were obtained.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExampleStats {
    pub events: usize,
    /// Events covered by a detector frame.
    pub detected: usize,
    /// Events cut from the ground-truth window because no frame matched.
    pub fallback: usize,
}

/// Ground-truth window padded by `p_s`/`p_e`, with the offsets taken from
/// the first `p_0a` processed samples.
fn truth_window(stream: &RawStream, dsp_cfg: &DspConfig, det: &DetectorConfig, start: u64, end: u64) -> Result<GestureFrame> {
    let p = dsp::process(stream, dsp_cfg)?;
    let first = p.first_index;
    let last = first + p.len() as u64 - 1;
    let s = start.saturating_sub(det.p_s as u64).max(first);
    let e = (end + det.p_e as u64).min(last);
    let n0 = det.p_0a.min(p.len());
    let channels = p
        .channels
        .iter()
        .map(|c| {
            let offset = c[..n0].iter().sum::<f64>() / n0 as f64;
            c[(s - first) as usize..=(e - first) as usize].iter().map(|v| v - offset).collect()
        })
        .collect();
    Ok(GestureFrame {
        k: 0,
        start: s,
        end: e,
        channels,
    })
}

/// One example per ground-truth event: the detector frame matched to it, or
/// the padded ground-truth window when detection missed it.
pub fn training_examples(
    recordings: &[LabeledRecording],
    dsp_cfg: &DspConfig,
    det: &DetectorConfig,
    frame_len: usize,
) -> Result<(Vec<Example>, ExampleStats)> {
    let per: Vec<Result<(Vec<Example>, usize, usize)>> = recordings
        .par_iter()
        .map(|rec| {
            let out = detect_frames(&rec.stream, dsp_cfg, det)?;
            let intervals: Vec<(u64, u64)> = out.frames.iter().map(GestureFrame::interval).collect();
            let report = detection_rate(&intervals, &rec.events);
            let mut examples = Vec::with_capacity(rec.events.len());
            let mut fallback = 0;
            for (ev, m) in rec.events.iter().zip(&report.matches) {
                let frame = match m.frame {
                    Some(iv) => out.frames.iter().find(|f| f.interval() == iv).cloned().expect("matched frame"),
                    None => {
                        fallback += 1;
                        truth_window(&rec.stream, dsp_cfg, det, ev.true_start, ev.true_end)?
                    }
                };
                examples.push(Example {
                    tensor: frame_to_tensor(&frame, frame_len)?,
                    label: ev.class_id,
                });
            }
            Ok((examples, rec.events.len(), fallback))
        })
        .collect();
    let mut all = Vec::new();
    let mut stats = ExampleStats::default();
    for r in per {
        let (ex, n, fb) = r?;
        all.extend(ex);
        stats.events += n;
        stats.fallback += fb;
    }
    stats.detected = stats.events - stats.fallback;
    if stats.fallback > 0 {
        log::warn!("{} of {} events were not detected; used their ground-truth windows", stats.fallback, stats.events);
    }
    Ok((all, stats))
}
