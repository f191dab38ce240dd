//! Detection, frame-extraction and classification scores.
//!
//! Intervals are inclusive `(start, end)` sample indices. A ground-truth
//! event is *detected* when at least one frame intersects it; frames and
//! events are paired greedily by overlap size so a frame can account for at
//! most one event. A matched frame is *correctly framed* when it contains the
//! whole event or its IoU with the event reaches `iou_min`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detector::GestureFrame;
use crate::signal::GestureEvent;
use crate::{Error, Result};

/// Inclusive interval length.
fn span(a: (u64, u64)) -> u64 {
    a.1 - a.0 + 1
}

pub fn overlap(a: (u64, u64), b: (u64, u64)) -> u64 {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    if hi >= lo {
        hi - lo + 1
    } else {
        0
    }
}

pub fn iou(a: (u64, u64), b: (u64, u64)) -> f64 {
    let inter = overlap(a, b);
    inter as f64 / (span(a) + span(b) - inter) as f64
}

pub fn contains(outer: (u64, u64), inner: (u64, u64)) -> bool {
    outer.0 <= inner.0 && inner.1 <= outer.1
}

pub fn frame_intervals(frames: &[GestureFrame]) -> Vec<(u64, u64)> {
    frames.iter().map(GestureFrame::interval).collect()
}

/// Outcome for one ground-truth event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMatch {
    pub event: usize,
    pub interval: (u64, u64),
    /// Matched frame interval, if any.
    pub frame: Option<(u64, u64)>,
    pub overlap: u64,
    pub iou: f64,
    pub contained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub total_events: usize,
    pub detected_events: usize,
    pub detection_rate: f64,
    /// Frames that matched no event.
    pub unmatched_frames: usize,
    pub matches: Vec<EventMatch>,
}

impl DetectionReport {
    /// Pools reports from separate recordings; events are renumbered in
    /// order.
    pub fn combine(reports: &[DetectionReport]) -> DetectionReport {
        let mut matches = Vec::new();
        let mut unmatched = 0;
        for r in reports {
            let base = matches.len();
            matches.extend(r.matches.iter().cloned().map(|mut m| {
                m.event += base;
                m
            }));
            unmatched += r.unmatched_frames;
        }
        let total = matches.len();
        let detected = matches.iter().filter(|m| m.frame.is_some()).count();
        DetectionReport {
            total_events: total,
            detected_events: detected,
            detection_rate: ratio(detected, total),
            unmatched_frames: unmatched,
            matches,
        }
    }
}

/// Greedy one-to-one pairing of frames and events, largest overlap first.
/// Ties are broken by event position and then by the frame interval itself,
/// so the result does not depend on the order of `frames`.
pub fn detection_rate(frames: &[(u64, u64)], truth: &[GestureEvent]) -> DetectionReport {
    let events: Vec<(u64, u64)> = truth.iter().map(|e| (e.true_start, e.true_end)).collect();
    let mut pairs = Vec::new();
    for (ei, &ev) in events.iter().enumerate() {
        for (fi, &fr) in frames.iter().enumerate() {
            let o = overlap(ev, fr);
            if o > 0 {
                pairs.push((o, ei, fr, fi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut event_frame: Vec<Option<(u64, u64)>> = vec![None; events.len()];
    let mut frame_used = vec![false; frames.len()];
    for (_, ei, fr, fi) in pairs {
        if event_frame[ei].is_none() && !frame_used[fi] {
            event_frame[ei] = Some(fr);
            frame_used[fi] = true;
        }
    }

    let matches: Vec<EventMatch> = events
        .iter()
        .zip(&event_frame)
        .enumerate()
        .map(|(ei, (&ev, &fr))| match fr {
            Some(f) => EventMatch {
                event: ei,
                interval: ev,
                frame: Some(f),
                overlap: overlap(ev, f),
                iou: iou(ev, f),
                contained: contains(f, ev),
            },
            None => EventMatch {
                event: ei,
                interval: ev,
                frame: None,
                overlap: 0,
                iou: 0.0,
                contained: false,
            },
        })
        .collect();

    let detected = event_frame.iter().filter(|f| f.is_some()).count();
    DetectionReport {
        total_events: events.len(),
        detected_events: detected,
        detection_rate: ratio(detected, events.len()),
        unmatched_frames: frame_used.iter().filter(|u| !**u).count(),
        matches,
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub iou_min: f64,
    /// Events with a matched frame.
    pub total_detected: usize,
    pub correctly_framed: usize,
    pub extraction_rate: f64,
    /// Matched frames that contain their whole event.
    pub contained: usize,
    /// Matched frames with IoU at or above `iou_min`.
    pub iou_passed: usize,
    pub iou_mean: f64,
    pub iou_median: f64,
}

/// Fraction of detected events whose frame is correct. Zero when nothing was
/// detected.
pub fn extraction_rate(frames: &[(u64, u64)], truth: &[GestureEvent], iou_min: f64) -> Result<ExtractionReport> {
    if !(iou_min > 0.0 && iou_min <= 1.0) {
        return Err(Error::param(format!("iou_min must be in (0, 1], got {iou_min}")));
    }
    let det = detection_rate(frames, truth);
    Ok(extraction_from(&det, iou_min))
}

pub fn extraction_from(det: &DetectionReport, iou_min: f64) -> ExtractionReport {
    let matched: Vec<&EventMatch> = det.matches.iter().filter(|m| m.frame.is_some()).collect();
    let contained = matched.iter().filter(|m| m.contained).count();
    let iou_passed = matched.iter().filter(|m| m.iou >= iou_min).count();
    let correct = matched.iter().filter(|m| m.contained || m.iou >= iou_min).count();
    let mut ious: Vec<f64> = matched.iter().map(|m| m.iou).collect();
    ious.sort_by(f64::total_cmp);
    let iou_mean = if ious.is_empty() {
        0.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    };
    let iou_median = match ious.len() {
        0 => 0.0,
        n if n % 2 == 1 => ious[n / 2],
        n => 0.5 * (ious[n / 2 - 1] + ious[n / 2]),
    };
    ExtractionReport {
        iou_min,
        total_detected: matched.len(),
        correctly_framed: correct,
        extraction_rate: ratio(correct, matched.len()),
        contained,
        iou_passed,
        iou_mean,
        iou_median,
    }
}

/// CSV with one row per event plus a summary section.
pub fn detection_csv(det: &DetectionReport, ext: &ExtractionReport) -> String {
    let mut out = String::from("event,true_start,true_end,frame_start,frame_end,overlap,iou,contained\n");
    for m in &det.matches {
        let (fs, fe) = m.frame.map_or((String::new(), String::new()), |f| (f.0.to_string(), f.1.to_string()));
        let _ = writeln!(
            out,
            "{},{},{},{fs},{fe},{},{:.6},{}",
            m.event + 1,
            m.interval.0,
            m.interval.1,
            m.overlap,
            m.iou,
            m.contained
        );
    }
    out.push_str("\nmetric,value\n");
    let _ = writeln!(out, "total_events,{}", det.total_events);
    let _ = writeln!(out, "detected_events,{}", det.detected_events);
    let _ = writeln!(out, "detection_rate,{:.6}", det.detection_rate);
    let _ = writeln!(out, "unmatched_frames,{}", det.unmatched_frames);
    let _ = writeln!(out, "iou_min,{}", ext.iou_min);
    let _ = writeln!(out, "correctly_framed,{}", ext.correctly_framed);
    let _ = writeln!(out, "extraction_rate,{:.6}", ext.extraction_rate);
    let _ = writeln!(out, "contained,{}", ext.contained);
    let _ = writeln!(out, "containment_rate,{:.6}", ratio(ext.contained, ext.total_detected));
    let _ = writeln!(out, "iou_passed,{}", ext.iou_passed);
    let _ = writeln!(out, "iou_rate,{:.6}", ratio(ext.iou_passed, ext.total_detected));
    let _ = writeln!(out, "iou_mean,{:.6}", ext.iou_mean);
    let _ = writeln!(out, "iou_median,{:.6}", ext.iou_median);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: u8,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub n_classes: usize,
    /// `confusion[truth][predicted]`, zero-based class positions.
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl ClassificationReport {
    /// Class ids are 1-based. Precision or recall with an empty denominator is
    /// 0. Macro averages run over classes that occur in the truth or in the
    /// predictions.
    pub fn from_predictions(truth: &[u8], predicted: &[u8], n_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut confusion = vec![vec![0u64; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            for id in [t, p] {
                if id == 0 || id as usize > n_classes {
                    return Err(Error::InvalidInput(format!("class id {id} outside 1..={n_classes}")));
                }
            }
            confusion[t as usize - 1][p as usize - 1] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let n = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..n).map(|i| confusion[i][i]).sum();
        let mut per_class = Vec::with_capacity(n);
        let mut present = 0usize;
        let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
        for c in 0..n {
            let tp = confusion[c][c];
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = (0..n).map(|r| confusion[r][c]).sum();
            let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            if support > 0 || predicted > 0 {
                present += 1;
                sp += precision;
                sr += recall;
                sf += f1;
            }
            per_class.push(ClassMetrics {
                class_id: c as u8 + 1,
                precision,
                recall,
                f1,
                support,
            });
        }
        let avg = |s: f64| if present == 0 { 0.0 } else { s / present as f64 };
        ClassificationReport {
            n_classes: n,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            macro_precision: avg(sp),
            macro_recall: avg(sr),
            macro_f1: avg(sf),
            per_class,
            confusion,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class_id,precision,recall,f1,support\n");
        for c in &self.per_class {
            let _ = writeln!(out, "{},{:.6},{:.6},{:.6},{}", c.class_id, c.precision, c.recall, c.f1, c.support);
        }
        let _ = writeln!(
            out,
            "macro,{:.6},{:.6},{:.6},{}",
            self.macro_precision,
            self.macro_recall,
            self.macro_f1,
            self.confusion.iter().flatten().sum::<u64>()
        );
        out
    }

    /// Human-readable summary with the confusion matrix.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "accuracy        {:.4}", self.accuracy);
        let _ = writeln!(out, "macro precision {:.4}", self.macro_precision);
        let _ = writeln!(out, "macro recall    {:.4}", self.macro_recall);
        let _ = writeln!(out, "macro f1        {:.4}", self.macro_f1);
        out.push_str("\nconfusion (rows = truth, columns = predicted)\n     ");
        for c in 1..=self.n_classes {
            let _ = write!(out, "{c:>5}");
        }
        out.push('\n');
        for (r, row) in self.confusion.iter().enumerate() {
            let _ = write!(out, "{:>5}", r + 1);
            for v in row {
                let _ = write!(out, "{v:>5}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(s: u64, e: u64) -> GestureEvent {
        GestureEvent {
            class_id: 1,
            true_start: s,
            true_end: e,
        }
    }

    #[test]
    fn combine_pools_recordings() {
        let a = detection_rate(&[(0, 10), (50, 60)], &[ev(2, 8)]);
        let b = detection_rate(&[], &[ev(2, 8), ev(20, 30)]);
        let c = DetectionReport::combine(&[a, b]);
        assert_eq!((c.total_events, c.detected_events, c.unmatched_frames), (3, 1, 1));
        assert_eq!(c.matches.iter().map(|m| m.event).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!((c.detection_rate - 1.0 / 3.0).abs() < 1e-12);
    }

    // Brute-force oracle for the "is event i detected" question when frames
    // never overlap two events.
    fn brute_detected(frames: &[(u64, u64)], truth: &[GestureEvent]) -> usize {
        truth
            .iter()
            .filter(|e| frames.iter().any(|f| f.0 <= e.true_end && e.true_start <= f.1))
            .count()
    }

    #[test]
    fn interval_arithmetic() {
        assert_eq!(overlap((1, 10), (5, 20)), 6);
        assert_eq!(overlap((1, 4), (5, 20)), 0);
        assert_eq!(iou((1, 10), (1, 10)), 1.0);
        assert!((iou((1, 10), (6, 15)) - 5.0 / 15.0).abs() < 1e-12);
        assert!(contains((1, 10), (1, 10)));
        assert!(!contains((2, 10), (1, 10)));
    }

    #[test]
    fn identical_frames_score_one() {
        let truth = vec![ev(100, 150), ev(400, 460), ev(900, 950)];
        let frames: Vec<_> = truth.iter().map(|e| (e.true_start, e.true_end)).collect();
        let d = detection_rate(&frames, &truth);
        assert_eq!(d.detection_rate, 1.0);
        let x = extraction_rate(&frames, &truth, 0.8).unwrap();
        assert_eq!(x.extraction_rate, 1.0);
    }

    #[test]
    fn no_frames_score_zero() {
        let truth = vec![ev(100, 150)];
        assert_eq!(detection_rate(&[], &truth).detection_rate, 0.0);
        assert_eq!(extraction_rate(&[], &truth, 0.8).unwrap().extraction_rate, 0.0);
    }

    #[test]
    fn slack_frame_is_correct_by_containment() {
        let truth = vec![ev(500, 560)];
        let x = extraction_rate(&[(430, 630)], &truth, 0.8).unwrap();
        assert_eq!((x.contained, x.iou_passed, x.correctly_framed), (1, 0, 1));
    }

    #[test]
    fn half_frame_is_incorrect() {
        // event 100..=199, frame 150..=274: overlap 50, union 175
        let truth = vec![ev(100, 199)];
        let x = extraction_rate(&[(150, 274)], &truth, 0.8).unwrap();
        assert!(x.iou_mean < 0.8);
        assert_eq!(x.correctly_framed, 0);
    }

    #[test]
    fn one_frame_covers_one_event_only() {
        let truth = vec![ev(100, 150), ev(160, 200)];
        let d = detection_rate(&[(90, 210)], &truth);
        assert_eq!(d.detected_events, 1);
        assert_eq!(d.matches[0].frame, Some((90, 210)));
        assert_eq!(d.matches[1].frame, None);
    }

    #[test]
    fn invalid_iou_min() {
        assert!(extraction_rate(&[], &[], 0.0).is_err());
        assert!(extraction_rate(&[], &[], 1.5).is_err());
    }

    #[test]
    fn classification_edge_cases() {
        let truth: Vec<u8> = (1..=10).flat_map(|c| [c; 5]).collect();
        let r = ClassificationReport::from_predictions(&truth, &truth, 10).unwrap();
        assert_eq!((r.accuracy, r.macro_f1), (1.0, 1.0));
        let ones = vec![1u8; truth.len()];
        let r = ClassificationReport::from_predictions(&truth, &ones, 10).unwrap();
        assert!((r.accuracy - 0.1).abs() < 1e-12);
        assert!(ClassificationReport::from_predictions(&[11], &[1], 10).is_err());
    }

    fn disjoint_events() -> impl Strategy<Value = Vec<GestureEvent>> {
        prop::collection::vec((5u64..50, 10u64..80), 1..12).prop_map(|gaps| {
            let mut at = 0;
            gaps.into_iter()
                .map(|(gap, len)| {
                    at += gap;
                    let e = ev(at, at + len);
                    at += len;
                    e
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn detection_rate_ignores_frame_order(truth in disjoint_events(), raw in prop::collection::vec((0u64..1000, 1u64..120), 0..15), seed in any::<u64>()) {
            let frames: Vec<(u64, u64)> = raw.iter().map(|&(s, l)| (s, s + l)).collect();
            let mut shuffled = frames.clone();
            let n = shuffled.len();
            if n > 1 {
                shuffled.rotate_left((seed % n as u64) as usize);
                shuffled.reverse();
            }
            let a = detection_rate(&frames, &truth);
            let b = detection_rate(&shuffled, &truth);
            prop_assert_eq!(a.detected_events, b.detected_events);
            prop_assert_eq!(a.matches, b.matches);
        }

        #[test]
        fn lowering_iou_min_never_hurts(truth in disjoint_events(), raw in prop::collection::vec((0u64..1000, 1u64..120), 0..15), lo in 0.01f64..1.0, hi in 0.01f64..1.0) {
            let frames: Vec<(u64, u64)> = raw.iter().map(|&(s, l)| (s, s + l)).collect();
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let a = extraction_rate(&frames, &truth, lo).unwrap();
            let b = extraction_rate(&frames, &truth, hi).unwrap();
            prop_assert!(a.extraction_rate >= b.extraction_rate);
        }

        #[test]
        fn short_frames_match_brute_force(truth in disjoint_events(), picks in prop::collection::vec((0usize..12, 0u64..4), 0..12)) {
            // frames strictly inside single events cannot be shared
            let frames: Vec<(u64, u64)> = picks.iter().filter_map(|&(i, d)| {
                truth.get(i).map(|e| (e.true_start + d, e.true_start + d + 2))
            }).collect();
            prop_assert_eq!(detection_rate(&frames, &truth).detected_events, brute_detected(&frames, &truth));
        }

        #[test]
        fn permuting_labels_permutes_confusion(pairs in prop::collection::vec((1u8..=4, 1u8..=4), 1..60), shift in 1u8..4) {
            let perm = |c: u8| (c - 1 + shift) % 4 + 1;
            let (t, p): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
            let a = ClassificationReport::from_predictions(&t, &p, 4).unwrap();
            let tp: Vec<u8> = t.iter().map(|&c| perm(c)).collect();
            let pp: Vec<u8> = p.iter().map(|&c| perm(c)).collect();
            let b = ClassificationReport::from_predictions(&tp, &pp, 4).unwrap();
            for r in 1..=4u8 {
                for c in 1..=4u8 {
                    prop_assert_eq!(a.confusion[r as usize - 1][c as usize - 1], b.confusion[perm(r) as usize - 1][perm(c) as usize - 1]);
                }
            }
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
        }
    }
}
