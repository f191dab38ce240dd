//! Text file formats.
//!
//! - recording: CSV `index,s1,s2,s3,s4`
//! - labels: CSV `class_id,true_start,true_end`
//! - manifest: `key=value` lines
//! - frame index: CSV `k,start,end`; frame blocks: CSV `k,index,s1,...`
//! - processed stream: CSV `index,<channel labels>`
//!
//! Floats are written with Rust's shortest round-trip formatting, so writing
//! the same data twice gives identical bytes and reading it back is exact.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use crate::config::KeyValues;
use crate::detector::GestureFrame;
use crate::dsp::ProcessedStream;
use crate::signal::{GestureEvent, LabeledRecording, RawStream};
use crate::{Error, Result, SENSOR_COUNT};

pub const RECORDING_HEADER: &str = "index,s1,s2,s3,s4";
pub const LABELS_HEADER: &str = "class_id,true_start,true_end";
pub const FRAME_INDEX_HEADER: &str = "k,start,end";

fn location(name: &str, line: usize) -> String {
    format!("{name}:{line}")
}

fn parse_field<T: std::str::FromStr>(s: &str, name: &str, line: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(location(name, line), format!("cannot parse '{}'", s.trim())))
}

/// Parses one `index,v1,v2,v3,v4` line.
pub fn parse_sample_line(line: &str, name: &str, lineno: usize) -> Result<(u64, [f64; SENSOR_COUNT])> {
    let fields: Vec<&str> = line.trim().split(',').collect();
    if fields.len() != SENSOR_COUNT + 1 {
        return Err(Error::parse(
            location(name, lineno),
            format!("expected {} fields, found {}", SENSOR_COUNT + 1, fields.len()),
        ));
    }
    let index = parse_field(fields[0], name, lineno)?;
    let mut v = [0.0; SENSOR_COUNT];
    for (slot, f) in v.iter_mut().zip(&fields[1..]) {
        *slot = parse_field::<f64>(f, name, lineno)?;
        if !slot.is_finite() {
            return Err(Error::parse(location(name, lineno), "non-finite voltage"));
        }
    }
    Ok((index, v))
}

/// Reads sample lines from any reader, skipping a recording header and blank
/// lines. Used for file replay and for live byte streams alike.
pub struct SampleReader<R> {
    lines: std::io::Lines<R>,
    name: String,
    lineno: usize,
}

impl<R: BufRead> SampleReader<R> {
    pub fn new(reader: R, name: impl Into<String>) -> Self {
        SampleReader {
            lines: reader.lines(),
            name: name.into(),
            lineno: 0,
        }
    }
}

impl<R: BufRead> Iterator for SampleReader<R> {
    type Item = Result<(u64, [f64; SENSOR_COUNT])>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.lineno += 1;
            let t = line.trim();
            if t.is_empty() || (self.lineno == 1 && t == RECORDING_HEADER) {
                continue;
            }
            return Some(parse_sample_line(t, &self.name, self.lineno));
        }
    }
}

pub fn recording_to_csv(stream: &RawStream) -> String {
    let mut out = String::with_capacity(stream.len() * 48);
    out.push_str(RECORDING_HEADER);
    out.push('\n');
    for k in 0..stream.len() {
        let r = stream.row(k);
        let _ = writeln!(out, "{},{},{},{},{}", stream.index_at(k), r[0], r[1], r[2], r[3]);
    }
    out
}

pub fn write_recording(path: &Path, stream: &RawStream) -> Result<()> {
    fs::write(path, recording_to_csv(stream))?;
    Ok(())
}

pub fn parse_recording<R: Read>(reader: R, name: &str, sampling_rate: f64) -> Result<RawStream> {
    let mut reader = BufReader::new(reader);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    if header.trim() != RECORDING_HEADER {
        return Err(Error::parse(location(name, 1), format!("expected header '{RECORDING_HEADER}'")));
    }
    let mut channels: [Vec<f64>; SENSOR_COUNT] = Default::default();
    let mut first = None;
    let mut last: Option<u64> = None;
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = k + 2;
        let (idx, v) = parse_sample_line(&line, name, lineno)?;
        match last {
            Some(l) if idx != l + 1 => {
                return Err(Error::parse(
                    location(name, lineno),
                    format!("index {idx} does not follow {l}"),
                ))
            }
            None => first = Some(idx),
            _ => {}
        }
        last = Some(idx);
        for (c, x) in channels.iter_mut().zip(v) {
            c.push(x);
        }
    }
    let first = first.ok_or_else(|| Error::parse(location(name, 2), "recording has no samples"))?;
    RawStream::new(sampling_rate, first, channels)
}

pub fn read_recording(path: &Path, sampling_rate: f64) -> Result<RawStream> {
    let f = fs::File::open(path)?;
    parse_recording(f, &path.display().to_string(), sampling_rate)
}

pub fn labels_to_csv(events: &[GestureEvent]) -> String {
    let mut out = String::from(LABELS_HEADER);
    out.push('\n');
    for e in events {
        let _ = writeln!(out, "{},{},{}", e.class_id, e.true_start, e.true_end);
    }
    out
}

pub fn write_labels(path: &Path, events: &[GestureEvent]) -> Result<()> {
    fs::write(path, labels_to_csv(events))?;
    Ok(())
}

fn read_table(path: &Path, header: &str, width: usize) -> Result<Vec<Vec<u64>>> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(header) {
        return Err(Error::parse(location(&name, 1), format!("expected header '{header}'")));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != width {
            return Err(Error::parse(
                location(&name, k + 2),
                format!("expected {width} fields, found {}", f.len()),
            ));
        }
        rows.push(f.iter().map(|s| parse_field(s, &name, k + 2)).collect::<Result<Vec<u64>>>()?);
    }
    Ok(rows)
}

pub fn read_labels(path: &Path) -> Result<Vec<GestureEvent>> {
    read_table(path, LABELS_HEADER, 3)?
        .into_iter()
        .map(|r| {
            let class_id = u8::try_from(r[0]).map_err(|_| Error::param(format!("class id {} out of range", r[0])))?;
            crate::signal::GestureClass::from_id(class_id)?;
            Ok(GestureEvent {
                class_id,
                true_start: r[1],
                true_end: r[2],
            })
        })
        .collect()
}

pub fn frame_index_to_csv(frames: &[GestureFrame]) -> String {
    let mut out = String::from(FRAME_INDEX_HEADER);
    out.push('\n');
    for f in frames {
        let _ = writeln!(out, "{},{},{}", f.k, f.start, f.end);
    }
    out
}

/// Reads `k,start,end` rows.
pub fn read_frame_index(path: &Path) -> Result<Vec<(u64, u64, u64)>> {
    Ok(read_table(path, FRAME_INDEX_HEADER, 3)?
        .into_iter()
        .map(|r| (r[0], r[1], r[2]))
        .collect())
}

pub fn frames_to_csv(frames: &[GestureFrame]) -> String {
    let mut out = String::from("k,index");
    let n = frames.first().map_or(SENSOR_COUNT, |f| f.channels.len());
    for c in 1..=n {
        let _ = write!(out, ",s{c}");
    }
    out.push('\n');
    for f in frames {
        for t in 0..f.len() {
            let _ = write!(out, "{},{}", f.k, f.start + t as u64);
            for ch in &f.channels {
                let _ = write!(out, ",{}", ch[t]);
            }
            out.push('\n');
        }
    }
    out
}

pub fn processed_to_csv(p: &ProcessedStream) -> String {
    let mut out = String::from("index");
    for l in &p.labels {
        let _ = write!(out, ",{l}");
    }
    out.push('\n');
    for k in 0..p.len() {
        let _ = write!(out, "{}", p.index_at(k));
        for ch in &p.channels {
            let _ = write!(out, ",{}", ch[k]);
        }
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, kv: &KeyValues) -> Result<()> {
    fs::write(path, kv.to_text())?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<KeyValues> {
    KeyValues::parse(&fs::read_to_string(path)?, &path.display().to_string())
}

pub const MANIFEST_NAME: &str = "manifest.txt";

/// `rec_0001.csv` and its labels file `rec_0001.labels.csv`.
pub fn recording_names(k: usize) -> (String, String) {
    (format!("rec_{k:04}.csv"), format!("rec_{k:04}.labels.csv"))
}

/// Writes recordings, their labels and a manifest into `dir`.
pub fn write_dataset(dir: &Path, recordings: &[LabeledRecording], manifest: &KeyValues) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, rec) in recordings.iter().enumerate() {
        let (data, labels) = recording_names(k + 1);
        write_recording(&dir.join(data), &rec.stream)?;
        write_labels(&dir.join(labels), &rec.events)?;
    }
    let mut kv = manifest.clone();
    kv.set("recordings", recordings.len().to_string());
    write_manifest(&dir.join(MANIFEST_NAME), &kv)
}

/// Recording files in `dir` in name order, each paired with its labels file.
pub fn dataset_files(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.ends_with(".csv") && !name.ends_with(".labels.csv") {
            let labels = p.with_file_name(name.replace(".csv", ".labels.csv"));
            out.push((p, labels));
        }
    }
    out.sort();
    Ok(out)
}

/// Loads a dataset directory; the sampling rate comes from the manifest.
pub fn read_dataset(dir: &Path) -> Result<(KeyValues, Vec<LabeledRecording>)> {
    let manifest = read_manifest(&dir.join(MANIFEST_NAME))?;
    let rate: f64 = manifest
        .get("sampling_rate")?
        .ok_or_else(|| Error::param(format!("{} has no sampling_rate", dir.join(MANIFEST_NAME).display())))?;
    let mut recs = Vec::new();
    for (data, labels) in dataset_files(dir)? {
        let stream = read_recording(&data, rate)?;
        let events = read_labels(&labels)?;
        let rec = LabeledRecording { stream, events };
        rec.validate()?;
        recs.push(rec);
    }
    Ok((manifest, recs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{generate_sequence, GestureClass, GestureTrajectory, PhysicsParams, Scene};

    fn sample() -> LabeledRecording {
        let p = PhysicsParams::default();
        let t = vec![
            GestureTrajectory::canonical(GestureClass::Up, &p),
            GestureTrajectory::canonical(GestureClass::RightToDown, &p),
        ];
        generate_sequence(3, &p, &Scene::default(), &t).unwrap()
    }

    #[test]
    fn recording_roundtrip_is_exact() {
        let rec = sample();
        let csv = recording_to_csv(&rec.stream);
        let back = parse_recording(csv.as_bytes(), "mem", rec.stream.sampling_rate).unwrap();
        assert_eq!(back, rec.stream);
        assert_eq!(recording_to_csv(&back), csv);
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = sample();
        let mut kv = KeyValues::default();
        kv.set("sampling_rate", rec.stream.sampling_rate.to_string());
        write_dataset(dir.path(), std::slice::from_ref(&rec), &kv).unwrap();
        let (m, recs) = read_dataset(dir.path()).unwrap();
        assert_eq!(m.get::<usize>("recordings").unwrap(), Some(1));
        assert_eq!(recs, vec![rec]);
    }

    #[test]
    fn malformed_lines_report_location() {
        let bad = format!("{RECORDING_HEADER}\n1,1,2,3,4\n2,1,x,3,4\n");
        match parse_recording(bad.as_bytes(), "f.csv", 53.0) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "f.csv:3"),
            other => panic!("{other:?}"),
        }
        let gap = format!("{RECORDING_HEADER}\n1,1,2,3,4\n3,1,2,3,4\n");
        assert!(parse_recording(gap.as_bytes(), "f.csv", 53.0).is_err());
        assert!(parse_recording("a,b\n".as_bytes(), "f.csv", 53.0).is_err());
    }

    #[test]
    fn sample_reader_skips_header_and_blanks() {
        let text = format!("{RECORDING_HEADER}\n1,0.5,1,2,3\n\n2,1,1,1,1\n");
        let rows: Vec<_> = SampleReader::new(text.as_bytes(), "live").collect::<Result<_>>().unwrap();
        assert_eq!(rows, vec![(1, [0.5, 1.0, 2.0, 3.0]), (2, [1.0; 4])]);
    }
}
