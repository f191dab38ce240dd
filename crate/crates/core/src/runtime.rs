//! Streaming runtime: sample sources, the threaded dsp → detector →
//! classifier → emitter pipeline, and the newline-delimited JSON command
//! protocol spoken over TCP.

use std::fmt;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::mpsc::sync_channel;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::classifier::{frame_to_tensor, load, Model};
use crate::detector::{DetectorConfig, Diagnostics, GestureFrame};
use crate::dsp::DspConfig;
use crate::io::SampleReader;
use crate::pipeline::FrontEnd;
use crate::signal::GestureClass;
use crate::{Error, Result, SENSOR_COUNT};

/// UI command for each class id, index `id - 1`.
pub const COMMANDS: [&str; 10] = [
    "Next page",
    "Previous page",
    "Scroll up",
    "Scroll down",
    "Previous 2 pages",
    "Next 2 pages",
    "Off",
    "On",
    "Volume down",
    "Volume up",
];

pub fn map_class_to_command(class_id: u8) -> Result<&'static str> {
    match class_id {
        1..=10 => Ok(COMMANDS[class_id as usize - 1]),
        _ => Err(Error::Protocol(format!("unknown class id {class_id}"))),
    }
}

/// One classified gesture on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandMessage {
    /// Milliseconds from the first sample of the stream to the frame end.
    pub timestamp_ms: u64,
    pub frame_index: u64,
    pub class_id: u8,
    pub label: String,
    pub probability: f64,
    pub command: String,
}

impl CommandMessage {
    pub fn new(timestamp_ms: u64, frame_index: u64, class_id: u8, probability: f64) -> Result<Self> {
        let class = GestureClass::from_id(class_id).map_err(|_| Error::Protocol(format!("unknown class id {class_id}")))?;
        let msg = CommandMessage {
            timestamp_ms,
            frame_index,
            class_id,
            label: class.label().to_string(),
            probability,
            command: map_class_to_command(class_id)?.to_string(),
        };
        msg.validate()?;
        Ok(msg)
    }

    pub fn validate(&self) -> Result<()> {
        let command = map_class_to_command(self.class_id)?;
        let label = GestureClass::from_id(self.class_id)?.label();
        if self.label != label || self.command != command {
            return Err(Error::Protocol(format!(
                "class {} must carry label '{label}' and command '{command}', got '{}' / '{}'",
                self.class_id, self.label, self.command
            )));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Protocol(format!("probability {} outside [0, 1]", self.probability)));
        }
        Ok(())
    }

    /// JSON object followed by `\n`.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("message serializes");
        s.push('\n');
        s
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let msg: CommandMessage =
            serde_json::from_str(line.trim_end()).map_err(|e| Error::Protocol(format!("malformed message: {e}")))?;
        msg.validate()?;
        Ok(msg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pacing {
    /// Sleep so samples are delivered at the sampling rate.
    #[default]
    Realtime,
    Unpaced,
}

/// Where samples come from: `file:PATH`, `tcp:HOST:PORT` or `stdin` (`-`).
/// All three carry `index,v1,v2,v3,v4` lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceSpec {
    File(PathBuf),
    Tcp(String),
    Stdin,
}

impl SourceSpec {
    /// Live sources arrive at their own pace and are never throttled.
    pub fn is_live(&self) -> bool {
        !matches!(self, SourceSpec::File(_))
    }

    pub fn open(&self) -> Result<Box<dyn BufRead + Send>> {
        Ok(match self {
            SourceSpec::File(p) => {
                let f = std::fs::File::open(p)
                    .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", p.display())))?;
                Box::new(BufReader::new(f))
            }
            SourceSpec::Tcp(addr) => {
                let s = TcpStream::connect(addr).map_err(|e| io::Error::new(e.kind(), format!("{addr}: {e}")))?;
                Box::new(BufReader::new(s))
            }
            SourceSpec::Stdin => Box::new(BufReader::new(io::stdin())),
        })
    }
}

impl FromStr for SourceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "-" || s == "stdin" {
            return Ok(SourceSpec::Stdin);
        }
        if let Some(p) = s.strip_prefix("file:") {
            if !p.is_empty() {
                return Ok(SourceSpec::File(PathBuf::from(p)));
            }
        }
        if let Some(a) = s.strip_prefix("tcp:") {
            if a.contains(':') {
                return Ok(SourceSpec::Tcp(a.to_string()));
            }
        }
        Err(Error::param(format!("source '{s}' is not file:PATH, tcp:HOST:PORT or stdin")))
    }
}

impl fmt::Display for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceSpec::File(p) => write!(f, "file:{}", p.display()),
            SourceSpec::Tcp(a) => write!(f, "tcp:{a}"),
            SourceSpec::Stdin => f.write_str("stdin"),
        }
    }
}

/// Reconnect schedule for the command socket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub attempts: u32,
    pub initial: Duration,
    pub max: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            attempts: 5,
            initial: Duration::from_millis(50),
            max: Duration::from_millis(800),
        }
    }
}

impl Backoff {
    fn delays(&self) -> impl Iterator<Item = Duration> + '_ {
        (0..self.attempts).map(|k| self.initial.saturating_mul(1 << k.min(16)).min(self.max))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub sampling_rate: f64,
    pub dsp: DspConfig,
    pub detector: DetectorConfig,
    pub model: PathBuf,
    /// `host:port` of the command consumer; `None` only logs messages.
    pub socket: Option<String>,
    pub pacing: Pacing,
    pub backoff: Backoff,
}

impl PipelineConfig {
    pub fn new(sampling_rate: f64, model: impl Into<PathBuf>) -> Self {
        let detector = DetectorConfig::for_rate(sampling_rate);
        PipelineConfig {
            sampling_rate,
            dsp: DspConfig {
                p1: detector.p1,
                ..DspConfig::default()
            },
            detector,
            model: model.into(),
            socket: None,
            pacing: Pacing::Realtime,
            backoff: Backoff::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate > 0.0 && self.sampling_rate.is_finite()) {
            return Err(Error::param(format!("sampling rate {} is invalid", self.sampling_rate)));
        }
        self.dsp.validate()?;
        self.detector.validate()
    }

    fn queue_capacity(&self) -> usize {
        ((4.0 * self.sampling_rate).ceil() as usize).max(1)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub samples: u64,
    pub frames: usize,
    pub messages: Vec<CommandMessage>,
    /// Messages that could not be written even after reconnecting.
    pub send_failures: usize,
    /// Frame emission to message written, over all messages.
    pub max_latency: Duration,
    pub mean_latency: Duration,
    pub elapsed: Duration,
    pub diagnostics: Diagnostics,
    /// Set when a live source dropped; the run still ends cleanly.
    pub source_error: Option<String>,
}

/// TCP writer that reconnects with bounded backoff.
pub struct Emitter {
    endpoint: String,
    backoff: Backoff,
    stream: Option<TcpStream>,
}

impl Emitter {
    /// Connects, retrying per `backoff`; fails if the endpoint never answers.
    pub fn connect(endpoint: &str, backoff: Backoff) -> Result<Self> {
        let mut e = Emitter {
            endpoint: endpoint.to_string(),
            backoff,
            stream: None,
        };
        e.reconnect()?;
        Ok(e)
    }

    fn reconnect(&mut self) -> Result<()> {
        let mut last = None;
        for (k, delay) in std::iter::once(Duration::ZERO).chain(self.backoff.delays()).enumerate() {
            thread::sleep(delay);
            match TcpStream::connect(&self.endpoint) {
                Ok(s) => {
                    s.set_nodelay(true)?;
                    self.stream = Some(s);
                    return Ok(());
                }
                Err(e) => {
                    log::debug!("connect {} attempt {}: {e}", self.endpoint, k + 1);
                    last = Some(e);
                }
            }
        }
        let e = last.expect("at least one attempt");
        Err(io::Error::new(e.kind(), format!("{}: {e}", self.endpoint)).into())
    }

    /// Writes one line; on failure reconnects once and retries.
    pub fn send(&mut self, msg: &CommandMessage) -> Result<()> {
        let line = msg.to_line();
        if let Some(s) = self.stream.as_mut() {
            if s.write_all(line.as_bytes()).and_then(|_| s.flush()).is_ok() {
                return Ok(());
            }
        }
        log::warn!("lost connection to {}, reconnecting", self.endpoint);
        self.stream = None;
        self.reconnect()?;
        let s = self.stream.as_mut().expect("connected");
        s.write_all(line.as_bytes())?;
        s.flush()?;
        Ok(())
    }
}

/// Reads the source named by `source`, loads the model and runs the pipeline.
pub fn run_pipeline(source: &SourceSpec, cfg: &PipelineConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let model = load(&cfg.model)?;
    let reader = source.open()?;
    let pacing = if source.is_live() { Pacing::Unpaced } else { cfg.pacing };
    let cfg = PipelineConfig { pacing, ..cfg.clone() };
    run_samples(SampleReader::new(reader, source.to_string()), &model, &cfg)
}

struct Emitted {
    frame: GestureFrame,
    first_index: u64,
    at: Instant,
}

/// Runs the three pipeline stages over an iterator of `(index, row)` samples.
///
/// Stage one conditions and detects, stage two classifies, stage three
/// writes messages. Bounded channels of `4 × sampling_rate` join them, so a
/// slow consumer throttles the source rather than dropping samples.
pub fn run_samples<I>(samples: I, model: &Model, cfg: &PipelineConfig) -> Result<RunSummary>
where
    I: Iterator<Item = Result<(u64, [f64; SENSOR_COUNT])>> + Send,
{
    cfg.validate()?;
    let mut emitter = match &cfg.socket {
        Some(ep) => Some(Emitter::connect(ep, cfg.backoff)?),
        None => None,
    };
    let cap = cfg.queue_capacity();
    let (frame_tx, frame_rx) = sync_channel::<Emitted>(cap);
    let (msg_tx, msg_rx) = sync_channel::<(CommandMessage, Instant)>(cap);
    let started = Instant::now();
    let rate = cfg.sampling_rate;

    let (front, classify, emit) = thread::scope(|scope| {
        let front = scope.spawn(move || -> Result<(u64, Diagnostics, Option<String>)> {
            let mut fe = FrontEnd::new(&cfg.dsp, &cfg.detector)?;
            let mut first = None;
            let mut source_error = None;
            for (n, item) in samples.enumerate() {
                let (index, row) = match item {
                    Ok(s) => s,
                    Err(Error::Io(e)) => {
                        log::warn!("source disconnected: {e}");
                        source_error = Some(e.to_string());
                        break;
                    }
                    Err(e) => return Err(e),
                };
                if cfg.pacing == Pacing::Realtime {
                    let due = started + Duration::from_secs_f64(n as f64 / rate);
                    let now = Instant::now();
                    if due > now {
                        thread::sleep(due - now);
                    }
                }
                let first_index = *first.get_or_insert(index);
                if let Some(frame) = fe.push(index, row)? {
                    log::debug!("frame {} [{}, {}]", frame.k, frame.start, frame.end);
                    let e = Emitted {
                        frame,
                        first_index,
                        at: Instant::now(),
                    };
                    if frame_tx.send(e).is_err() {
                        break;
                    }
                }
            }
            Ok((fe.samples(), fe.diagnostics().clone(), source_error))
        });

        let classify = scope.spawn(move || -> Result<usize> {
            let mut n = 0;
            for e in frame_rx {
                let x = frame_to_tensor(&e.frame, model.spec.frame_len)?;
                let p = model.forward(&x)?;
                let ms = ((e.frame.end - e.first_index) as f64 * 1000.0 / rate).round() as u64;
                let msg = CommandMessage::new(ms, e.frame.k, p.class_id, p.probability())?;
                n += 1;
                if msg_tx.send((msg, e.at)).is_err() {
                    break;
                }
            }
            Ok(n)
        });

        let emit = scope.spawn(move || -> (Vec<CommandMessage>, Vec<Duration>, usize) {
            let mut messages = Vec::new();
            let mut latencies = Vec::new();
            let mut failures = 0;
            for (msg, at) in msg_rx {
                log::info!(
                    "k={} t={}ms class={} ({}) p={:.3} -> {}",
                    msg.frame_index,
                    msg.timestamp_ms,
                    msg.class_id,
                    msg.label,
                    msg.probability,
                    msg.command
                );
                if let Some(em) = emitter.as_mut() {
                    if let Err(e) = em.send(&msg) {
                        log::error!("dropping message for frame {}: {e}", msg.frame_index);
                        failures += 1;
                    }
                }
                latencies.push(at.elapsed());
                messages.push(msg);
            }
            (messages, latencies, failures)
        });

        (
            front.join().expect("front-end thread panicked"),
            classify.join().expect("classifier thread panicked"),
            emit.join().expect("emitter thread panicked"),
        )
    });

    let (samples, diagnostics, source_error) = front?;
    let frames = classify?;
    let (messages, latencies, send_failures) = emit;
    let max_latency = latencies.iter().copied().max().unwrap_or_default();
    let mean_latency = if latencies.is_empty() {
        Duration::ZERO
    } else {
        latencies.iter().sum::<Duration>() / latencies.len() as u32
    };
    Ok(RunSummary {
        samples,
        frames,
        messages,
        send_failures,
        max_latency,
        mean_latency,
        elapsed: started.elapsed(),
        diagnostics,
        source_error,
    })
}

pub const CONSUME_HEADER: &str = "frame_index,timestamp_ms,class_id,label,command,probability";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConsumeSummary {
    pub received: usize,
    pub malformed: usize,
}

/// Prints one CSV row per valid message read from `reader`. Malformed lines
/// are logged and skipped.
pub fn consume_from<R: BufRead, W: Write>(reader: R, out: &mut W) -> Result<ConsumeSummary> {
    writeln!(out, "{CONSUME_HEADER}")?;
    out.flush()?;
    let mut summary = ConsumeSummary::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match CommandMessage::parse_line(&line) {
            Ok(m) => {
                writeln!(
                    out,
                    "{},{},{},{},{},{:.4}",
                    m.frame_index, m.timestamp_ms, m.class_id, m.label, m.command, m.probability
                )?;
                out.flush()?;
                summary.received += 1;
            }
            Err(e) => {
                log::warn!("line {}: {e}", n + 1);
                summary.malformed += 1;
            }
        }
    }
    Ok(summary)
}

/// Accepts a single connection on `listener` and consumes it until the
/// sender closes.
pub fn consume<W: Write>(listener: &TcpListener, out: &mut W) -> Result<ConsumeSummary> {
    let (stream, peer) = listener.accept()?;
    log::info!("connection from {peer}");
    consume_from(BufReader::new(stream), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_mapping() {
        assert_eq!(map_class_to_command(1).unwrap(), "Next page");
        assert_eq!(map_class_to_command(2).unwrap(), "Previous page");
        assert_eq!(map_class_to_command(8).unwrap(), "On");
        assert_eq!(map_class_to_command(10).unwrap(), "Volume up");
        assert!(matches!(map_class_to_command(11), Err(Error::Protocol(_))));
        assert!(matches!(map_class_to_command(0), Err(Error::Protocol(_))));
    }

    #[test]
    fn mismatched_triple_is_rejected() {
        let mut m = CommandMessage::new(10, 0, 3, 0.9).unwrap();
        m.command = "Scroll down".into();
        assert!(m.validate().is_err());
        assert!(CommandMessage::parse_line(&m.to_line()).is_err());
    }

    #[test]
    fn consume_skips_malformed_lines() {
        let good = CommandMessage::new(1200, 4, 1, 0.75).unwrap().to_line();
        let input = format!("{good}{{\"timestamp_ms\":1,\"frame\n{good}");
        let mut out = Vec::new();
        let s = consume_from(input.as_bytes(), &mut out).unwrap();
        assert_eq!(s, ConsumeSummary { received: 2, malformed: 1 });
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CONSUME_HEADER);
        assert_eq!(lines[1], "4,1200,1,Left to Right,Next page,0.7500");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn source_specs() {
        assert_eq!("file:a/b.csv".parse::<SourceSpec>().unwrap(), SourceSpec::File("a/b.csv".into()));
        assert_eq!("tcp:127.0.0.1:9".parse::<SourceSpec>().unwrap(), SourceSpec::Tcp("127.0.0.1:9".into()));
        assert_eq!("-".parse::<SourceSpec>().unwrap(), SourceSpec::Stdin);
        assert!("rec.csv".parse::<SourceSpec>().is_err());
        assert!("tcp:nohost".parse::<SourceSpec>().is_err());
    }

    #[test]
    fn backoff_is_bounded() {
        let b = Backoff::default();
        let d: Vec<_> = b.delays().collect();
        assert_eq!(d.len(), 5);
        assert_eq!(d[0], Duration::from_millis(50));
        assert!(d.iter().all(|&x| x <= b.max));
    }

    #[test]
    fn unreachable_socket_fails_after_retries() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let b = Backoff {
            attempts: 2,
            initial: Duration::from_millis(1),
            max: Duration::from_millis(2),
        };
        assert!(matches!(Emitter::connect(&format!("127.0.0.1:{port}"), b), Err(Error::Io(_))));
    }

    proptest! {
        #[test]
        fn wire_round_trip(ts in any::<u64>(), k in any::<u64>(), id in 1u8..=10, p in 0.0f64..=1.0) {
            let m = CommandMessage::new(ts, k, id, p).unwrap();
            let line = m.to_line();
            prop_assert!(line.ends_with('\n') && !line[..line.len() - 1].contains('\n'));
            prop_assert_eq!(CommandMessage::parse_line(&line).unwrap(), m);
        }
    }
}
