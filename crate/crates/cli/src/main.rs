use std::fmt::Write as _;
use std::io::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use capstream::classifier::{self, evaluate, ModelSidecar};
use capstream::config::{KeyValues, Settings};
use capstream::dsp::{self, band_statistics, fft};
use capstream::io as cio;
use capstream::metrics::{detection_csv, detection_rate, extraction_from, frame_intervals, DetectionReport};
use capstream::pipeline::{detect_frames, training_examples};
use capstream::runtime::{self, Pacing, PipelineConfig, SourceSpec};
use capstream::signal::{generate_dataset, generate_session, RawStream};
use capstream::{Error, SENSOR_COUNT};
use clap::{Args, Parser, Subcommand};

/// Capacitive hand-gesture detection and classification.
#[derive(Parser, Debug)]
#[command(name = "capstream", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Global {
    /// RNG seed for generation, splits and initialisation [default: 7]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// key=value configuration file (e.g. detector.phi = 20) [default: none]
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable, applied after --config [default: none]
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a labelled synthetic dataset
    Simulate(SimulateArgs),
    /// Write the conditioned (processed) stream of a recording as CSV
    Process(ProcessArgs),
    /// Band statistics or the magnitude spectrum of a recording
    Fft(FftArgs),
    /// Run the detector over a recording and list the frames
    Detect(DetectArgs),
    /// Train a GRU or LSTM classifier on a dataset
    Train(TrainArgs),
    /// Classification report of a model on a dataset
    Eval(EvalArgs),
    /// Detection and frame extraction rates on a dataset
    EvalDetect(EvalDetectArgs),
    /// Stream samples through the background pipeline and emit commands
    Run(RunArgs),
    /// Receive commands on a TCP socket and print them
    Consume(ConsumeArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Number of gesture classes to include, 1..=10 (count)
    #[arg(long, default_value_t = 10)]
    classes: u8,
    /// Recordings per class (count)
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Write one continuous recording with this many gestures instead (count) [default: off]
    #[arg(long, value_name = "N")]
    session: Option<usize>,
    /// Sampling rate (Hz) [default: physics.sampling_rate, 76.5]
    #[arg(long, value_name = "HZ")]
    rate: Option<f64>,
    /// Output directory (required, no default)
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RecordingArgs {
    /// Recording CSV with header index,s1,s2,s3,s4
    recording: PathBuf,
    /// Sampling rate of the recording (Hz) [default: physics.sampling_rate, 76.5]
    #[arg(long, value_name = "HZ")]
    rate: Option<f64>,
}

#[derive(Args, Debug)]
struct ProcessArgs {
    #[command(flatten)]
    rec: RecordingArgs,
    /// Conditioning scheme: sequential-diff, weighted-sum, pairwise-diff, low-pass [default: dsp.scheme, sequential-diff]
    #[arg(long)]
    scheme: Option<String>,
}

#[derive(Args, Debug)]
struct FftArgs {
    #[command(flatten)]
    rec: RecordingArgs,
    /// Frequency bands as LOW:HIGH pairs (Hz); must lie below Nyquist
    #[arg(long, default_value = "1:100,100:200,200:300,300:400,400:500")]
    bands: String,
    /// Print the one-sided magnitude spectrum instead of band statistics [default: off]
    #[arg(long)]
    spectrum: bool,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[command(flatten)]
    rec: RecordingArgs,
    /// Also write every frame sample (offset-subtracted) to this CSV [default: none]
    #[arg(long, value_name = "FILE")]
    frames: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory written by `simulate` (required, no default)
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Model output path; a .json sidecar is written next to it (required, no default)
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Recurrent cell: gru or lstm [default: classifier.cell, gru]
    #[arg(long)]
    cell: Option<String>,
    /// Training epochs (count) [default: train.epochs, 60]
    #[arg(long)]
    epochs: Option<usize>,
    /// Examples per gradient step (count) [default: train.batch_size, 10]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Gradient-descent step size (dimensionless) [default: train.learning_rate, 0.005]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Classifier input length after resampling (samples) [default: classifier.frame_len, 64]
    #[arg(long)]
    frame_len: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset directory written by `simulate` (required, no default)
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Trained model file (required, no default)
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Print a readable table with the confusion matrix instead of CSV [default: off]
    #[arg(long)]
    table: bool,
}

#[derive(Args, Debug)]
struct EvalDetectArgs {
    /// Dataset directory written by `simulate` (required, no default)
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Minimum intersection-over-union for a correctly framed event (ratio)
    #[arg(long, default_value_t = 0.8)]
    iou_min: f64,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Sample source: file:PATH, tcp:HOST:PORT or stdin (required, no default)
    #[arg(long)]
    source: String,
    /// Trained model file (required, no default)
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Command consumer address (host:port)
    #[arg(long, default_value = "127.0.0.1:7171")]
    socket: String,
    /// Only log commands, do not connect to --socket [default: off]
    #[arg(long)]
    no_socket: bool,
    /// Replay files as fast as possible instead of at the sampling rate [default: off]
    #[arg(long)]
    unpaced: bool,
    /// Sampling rate of the source (Hz) [default: physics.sampling_rate, 76.5]
    #[arg(long, value_name = "HZ")]
    rate: Option<f64>,
}

#[derive(Args, Debug)]
struct ConsumeArgs {
    /// Address to listen on (host:port); port 0 picks a free port
    #[arg(long, default_value = "127.0.0.1:7171")]
    listen: String,
}

/// Marks errors in configuration or flags (exit code 2).
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow::Error::new(ConfigError(e.to_string()))
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(ce) = cause.downcast_ref::<Error>() {
            return match ce {
                Error::InvalidParameter(_) | Error::InvalidBand { .. } | Error::InvalidPair(_) | Error::InvalidWindow { .. } => 2,
                Error::Protocol(_) | Error::Diverged(_) => 1,
                _ => 3,
            };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    1
}

/// Config file, then --set, then --seed, then command-specific flags.
fn settings(g: &Global, flags: &[(&str, Option<String>)]) -> anyhow::Result<Settings> {
    let mut kv = match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            KeyValues::parse(&text, &p.display().to_string()).map_err(config_err)?
        }
        None => KeyValues::default(),
    };
    for s in &g.set {
        let (k, v) = s.split_once('=').ok_or_else(|| config_err(format!("--set expects KEY=VALUE, got '{s}'")))?;
        kv.set(k.trim(), v.trim());
    }
    if let Some(seed) = g.seed {
        kv.set("seed", seed.to_string());
    }
    for (k, v) in flags {
        if let Some(v) = v {
            kv.set(*k, v.clone());
        }
    }
    Settings::new(kv).map_err(config_err)
}

fn rate_of(s: &Settings, flag: Option<f64>) -> anyhow::Result<f64> {
    let r = match flag {
        Some(r) => r,
        None => s.physics().map_err(config_err)?.sampling_rate,
    };
    if !(r > 0.0 && r.is_finite()) {
        return Err(config_err(format!("sampling rate {r} must be positive")));
    }
    Ok(r)
}

fn read_stream(a: &RecordingArgs, s: &Settings) -> anyhow::Result<RawStream> {
    let rate = rate_of(s, a.rate)?;
    Ok(cio::read_recording(&a.recording, rate)?)
}

fn parse_bands(s: &str) -> anyhow::Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|b| {
            let (lo, hi) = b
                .split_once(':')
                .ok_or_else(|| config_err(format!("band '{b}' is not LOW:HIGH")))?;
            let lo: f64 = lo.trim().parse().map_err(|_| config_err(format!("bad band edge '{lo}'")))?;
            let hi: f64 = hi.trim().parse().map_err(|_| config_err(format!("bad band edge '{hi}'")))?;
            Ok((lo, hi))
        })
        .collect()
}

fn out(text: &str) -> anyhow::Result<()> {
    let mut o = std::io::stdout().lock();
    o.write_all(text.as_bytes())?;
    o.flush()?;
    Ok(())
}

fn simulate(g: &Global, a: &SimulateArgs) -> anyhow::Result<()> {
    let s = settings(g, &[("physics.sampling_rate", a.rate.map(|r| r.to_string()))])?;
    if !(1..=10).contains(&a.classes) {
        return Err(config_err("--classes must be in 1..=10"));
    }
    let params = s.physics()?;
    let scene = s.scene()?;
    let seed = s.seed()?;
    let recs = match a.session {
        Some(n) => vec![generate_session(seed, n, &params, &scene)?],
        None => generate_dataset(seed, a.per_class, &params, &scene)?
            .into_iter()
            .filter(|r| r.events.iter().all(|e| e.class_id <= a.classes))
            .collect(),
    };
    let mut manifest = s.values().clone();
    manifest.set("seed", seed.to_string());
    manifest.set("sampling_rate", params.sampling_rate.to_string());
    manifest.set("kind", if a.session.is_some() { "session" } else { "dataset" });
    cio::write_dataset(&a.out, &recs, &manifest)?;
    let events: usize = recs.iter().map(|r| r.events.len()).sum();
    eprintln!("wrote {} recordings with {events} gestures to {}", recs.len(), a.out.display());
    Ok(())
}

fn process(g: &Global, a: &ProcessArgs) -> anyhow::Result<()> {
    let s = settings(g, &[("dsp.scheme", a.scheme.clone())])?;
    let stream = read_stream(&a.rec, &s)?;
    let cfg = s.dsp(stream.sampling_rate).map_err(config_err)?;
    out(&cio::processed_to_csv(&dsp::process(&stream, &cfg)?))
}

fn fft_cmd(g: &Global, a: &FftArgs) -> anyhow::Result<()> {
    let s = settings(g, &[])?;
    let stream = read_stream(&a.rec, &s)?;
    let mut text = String::new();
    if a.spectrum {
        text.push_str("sensor,frequency_hz,magnitude\n");
        for c in 0..SENSOR_COUNT {
            let sp = fft(&stream.channels[c], stream.sampling_rate)?.one_sided();
            for (f, m) in sp.frequencies.iter().zip(&sp.magnitudes) {
                let _ = writeln!(text, "{},{f:.6},{m:.9}", format!("s{}", c + 1));
            }
        }
    } else {
        let bands = parse_bands(&a.bands)?;
        text.push_str("sensor,low_hz,high_hz,mean,std\n");
        for c in 0..SENSOR_COUNT {
            for b in band_statistics(&stream.channels[c], stream.sampling_rate, &bands)? {
                let _ = writeln!(text, "{},{},{},{:.9},{:.9}", format!("s{}", c + 1), b.band.0, b.band.1, b.mean, b.std);
            }
        }
    }
    out(&text)
}

fn detect(g: &Global, a: &DetectArgs) -> anyhow::Result<()> {
    let s = settings(g, &[])?;
    let stream = read_stream(&a.rec, &s)?;
    let rate = stream.sampling_rate;
    let res = detect_frames(&stream, &s.dsp(rate).map_err(config_err)?, &s.detector(rate).map_err(config_err)?)?;
    log::info!("{:?}", res.diagnostics);
    if let Some(p) = &a.frames {
        std::fs::write(p, cio::frames_to_csv(&res.frames)).with_context(|| format!("writing {}", p.display()))?;
    }
    out(&cio::frame_index_to_csv(&res.frames))
}

fn train_cmd(g: &Global, a: &TrainArgs) -> anyhow::Result<()> {
    let s = settings(
        g,
        &[
            ("classifier.cell", a.cell.clone()),
            ("train.epochs", a.epochs.map(|v| v.to_string())),
            ("train.batch_size", a.batch_size.map(|v| v.to_string())),
            ("train.learning_rate", a.learning_rate.map(|v| v.to_string())),
            ("classifier.frame_len", a.frame_len.map(|v| v.to_string())),
        ],
    )?;
    let spec = s.model_spec().map_err(config_err)?;
    let tcfg = s.train().map_err(config_err)?;
    let (manifest, recs) = cio::read_dataset(&a.data)?;
    let rate: f64 = manifest.get("sampling_rate")?.expect("read_dataset checks the rate");
    let (examples, stats) = training_examples(&recs, &s.dsp(rate).map_err(config_err)?, &s.detector(rate).map_err(config_err)?, spec.frame_len)?;
    eprintln!(
        "{} examples ({} from detector frames, {} from ground truth)",
        examples.len(),
        stats.detected,
        stats.fallback
    );
    let (model, history) = classifier::train(&spec, &examples, &tcfg)?;
    let sidecar = ModelSidecar {
        format_version: 1,
        spec: spec.clone(),
        train: Some(tcfg),
        val_accuracy: history.last().map(|e| e.val_accuracy),
    };
    classifier::save(&model, &a.out, Some(&sidecar))?;
    let mut text = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    for e in &history.epochs {
        let _ = writeln!(
            text,
            "{},{:.6},{:.6},{:.6},{:.6}",
            e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
        );
    }
    out(&text)
}

fn eval(g: &Global, a: &EvalArgs) -> anyhow::Result<()> {
    let s = settings(g, &[])?;
    let model = classifier::load(&a.model)?;
    let (manifest, recs) = cio::read_dataset(&a.data)?;
    let rate: f64 = manifest.get("sampling_rate")?.expect("read_dataset checks the rate");
    let (examples, _) = training_examples(&recs, &s.dsp(rate).map_err(config_err)?, &s.detector(rate).map_err(config_err)?, model.spec.frame_len)?;
    let report = evaluate(&model, &examples)?;
    if a.table {
        return out(&report.to_table());
    }
    let mut text = report.to_csv();
    let _ = write!(text, "\nmetric,value\naccuracy,{:.6}\n", report.accuracy);
    out(&text)
}

fn eval_detect(g: &Global, a: &EvalDetectArgs) -> anyhow::Result<()> {
    let s = settings(g, &[])?;
    let (manifest, recs) = cio::read_dataset(&a.data)?;
    let rate: f64 = manifest.get("sampling_rate")?.expect("read_dataset checks the rate");
    let (dcfg, det) = (s.dsp(rate).map_err(config_err)?, s.detector(rate).map_err(config_err)?);
    let mut reports = Vec::with_capacity(recs.len());
    for r in &recs {
        let res = detect_frames(&r.stream, &dcfg, &det)?;
        reports.push(detection_rate(&frame_intervals(&res.frames), &r.events));
    }
    let combined = DetectionReport::combine(&reports);
    let ext = extraction_from(&combined, a.iou_min);
    out(&detection_csv(&combined, &ext))
}

fn run(g: &Global, a: &RunArgs) -> anyhow::Result<()> {
    let s = settings(g, &[])?;
    let source: SourceSpec = a.source.parse().map_err(config_err)?;
    let rate = rate_of(&s, a.rate)?;
    let mut cfg = PipelineConfig::new(rate, &a.model);
    cfg.dsp = s.dsp(rate).map_err(config_err)?;
    cfg.detector = s.detector(rate).map_err(config_err)?;
    cfg.socket = (!a.no_socket).then(|| a.socket.clone());
    cfg.pacing = if a.unpaced { Pacing::Unpaced } else { Pacing::Realtime };
    let summary = runtime::run_pipeline(&source, &cfg)?;
    let mut text = String::new();
    for m in &summary.messages {
        text.push_str(&m.to_line());
    }
    out(&text)?;
    eprintln!(
        "{} samples, {} frames, {} messages, {} send failures, latency max {:.2} ms mean {:.2} ms, {:.2} s",
        summary.samples,
        summary.frames,
        summary.messages.len(),
        summary.send_failures,
        summary.max_latency.as_secs_f64() * 1e3,
        summary.mean_latency.as_secs_f64() * 1e3,
        summary.elapsed.as_secs_f64()
    );
    if let Some(e) = &summary.source_error {
        eprintln!("source ended early: {e}");
    }
    Ok(())
}

fn consume(a: &ConsumeArgs) -> anyhow::Result<()> {
    let listener = TcpListener::bind(&a.listen).with_context(|| format!("binding {}", a.listen))?;
    eprintln!("listening on {}", listener.local_addr()?);
    let mut o = std::io::stdout().lock();
    let summary = runtime::consume(&listener, &mut o)?;
    eprintln!("{} messages, {} malformed", summary.received, summary.malformed);
    Ok(())
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match &cli.cmd {
        Cmd::Simulate(a) => simulate(g, a),
        Cmd::Process(a) => process(g, a),
        Cmd::Fft(a) => fft_cmd(g, a),
        Cmd::Detect(a) => detect(g, a),
        Cmd::Train(a) => train_cmd(g, a),
        Cmd::Eval(a) => eval(g, a),
        Cmd::EvalDetect(a) => eval_detect(g, a),
        Cmd::Run(a) => run(g, a),
        Cmd::Consume(a) => consume(a),
    }
}

fn ensure_exists(p: &Path) -> anyhow::Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(anyhow!(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: file not found", p.display())
        )))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAPSTREAM_LOG", "warn")).init();
    let cli = Cli::parse();
    let checked = match &cli.cmd {
        Cmd::Process(a) => ensure_exists(&a.rec.recording),
        Cmd::Fft(a) => ensure_exists(&a.rec.recording),
        Cmd::Detect(a) => ensure_exists(&a.rec.recording),
        _ => Ok(()),
    };
    match checked.and_then(|_| dispatch(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
