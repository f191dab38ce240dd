//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use capstream::classifier::{self, loss, save, CellKind, Model, ModelSpec, TrainConfig, TrainHistory};
use capstream::classifier::FrameTensor;
use capstream::detector::{initialize_offsets, update_threshold, DetectorConfig};
use capstream::dsp::{self, fft, sequential_difference, weighted_smoothed_difference, DspConfig, Scheme};
use capstream::io::{write_labels, write_recording};
use capstream::metrics::{detection_rate, extraction_from, frame_intervals};
use capstream::pipeline::{detect_frames, training_examples, FrontEnd};
use capstream::runtime::{run_samples, Pacing, PipelineConfig};
use capstream::signal::{
    generate_dataset, generate_idle, generate_sequence, generate_session, GestureClass, GestureTrajectory,
    LabeledRecording, PhysicsParams, RawStream, Scene,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RATE: f64 = 53.0;

// Class id -> UI command, transcribed independently of the library table.
const COMMAND_TABLE: [(u8, &str); 10] = [
    (1, "Next page"),
    (2, "Previous page"),
    (3, "Scroll up"),
    (4, "Scroll down"),
    (5, "Previous 2 pages"),
    (6, "Next 2 pages"),
    (7, "Off"),
    (8, "On"),
    (9, "Volume down"),
    (10, "Volume up"),
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn params() -> PhysicsParams {
    PhysicsParams {
        sampling_rate: RATE,
        ..PhysicsParams::default()
    }
}

fn configs() -> (DspConfig, DetectorConfig) {
    let det = DetectorConfig::for_rate(RATE);
    (
        DspConfig {
            p1: det.p1,
            ..DspConfig::default()
        },
        det,
    )
}

// 30 randomized performances of every class in shuffled order.
fn benchmark_recording(seed: u64) -> LabeledRecording {
    let p = params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories: Vec<GestureTrajectory> = GestureClass::ALL
        .iter()
        .flat_map(|&c| (0..30).map(move |_| c))
        .collect::<Vec<_>>()
        .into_iter()
        .map(|c| GestureTrajectory::randomized(c, &p, &mut rng))
        .collect();
    trajectories.shuffle(&mut rng);
    generate_sequence(seed, &p, &Scene::default(), &trajectories).unwrap()
}

fn detection_and_extraction() -> (Outcome, Outcome) {
    let t = Instant::now();
    let rec = benchmark_recording(11);
    let (dsp, det) = configs();
    let out = detect_frames(&rec.stream, &dsp, &det).unwrap();
    let report = detection_rate(&frame_intervals(&out.frames), &rec.events);
    let ext = extraction_from(&report, 0.8);
    let secs = t.elapsed().as_secs_f64();
    let in_time = secs <= 60.0;
    (
        outcome(
            report.detection_rate >= 0.95 && report.total_events == 300 && in_time,
            format!(
                "detection rate {:.4} >= 0.95 over {} events, {:.2} s <= 60 s",
                report.detection_rate, report.total_events, secs
            ),
        ),
        outcome(
            ext.extraction_rate >= 0.95 && in_time,
            format!(
                "extraction rate {:.4} >= 0.95 at iou_min 0.8 ({} contained, {} iou-passed of {})",
                ext.extraction_rate, ext.contained, ext.iou_passed, ext.total_detected
            ),
        ),
    )
}

fn train_cell(cell: CellKind) -> (Model, TrainHistory, f64) {
    let t = Instant::now();
    let (dsp, det) = configs();
    let data = generate_dataset(7, 100, &params(), &Scene::default()).unwrap();
    let spec = ModelSpec {
        cell,
        ..ModelSpec::default()
    };
    let (examples, _) = training_examples(&data, &dsp, &det, spec.frame_len).unwrap();
    assert_eq!(examples.len(), 1000);
    let (model, history) = classifier::train(&spec, &examples, &TrainConfig::default()).unwrap();
    (model, history, t.elapsed().as_secs_f64())
}

fn classifier_accuracy() -> (Outcome, Model) {
    let cfg = TrainConfig::default();
    let spec = ModelSpec::default();
    assert_eq!((spec.hidden, spec.dense.as_slice()), (20, &[32, 64, 32, 10][..]));
    assert_eq!((cfg.epochs, cfg.batch_size, cfg.learning_rate), (60, 10, 0.005));

    let (gru, gh, gs) = train_cell(CellKind::Gru);
    let (_, lh, ls) = train_cell(CellKind::Lstm);
    let g = gh.last().unwrap();
    let l = lh.last().unwrap();
    let trend = |h: &TrainHistory| h.epochs[0].train_loss > h.last().unwrap().train_loss;
    let pass = g.val_accuracy >= 0.95 && l.val_accuracy >= 0.93 && gs <= 600.0 && ls <= 600.0;
    let detail = format!(
        "GRU val acc {:.4} >= 0.95 ({:.1} s), LSTM val acc {:.4} >= 0.93 ({:.1} s), limit 600 s each; \
         train loss GRU {:.3} -> {:.3}, LSTM {:.3} -> {:.3} (decreasing: {})",
        g.val_accuracy,
        gs,
        l.val_accuracy,
        ls,
        gh.epochs[0].train_loss,
        g.train_loss,
        lh.epochs[0].train_loss,
        l.train_loss,
        trend(&gh) && trend(&lh)
    );
    (outcome(pass, detail), gru)
}

fn gradient_oracle() -> Outcome {
    let t = Instant::now();
    let spec = ModelSpec {
        cell: CellKind::Gru,
        input: 4,
        hidden: 3,
        dense: vec![2],
        frame_len: 5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = Model::init(spec, &mut rng).unwrap();
    let x = FrameTensor::new(5, 4, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for target in 0..2 {
        let mut grads = m.zero_grads();
        m.gradient(&x, target, &mut grads).unwrap();
        let h = 1e-5;
        for (pi, p) in m.params.iter().enumerate() {
            for k in 0..p.data.len() {
                let mut plus = m.clone();
                plus.params[pi].data[k] += h;
                let mut minus = m.clone();
                minus.params[pi].data[k] -= h;
                let lp = loss(&plus.forward(&x).unwrap().probabilities, target);
                let lm = loss(&minus.forward(&x).unwrap().probabilities, target);
                let fd = (lp - lm) / (2.0 * h);
                let an = grads[pi].data[k];
                worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-8));
                count += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && secs <= 5.0,
        format!("max relative error {worst:.2e} <= 1e-4 over {count} partials, {secs:.3} s <= 5 s"),
    )
}

fn naive_dft_magnitudes(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &v) in x.iter().enumerate() {
                // reduce k*j mod n before scaling so the angle stays exact
                let a = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            re.hypot(im)
        })
        .collect()
}

fn fft_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let len: usize = rng.random_range(2..=1024);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-100.0..100.0)).collect();
        let got = fft(&x, 1.0).unwrap().magnitudes;
        let mut padded = x.clone();
        padded.resize(len.next_power_of_two(), 0.0);
        let want = naive_dft_magnitudes(&padded);
        let scale = want.iter().cloned().fold(0.0, f64::max);
        let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        worst = worst.max(err);
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs <= 10.0,
        format!("max relative error {worst:.2e} <= 1e-9 over 200 signals, {secs:.2} s <= 10 s"),
    )
}

fn threshold_floor() -> Outcome {
    let (dsp, det) = configs();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut checked, mut skipped, mut violations) = (0, 0, 0);
    while checked < 1000 {
        let idle = generate_idle(rng.random(), det.p_0a + 3 * det.p1, &params()).unwrap();
        let p = dsp::process(&idle, &dsp).unwrap();
        let states = initialize_offsets(&p.channels, &det).unwrap();
        for (ch, st) in p.channels.iter().zip(&states) {
            if checked == 1000 {
                break;
            }
            let at = rng.random_range(det.p_0a..=ch.len() - det.p1);
            let window = &ch[at..at + det.p1];
            let centred = window.iter().map(|v| v - st.offset).sum::<f64>() / det.p1 as f64;
            if centred < 0.0 {
                skipped += 1;
                continue;
            }
            let delta = update_threshold(window, st.offset, det.phi, det.p1).unwrap();
            if delta < det.phi {
                violations += 1;
            }
            checked += 1;
        }
    }
    outcome(
        violations == 0,
        format!("{violations} windows with delta < phi among {checked} ({skipped} negative-mean windows skipped)"),
    )
}

fn idle_silence(model: &Model) -> Outcome {
    let n = (600.0 * RATE) as usize;
    let idle = generate_idle(8, n, &params()).unwrap();
    let (dsp, det) = configs();
    let cfg = PipelineConfig {
        dsp,
        detector: det,
        pacing: Pacing::Unpaced,
        ..PipelineConfig::new(RATE, "unused")
    };
    let summary = run_samples((0..n).map(|k| Ok((idle.index_at(k), idle.row(k)))), model, &cfg).unwrap();
    outcome(
        summary.frames == 0 && summary.messages.is_empty() && summary.samples == n as u64,
        format!("{} frames, {} messages over {} samples (600 s)", summary.frames, summary.messages.len(), summary.samples),
    )
}

fn end_to_end(model: &Model) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let rec = generate_session(20, 20, &params(), &Scene::default()).unwrap();
    let data = dir.path().join("session.csv");
    let model_path = dir.path().join("gru.bin");
    write_recording(&data, &rec.stream).unwrap();
    write_labels(&dir.path().join("session.labels.csv"), &rec.events).unwrap();
    save(model, &model_path, None).unwrap();

    let bin = env!("CARGO_BIN_EXE_capstream");
    let mut consumer = Command::new(bin)
        .args(["consume", "--listen", "127.0.0.1:0"])
        .env("CAPSTREAM_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(consumer.stderr.take().unwrap());
    let mut line = String::new();
    err.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("consumer announces its address").to_string();

    let run = Command::new(bin)
        .args(["run", "--source", &format!("file:{}", data.display())])
        .args(["--model", model_path.to_str().unwrap(), "--socket", &addr, "--unpaced", "--rate", "53"])
        .env("CAPSTREAM_LOG", "warn")
        .output()
        .unwrap();
    let mut printed = String::new();
    consumer.stdout.take().unwrap().read_to_string(&mut printed).unwrap();
    let consumed_ok = consumer.wait().unwrap().success();
    if !run.status.success() || !consumed_ok {
        return outcome(false, format!("run failed: {}", String::from_utf8_lossy(&run.stderr).trim()));
    }

    // frame k -> ground-truth event, from an offline pass over the same stream
    let (dsp, det) = configs();
    let frames = detect_frames(&rec.stream, &dsp, &det).unwrap().frames;
    let report = detection_rate(&frame_intervals(&frames), &rec.events);
    let event_of = |k: u64| {
        let iv = frames.iter().find(|f| f.k == k)?.interval();
        report.matches.iter().position(|m| m.frame == Some(iv))
    };

    let rows: Vec<Vec<&str>> = printed.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let mut hits = vec![0usize; rec.events.len()];
    let (mut correct, mut table_ok, mut orphans) = (0, true, 0);
    for r in &rows {
        let k: u64 = r[0].parse().unwrap();
        let class: u8 = r[2].parse().unwrap();
        table_ok &= COMMAND_TABLE.iter().any(|&(id, cmd)| id == class && cmd == r[4]);
        match event_of(k) {
            Some(e) => {
                hits[e] += 1;
                correct += (rec.events[e].class_id == class) as usize;
            }
            None => orphans += 1,
        }
    }
    let once = hits.iter().all(|&h| h == 1) && orphans == 0 && rows.len() == rec.events.len();
    let acc = correct as f64 / rec.events.len() as f64;
    outcome(
        once && acc >= 0.9 && table_ok,
        format!(
            "{} messages for {} events (exactly once: {once}), {correct}/{} correct ({:.0}% >= 90%), command strings exact: {table_ok}",
            rows.len(),
            rec.events.len(),
            rec.events.len(),
            acc * 100.0
        ),
    )
}

fn reduction_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = DspConfig {
        sensitivity: [0.5; 4],
        w_smooth: 1,
        scheme: Scheme::SequentialDifference,
        ..DspConfig::default()
    };
    let mut mismatches = 0;
    for _ in 0..100 {
        let len: usize = rng.random_range(2..2000);
        let channels: [Vec<f64>; 4] = std::array::from_fn(|_| (0..len).map(|_| rng.random_range(0.0..1024.0)).collect());
        let s = RawStream::new(RATE, rng.random_range(0..1000), channels).unwrap();
        let a = weighted_smoothed_difference(&s, &cfg).unwrap();
        let b = sequential_difference(&s).unwrap();
        if a.channels.iter().zip(&b).any(|(x, y)| x != y) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of 100 random streams differ (exact comparison)"))
}

fn throughput() -> Outcome {
    let p = PhysicsParams::default();
    let rec = generate_session(12, 200, &p, &Scene::default()).unwrap();
    let det = DetectorConfig::for_rate(p.sampling_rate);
    let dsp = DspConfig {
        p1: det.p1,
        ..DspConfig::default()
    };
    let rows: Vec<(u64, [f64; 4])> = (0..rec.stream.len()).map(|k| (rec.stream.index_at(k), rec.stream.row(k))).collect();
    let mut best = Duration::MAX;
    let mut frames = 0;
    for _ in 0..3 {
        let mut fe = FrontEnd::new(&dsp, &det).unwrap();
        let t = Instant::now();
        frames = 0;
        for &(i, r) in &rows {
            frames += fe.push(i, r).unwrap().is_some() as usize;
        }
        best = best.min(t.elapsed());
    }
    let rate = rows.len() as f64 / best.as_secs_f64();
    outcome(
        rate >= 50_000.0,
        format!("{rate:.0} samples/s/sensor >= 50000 ({} samples, {frames} frames, best of 3)", rows.len()),
    )
}

fn main() {
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut report = |n: u8, name: &'static str, o: Outcome| {
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, n, o.detail);
        results.push((n, name, o));
    };

    let (det, ext) = detection_and_extraction();
    report(1, "detection rate", det);
    report(2, "frame extraction rate", ext);
    let (acc, gru) = classifier_accuracy();
    report(3, "classifier accuracy", acc);
    report(4, "gradient oracle", gradient_oracle());
    report(5, "fft oracle", fft_oracle());
    report(6, "threshold floor", threshold_floor());
    report(7, "idle silence", idle_silence(&gru));
    report(8, "end-to-end replay", end_to_end(&gru));
    report(9, "difference scheme reduction", reduction_consistency());
    report(10, "throughput", throughput());

    let failed: Vec<u8> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all 10 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
