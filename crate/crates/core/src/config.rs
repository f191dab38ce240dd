//! `key=value` configuration files.
//!
//! Keys carry a module prefix (`detector.phi = 20`, `dsp.w_smooth = 5`).
//! Blank lines and lines starting with `#` are ignored. Later assignments
//! override earlier ones, which is how command-line flags are layered over a
//! file.
//!
//! ```
//! use capstream::config::{KeyValues, Settings};
//!
//! let kv = KeyValues::parse("detector.phi = 25\ndsp.w_smooth = 3\n", "inline").unwrap();
//! let s = Settings::new(kv).unwrap();
//! assert_eq!(s.detector(53.0).unwrap().phi, 25.0);
//! assert_eq!(s.dsp(53.0).unwrap().w_smooth, 3);
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::classifier::{CellKind, ModelSpec, TrainConfig};
use crate::detector::{DetectorConfig, MergePolicy};
use crate::dsp::{DspConfig, Scheme};
use crate::signal::{PhysicsParams, Scene};
use crate::{Error, Result, SENSOR_COUNT};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut kv = KeyValues::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::parse(format!("{source}:{}", n + 1), "expected key=value"));
            };
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::parse(format!("{source}:{}", n + 1), "empty key"));
            }
            kv.entries
                .insert(k.to_string(), (v.trim().to_string(), format!("{source}:{}", n + 1)));
        }
        Ok(kv)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), (value.into(), "command line".into()));
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, at)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::parse(at.clone(), format!("invalid value '{v}' for {key}"))),
        }
    }

    fn apply<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        let Some((v, at)) = self.entries.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::parse(at.clone(), format!("invalid list item '{}' for {key}", s.trim())))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, (v, _)) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

/// Every key the settings understand.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "physics.sampling_rate",
    "physics.dielectric_constant",
    "physics.plate_area",
    "physics.plate_half_pitch",
    "physics.coulomb_constant",
    "physics.hand_charge",
    "physics.plate_charge",
    "physics.distance_min",
    "physics.distance_max",
    "physics.capacity",
    "physics.discharge_period",
    "physics.discharge_enabled",
    "physics.idle_sigma",
    "physics.baselines",
    "scene.lead_in_secs",
    "scene.tail_secs",
    "scene.gap_min_secs",
    "scene.gap_max_secs",
    "dsp.scheme",
    "dsp.sensitivity",
    "dsp.w_smooth",
    "dsp.p1",
    "dsp.lpf_cutoff",
    "detector.phi",
    "detector.p1",
    "detector.p_s",
    "detector.p_e",
    "detector.p_safe",
    "detector.p_0a",
    "detector.p_0b",
    "detector.max_crossing_window",
    "detector.enforce_crossing_window",
    "detector.merge_policy",
    "detector.safety_adds_phi",
    "classifier.cell",
    "classifier.hidden",
    "classifier.dense",
    "classifier.frame_len",
    "train.epochs",
    "train.batch_size",
    "train.learning_rate",
    "train.validation_fraction",
    "train.init",
    "train.reduction",
];

/// Layered settings. Every accessor starts from the defaults for the given
/// sampling rate and applies whatever keys are present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    kv: KeyValues,
}

impl Settings {
    /// Rejects unknown keys and checks every value once up front.
    pub fn new(kv: KeyValues) -> Result<Self> {
        for k in kv.keys() {
            if !KNOWN_KEYS.contains(&k) {
                return Err(Error::param(format!("unknown configuration key '{k}'")));
            }
        }
        let s = Settings { kv };
        let rate = s.physics()?.sampling_rate;
        s.scene()?;
        s.dsp(rate)?;
        s.detector(rate)?;
        s.model_spec()?;
        s.train()?;
        Ok(s)
    }

    pub fn values(&self) -> &KeyValues {
        &self.kv
    }

    pub fn seed(&self) -> Result<u64> {
        Ok(self.kv.get("seed")?.unwrap_or(7))
    }

    pub fn physics(&self) -> Result<PhysicsParams> {
        let kv = &self.kv;
        let mut p = PhysicsParams::default();
        kv.apply("physics.sampling_rate", &mut p.sampling_rate)?;
        kv.apply("physics.dielectric_constant", &mut p.dielectric_constant)?;
        kv.apply("physics.plate_area", &mut p.plate_area)?;
        kv.apply("physics.plate_half_pitch", &mut p.plate_half_pitch)?;
        kv.apply("physics.coulomb_constant", &mut p.coulomb_constant)?;
        kv.apply("physics.hand_charge", &mut p.hand_charge)?;
        kv.apply("physics.plate_charge", &mut p.plate_charge)?;
        kv.apply("physics.distance_min", &mut p.distance_min)?;
        kv.apply("physics.distance_max", &mut p.distance_max)?;
        kv.apply("physics.capacity", &mut p.capacity)?;
        kv.apply("physics.discharge_period", &mut p.discharge_period)?;
        kv.apply("physics.discharge_enabled", &mut p.discharge_enabled)?;
        kv.apply("physics.idle_sigma", &mut p.idle_sigma)?;
        if let Some(b) = kv.list::<f64>("physics.baselines")? {
            p.baselines = b
                .try_into()
                .map_err(|_| Error::param(format!("physics.baselines needs {SENSOR_COUNT} values")))?;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn scene(&self) -> Result<Scene> {
        let mut s = Scene::default();
        self.kv.apply("scene.lead_in_secs", &mut s.lead_in_secs)?;
        self.kv.apply("scene.tail_secs", &mut s.tail_secs)?;
        self.kv.apply("scene.gap_min_secs", &mut s.gap_secs.0)?;
        self.kv.apply("scene.gap_max_secs", &mut s.gap_secs.1)?;
        if !(s.lead_in_secs >= 0.0 && s.tail_secs >= 0.0 && s.gap_secs.0 >= 0.0 && s.gap_secs.0 <= s.gap_secs.1) {
            return Err(Error::param("scene durations must be non-negative with gap_min <= gap_max"));
        }
        Ok(s)
    }

    pub fn dsp(&self, sampling_rate: f64) -> Result<DspConfig> {
        let kv = &self.kv;
        let mut d = DspConfig {
            p1: DetectorConfig::for_rate(sampling_rate).p1,
            ..DspConfig::default()
        };
        if let Some(s) = kv.raw("dsp.scheme") {
            d.scheme = Scheme::from_str(s)?;
        }
        if let Some(t) = kv.list::<f64>("dsp.sensitivity")? {
            d.sensitivity = match t.len() {
                1 => [t[0]; SENSOR_COUNT],
                SENSOR_COUNT => t.try_into().unwrap(),
                n => return Err(Error::param(format!("dsp.sensitivity needs 1 or 4 values, got {n}"))),
            };
        }
        kv.apply("dsp.w_smooth", &mut d.w_smooth)?;
        kv.apply("dsp.p1", &mut d.p1)?;
        kv.apply("dsp.lpf_cutoff", &mut d.lpf_cutoff)?;
        d.validate()?;
        Ok(d)
    }

    pub fn detector(&self, sampling_rate: f64) -> Result<DetectorConfig> {
        let kv = &self.kv;
        let mut d = DetectorConfig::for_rate(sampling_rate);
        kv.apply("detector.phi", &mut d.phi)?;
        kv.apply("detector.p1", &mut d.p1)?;
        kv.apply("detector.p_s", &mut d.p_s)?;
        kv.apply("detector.p_e", &mut d.p_e)?;
        kv.apply("detector.p_safe", &mut d.p_safe)?;
        kv.apply("detector.p_0a", &mut d.p_0a)?;
        kv.apply("detector.p_0b", &mut d.p_0b)?;
        kv.apply("detector.max_crossing_window", &mut d.max_crossing_window)?;
        kv.apply("detector.enforce_crossing_window", &mut d.enforce_crossing_window)?;
        if let Some(m) = kv.raw("detector.merge_policy") {
            d.merge_policy = MergePolicy::from_str(m)?;
        }
        kv.apply("detector.safety_adds_phi", &mut d.safety_adds_phi)?;
        d.validate()?;
        Ok(d)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let kv = &self.kv;
        let mut m = ModelSpec::default();
        if let Some(c) = kv.raw("classifier.cell") {
            m.cell = CellKind::from_str(c)?;
        }
        kv.apply("classifier.hidden", &mut m.hidden)?;
        if let Some(d) = kv.list::<usize>("classifier.dense")? {
            m.dense = d;
        }
        kv.apply("classifier.frame_len", &mut m.frame_len)?;
        m.validate()?;
        Ok(m)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let kv = &self.kv;
        let mut t = TrainConfig {
            seed: self.seed()?,
            ..TrainConfig::default()
        };
        kv.apply("train.epochs", &mut t.epochs)?;
        kv.apply("train.batch_size", &mut t.batch_size)?;
        kv.apply("train.learning_rate", &mut t.learning_rate)?;
        kv.apply("train.validation_fraction", &mut t.validation_fraction)?;
        kv.apply("train.init", &mut t.init)?;
        kv.apply("train.reduction", &mut t.reduction)?;
        t.validate()?;
        Ok(t)
    }
}
