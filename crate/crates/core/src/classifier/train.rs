use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use std::fmt;
use std::str::FromStr;

use super::network::{argmax, loss, Init, Model, ModelSpec, Param};
use super::FrameTensor;
use crate::metrics::ClassificationReport;
use crate::{Error, Result};

/// A labelled tensor; `label` is a 1-based class id.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tensor: FrameTensor,
    pub label: u8,
}

/// How per-example losses in a batch combine into the loss being descended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    /// Sum over the batch; the step is `η · Σ ∇L`.
    #[default]
    Sum,
    /// Mean over the batch; the step is `η · Σ ∇L / batch`.
    Mean,
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            other => Err(Error::param(format!("unknown reduction '{other}', expected sum or mean"))),
        }
    }
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub init: Init,
    #[serde(default)]
    pub reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 10,
            learning_rate: 0.005,
            validation_fraction: 0.2,
            seed: 7,
            init: Init::default(),
            reduction: Reduction::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::param("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param(format!("learning rate {} is invalid", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::param("validation_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss and accuracy over the batches of the epoch, measured before
    /// each update.
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// After the epoch; zero when there is no validation split.
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub train_size: usize,
    pub val_size: usize,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// Seeded stratified split; returns `(train, validation)` positions. Each
/// class contributes `round(fraction · n)` examples to validation, keeping at
/// least one for training.
pub fn stratified_split(labels: &[u8], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64 * fraction).round() as usize).min(idx.len() - 1);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn batch_gradient(model: &Model, batch: &[&Example]) -> Result<(Vec<Param>, f64, usize)> {
    let per: Vec<Result<(Vec<Param>, f64, bool)>> = batch
        .par_iter()
        .map(|ex| {
            let mut g = model.zero_grads();
            let (l, ok) = model.gradient(&ex.tensor, ex.label as usize - 1, &mut g)?;
            Ok((g, l, ok))
        })
        .collect();
    let mut total = model.zero_grads();
    let mut loss_sum = 0.0;
    let mut correct = 0;
    // summed in batch order so results do not depend on thread scheduling
    for r in per {
        let (g, l, ok) = r?;
        for (t, p) in total.iter_mut().zip(g) {
            for (a, b) in t.data.iter_mut().zip(p.data) {
                *a += b;
            }
        }
        loss_sum += l;
        correct += ok as usize;
    }
    Ok((total, loss_sum, correct))
}

fn check_labels(model: &Model, batch: &[&Example]) -> Result<()> {
    let n = model.spec.classes();
    for ex in batch {
        if ex.label == 0 || ex.label as usize > n {
            return Err(Error::InvalidInput(format!("label {} outside 1..={n}", ex.label)));
        }
    }
    Ok(())
}

fn step(model: &mut Model, batch: &[&Example], learning_rate: f64, reduction: Reduction) -> Result<(f64, usize)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    check_labels(model, batch)?;
    let (grads, loss_sum, correct) = batch_gradient(model, batch)?;
    let scale = match reduction {
        Reduction::Sum => learning_rate,
        Reduction::Mean => learning_rate / batch.len() as f64,
    };
    for (p, g) in model.params.iter_mut().zip(&grads) {
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("non-finite gradient".into()));
        }
        for (w, d) in p.data.iter_mut().zip(&g.data) {
            *w -= scale * d;
        }
    }
    Ok((loss_sum / batch.len() as f64, correct))
}

/// One gradient-descent step on the batch loss. Returns the mean loss
/// before the update.
pub fn backward_and_update(model: &mut Model, batch: &[Example], learning_rate: f64, reduction: Reduction) -> Result<f64> {
    let refs: Vec<&Example> = batch.iter().collect();
    step(model, &refs, learning_rate, reduction).map(|(l, _)| l)
}

/// Mean loss and accuracy without updating.
pub fn assess(model: &Model, data: &[&Example]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let out: Vec<Result<(f64, bool)>> = data
        .par_iter()
        .map(|ex| {
            let p = model.forward(&ex.tensor)?;
            let t = ex.label as usize - 1;
            Ok((loss(&p.probabilities, t), argmax(&p.probabilities) == t))
        })
        .collect();
    let mut l = 0.0;
    let mut c = 0usize;
    for r in out {
        let (li, ok) = r?;
        l += li;
        c += ok as usize;
    }
    Ok((l / data.len() as f64, c as f64 / data.len() as f64))
}

/// Trains a fresh model on a stratified split of `data`.
pub fn train(spec: &ModelSpec, data: &[Example], cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    for ex in data {
        if ex.tensor.channels != spec.input {
            return Err(Error::Model(format!(
                "tensor has {} channels, model expects {}",
                ex.tensor.channels, spec.input
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::init_with(spec.clone(), cfg.init, &mut rng)?;
    train_from(model, &mut rng, data, cfg)
}

/// Continues training an existing model. `rng` drives the epoch shuffles.
pub fn train_from<R: rand::Rng>(mut model: Model, rng: &mut R, data: &[Example], cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let all: Vec<&Example> = data.iter().collect();
    check_labels(&model, &all)?;

    let labels: Vec<u8> = data.iter().map(|e| e.label).collect();
    let (mut train_idx, val_idx) = stratified_split(&labels, cfg.validation_fraction, cfg.seed ^ 0x5eed);
    let val: Vec<&Example> = val_idx.iter().map(|&i| &data[i]).collect();
    let mut history = TrainHistory {
        epochs: Vec::with_capacity(cfg.epochs),
        train_size: train_idx.len(),
        val_size: val.len(),
    };

    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let (l, c) = step(&mut model, &batch, cfg.learning_rate, cfg.reduction)?;
            loss_sum += l * batch.len() as f64;
            correct += c;
        }
        let n = train_idx.len() as f64;
        let (val_loss, val_accuracy) = assess(&model, &val)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "epoch {epoch:>3}  loss {:.4}  acc {:.4}  val_loss {:.4}  val_acc {:.4}",
            stats.train_loss,
            stats.train_accuracy,
            stats.val_loss,
            stats.val_accuracy
        );
        if !stats.train_loss.is_finite() {
            return Err(Error::Diverged(format!("loss is {} at epoch {epoch}", stats.train_loss)));
        }
        history.epochs.push(stats);
    }
    Ok((model, history))
}

/// Accuracy, per-class scores and confusion matrix over a labelled set.
pub fn evaluate(model: &Model, data: &[Example]) -> Result<ClassificationReport> {
    let preds: Vec<Result<u8>> = data.par_iter().map(|ex| model.forward(&ex.tensor).map(|p| p.class_id)).collect();
    let predicted = preds.into_iter().collect::<Result<Vec<u8>>>()?;
    let truth: Vec<u8> = data.iter().map(|e| e.label).collect();
    ClassificationReport::from_predictions(&truth, &predicted, model.spec.classes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::CellKind;
    use rand::Rng;

    fn small_spec() -> ModelSpec {
        ModelSpec {
            cell: CellKind::Gru,
            input: 4,
            hidden: 5,
            dense: vec![6, 3],
            frame_len: 12,
        }
    }

    // Three classes that differ by which channel carries a bump.
    fn toy_set(n: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = (i % 3) as u8 + 1;
                let mut v = vec![0.0; 12 * 4];
                for t in 0..12 {
                    for c in 0..4 {
                        v[t * 4 + c] = rng.random_range(-0.2..0.2);
                    }
                    if (4..8).contains(&t) {
                        v[t * 4 + label as usize - 1] += 2.0;
                    }
                }
                Example {
                    tensor: FrameTensor::new(12, 4, v).unwrap(),
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = Model::init(small_spec(), &mut rng).unwrap();
        let before = m.clone();
        backward_and_update(&mut m, &toy_set(6, 2), 0.0, Reduction::Sum).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn one_step_lowers_loss_on_that_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = Model::init(small_spec(), &mut rng).unwrap();
        let ex = toy_set(1, 4);
        let before = backward_and_update(&mut m, &ex, 0.01, Reduction::Mean).unwrap();
        let (after, _) = assess(&m, &[&ex[0]]).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn sum_step_is_mean_step_scaled_by_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = Model::init(small_spec(), &mut rng).unwrap();
        let batch = toy_set(4, 9);
        let (mut a, mut b) = (m.clone(), m);
        backward_and_update(&mut a, &batch, 0.01, Reduction::Sum).unwrap();
        backward_and_update(&mut b, &batch, 0.04, Reduction::Mean).unwrap();
        for (pa, pb) in a.params.iter().zip(&b.params) {
            for (x, y) in pa.data.iter().zip(&pb.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn split_is_stratified_and_seeded() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 10) as u8 + 1).collect();
        let (t, v) = stratified_split(&labels, 0.2, 9);
        assert_eq!((t.len(), v.len()), (80, 20));
        for c in 1..=10u8 {
            assert_eq!(v.iter().filter(|&&i| labels[i] == c).count(), 2);
        }
        assert_eq!(stratified_split(&labels, 0.2, 9), (t, v));
    }

    #[test]
    fn learns_toy_problem_deterministically() {
        let data = toy_set(90, 5);
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 5,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let (m, h) = train(&small_spec(), &data, &cfg).unwrap();
        assert!(h.last().unwrap().val_accuracy >= 0.9, "{:?}", h.last());
        let (m2, h2) = train(&small_spec(), &data, &cfg).unwrap();
        assert_eq!(h, h2);
        assert_eq!(m, m2);
    }

    #[test]
    fn single_class_set() {
        let data: Vec<Example> = toy_set(30, 6).into_iter().filter(|e| e.label == 2).collect();
        let cfg = TrainConfig {
            epochs: 60,
            learning_rate: 0.2,
            ..TrainConfig::default()
        };
        let (m, h) = train(&small_spec(), &data, &cfg).unwrap();
        let first = h.epochs[0].train_loss;
        let last = h.last().unwrap().train_loss;
        assert!(last < 0.1 * first, "{first} -> {last}");
        assert_eq!(evaluate(&m, &data).unwrap().accuracy, 1.0);
    }

    #[test]
    fn empty_and_bad_labels() {
        assert!(matches!(
            train(&small_spec(), &[], &TrainConfig::default()),
            Err(Error::InvalidInput(_))
        ));
        let mut data = toy_set(3, 1);
        data[0].label = 9;
        assert!(train(&small_spec(), &data, &TrainConfig::default()).is_err());
    }
}
