//! Parameter storage, forward pass and backpropagation through time.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::FrameTensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    /// Gate blocks stacked in the recurrent matrices.
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::param(format!("unknown cell '{other}', expected gru or lstm"))),
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        })
    }
}

/// Network shape. The last dense width is the number of classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub cell: CellKind,
    pub input: usize,
    pub hidden: usize,
    pub dense: Vec<usize>,
    /// Tensor length the model was trained on.
    pub frame_len: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            cell: CellKind::Gru,
            input: 4,
            hidden: 20,
            dense: vec![32, 64, 32, 10],
            frame_len: 64,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 || self.frame_len == 0 {
            return Err(Error::param("input, hidden and frame_len must be positive"));
        }
        if self.dense.is_empty() || self.dense.contains(&0) {
            return Err(Error::param("dense widths must be non-empty and positive"));
        }
        if self.classes() < 2 {
            return Err(Error::param("need at least two output classes"));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        *self.dense.last().unwrap_or(&0)
    }

    /// `(rows, cols)` of every parameter tensor in storage order.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let g = self.cell.gates() * self.hidden;
        let mut s = vec![(g, self.input), (g, self.hidden), (g, 1)];
        let mut fan_in = self.hidden;
        for &w in &self.dense {
            s.push((w, fan_in));
            s.push((w, 1));
            fan_in = w;
        }
        s
    }

    pub fn parameter_count(&self) -> usize {
        self.shapes().iter().map(|(r, c)| r * c).sum()
    }
}

/// Weight initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Uniform in ±1/sqrt(fan_in) for every weight and bias.
    FanIn,
    /// Glorot-uniform kernels, orthogonal recurrent blocks, zero biases
    /// (LSTM forget-gate bias 1).
    #[default]
    Glorot,
}

impl FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fan-in" => Ok(Init::FanIn),
            "glorot" => Ok(Init::Glorot),
            other => Err(Error::param(format!("unknown init '{other}', expected fan-in or glorot"))),
        }
    }
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Init::FanIn => "fan-in",
            Init::Glorot => "glorot",
        })
    }
}

/// Random orthogonal n x n matrix (Gram-Schmidt on Gaussian rows).
fn orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(u) {
                *a -= d * b;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            q.push(v);
        }
    }
    q.concat()
}

/// Row-major matrix (a column vector when `cols == 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Param {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// out = self · x
    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// out += selfᵀ · d
    fn matvec_t_add(&self, d: &[f64], out: &mut [f64]) {
        for (r, &dr) in d.iter().enumerate() {
            if dr == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * dr;
            }
        }
    }

    /// self += d · xᵀ
    fn outer_add(&mut self, d: &[f64], x: &[f64]) {
        for (r, &dr) in d.iter().enumerate() {
            if dr == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, xv) in row.iter_mut().zip(x) {
                *w += dr * xv;
            }
        }
    }

    fn add_vec(&mut self, d: &[f64]) {
        for (b, v) in self.data.iter_mut().zip(d) {
            *b += v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    /// Recurrent W, U, b, then (W, b) per dense layer.
    pub params: Vec<Param>,
}

/// Class prediction with its probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_id: u8,
    pub probabilities: Vec<f64>,
}

impl Prediction {
    pub fn probability(&self) -> f64 {
        self.probabilities[self.class_id as usize - 1]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of a probability vector against a class position.
pub fn loss(probabilities: &[f64], target: usize) -> f64 {
    -probabilities[target].max(1e-12).ln()
}

/// Per-step values kept for the backward pass.
enum StepCache {
    Gru { z: Vec<f64>, r: Vec<f64>, n: Vec<f64>, un: Vec<f64> },
    Lstm { i: Vec<f64>, f: Vec<f64>, g: Vec<f64>, o: Vec<f64>, c: Vec<f64>, tc: Vec<f64> },
}

struct Trace {
    /// Hidden states h_0 .. h_T.
    h: Vec<Vec<f64>>,
    steps: Vec<StepCache>,
    /// Dense pre-activations and activations; `acts[0]` is h_T.
    pre: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl Model {
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec.shapes().into_iter().map(|(r, c)| Param::zeros(r, c)).collect();
        Ok(Model { spec, params })
    }

    /// Uniform in ±1/√fan_in. The recurrent block uses the hidden width as
    /// its fan-in, each dense layer its input width.
    /// Random weights with the default [`Init`] scheme.
    pub fn init<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        Model::init_with(spec, Init::default(), rng)
    }

    pub fn init_with<R: Rng + ?Sized>(spec: ModelSpec, init: Init, rng: &mut R) -> Result<Self> {
        let mut m = Model::zeros(spec)?;
        match init {
            Init::FanIn => {
                for k in 0..m.params.len() {
                    let fan_in = match k {
                        0..=2 => m.spec.hidden,
                        k if k % 2 == 1 => m.params[k].cols,
                        k => m.params[k - 1].cols,
                    };
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    for v in &mut m.params[k].data {
                        *v = rng.random_range(-bound..=bound);
                    }
                }
            }
            Init::Glorot => {
                for k in 0..m.params.len() {
                    let p = &mut m.params[k];
                    if p.cols == 1 && k != 0 {
                        continue;
                    }
                    if k == 1 {
                        let hd = p.cols;
                        for gate in 0..p.rows / hd {
                            let q = orthogonal(hd, rng);
                            p.data[gate * hd * hd..(gate + 1) * hd * hd].copy_from_slice(&q);
                        }
                        continue;
                    }
                    let bound = (6.0 / (p.rows + p.cols) as f64).sqrt();
                    for v in &mut p.data {
                        *v = rng.random_range(-bound..=bound);
                    }
                }
                if m.spec.cell == CellKind::Lstm {
                    let hd = m.spec.hidden;
                    m.params[2].data[hd..2 * hd].fill(1.0);
                }
            }
        }
        Ok(m)
    }

    pub fn zero_grads(&self) -> Vec<Param> {
        self.params.iter().map(|p| Param::zeros(p.rows, p.cols)).collect()
    }

    fn check_input(&self, x: &FrameTensor) -> Result<()> {
        if x.channels != self.spec.input {
            return Err(Error::Model(format!(
                "model expects {} channels, tensor has {}",
                self.spec.input, x.channels
            )));
        }
        if x.len == 0 {
            return Err(Error::Model("empty tensor".into()));
        }
        Ok(())
    }

    fn trace(&self, x: &FrameTensor) -> Trace {
        let hd = self.spec.hidden;
        let (w, u, b) = (&self.params[0], &self.params[1], &self.params[2]);
        let g = self.spec.cell.gates() * hd;
        let mut ax = vec![0.0; g];
        let mut ah = vec![0.0; g];
        let mut h = vec![vec![0.0; hd]];
        let mut c = vec![0.0; hd];
        let mut steps = Vec::with_capacity(x.len);
        for t in 0..x.len {
            let hp = &h[t];
            w.matvec(x.step(t), &mut ax);
            u.matvec(hp, &mut ah);
            let mut hn = vec![0.0; hd];
            match self.spec.cell {
                CellKind::Gru => {
                    let mut z = vec![0.0; hd];
                    let mut r = vec![0.0; hd];
                    let mut n = vec![0.0; hd];
                    let un = ah[2 * hd..].to_vec();
                    for k in 0..hd {
                        z[k] = sigmoid(ax[k] + ah[k] + b.data[k]);
                        r[k] = sigmoid(ax[hd + k] + ah[hd + k] + b.data[hd + k]);
                        n[k] = (ax[2 * hd + k] + b.data[2 * hd + k] + r[k] * un[k]).tanh();
                        hn[k] = (1.0 - z[k]) * n[k] + z[k] * hp[k];
                    }
                    steps.push(StepCache::Gru { z, r, n, un });
                }
                CellKind::Lstm => {
                    let a = |k: usize| ax[k] + ah[k] + b.data[k];
                    let i: Vec<f64> = (0..hd).map(|k| sigmoid(a(k))).collect();
                    let f: Vec<f64> = (0..hd).map(|k| sigmoid(a(hd + k))).collect();
                    let gg: Vec<f64> = (0..hd).map(|k| a(2 * hd + k).tanh()).collect();
                    let o: Vec<f64> = (0..hd).map(|k| sigmoid(a(3 * hd + k))).collect();
                    let cp = c.clone();
                    let mut tc = vec![0.0; hd];
                    for k in 0..hd {
                        c[k] = f[k] * cp[k] + i[k] * gg[k];
                        tc[k] = c[k].tanh();
                        hn[k] = o[k] * tc[k];
                    }
                    steps.push(StepCache::Lstm { i, f, g: gg, o, c: cp, tc });
                }
            }
            h.push(hn);
        }

        let mut acts = vec![h[x.len].clone()];
        let mut pre = Vec::new();
        let layers = self.spec.dense.len();
        for l in 0..layers {
            let (wl, bl) = (&self.params[3 + 2 * l], &self.params[4 + 2 * l]);
            let mut z = vec![0.0; wl.rows];
            wl.matvec(&acts[l], &mut z);
            for (zv, bv) in z.iter_mut().zip(&bl.data) {
                *zv += bv;
            }
            let a = if l + 1 < layers {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                softmax(&z)
            };
            pre.push(z);
            acts.push(a);
        }
        let probs = acts.last().cloned().unwrap_or_default();
        Trace {
            h,
            steps,
            pre,
            acts,
            probs,
        }
    }

    pub fn forward(&self, x: &FrameTensor) -> Result<Prediction> {
        self.check_input(x)?;
        let probs = self.trace(x).probs;
        Ok(Prediction {
            class_id: argmax(&probs) as u8 + 1,
            probabilities: probs,
        })
    }

    /// Loss on one example and its gradient, accumulated into `grads`.
    pub fn gradient(&self, x: &FrameTensor, target: usize, grads: &mut [Param]) -> Result<(f64, bool)> {
        self.check_input(x)?;
        if target >= self.spec.classes() {
            return Err(Error::Model(format!("target {target} outside {} classes", self.spec.classes())));
        }
        let tr = self.trace(x);
        let l = loss(&tr.probs, target);
        let correct = argmax(&tr.probs) == target;

        let layers = self.spec.dense.len();
        let mut dz = tr.probs.clone();
        dz[target] -= 1.0;
        let mut dh = vec![0.0; self.spec.hidden];
        for li in (0..layers).rev() {
            let wi = 3 + 2 * li;
            grads[wi].outer_add(&dz, &tr.acts[li]);
            grads[wi + 1].add_vec(&dz);
            let mut da = vec![0.0; self.params[wi].cols];
            self.params[wi].matvec_t_add(&dz, &mut da);
            if li == 0 {
                dh = da;
            } else {
                dz = da
                    .iter()
                    .zip(&tr.pre[li - 1])
                    .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
                    .collect();
            }
        }

        let hd = self.spec.hidden;
        let g = self.spec.cell.gates() * hd;
        let (gw, rest) = grads.split_at_mut(1);
        let (gu, rest) = rest.split_at_mut(1);
        let (gw, gu, gb) = (&mut gw[0], &mut gu[0], &mut rest[0]);
        let u = &self.params[1];
        let mut da = vec![0.0; g];
        let mut dc = vec![0.0; hd];
        for t in (0..x.len).rev() {
            let hp = &tr.h[t];
            let mut dh_prev = vec![0.0; hd];
            match &tr.steps[t] {
                StepCache::Gru { z, r, n, un } => {
                    let mut dun = vec![0.0; hd];
                    for k in 0..hd {
                        let dn = dh[k] * (1.0 - z[k]);
                        let dzk = dh[k] * (hp[k] - n[k]);
                        dh_prev[k] = dh[k] * z[k];
                        let dan = dn * (1.0 - n[k] * n[k]);
                        let dr = dan * un[k];
                        dun[k] = dan * r[k];
                        da[k] = dzk * z[k] * (1.0 - z[k]);
                        da[hd + k] = dr * r[k] * (1.0 - r[k]);
                        da[2 * hd + k] = dan;
                    }
                    gw.outer_add(&da, x.step(t));
                    gb.add_vec(&da);
                    // U gradient uses du_n for the candidate block
                    let mut du = da.clone();
                    du[2 * hd..].copy_from_slice(&dun);
                    gu.outer_add(&du, hp);
                    u.matvec_t_add(&du, &mut dh_prev);
                }
                StepCache::Lstm { i, f, g: gg, o, c, tc } => {
                    for k in 0..hd {
                        let dok = dh[k] * tc[k];
                        let dck = dc[k] + dh[k] * o[k] * (1.0 - tc[k] * tc[k]);
                        da[k] = dck * gg[k] * i[k] * (1.0 - i[k]);
                        da[hd + k] = dck * c[k] * f[k] * (1.0 - f[k]);
                        da[2 * hd + k] = dck * i[k] * (1.0 - gg[k] * gg[k]);
                        da[3 * hd + k] = dok * o[k] * (1.0 - o[k]);
                        dc[k] = dck * f[k];
                    }
                    gw.outer_add(&da, x.step(t));
                    gb.add_vec(&da);
                    gu.outer_add(&da, hp);
                    u.matvec_t_add(&da, &mut dh_prev);
                }
            }
            dh = dh_prev;
        }
        Ok((l, correct))
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}
