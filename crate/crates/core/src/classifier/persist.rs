//! Binary model container with a JSON sidecar.
//!
//! Layout (little endian): magic `CSTM`, format version `u32`, cell `u8`
//! (0 = GRU, 1 = LSTM), input, hidden, frame_len and dense count as `u32`,
//! the dense widths as `u32`, then every parameter tensor as
//! `rows: u32, cols: u32` followed by `rows × cols` row-major `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::network::{CellKind, Model, ModelSpec, Param};
use super::train::TrainConfig;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CSTM";
pub const FORMAT_VERSION: u32 = 1;

/// Hyperparameters written next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub train: Option<TrainConfig>,
    pub val_accuracy: Option<f64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub fn encode(model: &Model) -> Vec<u8> {
    let s = &model.spec;
    let mut out = Vec::with_capacity(64 + 8 * s.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(match s.cell {
        CellKind::Gru => 0,
        CellKind::Lstm => 1,
    });
    for v in [s.input, s.hidden, s.frame_len, s.dense.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &w in &s.dense {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    for p in &model.params {
        out.extend_from_slice(&(p.rows as u32).to_le_bytes());
        out.extend_from_slice(&(p.cols as u32).to_le_bytes());
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Model(format!("model file truncated at byte {}", self.at)));
        };
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    let mut c = Cursor { buf: bytes, at: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Model("not a capstream model file".into()));
    }
    let version = c.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Model(format!("unsupported model format version {version}")));
    }
    let cell = match c.take(1)?[0] {
        0 => CellKind::Gru,
        1 => CellKind::Lstm,
        other => return Err(Error::Model(format!("unknown cell tag {other}"))),
    };
    let input = c.u32()?;
    let hidden = c.u32()?;
    let frame_len = c.u32()?;
    let n_dense = c.u32()?;
    if n_dense > 64 {
        return Err(Error::Model(format!("implausible dense layer count {n_dense}")));
    }
    let dense = (0..n_dense).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let spec = ModelSpec {
        cell,
        input,
        hidden,
        dense,
        frame_len,
    };
    spec.validate().map_err(|e| Error::Model(e.to_string()))?;
    let mut params = Vec::new();
    for (rows, cols) in spec.shapes() {
        let (r, k) = (c.u32()?, c.u32()?);
        if (r, k) != (rows, cols) {
            return Err(Error::Model(format!(
                "tensor {} is {r}x{k}, header implies {rows}x{cols}",
                params.len()
            )));
        }
        let raw = c.take(8 * rows * cols)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        params.push(Param { rows, cols, data });
    }
    if c.at != bytes.len() {
        return Err(Error::Model(format!("{} trailing bytes", bytes.len() - c.at)));
    }
    let m = Model { spec, params };
    if !m.is_finite() {
        return Err(Error::Model("model contains non-finite parameters".into()));
    }
    Ok(m)
}

pub fn save(model: &Model, path: &Path, sidecar: Option<&ModelSidecar>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(model))?;
    let meta = sidecar.cloned().unwrap_or(ModelSidecar {
        format_version: FORMAT_VERSION,
        spec: model.spec.clone(),
        train: None,
        val_accuracy: None,
    });
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Model(e.to_string()))?;
    fs::write(sidecar_path(path), json + "\n")?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_exact() {
        for cell in [CellKind::Gru, CellKind::Lstm] {
            let spec = ModelSpec {
                cell,
                ..ModelSpec::default()
            };
            let m = Model::init(spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.bin");
            save(&m, &path, None).unwrap();
            assert_eq!(load(&path).unwrap(), m);
            let meta: ModelSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
            assert_eq!(meta.spec.cell, cell);
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let m = Model::init(ModelSpec::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let bytes = encode(&m);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode(b"nope").is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
