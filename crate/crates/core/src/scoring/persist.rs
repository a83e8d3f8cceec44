//! Model file: `IURKMDL1`, a `u32` LE header length, a JSON header, then the
//! tensors listed in the header as little-endian floats in row-major order.
//!
//! Inference models are written as `f32` by default. Checkpoints use `f64`
//! and carry Adam moments so a resumed run matches an uninterrupted one bit
//! for bit.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::train::{AdamState, TrainConfig, Trainer};
use super::{Model, ModelConfig, Params, Vocab};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"IURKMDL1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerInfo {
    step: u64,
    epochs_done: usize,
    train_config: TrainConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: Dtype,
    config: ModelConfig,
    vocab: Vec<String>,
    tensors: Vec<TensorInfo>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    optimizer: Option<OptimizerInfo>,
}

/// A model together with the training state needed to resume it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub trainer: Trainer,
}

fn write(path: &Path, model: &Model, dtype: Dtype, trainer: Option<&Trainer>) -> Result<()> {
    let mut named: Vec<(String, &Array2<f64>)> = model.params.tensors();
    if let Some(t) = trainer {
        named.extend(t.adam.m.tensors().into_iter().map(|(n, a)| (format!("adam.m/{n}"), a)));
        named.extend(t.adam.v.tensors().into_iter().map(|(n, a)| (format!("adam.v/{n}"), a)));
    }
    let header = Header {
        version: VERSION,
        dtype,
        config: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
        tensors: named
            .iter()
            .map(|(n, a)| TensorInfo {
                name: n.clone(),
                shape: [a.nrows(), a.ncols()],
            })
            .collect(),
        optimizer: trainer.map(|t| OptimizerInfo {
            step: t.adam.step,
            epochs_done: t.epochs_done,
            train_config: t.config.clone(),
        }),
    };
    let json = serde_json::to_vec(&header)?;
    let n_scalars: usize = named.iter().map(|(_, a)| a.len()).sum();
    let mut buf = Vec::with_capacity(12 + json.len() + n_scalars * dtype.width());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, a) in &named {
        for &x in a.iter() {
            match dtype {
                Dtype::F32 => buf.extend_from_slice(&(x as f32).to_le_bytes()),
                Dtype::F64 => buf.extend_from_slice(&x.to_le_bytes()),
            }
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn save_model(path: &Path, model: &Model, dtype: Dtype) -> Result<()> {
    write(path, model, dtype, None)
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::ModelFormat(format!("{}: {msg}", path.display()))
}

fn read(path: &Path) -> Result<(Model, Option<Trainer>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad(path, "not a model file"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| bad(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(path, format!("bad header: {e}")))?;
    if header.version != VERSION {
        return Err(bad(path, format!("unsupported version {}", header.version)));
    }
    let vocab = Vocab::from_tokens(header.vocab)?;
    let mut model = Model::zeros(header.config, vocab)?;
    let mut adam = header.optimizer.as_ref().map(|o| AdamState {
        step: o.step,
        m: model.params.zeros_like(),
        v: model.params.zeros_like(),
    });

    let mut data = &bytes[12 + hlen..];
    let width = header.dtype.width();
    let mut seen = std::collections::BTreeSet::new();
    for info in &header.tensors {
        let n = info.shape[0] * info.shape[1];
        if data.len() < n * width {
            return Err(bad(path, format!("tensor {} is truncated", info.name)));
        }
        let (raw, rest) = data.split_at(n * width);
        data = rest;
        let (params, name): (&mut Params, &str) = if let Some(n) = info.name.strip_prefix("adam.m/") {
            (&mut adam.as_mut().ok_or_else(|| bad(path, "optimizer tensor without state"))?.m, n)
        } else if let Some(n) = info.name.strip_prefix("adam.v/") {
            (&mut adam.as_mut().ok_or_else(|| bad(path, "optimizer tensor without state"))?.v, n)
        } else {
            (&mut model.params, info.name.as_str())
        };
        let mut tensors = params.tensors_mut();
        let target = tensors
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| bad(path, format!("unexpected tensor {}", info.name)))?;
        if target.dim() != (info.shape[0], info.shape[1]) {
            return Err(bad(
                path,
                format!("tensor {} has shape {:?}, config needs {:?}", info.name, info.shape, target.dim()),
            ));
        }
        for (dst, c) in target.iter_mut().zip(raw.chunks_exact(width)) {
            *dst = match header.dtype {
                Dtype::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                Dtype::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
            };
        }
        seen.insert(info.name.clone());
    }
    if !data.is_empty() {
        return Err(bad(path, "trailing bytes"));
    }
    for (n, _) in model.params.tensors() {
        if !seen.contains(&n) {
            return Err(bad(path, format!("missing tensor {n}")));
        }
    }
    let trainer = match (header.optimizer, adam) {
        (Some(o), Some(adam)) => Some(Trainer {
            config: o.train_config,
            adam,
            epochs_done: o.epochs_done,
        }),
        _ => None,
    };
    Ok((model, trainer))
}

/// Loads the parameters of a model or checkpoint file.
pub fn load_model(path: &Path) -> Result<Model> {
    read(path).map(|(m, _)| m)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &self.model, Dtype::F64, Some(&self.trainer))
    }

    pub fn load(path: &Path) -> Result<Self> {
        match read(path)? {
            (model, Some(trainer)) => Ok(Checkpoint { model, trainer }),
            _ => Err(bad(path, "no optimizer state; not a checkpoint")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::EncoderMode;

    fn model() -> Model {
        let vocab = Vocab::from_tokens(["<unk>", "a", "b"].map(String::from).to_vec()).unwrap();
        let config = ModelConfig {
            d_model: 4,
            d_head: 2,
            heads: 2,
            d_ff: 6,
            ..ModelConfig::default()
        };
        Model::init(config, vocab, 3).unwrap()
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let m = model();
        save_model(&p, &m, Dtype::F64).unwrap();
        assert_eq!(load_model(&p).unwrap(), m);
    }

    #[test]
    fn f32_round_trip_is_rounded() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let m = model();
        save_model(&p, &m, Dtype::F32).unwrap();
        let back = load_model(&p).unwrap();
        for ((_, a), (_, b)) in m.params.tensors().into_iter().zip(back.params.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*y, *x as f32 as f64);
            }
        }
    }

    #[test]
    fn imported_mode_has_no_encoder_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let config = ModelConfig {
            mode: EncoderMode::ImportedVectors,
            d_model: 4,
            d_head: 4,
            ..ModelConfig::default()
        };
        let m = Model::init(config, Vocab::empty(), 1).unwrap();
        save_model(&p, &m, Dtype::F64).unwrap();
        let back = load_model(&p).unwrap();
        assert!(back.params.encoder.is_none());
        assert_eq!(back, m);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        let m = model();
        let mut trainer = Trainer::new(TrainConfig::default(), &m).unwrap();
        trainer.adam.step = 7;
        trainer.epochs_done = 2;
        for (_, t) in trainer.adam.m.tensors_mut() {
            t.fill(0.125);
        }
        let ck = Checkpoint { model: m, trainer };
        ck.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), ck);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        std::fs::write(&p, b"garbage").unwrap();
        assert!(matches!(load_model(&p), Err(Error::ModelFormat(_))));
        save_model(&p, &model(), Dtype::F32).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_model(&p), Err(Error::ModelFormat(_))));
        assert!(Checkpoint::load(&p).is_err());
    }
}
