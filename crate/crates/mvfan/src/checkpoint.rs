//! Checkpoint file.
//!
//! Layout: the 8-byte magic, a little-endian `u64` header length, a JSON
//! header, then raw little-endian `f64` blobs for the parameters followed by
//! the two Adam moment sets, each in parameter order. Floats never pass
//! through text, so a reload is bit-exact.

use std::fs;
use std::path::Path;

use mvfan_core::config::ExperimentConfig;
use mvfan_core::model::Model;
use mvfan_core::optim::Adam;
use mvfan_core::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config_file::config_hash;
use crate::error::{Error, Result};
use crate::train::{self, TrainState};

pub const MAGIC: &[u8; 8] = b"MVFANCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    /// Hex of the 32-byte seed.
    pub seed: String,
    pub stream: u64,
    /// Word position as a decimal string; it can exceed `u64`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Checkpoint("malformed rng state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub epoch: usize,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub rng: RngState,
    pub adam_step: u64,
    pub params: Vec<ParamInfo>,
}

pub fn encode(cfg: &ExperimentConfig, state: &TrainState) -> Result<Vec<u8>> {
    let header = Header {
        epoch: state.epoch,
        config_hash: config_hash(cfg)?,
        config: cfg.clone(),
        rng: RngState::capture(&state.rng),
        adam_step: state.adam.step,
        params: state
            .store
            .entries()
            .iter()
            .map(|e| ParamInfo {
                name: e.name.clone(),
                rows: e.value.rows(),
                cols: e.value.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let values = state.store.entries().iter().map(|e| &e.value);
    for m in values.chain(&state.adam.m).chain(&state.adam.v) {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save(path: &Path, cfg: &ExperimentConfig, state: &TrainState) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(cfg, state)?).map_err(|e| Error::io(path, e))
}

/// A loaded checkpoint.
pub struct Loaded {
    pub header: Header,
    pub model: Model,
    pub state: TrainState,
    /// Set when the stored hash differs from the hash of the stored config,
    /// or from an expected config passed to [`decode`].
    pub hash_mismatch: bool,
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize, path: &Path) -> Result<&'a [u8]> {
    if bytes.len() - *at < n {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: *at as u64,
            detail: format!("need {n} bytes, {} left", bytes.len() - *at),
        });
    }
    let s = &bytes[*at..*at + n];
    *at += n;
    Ok(s)
}

/// Rebuilds the model from the stored config and fills in every tensor.
/// `expected` is the config the caller intends to run with; a different
/// hash only sets [`Loaded::hash_mismatch`].
pub fn decode(bytes: &[u8], path: &Path, expected: Option<&ExperimentConfig>) -> Result<Loaded> {
    let mut at = 0;
    if take(bytes, &mut at, MAGIC.len(), path)? != MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            detail: "not a checkpoint (bad magic)".into(),
        });
    }
    let len = u64::from_le_bytes(take(bytes, &mut at, 8, path)?.try_into().expect("8 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(take(bytes, &mut at, len, path)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let (model, mut state) = train::init(&header.config)?;
    let entries = state.store.entries();
    if entries.len() != header.params.len()
        || entries
            .iter()
            .zip(&header.params)
            .any(|(e, p)| e.name != p.name || e.value.shape() != (p.rows, p.cols))
    {
        return Err(Error::Checkpoint("parameter layout does not match the stored config".into()));
    }
    let mut read = |rows: usize, cols: usize| -> Result<Matrix> {
        let raw = take(bytes, &mut at, rows * cols * 8, path)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Matrix::from_vec(rows, cols, data))
    };
    let shapes: Vec<(usize, usize)> = header.params.iter().map(|p| (p.rows, p.cols)).collect();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        state.store.entries_mut()[i].value = read(r, c)?;
    }
    let m = shapes.iter().map(|&(r, c)| read(r, c)).collect::<Result<Vec<_>>>()?;
    let v = shapes.iter().map(|&(r, c)| read(r, c)).collect::<Result<Vec<_>>>()?;
    if at != bytes.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: at as u64,
            detail: "trailing bytes".into(),
        });
    }
    state.adam = Adam {
        params: header.config.optim.adam(),
        step: header.adam_step,
        m,
        v,
    };
    state.epoch = header.epoch;
    state.rng = header.rng.restore()?;
    let stored = config_hash(&header.config)?;
    let mut hash_mismatch = stored != header.config_hash;
    if let Some(e) = expected {
        hash_mismatch |= config_hash(e)? != header.config_hash;
    }
    Ok(Loaded {
        header,
        model,
        state,
        hash_mismatch,
    })
}

pub fn load(path: &Path, expected: Option<&ExperimentConfig>) -> Result<Loaded> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path, expected)
}
