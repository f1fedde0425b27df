//! Checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, JSON header,
//! then raw little-endian arrays in header order: parameters, Adam first
//! moments, Adam second moments and, if present, the best parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EchoMambaModel, ModelConfig};
use crate::optim::{AdamConfig, AdamState};
use crate::params::ParamStore;
use crate::rng::{stream, RngState, Stream};
use crate::scalar::{Precision, Scalar};
use crate::train::{BestState, EpochLog, TrainConfig, Trainer};

const MAGIC: &[u8; 8] = b"EMCKPT01";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    precision: Precision,
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    adam: AdamConfig,
    adam_step: u64,
    dropout_rng: RngState,
    shuffle_rng: RngState,
    best_epoch: Option<usize>,
    best_val_hr10: Option<f64>,
    stale_epochs: usize,
    history: Vec<EpochLog>,
    tensors: Vec<TensorEntry>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn save<F: Scalar>(t: &Trainer<F>, path: &Path) -> Result<()> {
    let header = Header {
        precision: F::PRECISION,
        model: t.model.config.clone(),
        train: t.config.clone(),
        epoch: t.epoch,
        adam: t.adam.config,
        adam_step: t.adam.step,
        dropout_rng: RngState::capture(&t.dropout_rng),
        shuffle_rng: RngState::capture(&t.shuffle_rng),
        best_epoch: t.best.as_ref().map(|b| b.epoch),
        best_val_hr10: t.best.as_ref().map(|b| b.val_hr10),
        stale_epochs: t.stale_epochs,
        history: t.history.clone(),
        tensors: t
            .store
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| format_err(e.to_string()))?;
    // Write to a sibling file first so a crash never leaves a torn checkpoint.
    let tmp = path.with_extension("partial");
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(&tmp, e));
    put(MAGIC)?;
    put(&(json.len() as u64).to_le_bytes())?;
    put(&json)?;
    for p in t.store.iter() {
        put(&F::to_le_bytes_vec(p.tensor.data()))?;
    }
    for m in t.adam.m.iter().chain(&t.adam.v) {
        put(&F::to_le_bytes_vec(m))?;
    }
    if let Some(best) = &t.best {
        for v in &best.params {
            put(&F::to_le_bytes_vec(v))?;
        }
    }
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load<F: Scalar>(path: &Path) -> Result<Trainer<F>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(format_err(format!("{}: not a checkpoint", path.display())));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|e| Error::io(path, e))?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| format_err(e.to_string()))?;
    if header.precision != F::PRECISION {
        return Err(format_err(format!(
            "checkpoint holds {}-bit values, run asked for {}-bit",
            header.precision, F::PRECISION
        )));
    }
    let mut read_array = |n: usize| -> Result<Vec<F>> {
        let mut buf = vec![0u8; n * F::PRECISION.bytes()];
        r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        Ok(F::from_le_bytes_slice(&buf))
    };

    let mut store = ParamStore::new();
    // Structure only; every value is overwritten below.
    let model = EchoMambaModel::new(&mut store, header.model.clone(), &mut stream(0, Stream::Init))?;
    if store.len() != header.tensors.len() {
        return Err(format_err("checkpoint parameter list does not match the model"));
    }
    for (p, entry) in store.iter_mut().zip(&header.tensors) {
        if p.name != entry.name || p.tensor.shape() != entry.shape.as_slice() {
            return Err(format_err(format!("unexpected tensor {} {:?}", entry.name, entry.shape)));
        }
        let values = read_array(p.tensor.numel())?;
        p.tensor.data_mut().copy_from_slice(&values);
    }
    let sizes: Vec<usize> = store.iter().map(|p| p.tensor.numel()).collect();
    let m = sizes.iter().map(|&n| read_array(n)).collect::<Result<Vec<_>>>()?;
    let v = sizes.iter().map(|&n| read_array(n)).collect::<Result<Vec<_>>>()?;
    let best = match (header.best_epoch, header.best_val_hr10) {
        (Some(epoch), Some(val_hr10)) => Some(BestState {
            epoch,
            val_hr10,
            params: sizes.iter().map(|&n| read_array(n)).collect::<Result<Vec<_>>>()?,
        }),
        _ => None,
    };
    Ok(Trainer {
        model,
        store,
        adam: AdamState {
            config: header.adam,
            step: header.adam_step,
            m,
            v,
        },
        config: header.train,
        epoch: header.epoch,
        dropout_rng: header.dropout_rng.restore(),
        shuffle_rng: header.shuffle_rng.restore(),
        best,
        stale_epochs: header.stale_epochs,
        history: header.history,
    })
}

/// Reads the precision a checkpoint was written in, without loading it.
pub fn precision_of(path: &Path) -> Result<Precision> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 16];
    file.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
    if &head[..8] != MAGIC {
        return Err(format_err(format!("{}: not a checkpoint", path.display())));
    }
    let len = u64::from_le_bytes(head[8..].try_into().expect("8 bytes")) as usize;
    let mut json = vec![0u8; len];
    file.read_exact(&mut json).map_err(|e| Error::io(path, e))?;
    #[derive(Deserialize)]
    struct Just {
        precision: Precision,
    }
    let just: Just = serde_json::from_slice(&json).map_err(|e| format_err(e.to_string()))?;
    Ok(just.precision)
}
