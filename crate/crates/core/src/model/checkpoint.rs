//! Versioned binary checkpoint: config + parameters + optimizer state + epoch.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"GPCL"            4 bytes
//! version u32                currently 1
//! epoch   u64                next epoch to run on resume
//! adam_t  u64                optimizer step counter
//! cfg_len u64                length of the TrainConfig JSON that follows
//! cfg     cfg_len bytes      serde_json of TrainConfig
//! count   u64                number of parameter tensors
//! per tensor:
//!   name_len u64, name bytes, rows u64, cols u64, decay u8,
//!   rows*cols f64 parameter values,
//!   rows*cols f64 first-moment values,
//!   rows*cols f64 second-moment values
//! ```
//!
//! `f64` bits are stored exactly, so save/load round-trips bit-identically.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Matrix;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::AdamW;

const MAGIC: &[u8; 4] = b"GPCL";
const VERSION: u32 = 1;

pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub model: Model,
    pub optimizer: AdamW,
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_matrix(w: &mut impl Write, m: &Matrix) -> Result<()> {
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize) -> Result<Matrix> {
    let mut data = vec![0.0f64; rows * cols];
    let mut b = [0u8; 8];
    for v in data.iter_mut() {
        r.read_exact(&mut b)?;
        *v = f64::from_le_bytes(b);
    }
    Matrix::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::Checkpoint(format!("bad tensor shape: {e}")))
}

/// Write a checkpoint. `epoch` is the next epoch to run on resume.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model,
    optimizer: &AdamW,
    epoch: usize,
    config: &TrainConfig,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_u64(&mut w, epoch as u64)?;
    write_u64(&mut w, optimizer.t)?;
    let cfg_json = serde_json::to_vec(config)?;
    write_u64(&mut w, cfg_json.len() as u64)?;
    w.write_all(&cfg_json)?;
    write_u64(&mut w, model.params.len() as u64)?;
    for (i, p) in model.params.iter().enumerate() {
        write_u64(&mut w, p.name.len() as u64)?;
        w.write_all(p.name.as_bytes())?;
        write_u64(&mut w, p.value.nrows() as u64)?;
        write_u64(&mut w, p.value.ncols() as u64)?;
        w.write_all(&[u8::from(p.decay)])?;
        write_matrix(&mut w, &p.value)?;
        write_matrix(&mut w, &optimizer.m[i])?;
        write_matrix(&mut w, &optimizer.v[i])?;
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint, rebuilding the model layout from the stored config and
/// verifying that every stored tensor matches it.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let epoch = read_u64(&mut r)? as usize;
    let adam_t = read_u64(&mut r)?;
    let cfg_len = read_u64(&mut r)? as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes)?;
    let config: TrainConfig = serde_json::from_slice(&cfg_bytes)?;

    let mut model = Model::new(&config)?;
    let mut optimizer = AdamW::new(&model, config.weight_decay);
    optimizer.t = adam_t;

    let count = read_u64(&mut r)? as usize;
    if count != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} tensors, config implies {}",
            model.params.len()
        )));
    }
    for i in 0..count {
        let name_len = read_u64(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("non-utf8 tensor name".into()))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let mut decay = [0u8; 1];
        r.read_exact(&mut decay)?;
        let p = &model.params[i];
        if p.name != name || p.value.dim() != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "tensor {i} is `{name}` {rows}x{cols}, expected `{}` {:?}",
                p.name,
                p.value.dim()
            )));
        }
        model.params[i].value = read_matrix(&mut r, rows, cols)?;
        optimizer.m[i] = read_matrix(&mut r, rows, cols)?;
        optimizer.v[i] = read_matrix(&mut r, rows, cols)?;
    }
    Ok(Checkpoint {
        config,
        epoch,
        model,
        optimizer,
    })
}
