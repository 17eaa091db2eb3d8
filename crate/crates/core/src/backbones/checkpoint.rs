//! Binary checkpoint container:
//!
//! ```text
//! b"EXOCKPT\0" | version: u32 LE | header_len: u64 LE | header JSON | f64 LE data...
//! ```
//!
//! The header holds the model config and the name and shape of every tensor,
//! in the order their data follows.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, ModelConfig, SequenceModel};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"EXOCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    tensors: Vec<(String, Vec<usize>)>,
}

pub fn write_checkpoint(w: &mut impl Write, model: &dyn SequenceModel) -> Result<()> {
    let header = Header {
        config: model.config().clone(),
        tensors: model.params().iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in model.params().tensors() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Config and named tensors stored in a checkpoint.
pub fn read_checkpoint(r: &mut impl Read) -> Result<(ModelConfig, ParamStore)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut store = ParamStore::new();
    for (name, shape) in header.tensors {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8).map_err(|_| Error::Checkpoint(format!("truncated data in {name}")))?;
            data.push(f64::from_le_bytes(b8));
        }
        store.add(name, Tensor::new(shape, data)?);
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok((header.config, store))
}

pub fn save_checkpoint(path: &Path, model: &dyn SequenceModel) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut f, model)?;
    f.flush()?;
    Ok(())
}

/// Rebuild the model named in the checkpoint and load its parameters.
pub fn load_checkpoint(path: &Path) -> Result<Box<dyn SequenceModel>> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    let (config, stored) = read_checkpoint(&mut std::io::BufReader::new(f))?;
    let mut model = build_model(&config)?;
    if model.params().len() != stored.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors for {}, found {}",
            model.params().len(),
            config.variant_name(),
            stored.len()
        )));
    }
    for (name, t) in stored.iter() {
        let id = model
            .params()
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
        let slot = model.params_mut().get_mut(id);
        if slot.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t.clone();
    }
    Ok(model)
}
