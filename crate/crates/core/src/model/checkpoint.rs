//! JSON checkpoints: architecture, partition index and the flat parameter
//! vector. Floats round-trip exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, ModelParams, PartitionIndex};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "ttr-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    arch: ArchConfig,
    partition: PartitionIndex,
    params: Vec<f64>,
}

pub fn to_json(params: &ModelParams<f64>) -> Result<String> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        arch: params.arch.clone(),
        partition: params.partition().clone(),
        params: params.values.clone(),
    };
    serde_json::to_string_pretty(&ck).map_err(|e| Error::input(format!("cannot serialize checkpoint: {e}")))
}

pub fn from_json(text: &str) -> Result<ModelParams<f64>> {
    let ck: Checkpoint =
        serde_json::from_str(text).map_err(|e| Error::input(format!("malformed checkpoint: {e}")))?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(Error::input(format!("not a checkpoint (format `{}`)", ck.format)));
    }
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::input(format!("unsupported checkpoint version {}", ck.version)));
    }
    let params = ModelParams::from_values(ck.arch, ck.params)?;
    if *params.partition() != ck.partition {
        return Err(Error::input("checkpoint partition index does not match its architecture"));
    }
    Ok(params)
}

pub fn save(params: &ModelParams<f64>, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(params)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams<f64>> {
    from_json(&crate::io::read_text(path)?)
}
