use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{layout, ModelParams, Param};
use crate::error::{Error, Result};

const FORMAT: &str = "noiseadapt-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    params: Vec<Param>,
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        config: params.config.clone(),
        params: params.params.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &file)?;
    Ok(())
}

/// Loads a checkpoint and checks every tensor against its stored config.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let file: CheckpointFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(Error::CheckpointMismatch(format!(
            "unsupported format {} v{}",
            file.format, file.version
        )));
    }
    let (specs, layout) = layout(&file.config)?;
    if specs.len() != file.params.len() {
        return Err(Error::CheckpointMismatch(format!(
            "expected {} tensors, found {}",
            specs.len(),
            file.params.len()
        )));
    }
    for (s, p) in specs.iter().zip(&file.params) {
        if s.name != p.name || s.tag != p.tag || s.shape != p.value.shape() {
            return Err(Error::CheckpointMismatch(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                p.name,
                p.value.shape(),
                s.name,
                s.shape
            )));
        }
        if !p.value.all_finite() {
            return Err(Error::CheckpointMismatch(format!("tensor {} is not finite", p.name)));
        }
    }
    Ok(ModelParams {
        config: file.config,
        params: file.params,
        layout,
    })
}

/// Loads a checkpoint that must have been trained with `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<ModelParams> {
    let params = load_checkpoint(path)?;
    if &params.config != expected {
        return Err(Error::CheckpointMismatch(
            "checkpoint was saved with a different model config".into(),
        ));
    }
    Ok(params)
}
