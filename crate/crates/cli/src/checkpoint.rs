//! JSON checkpoints: metadata plus every layer as a shape list and flat values.

use std::path::Path;

use ntlab_core::networks::{ModelTriple, NetworkDims};
use ntlab_core::training::Variant;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub variant: Variant,
    pub config_hash: String,
    pub dims: NetworkDims,
    pub eps_x: f64,
    pub eps_y: f64,
    pub l_pct: f64,
    pub omega_clamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub metadata: CheckpointMeta,
    pub model: ModelTriple,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        ck.model.validate()?;
        if ck.model.dims() != ck.metadata.dims {
            return Err(CliError::Format(format!(
                "{}: layer shapes {:?} disagree with metadata dims {:?}",
                path.display(),
                ck.model.dims(),
                ck.metadata.dims
            )));
        }
        Ok(ck)
    }
}
