//! Versioned JSON container for trained transport maps.
//!
//! Layout: `{"format": "mash-transport", "version": 1, "dim": d,
//! "hidden_sizes": [...], "config": {...}, "layers": [{"weight": ..., "bias": ...}]}`.
//! Arrays use the ndarray serde encoding `{"v": 1, "dim": [...], "data": [...]}`
//! with row-major data.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::network::{Layer, TransportMap};
use super::ot::TransportConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mash-transport";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub config: TransportConfig,
    pub layers: Vec<Layer>,
}

impl Checkpoint {
    pub fn new(map: &TransportMap, config: &TransportConfig) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dim: map.dim(),
            hidden_sizes: map.hidden_sizes(),
            config: config.clone(),
            layers: map.layers().to_vec(),
        }
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let c: Checkpoint = serde_json::from_reader(r)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        Ok(c)
    }

    /// Rebuilds the network and checks it against the recorded shapes.
    pub fn into_map(self) -> Result<TransportMap> {
        let map = TransportMap::from_layers(self.layers)?;
        if map.dim() != self.dim || map.hidden_sizes() != self.hidden_sizes {
            return Err(Error::invalid("checkpoint shapes disagree with its layers"));
        }
        Ok(map)
    }
}
