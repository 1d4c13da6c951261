//! Versioned JSON checkpoints of named parameter grids, plus atomic file
//! writes shared by every artifact writer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::base_model::BaseModelParams;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::grid::ValueGrid;
use crate::meta::{CombinedInit, Variant};
use crate::params::ParamStore;

pub const FORMAT: &str = "chameleon-checkpoint";
pub const VERSION: u32 = 1;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedGrid {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Variant tag, or `pretrain` for a bare encoder.
    pub variant: String,
    pub seed: u64,
    pub meta_epoch: usize,
    /// Training configuration the parameters came from.
    pub config: serde_json::Value,
    pub params: Vec<NamedGrid>,
}

fn push_store(out: &mut Vec<NamedGrid>, store: &ParamStore) {
    for (name, g) in store.names().iter().zip(store.values()) {
        out.push(NamedGrid {
            name: name.clone(),
            rows: g.rows(),
            cols: g.cols(),
            data: g.data().to_vec(),
        });
    }
}

impl Checkpoint {
    pub fn new(variant: &str, seed: u64, meta_epoch: usize, config: serde_json::Value) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            variant: variant.into(),
            seed,
            meta_epoch,
            config,
            params: Vec::new(),
        }
    }

    pub fn from_init(init: &CombinedInit, variant: Variant, seed: u64, meta_epoch: usize, config: serde_json::Value) -> Self {
        let mut c = Self::new(variant.as_str(), seed, meta_epoch, config);
        if let Some(enc) = &init.encoder {
            push_store(&mut c.params, enc.store());
        }
        push_store(&mut c.params, init.base.store());
        c
    }

    pub fn from_encoder(encoder: &EncoderParams, seed: u64, epochs: usize, config: serde_json::Value) -> Self {
        let mut c = Self::new("pretrain", seed, epochs, config);
        push_store(&mut c.params, encoder.store());
        c
    }

    fn store_with_prefix(&self, prefix: &str) -> Result<Option<ParamStore>> {
        let grids = self
            .params
            .iter()
            .filter(|g| g.name.starts_with(prefix))
            .map(|g| Ok((g.name.clone(), ValueGrid::from_vec(g.rows, g.cols, g.data.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        Ok((!grids.is_empty()).then(|| ParamStore::from_named(grids)))
    }

    pub fn encoder(&self) -> Result<Option<EncoderParams>> {
        self.store_with_prefix("enc.")?.map(EncoderParams::from_store).transpose()
    }

    pub fn init(&self) -> Result<CombinedInit> {
        let base = self
            .store_with_prefix("base.")?
            .ok_or_else(|| Error::Input("checkpoint holds no base-model parameters".into()))?;
        Ok(CombinedInit {
            encoder: self.encoder()?,
            base: BaseModelParams::from_store(base)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    /// Reads and validates a checkpoint; a missing file is reported as a
    /// missing artifact.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                reason: "checkpoint not found".into(),
            },
            _ => Error::Io(e),
        })?;
        let bad = |reason: String| Error::Artifact {
            path: path.to_path_buf(),
            reason,
        };
        let c: Checkpoint = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if c.format != FORMAT {
            return Err(bad(format!("unexpected format tag {:?}", c.format)));
        }
        if c.version > VERSION {
            return Err(bad(format!("version {} is newer than supported {VERSION}", c.version)));
        }
        for g in &c.params {
            if g.rows * g.cols != g.data.len() {
                return Err(bad(format!("{} declares {}x{} but holds {} values", g.name, g.rows, g.cols, g.data.len())));
            }
        }
        Ok(c)
    }
}
