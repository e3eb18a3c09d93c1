//! Versioned binary checkpoints.
//!
//! Layout: magic `BSCK`, `u32` version, `u64` header length, header JSON,
//! `u64` value count, then little-endian `f64` values. Values are the main
//! store's parameters then buffers, followed by the discriminator's
//! parameters then buffers when present.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::PositionScaler;
use crate::error::{LearnError, Result};
use crate::model::{FusionModel, ModelConfig, Prediction};
use crate::params::ParamStore;
use crate::softmax_ref::{SoftmaxRef, SoftmaxRefConfig};
use crate::tensor::DenseTensor;
use crate::train::Trainable;

pub const MAGIC: &[u8; 4] = b"BSCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub enum Model {
    Fusion(FusionModel),
    SoftmaxRef(SoftmaxRef),
}

impl Model {
    pub fn predict(&self, x: DenseTensor, sectors: &[usize]) -> Result<Vec<Prediction>> {
        match self {
            Model::Fusion(m) => Trainable::predict(m, x, sectors),
            Model::SoftmaxRef(m) => Trainable::predict(m, x, sectors),
        }
    }

    pub fn fine_beams(&self) -> usize {
        match self {
            Model::Fusion(m) => m.config().fine_beams,
            Model::SoftmaxRef(m) => m.config().fine_beams,
        }
    }

    pub fn input_side(&self) -> usize {
        match self {
            Model::Fusion(m) => m.config().input_side,
            Model::SoftmaxRef(m) => m.config().input_side,
        }
    }

    pub fn arch_name(&self) -> &'static str {
        match self {
            Model::Fusion(_) => "fusion",
            Model::SoftmaxRef(_) => "softmax-ref",
        }
    }
}

impl Trainable for Model {
    fn optimizers(&self, cfg: crate::optim::AdamConfig) -> Vec<crate::optim::AdamW> {
        match self {
            Model::Fusion(m) => m.optimizers(cfg),
            Model::SoftmaxRef(m) => m.optimizers(cfg),
        }
    }

    fn set_scaler(&mut self, scaler: PositionScaler) {
        match self {
            Model::Fusion(m) => m.set_scaler(scaler),
            Model::SoftmaxRef(m) => m.set_scaler(scaler),
        }
    }

    fn scaler(&self) -> PositionScaler {
        match self {
            Model::Fusion(m) => m.scaler(),
            Model::SoftmaxRef(m) => m.scaler(),
        }
    }

    fn train_batch(&mut self, batch: &crate::data::Batch, opts: &mut [crate::optim::AdamW], lr: f64) -> Result<crate::model::LossTerms> {
        match self {
            Model::Fusion(m) => m.train_batch(batch, opts, lr),
            Model::SoftmaxRef(m) => m.train_batch(batch, opts, lr),
        }
    }

    fn predict(&self, x: DenseTensor, sectors: &[usize]) -> Result<Vec<Prediction>> {
        Model::predict(self, x, sectors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", content = "config", rename_all = "kebab-case")]
pub enum ArchConfig {
    Fusion(ModelConfig),
    SoftmaxRef(SoftmaxRefConfig),
}

/// Training provenance stored with the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub seed: u64,
    /// Epoch the parameters come from, if trained.
    pub epoch: Option<usize>,
    pub val_top1: Option<f64>,
    pub dataset_hash: Option<String>,
}

type Layout = Vec<(String, Vec<usize>)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoreLayout {
    params: Layout,
    buffers: Layout,
}

impl StoreLayout {
    fn of(store: &ParamStore) -> Self {
        let (params, buffers) = store.layout();
        Self { params, buffers }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ArchConfig,
    info: CheckpointInfo,
    scaler: PositionScaler,
    main: StoreLayout,
    discriminator: Option<StoreLayout>,
}

fn stores(model: &Model) -> (&ParamStore, Option<&ParamStore>) {
    match model {
        Model::Fusion(m) => (&m.net.store, m.critic.as_ref().map(|c| &c.store)),
        Model::SoftmaxRef(m) => (&m.store, None),
    }
}

pub fn encode_checkpoint(model: &Model, info: &CheckpointInfo) -> Result<Vec<u8>> {
    let (main, disc) = stores(model);
    let arch = match model {
        Model::Fusion(m) => ArchConfig::Fusion(m.config().clone()),
        Model::SoftmaxRef(m) => ArchConfig::SoftmaxRef(*m.config()),
    };
    let header = Header {
        model: arch,
        info: info.clone(),
        scaler: model.scaler(),
        main: StoreLayout::of(main),
        discriminator: disc.map(StoreLayout::of),
    };
    let json = serde_json::to_vec(&header).map_err(|e| LearnError::Data(format!("checkpoint header: {e}")))?;
    let mut values = main.flatten();
    if let Some(d) = disc {
        values.extend(d.flatten());
    }
    let mut out = Vec::with_capacity(24 + json.len() + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, CheckpointInfo)> {
    let bad = |m: &str| LearnError::Data(format!("checkpoint: {m}"));
    let take = |at: usize, n: usize| bytes.get(at..at + n).ok_or_else(|| bad("truncated"));
    if take(0, 4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(4, 4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(take(8, 8)?.try_into().expect("8 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(take(16, hlen)?).map_err(|e| bad(&format!("header: {e}")))?;
    let count_at = 16 + hlen;
    let count = u64::from_le_bytes(take(count_at, 8)?.try_into().expect("8 bytes")) as usize;
    let blob = take(count_at + 8, count.checked_mul(8).ok_or_else(|| bad("size overflow"))?)?;
    if bytes.len() != count_at + 8 + 8 * count {
        return Err(bad("trailing bytes"));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let mut model = match &header.model {
        ArchConfig::Fusion(cfg) => Model::Fusion(FusionModel::new(cfg.clone(), header.info.seed)?),
        ArchConfig::SoftmaxRef(cfg) => Model::SoftmaxRef(SoftmaxRef::new(*cfg)?),
    };
    let (main, disc): (&mut ParamStore, Option<&mut ParamStore>) = match &mut model {
        Model::Fusion(m) => (&mut m.net.store, m.critic.as_mut().map(|c| &mut c.store)),
        Model::SoftmaxRef(m) => (&mut m.store, None),
    };
    if StoreLayout::of(main) != header.main {
        return Err(bad("parameter layout does not match the architecture"));
    }
    let mut used = main.load_flat(&values)?;
    match (disc, &header.discriminator) {
        (Some(d), Some(layout)) if StoreLayout::of(d) == *layout => used += d.load_flat(&values[used..])?,
        (None, None) => {}
        _ => return Err(bad("discriminator layout mismatch")),
    }
    if used != values.len() {
        return Err(bad("value count does not match the layout"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite parameter"));
    }
    model.set_scaler(header.scaler);
    Ok((model, header.info))
}

pub fn save_checkpoint(model: &Model, info: &CheckpointInfo, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_checkpoint(model, info)?;
    fs::write(path.as_ref(), bytes).map_err(|e| LearnError::io(path.as_ref(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, CheckpointInfo)> {
    let bytes = fs::read(path.as_ref()).map_err(|e| LearnError::io(path.as_ref(), e))?;
    decode_checkpoint(&bytes).map_err(|e| LearnError::Checkpoint {
        path: path.as_ref().display().to_string(),
        message: e.to_string(),
    })
}
