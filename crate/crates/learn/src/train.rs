//! Mini-batch training loop shared by the fusion model and the reference
//! classifier.

use std::fmt::Debug;
use std::io::Write;

use beamsim_core::measurement::DatasetSample;
use beamsim_core::rng::stream_rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, PositionScaler};
use crate::error::{LearnError, Result};
use crate::model::{FusionModel, LossTerms, Prediction};
use crate::optim::{AdamConfig, AdamW, LrSchedule, PlateauConfig};
use crate::softmax_ref::SoftmaxRef;
use crate::tensor::DenseTensor;

/// Samples per inference chunk.
pub const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub adam: AdamConfig,
    pub plateau: PlateauConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 256,
            peak_lr: 5e-4,
            warmup_epochs: 10,
            adam: AdamConfig::default(),
            plateau: PlateauConfig::default(),
            seed: 42,
        }
    }
}

pub trait Trainable: Clone + Debug {
    /// One optimizer per separately updated parameter group.
    fn optimizers(&self, cfg: AdamConfig) -> Vec<AdamW>;
    fn set_scaler(&mut self, scaler: PositionScaler);
    fn scaler(&self) -> PositionScaler;
    fn train_batch(&mut self, batch: &Batch, opts: &mut [AdamW], lr: f64) -> Result<LossTerms>;
    fn predict(&self, x: DenseTensor, sectors: &[usize]) -> Result<Vec<Prediction>>;
}

impl Trainable for FusionModel {
    fn optimizers(&self, cfg: AdamConfig) -> Vec<AdamW> {
        let mut opts = vec![AdamW::new(&self.net.store, cfg)];
        if let Some(c) = &self.critic {
            opts.push(AdamW::new(&c.store, cfg));
        }
        opts
    }

    fn set_scaler(&mut self, scaler: PositionScaler) {
        self.scaler = scaler;
    }

    fn scaler(&self) -> PositionScaler {
        self.scaler
    }

    fn train_batch(&mut self, batch: &Batch, opts: &mut [AdamW], lr: f64) -> Result<LossTerms> {
        self.step(batch, opts, lr)
    }

    fn predict(&self, x: DenseTensor, sectors: &[usize]) -> Result<Vec<Prediction>> {
        FusionModel::predict(self, x, sectors)
    }
}

impl Trainable for SoftmaxRef {
    fn optimizers(&self, cfg: AdamConfig) -> Vec<AdamW> {
        vec![AdamW::new(&self.store, cfg)]
    }

    fn set_scaler(&mut self, _: PositionScaler) {}

    fn scaler(&self) -> PositionScaler {
        PositionScaler::default()
    }

    fn train_batch(&mut self, batch: &Batch, opts: &mut [AdamW], lr: f64) -> Result<LossTerms> {
        self.step(batch, opts, lr)
    }

    fn predict(&self, x: DenseTensor, sectors: &[usize]) -> Result<Vec<Prediction>> {
        SoftmaxRef::predict(self, x, sectors)
    }
}

/// Predictions for arbitrary many samples, in chunks.
pub fn predict_samples<M: Trainable>(model: &M, samples: &[&DatasetSample]) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(PREDICT_CHUNK) {
        let batch = Batch::new(chunk, &model.scaler())?;
        out.extend(model.predict(batch.x, &batch.sectors)?);
    }
    Ok(out)
}

/// Fraction of samples whose predicted beam equals the label.
pub fn sample_top1<M: Trainable>(model: &M, samples: &[&DatasetSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(LearnError::Data("no samples to score".into()));
    }
    let preds = predict_samples(model, samples)?;
    let hits = preds.iter().zip(samples).filter(|(p, s)| p.beam == s.label as usize).count();
    Ok(hits as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub j_pos: f64,
    pub j_bm: f64,
    pub j_adv: f64,
    pub j_auto: f64,
    pub j_total: f64,
    pub val_top1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| LearnError::Data(format!("writing history: {e}"));
        w.write_record(["epoch", "lr", "j_pos", "j_bm", "j_adv", "j_auto", "val_top1"])
            .map_err(err)?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.lr.to_string(),
                r.j_pos.to_string(),
                r.j_bm.to_string(),
                r.j_adv.to_string(),
                r.j_auto.to_string(),
                r.val_top1.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| LearnError::Data(format!("writing history: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct Trained<M> {
    /// Parameters from the epoch with the best validation Top-1.
    pub model: M,
    pub history: History,
    pub best_epoch: Option<usize>,
    pub best_val_top1: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError<M: Debug> {
    #[error("training diverged: {source}")]
    Diverged {
        #[source]
        source: LearnError,
        /// Model at the end of the last completed epoch.
        last_good: Box<M>,
        history: History,
    },
    #[error(transparent)]
    Failed(#[from] LearnError),
}

impl<M: Debug> TrainError<M> {
    pub fn into_learn_error(self) -> LearnError {
        match self {
            TrainError::Diverged { source, .. } => source,
            TrainError::Failed(e) => e,
        }
    }
}

fn steps_per_epoch(n: usize, batch: usize) -> usize {
    n / batch + usize::from(n % batch >= 2)
}

/// Trains `model` on `train`, selecting the epoch with the best Top-1 on
/// `val`. Deterministic for a given seed.
pub fn train<M: Trainable>(
    mut model: M,
    train: &[&DatasetSample],
    val: &[&DatasetSample],
    cfg: &TrainConfig,
) -> std::result::Result<Trained<M>, TrainError<M>> {
    if cfg.epochs == 0 {
        return Ok(Trained {
            model,
            history: History::default(),
            best_epoch: None,
            best_val_top1: None,
        });
    }
    if train.len() < 2 || val.is_empty() {
        return Err(LearnError::Data("training needs ≥ 2 train samples and a nonempty validation split".into()).into());
    }
    if cfg.batch_size < 2 || !(cfg.peak_lr > 0.0) {
        return Err(LearnError::Config("batch size must be ≥ 2 and peak lr positive".into()).into());
    }
    model.set_scaler(PositionScaler::fit(train)?);
    let per_epoch = steps_per_epoch(train.len(), cfg.batch_size);
    let mut schedule = LrSchedule::new(cfg.peak_lr, (cfg.warmup_epochs * per_epoch) as u64, cfg.plateau);
    let mut opts = model.optimizers(cfg.adam);
    let mut history = History::default();
    let mut best: Option<(usize, f64, M)> = None;
    let mut last_good = model.clone();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, epoch as u64));
        let mut sums = LossTerms::default();
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let samples: Vec<&DatasetSample> = chunk.iter().map(|&i| train[i]).collect();
            let batch = Batch::new(&samples, &model.scaler())?;
            let lr = schedule.next_step();
            let t = model.train_batch(&batch, &mut opts, lr)?;
            if !t.is_finite() {
                let source = LearnError::NonFinite {
                    epoch,
                    batch: b,
                    terms: format!("{t:?}"),
                };
                return Err(TrainError::Diverged {
                    source,
                    last_good: Box::new(last_good),
                    history,
                });
            }
            sums.j_pos += t.j_pos;
            sums.j_bm += t.j_bm;
            sums.j_adv += t.j_adv;
            sums.j_auto += t.j_auto;
            sums.j_total += t.j_total;
            batches += 1;
        }
        let lr = schedule.current();
        let val_top1 = sample_top1(&model, val)?;
        schedule.end_epoch(val_top1);
        let n = batches.max(1) as f64;
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            j_pos: sums.j_pos / n,
            j_bm: sums.j_bm / n,
            j_adv: sums.j_adv / n,
            j_auto: sums.j_auto / n,
            j_total: sums.j_total / n,
            val_top1,
        });
        log::info!("epoch {epoch}: loss {:.4} val top1 {val_top1:.4} lr {lr:.2e}", sums.j_total / n);
        if best.as_ref().is_none_or(|(_, b, _)| val_top1 > *b) {
            best = Some((epoch, val_top1, model.clone()));
        }
        last_good = model.clone();
    }
    let (best_epoch, best_val, best_model) = best.expect("at least one epoch ran");
    Ok(Trained {
        model: best_model,
        history,
        best_epoch: Some(best_epoch),
        best_val_top1: Some(best_val),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_per_epoch_drop_singletons() {
        assert_eq!(steps_per_epoch(10, 4), 3);
        assert_eq!(steps_per_epoch(9, 4), 2);
        assert_eq!(steps_per_epoch(8, 4), 2);
    }

    #[test]
    fn history_csv_columns() {
        let h = History {
            epochs: vec![EpochRecord {
                epoch: 0,
                lr: 1e-4,
                j_pos: 1.0,
                j_bm: 2.0,
                j_adv: 0.0,
                j_auto: 0.5,
                j_total: 2.03,
                val_top1: 0.25,
            }],
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,lr,j_pos,j_bm,j_adv,j_auto,val_top1\n0,0.0001,1,2,0,0.5,0.25\n"
        );
    }
}
