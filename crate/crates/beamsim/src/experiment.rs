//! Training runs and the in-distribution / cross-scenario protocols.

use beamsim_core::codebook::Resolution;
use beamsim_core::measurement::{build_dataset, Dataset, DatasetSample, Split, SplitFractions, FEATURE_SIDE};
use beamsim_core::scenario::Scenario;
use beamsim_learn::checkpoint::{encode_checkpoint, CheckpointInfo, Model};
use beamsim_learn::model::{FusionModel, ModelConfig};
use beamsim_learn::softmax_ref::{SoftmaxRef, SoftmaxRefConfig};
use beamsim_learn::train::{train, History, TrainConfig, TrainError};
use log::info;

use crate::error::{AppError, Result};
use crate::evaluate::{evaluate_policy, EvalOptions, EvalReport, Policy};
use crate::sha256_hex;

#[derive(Debug, Clone, PartialEq)]
pub enum Arch {
    /// Fusion network; `fine_beams` and `input_side` are taken from the dataset.
    Fusion(ModelConfig),
    SoftmaxRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub arch: Arch,
    pub train: TrainConfig,
}

impl TrainSpec {
    /// A freshly initialized model sized for `dataset`.
    pub fn init(&self, dataset: &Dataset) -> Result<Model> {
        let fine_beams = dataset.fine_beam_count();
        Ok(match &self.arch {
            Arch::Fusion(cfg) => {
                let cfg = ModelConfig {
                    fine_beams,
                    input_side: FEATURE_SIDE,
                    ..cfg.clone()
                };
                Model::Fusion(FusionModel::new(cfg, self.train.seed)?)
            }
            Arch::SoftmaxRef => Model::SoftmaxRef(SoftmaxRef::new(SoftmaxRefConfig {
                fine_beams,
                input_side: FEATURE_SIDE,
            })?),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub info: CheckpointInfo,
    pub history: History,
}

impl TrainedModel {
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        Ok(encode_checkpoint(&self.model, &self.info)?)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.checkpoint_bytes()?))
    }
}

/// Failed training; carries the last finite model when training diverged.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: AppError,
    pub last_good: Option<TrainedModel>,
}

fn split<'d>(dataset: &'d Dataset, s: Split) -> Vec<&'d DatasetSample> {
    dataset.indices(s).into_iter().map(|i| &dataset.samples()[i]).collect()
}

fn dataset_hash(dataset: &Dataset) -> Result<String> {
    let prov = serde_json::to_vec(dataset.provenance()).map_err(|e| AppError::Data(e.to_string()))?;
    Ok(sha256_hex(&prov))
}

/// Trains on the train split, selecting epochs on the val split.
pub fn train_model(dataset: &Dataset, spec: &TrainSpec) -> std::result::Result<TrainedModel, TrainFailure> {
    let fail = |error: AppError| TrainFailure { error, last_good: None };
    let model = spec.init(dataset).map_err(fail)?;
    let hash = dataset_hash(dataset).map_err(fail)?;
    let train_set = split(dataset, Split::Train);
    let val_set = split(dataset, Split::Val);
    info!(
        "training {} on {} samples ({} val) for {} epochs",
        model.arch_name(),
        train_set.len(),
        val_set.len(),
        spec.train.epochs
    );
    let info = |epoch, val_top1| CheckpointInfo {
        seed: spec.train.seed,
        epoch,
        val_top1,
        dataset_hash: Some(hash.clone()),
    };
    match train(model, &train_set, &val_set, &spec.train) {
        Ok(t) => Ok(TrainedModel {
            model: t.model,
            info: info(t.best_epoch, t.best_val_top1),
            history: t.history,
        }),
        Err(TrainError::Diverged { source, last_good, history }) => {
            let epoch = history.epochs.last().map(|r| r.epoch);
            let val = history.epochs.last().map(|r| r.val_top1);
            Err(TrainFailure {
                error: source.into(),
                last_good: Some(TrainedModel {
                    model: *last_good,
                    info: info(epoch, val),
                    history,
                }),
            })
        }
        Err(TrainError::Failed(e)) => Err(fail(e.into())),
    }
}

/// Parameters shared by every dataset in a cross-scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetParams {
    pub coarse: Resolution,
    pub fine: Resolution,
    pub snr_db: f64,
    pub fractions: SplitFractions,
    pub seed: u64,
}

impl DatasetParams {
    pub fn build(&self, scenario: &Scenario) -> Result<Dataset> {
        Ok(build_dataset(scenario, self.coarse, self.fine, self.snr_db, self.fractions, self.seed)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossConfig {
    pub data: DatasetParams,
    pub spec: TrainSpec,
    /// Seeds evaluation-time randomness.
    pub eval_seed: u64,
}

/// Trains once on `train_scenario` and scores the frozen model on the test
/// split of each test scenario's dataset. Reports carry the scenario names.
pub fn cross_scenario_eval(
    train_scenario: (&str, &Scenario),
    test_scenarios: &[(&str, &Scenario)],
    cfg: &CrossConfig,
) -> Result<Vec<EvalReport>> {
    let train_ds = cfg.data.build(train_scenario.1)?;
    let trained = train_model(&train_ds, &cfg.spec).map_err(|f| f.error)?;
    let opts = EvalOptions {
        split: Some(Split::Test),
        seed: cfg.eval_seed,
        timing: false,
        model_hash: Some(trained.hash()?),
    };
    test_scenarios
        .iter()
        .map(|&(name, scenario)| {
            let ds = cfg.data.build(scenario)?;
            let mut r = evaluate_policy(Policy::Model(&trained.model), &ds, &opts)?;
            r.train_scenario = Some(train_scenario.0.to_string());
            r.test_scenario = Some(name.to_string());
            Ok(r)
        })
        .collect()
}
