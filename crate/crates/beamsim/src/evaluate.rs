//! Running a beam-selection policy over a dataset split.

use std::time::Instant;

use beamsim_core::baseline::{exhaustive_search, hierarchical_search_with, SearchTrace};
use beamsim_core::channel::{noise_power_for_snr, synthesize_channel};
use beamsim_core::codebook::{parent_child_map, Codebook, HierarchyMap};
use beamsim_core::measurement::{achievable_rate, sector_codebooks, Dataset, DatasetSample, Split, FEATURE_SIDE};
use beamsim_core::parallel;
use beamsim_core::rng::derive_seed;
use beamsim_learn::checkpoint::Model;
use beamsim_learn::data::Batch;
use beamsim_learn::model::FusionKind;
use beamsim_learn::train::{predict_samples, Trainable};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::metrics::{median, top1_accuracy};

/// Untimed calls before timing starts.
pub const TIMING_WARMUP: usize = 3;

#[derive(Debug, Clone, Copy)]
pub enum Policy<'m> {
    /// A trained network (fusion model or the reference classifier).
    Model(&'m Model),
    Hierarchical,
    Exhaustive,
}

impl Policy<'_> {
    pub fn name(&self) -> String {
        match self {
            Policy::Model(Model::Fusion(m)) => match m.config().fusion {
                FusionKind::Auto => "fusion-auto".into(),
                FusionKind::Gan => "fusion-gan".into(),
                FusionKind::Concat => "fusion-concat".into(),
            },
            Policy::Model(Model::SoftmaxRef(_)) => "softmax-ref".into(),
            Policy::Hierarchical => "hc".into(),
            Policy::Exhaustive => "exhaustive".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `coarse->fine`, e.g. `4x4->16x16`.
    pub task: String,
    /// `None` for noiseless features.
    pub snr_db: Option<f64>,
    pub policy: String,
    pub train_scenario: Option<String>,
    pub test_scenario: Option<String>,
    pub top1: f64,
    /// Bits/s/Hz at the chosen beams; `None` when noiseless.
    pub mean_rate: Option<f64>,
    pub mean_measurements: f64,
    pub samples: usize,
    pub scenario_hash: String,
    pub model_hash: Option<String>,
    /// Median per-sample inference time, only when timing was requested.
    pub median_infer_us: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Split to score; `None` scores every sample.
    pub split: Option<Split>,
    /// Seeds the baselines' measurement noise.
    pub seed: u64,
    pub timing: bool,
    pub model_hash: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub rates: Vec<f64>,
    /// Search traces of the codebook baselines, one per sample.
    pub traces: Vec<SearchTrace>,
}

fn select(dataset: &Dataset, split: Option<Split>) -> Vec<&DatasetSample> {
    match split {
        Some(s) => dataset.indices(s).into_iter().map(|i| &dataset.samples()[i]).collect(),
        None => dataset.samples().iter().collect(),
    }
}

fn check_model(model: &Model, dataset: &Dataset) -> Result<()> {
    if model.fine_beams() != dataset.fine_beam_count() {
        return Err(AppError::Config(format!(
            "model predicts {} beams per sector but the dataset's fine codebook has {}",
            model.fine_beams(),
            dataset.fine_beam_count()
        )));
    }
    if model.input_side() != FEATURE_SIDE {
        return Err(AppError::Config(format!(
            "model expects {0}x{0} inputs, dataset features are {1}x{1}",
            model.input_side(),
            FEATURE_SIDE
        )));
    }
    Ok(())
}

fn timed_inference(model: &Model, samples: &[&DatasetSample]) -> Result<Option<f64>> {
    let one = |s: &DatasetSample| -> Result<()> {
        let batch = Batch::new(&[s], &model.scaler())?;
        model.predict(batch.x, &batch.sectors)?;
        Ok(())
    };
    for s in samples.iter().take(TIMING_WARMUP) {
        one(s)?;
    }
    let mut times = Vec::with_capacity(samples.len());
    for s in samples {
        let start = Instant::now();
        one(s)?;
        times.push(start.elapsed().as_secs_f64() * 1e6);
    }
    Ok(median(&times))
}

struct Books {
    coarse: Vec<Codebook>,
    fine: Vec<Codebook>,
    maps: Vec<HierarchyMap>,
}

fn books(dataset: &Dataset) -> Result<Books> {
    let p = dataset.provenance();
    let geom = &dataset.scenario().config.geometry;
    let coarse = sector_codebooks(p.coarse, geom)?;
    let fine = sector_codebooks(p.fine, geom)?;
    let maps = coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| parent_child_map(c, f))
        .collect::<beamsim_core::Result<_>>()?;
    Ok(Books { coarse, fine, maps })
}

/// Runs `policy` on the selected samples and scores it against the labels.
pub fn run_policy(policy: Policy, dataset: &Dataset, opts: &EvalOptions) -> Result<EvalOutcome> {
    let samples = select(dataset, opts.split);
    if samples.is_empty() {
        return Err(AppError::Data("no samples in the requested split".into()));
    }
    let prov = dataset.provenance();
    let snr = prov.snr();
    let books = books(dataset)?;
    let scenario = dataset.scenario();

    let (learned, timing) = match policy {
        Policy::Model(m) => {
            check_model(m, dataset)?;
            let preds = predict_samples(m, &samples)?;
            let timing = if opts.timing { timed_inference(m, &samples)? } else { None };
            (Some(preds.into_iter().map(|p| p.beam).collect::<Vec<_>>()), timing)
        }
        _ => (None, None),
    };

    type PerSample = (usize, Option<f64>, usize, Option<SearchTrace>);
    let per_sample: Vec<PerSample> = parallel::install(|| {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| -> Result<PerSample> {
                let ue = dataset
                    .ue(s.ue_id)
                    .ok_or_else(|| AppError::Data(format!("UE {} missing from the scenario", s.ue_id)))?;
                let k = s.sector.index();
                let h = synthesize_channel(&ue.rays, &scenario.config.geometry, &scenario.config.ofdm)?.normalized()?;
                let noise = noise_power_for_snr(&h, snr)?;
                let seed = derive_seed(opts.seed, u64::from(s.ue_id));
                let (beam, measurements, trace) = match (&learned, policy) {
                    (Some(preds), _) => (preds[i], books.coarse[k].len(), None),
                    (None, Policy::Hierarchical) => {
                        let t = hierarchical_search_with(&h, &books.coarse[k], &books.fine[k], &books.maps[k], noise, seed)?;
                        (t.final_beam, t.total_measurements, Some(t))
                    }
                    (None, _) => {
                        let t = exhaustive_search(&h, &books.fine[k], noise, seed)?;
                        (t.final_beam, t.total_measurements, Some(t))
                    }
                };
                if beam >= books.fine[k].len() {
                    return Err(AppError::Data(format!("predicted beam {beam} out of range")));
                }
                let rate = if snr.is_finite() {
                    Some(achievable_rate(&h, &books.fine[k].beam(beam).vector, noise)?)
                } else {
                    None
                };
                Ok((beam, rate, measurements, trace))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let predictions: Vec<usize> = per_sample.iter().map(|p| p.0).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label as usize).collect();
    let rates: Vec<f64> = per_sample.iter().filter_map(|p| p.1).collect();
    let n = samples.len() as f64;
    let report = EvalReport {
        task: format!("{}->{}", prov.coarse, prov.fine),
        snr_db: prov.snr_db,
        policy: policy.name(),
        train_scenario: None,
        test_scenario: None,
        top1: top1_accuracy(&predictions, &labels)?,
        mean_rate: (rates.len() == samples.len()).then(|| rates.iter().sum::<f64>() / n),
        mean_measurements: per_sample.iter().map(|p| p.2 as f64).sum::<f64>() / n,
        samples: samples.len(),
        scenario_hash: prov.scenario_hash.clone(),
        model_hash: match policy {
            Policy::Model(_) => opts.model_hash.clone(),
            _ => None,
        },
        median_infer_us: timing,
    };
    Ok(EvalOutcome {
        report,
        predictions,
        labels,
        rates,
        traces: per_sample.into_iter().filter_map(|p| p.3).collect(),
    })
}

pub fn evaluate_policy(policy: Policy, dataset: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    Ok(run_policy(policy, dataset, opts)?.report)
}
