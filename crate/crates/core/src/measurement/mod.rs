//! RSRP sweeps, the best-beam oracle, achievable rate and feature
//! preprocessing.
//!
//! RSRP of a beam is the beamformed energy `|h_kᵀ f|²` averaged over the
//! selected subcarriers, so values stay comparable across OFDM
//! configurations.

mod dataset;

use std::cell::Cell;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;

use crate::channel::ChannelTensor;
use crate::codebook::{Codebook, Resolution, SectorId};
use crate::error::{Error, Result};

pub use dataset::{
    build_dataset, build_sample, load_dataset, save_dataset, sector_codebooks, Dataset,
    DatasetMeta, DatasetSample, Provenance, Split, SplitCounts, SplitFractions, FEATURE_LEN,
    FEATURE_SIDE, RECORD_BYTES,
};

thread_local! {
    static RSRP_EVALUATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of single-beam RSRP evaluations performed on this thread so far.
pub fn rsrp_evaluations() -> u64 {
    RSRP_EVALUATIONS.with(Cell::get)
}

fn count_evaluations(n: usize) {
    RSRP_EVALUATIONS.with(|c| c.set(c.get() + n as u64));
}

/// RSRP values of a codebook sweep, row-major in codebook grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct RsrpGrid {
    values: Vec<f64>,
    resolution: Resolution,
    sector: SectorId,
}

impl RsrpGrid {
    pub fn new(values: Vec<f64>, resolution: Resolution, sector: SectorId) -> Result<Self> {
        if values.len() != resolution.beam_count() {
            return Err(Error::DimensionMismatch {
                context: "rsrp grid",
                expected: resolution.beam_count(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Invalid("rsrp grid values must be finite and ≥ 0".into()));
        }
        Ok(Self {
            values,
            resolution,
            sector,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn sector(&self) -> SectorId {
        self.sector
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.values[k * self.resolution.elevation + l]
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_vec(
            (self.resolution.azimuth, self.resolution.elevation),
            self.values.clone(),
        )
        .expect("length checked at construction")
    }
}

pub fn rsrp(h: &ChannelTensor, beam: &[Complex64]) -> Result<f64> {
    if beam.len() != h.cols() {
        return Err(Error::DimensionMismatch {
            context: "rsrp beam length",
            expected: h.cols(),
            actual: beam.len(),
        });
    }
    count_evaluations(1);
    let total: f64 = (0..h.rows())
        .map(|k| {
            h.row(k)
                .iter()
                .zip(beam)
                .map(|(a, b)| a * b)
                .sum::<Complex64>()
                .norm_sqr()
        })
        .sum();
    Ok(total / h.rows() as f64)
}

fn channel_view(h: &ChannelTensor) -> ArrayView2<'_, Complex64> {
    ArrayView2::from_shape((h.rows(), h.cols()), h.entries()).expect("tensor shape invariant")
}

/// RSRP of every beam in `cb`, via one matrix product.
pub fn sweep(h: &ChannelTensor, cb: &Codebook) -> Result<RsrpGrid> {
    if cb.beam_length() != h.cols() {
        return Err(Error::DimensionMismatch {
            context: "sweep beam length",
            expected: h.cols(),
            actual: cb.beam_length(),
        });
    }
    count_evaluations(cb.len());
    let products = channel_view(h).dot(cb.matrix());
    let rows = h.rows() as f64;
    let values = products
        .columns()
        .into_iter()
        .map(|col| col.iter().map(|z| z.norm_sqr()).sum::<f64>() / rows)
        .collect();
    RsrpGrid::new(values, cb.resolution(), cb.sector())
}

/// RSRP of the listed beams only, in the order given.
pub fn sweep_subset(h: &ChannelTensor, cb: &Codebook, indices: &[usize]) -> Result<Vec<f64>> {
    indices
        .iter()
        .map(|&i| {
            let beam = cb.beams().get(i).ok_or_else(|| {
                Error::InvalidArgument(format!("beam {i} outside codebook of {}", cb.len()))
            })?;
            rsrp(h, &beam.vector)
        })
        .collect()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn best_beam(grid: &RsrpGrid) -> usize {
    argmax(grid.values())
}

/// `log2(1 + rsrp / noise_power)` in bits/s/Hz.
pub fn achievable_rate(h: &ChannelTensor, beam: &[Complex64], noise_power: f64) -> Result<f64> {
    if !(noise_power.is_finite() && noise_power > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise power must be positive, got {noise_power}"
        )));
    }
    Ok(rate_from_ratio(rsrp(h, beam)? / noise_power))
}

pub fn rate_from_ratio(snr_linear: f64) -> f64 {
    (1.0 + snr_linear).log2()
}

/// Align-corners bilinear resampling: the four input corners land exactly on
/// the output corners and interior points blend their four neighbours.
pub fn bilinear_upsample(grid: &Array2<f64>, out_h: usize, out_w: usize) -> Result<Array2<f64>> {
    let (in_h, in_w) = grid.dim();
    if in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("bilinear resampling needs non-empty grids".into()));
    }
    if (in_h == 1 && out_h > 1) || (in_w == 1 && out_w > 1) {
        return Err(Error::InvalidArgument(format!(
            "cannot interpolate a {in_h}x{in_w} grid up to {out_h}x{out_w}"
        )));
    }
    let axis = |n_in: usize, n_out: usize, i: usize| -> (usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0.0);
        }
        let x = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let x0 = (x.floor() as usize).min(n_in - 2);
        (x0, x - x0 as f64)
    };
    let mut out = Array2::zeros((out_h, out_w));
    for i in 0..out_h {
        let (y0, ty) = axis(in_h, out_h, i);
        let y1 = (y0 + 1).min(in_h - 1);
        for j in 0..out_w {
            let (x0, tx) = axis(in_w, out_w, j);
            let x1 = (x0 + 1).min(in_w - 1);
            let q11 = grid[[y0, x0]];
            let q21 = grid[[y0, x1]];
            let q12 = grid[[y1, x0]];
            let q22 = grid[[y1, x1]];
            out[[i, j]] = (1.0 - tx) * (1.0 - ty) * q11
                + tx * (1.0 - ty) * q21
                + (1.0 - tx) * ty * q12
                + tx * ty * q22;
        }
    }
    Ok(out)
}

/// Zero-mean, unit-variance copy; a constant input maps to zeros.
pub fn standardize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > 0.0 && std.is_finite() {
        values.iter().map(|v| (v - mean) / std).collect()
    } else {
        vec![0.0; values.len()]
    }
}
