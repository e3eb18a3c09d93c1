//! Multipath OFDM channel synthesis and SNR-controlled noise.

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{array_response, AnglePair, UpaGeometry};
use crate::rng::rng_from_seed;

/// One propagation path. Power is kept in dB as exported by ray tracers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayPath {
    pub power_db: f64,
    pub phase_rad: f64,
    pub delay_s: f64,
    pub departure: AnglePair,
    pub is_los: bool,
}

impl RayPath {
    pub fn new(
        power_db: f64,
        phase_rad: f64,
        delay_s: f64,
        departure: AnglePair,
        is_los: bool,
    ) -> Result<Self> {
        let ray = Self {
            power_db,
            phase_rad,
            delay_s,
            departure,
            is_los,
        };
        ray.validate()?;
        Ok(ray)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.power_db.is_finite() || self.linear_power() <= 0.0 {
            return Err(Error::Invalid(format!(
                "ray power {} dB is not a positive finite power",
                self.power_db
            )));
        }
        if !self.phase_rad.is_finite() {
            return Err(Error::Invalid(format!("ray phase {} is not finite", self.phase_rad)));
        }
        if !(self.delay_s.is_finite() && self.delay_s >= 0.0) {
            return Err(Error::Invalid(format!("ray delay {} must be ≥ 0", self.delay_s)));
        }
        Ok(())
    }

    pub fn linear_power(&self) -> f64 {
        10f64.powf(self.power_db / 10.0)
    }
}

/// OFDM numerology: `K` subcarriers spanning `B` Hz, of which a subset is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOfdm", into = "RawOfdm")]
pub struct OfdmConfig {
    num_subcarriers: usize,
    bandwidth_hz: f64,
    selected: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawOfdm {
    num_subcarriers: usize,
    bandwidth_hz: f64,
    #[serde(default)]
    selected_subcarriers: Option<Vec<usize>>,
}

impl TryFrom<RawOfdm> for OfdmConfig {
    type Error = Error;

    fn try_from(raw: RawOfdm) -> Result<Self> {
        let selected = raw
            .selected_subcarriers
            .unwrap_or_else(|| (0..raw.num_subcarriers).collect());
        OfdmConfig::new(raw.num_subcarriers, raw.bandwidth_hz, selected)
    }
}

impl From<OfdmConfig> for RawOfdm {
    fn from(c: OfdmConfig) -> Self {
        RawOfdm {
            num_subcarriers: c.num_subcarriers,
            bandwidth_hz: c.bandwidth_hz,
            selected_subcarriers: Some(c.selected),
        }
    }
}

impl Default for OfdmConfig {
    /// 256 subcarriers over 10 MHz, all selected.
    fn default() -> Self {
        Self {
            num_subcarriers: 256,
            bandwidth_hz: 10e6,
            selected: (0..256).collect(),
        }
    }
}

impl OfdmConfig {
    pub fn new(num_subcarriers: usize, bandwidth_hz: f64, selected: Vec<usize>) -> Result<Self> {
        if num_subcarriers == 0 {
            return Err(Error::InvalidArgument("subcarrier count must be positive".into()));
        }
        if !(bandwidth_hz.is_finite() && bandwidth_hz > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bandwidth must be positive, got {bandwidth_hz}"
            )));
        }
        if selected.is_empty() {
            return Err(Error::InvalidArgument("selected subcarrier set is empty".into()));
        }
        let mut seen = vec![false; num_subcarriers];
        for &k in &selected {
            if k >= num_subcarriers {
                return Err(Error::InvalidArgument(format!(
                    "selected subcarrier {k} out of range [0, {num_subcarriers})"
                )));
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::InvalidArgument(format!("subcarrier {k} selected twice")));
            }
        }
        Ok(Self {
            num_subcarriers,
            bandwidth_hz,
            selected,
        })
    }

    /// All subcarriers selected.
    pub fn full(num_subcarriers: usize, bandwidth_hz: f64) -> Result<Self> {
        Self::new(num_subcarriers, bandwidth_hz, (0..num_subcarriers).collect())
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.bandwidth_hz
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }
}

/// Channel entries stacked as `(selected subcarrier, element)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    rows: usize,
    cols: usize,
    entries: Vec<Complex64>,
}

impl ChannelTensor {
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("channel tensor must be non-empty".into()));
        }
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "channel tensor entries",
                expected: rows * cols,
                actual: entries.len(),
            });
        }
        if entries.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::Invalid("channel tensor contains non-finite entries".into()));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    /// Number of subcarrier rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of antenna elements per row.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn row(&self, k: usize) -> &[Complex64] {
        &self.entries[k * self.cols..(k + 1) * self.cols]
    }

    /// Squared Frobenius norm.
    pub fn energy(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Copy scaled to unit Frobenius norm.
    pub fn normalized(&self) -> Result<Self> {
        let e = self.energy();
        if e <= 0.0 {
            return Err(Error::ZeroEnergy);
        }
        let s = 1.0 / e.sqrt();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|z| z * s).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "channel addition",
                expected: self.entries.len(),
                actual: other.entries.len(),
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect(),
        })
    }
}

/// Sums the ray contributions on every selected subcarrier.
pub fn synthesize_channel(
    paths: &[RayPath],
    geom: &UpaGeometry,
    ofdm: &OfdmConfig,
) -> Result<ChannelTensor> {
    if paths.is_empty() {
        return Err(Error::NoPaths);
    }
    let m = geom.element_count();
    let k_total = ofdm.num_subcarriers() as f64;
    let rows = ofdm.selected().len();
    let mut entries = vec![Complex64::new(0.0, 0.0); rows * m];
    for path in paths {
        path.validate()?;
        let response = array_response(path.departure, geom);
        let amplitude = (path.linear_power() / k_total).sqrt();
        let delay_turns = path.delay_s * ofdm.bandwidth_hz() / k_total;
        for (row, &k) in ofdm.selected().iter().enumerate() {
            let phase = path.phase_rad + 2.0 * std::f64::consts::PI * k as f64 * delay_turns;
            let coeff = Complex64::from_polar(amplitude, phase);
            let dst = &mut entries[row * m..(row + 1) * m];
            for (d, a) in dst.iter_mut().zip(&response) {
                *d += coeff * a;
            }
        }
    }
    ChannelTensor::from_entries(rows, m, entries)
}

/// Noise power that puts `h` at `snr_db`. `+∞` yields zero noise.
pub fn noise_power_for_snr(h: &ChannelTensor, snr_db: f64) -> Result<f64> {
    let energy = h.energy();
    if energy <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidArgument("SNR is NaN".into()));
    }
    Ok(energy / 10f64.powf(snr_db / 10.0))
}

pub fn snr_of(h: &ChannelTensor, noise_power: f64) -> Result<f64> {
    let energy = h.energy();
    if energy <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    if !(noise_power.is_finite() && noise_power > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise power must be positive, got {noise_power}"
        )));
    }
    Ok(10.0 * (energy / noise_power).log10())
}

/// Adds circularly-symmetric Gaussian noise whose expected total energy is
/// `noise_power`, i.e. per-entry variance `noise_power / entries`.
///
/// Draws are taken in entry order, real part first, from a ChaCha8 stream
/// seeded with `seed`.
pub fn add_noise(h: &ChannelTensor, noise_power: f64, seed: u64) -> Result<ChannelTensor> {
    if !(noise_power.is_finite() && noise_power >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise power must be ≥ 0, got {noise_power}"
        )));
    }
    if noise_power == 0.0 {
        return Ok(h.clone());
    }
    let sigma = (noise_power / h.entries.len() as f64 / 2.0).sqrt();
    let mut rng = rng_from_seed(seed);
    let entries = h
        .entries
        .iter()
        .map(|z| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            z + Complex64::new(sigma * re, sigma * im)
        })
        .collect();
    Ok(ChannelTensor {
        rows: h.rows,
        cols: h.cols,
        entries,
    })
}
