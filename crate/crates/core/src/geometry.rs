//! Uniform planar array geometry and steering vectors.
//!
//! Angles enter the API in degrees. Element ordering follows the Kronecker
//! product `a_z ⊗ a_y ⊗ a_x`, i.e. the flat index of element `(n_x, n_y, n_z)`
//! is `(n_z * m_y + n_y) * m_x + n_x` with `x` varying fastest. Codebook
//! vectors use the same ordering so beams and channels agree element for
//! element.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `exp(j·π·half_turns)`, exact when `half_turns` is a multiple of one half.
pub fn cis_pi(half_turns: f64) -> Complex64 {
    let r = half_turns.rem_euclid(2.0);
    if r == 0.0 {
        Complex64::new(1.0, 0.0)
    } else if r == 0.5 {
        Complex64::new(0.0, 1.0)
    } else if r == 1.0 {
        Complex64::new(-1.0, 0.0)
    } else if r == 1.5 {
        Complex64::new(0.0, -1.0)
    } else {
        let (s, c) = (std::f64::consts::PI * r).sin_cos();
        Complex64::new(c, s)
    }
}

/// Departure direction in degrees.
///
/// `elevation` is the polar angle measured from the array axis used by the
/// `z` steering vector, restricted to `[-90, 90]`. Azimuth is wrapped into
/// `[-180, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnglePair {
    azimuth: f64,
    elevation: f64,
}

impl AnglePair {
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        if !azimuth_deg.is_finite() || !elevation_deg.is_finite() {
            return Err(Error::InvalidAngle(format!(
                "non-finite angle ({azimuth_deg}, {elevation_deg})"
            )));
        }
        if !(-90.0..=90.0).contains(&elevation_deg) {
            return Err(Error::InvalidAngle(format!(
                "elevation {elevation_deg} outside [-90, 90]"
            )));
        }
        Ok(Self {
            azimuth: wrap_degrees(azimuth_deg),
            elevation: elevation_deg,
        })
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    /// Per-axis phase progressions `[sin(el)cos(az), sin(el)sin(az), cos(el)]`.
    pub fn direction_cosines(&self) -> [f64; 3] {
        let az = self.azimuth.to_radians();
        let el = self.elevation.to_radians();
        let (sin_el, cos_el) = el.sin_cos();
        [sin_el * az.cos(), sin_el * az.sin(), cos_el]
    }
}

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn wrap_degrees(deg: f64) -> f64 {
    let w = (deg + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 180.0 {
        w - 360.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::InvalidArgument(format!("unknown axis tag {other:?}"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

/// Element counts per axis and the inter-element spacing in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry", into = "RawGeometry")]
pub struct UpaGeometry {
    m_x: usize,
    m_y: usize,
    m_z: usize,
    spacing: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGeometry {
    m_x: usize,
    m_y: usize,
    m_z: usize,
    #[serde(default = "default_spacing")]
    spacing: f64,
}

fn default_spacing() -> f64 {
    0.5
}

impl TryFrom<RawGeometry> for UpaGeometry {
    type Error = Error;

    fn try_from(raw: RawGeometry) -> Result<Self> {
        UpaGeometry::with_spacing(raw.m_x, raw.m_y, raw.m_z, raw.spacing)
    }
}

impl From<UpaGeometry> for RawGeometry {
    fn from(g: UpaGeometry) -> Self {
        RawGeometry {
            m_x: g.m_x,
            m_y: g.m_y,
            m_z: g.m_z,
            spacing: g.spacing,
        }
    }
}

impl Default for UpaGeometry {
    /// The 8×8 half-wavelength panel used by every sector.
    fn default() -> Self {
        Self {
            m_x: 8,
            m_y: 8,
            m_z: 1,
            spacing: 0.5,
        }
    }
}

impl UpaGeometry {
    pub fn new(m_x: usize, m_y: usize, m_z: usize) -> Result<Self> {
        Self::with_spacing(m_x, m_y, m_z, 0.5)
    }

    pub fn with_spacing(m_x: usize, m_y: usize, m_z: usize, spacing: f64) -> Result<Self> {
        if m_x == 0 || m_y == 0 || m_z == 0 {
            return Err(Error::InvalidGeometry(format!(
                "element counts must be positive, got ({m_x}, {m_y}, {m_z})"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be positive, got {spacing}"
            )));
        }
        Ok(Self {
            m_x,
            m_y,
            m_z,
            spacing,
        })
    }

    pub fn m_x(&self) -> usize {
        self.m_x
    }

    pub fn m_y(&self) -> usize {
        self.m_y
    }

    pub fn m_z(&self) -> usize {
        self.m_z
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Total element count `M`.
    pub fn element_count(&self) -> usize {
        self.m_x * self.m_y * self.m_z
    }

    pub fn count(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.m_x,
            Axis::Y => self.m_y,
            Axis::Z => self.m_z,
        }
    }

    /// Flat element index of `(n_x, n_y, n_z)`.
    pub fn flat_index(&self, n_x: usize, n_y: usize, n_z: usize) -> usize {
        (n_z * self.m_y + n_y) * self.m_x + n_x
    }
}

/// One-axis steering vector: element `n` is `exp(j·2π·spacing·n·g)` where `g`
/// is the axis direction cosine of `angles`.
pub fn steering_axis(
    angles: AnglePair,
    count: usize,
    axis: Axis,
    spacing: f64,
) -> Result<Vec<Complex64>> {
    if count == 0 {
        return Err(Error::InvalidArgument("steering vector length must be ≥ 1".into()));
    }
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "spacing must be positive, got {spacing}"
        )));
    }
    let g = angles.direction_cosines()[axis.index()];
    // k·d = 2π·spacing, expressed in half turns
    let step = 2.0 * spacing * g;
    Ok((0..count).map(|n| cis_pi(step * n as f64)).collect())
}

/// Kronecker product of two vectors, `a` varying slowest.
pub fn kron(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        out.extend(b.iter().map(|&y| x * y));
    }
    out
}

/// Full array response `a_z ⊗ a_y ⊗ a_x` of length `M`.
pub fn array_response(angles: AnglePair, geom: &UpaGeometry) -> Vec<Complex64> {
    let axis = |a: Axis| {
        steering_axis(angles, geom.count(a), a, geom.spacing)
            .expect("geometry invariants guarantee positive counts and spacing")
    };
    kron(&kron(&axis(Axis::Z), &axis(Axis::Y)), &axis(Axis::X))
}
