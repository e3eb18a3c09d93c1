//! Sectorized DFT codebooks and the coarse→fine beam hierarchy.
//!
//! A codebook of resolution `X1 × X2` quantizes the sector's 120° azimuth span
//! into `X1` steps starting at the sector's `theta_min` and the elevation span
//! `[-90, 90)` into `X2` steps. Beam `(k, l)` has index `k * X2 + l`.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cis_pi, UpaGeometry};

/// Azimuth span covered by one sector, in degrees.
pub const SECTOR_SPAN_DEG: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SectorId(u8);

impl SectorId {
    pub const ALL: [SectorId; 3] = [SectorId(1), SectorId(2), SectorId(3)];

    pub fn new(id: u8) -> Result<Self> {
        if (1..=3).contains(&id) {
            Ok(Self(id))
        } else {
            Err(Error::InvalidArgument(format!("sector id {id} not in {{1, 2, 3}}")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based position, handy for indexing per-sector arrays.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::new(u8::try_from(i + 1).unwrap_or(0))
    }

    /// Starting azimuth: −30°, 90°, 210°.
    pub fn theta_min(self) -> f64 {
        -30.0 + SECTOR_SPAN_DEG * self.index() as f64
    }
}

impl TryFrom<u8> for SectorId {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        SectorId::new(v)
    }
}

impl From<SectorId> for u8 {
    fn from(s: SectorId) -> u8 {
        s.0
    }
}

impl fmt::Display for SectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Codebook resolution `X1 × X2` (azimuth × elevation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub azimuth: usize,
    pub elevation: usize,
}

impl Resolution {
    pub fn new(azimuth: usize, elevation: usize) -> Result<Self> {
        if azimuth == 0 || elevation == 0 {
            return Err(Error::InvalidArgument(format!(
                "resolution {azimuth}x{elevation} must be positive"
            )));
        }
        Ok(Self { azimuth, elevation })
    }

    pub fn beam_count(&self) -> usize {
        self.azimuth * self.elevation
    }

    /// True when `self` is at least as fine as `other` on both axes.
    pub fn refines(&self, other: &Resolution) -> bool {
        self.azimuth >= other.azimuth && self.elevation >= other.elevation
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, e) = s
            .split_once(['x', 'X', '×'])
            .ok_or_else(|| Error::InvalidArgument(format!("resolution {s:?} is not of the form AxE")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad resolution component {t:?}")))
        };
        Resolution::new(parse(a)?, parse(e)?)
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.azimuth, self.elevation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamEntry {
    pub index: usize,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub vector: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    sector: SectorId,
    resolution: Resolution,
    theta_min: f64,
    beams: Vec<BeamEntry>,
    /// Beam vectors as columns, `M × beams`.
    matrix: Array2<Complex64>,
}

impl Codebook {
    pub fn sector(&self) -> SectorId {
        self.sector
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn theta_min(&self) -> f64 {
        self.theta_min
    }

    pub fn beams(&self) -> &[BeamEntry] {
        &self.beams
    }

    pub fn beam(&self, index: usize) -> &BeamEntry {
        &self.beams[index]
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    /// Beam vectors stacked as columns (`M × beams`).
    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.matrix
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    /// Vector length `M`.
    pub fn beam_length(&self) -> usize {
        self.beams.first().map_or(0, |b| b.vector.len())
    }

    pub fn to_export(&self) -> CodebookExport {
        CodebookExport {
            sector: self.sector.get(),
            resolution: [self.resolution.azimuth, self.resolution.elevation],
            theta_min: self.theta_min,
            beams: self
                .beams
                .iter()
                .map(|b| BeamExport {
                    index: b.index,
                    theta_deg: b.azimuth_deg,
                    phi_deg: b.elevation_deg,
                    vector: b.vector.iter().flat_map(|z| [z.re, z.im]).collect(),
                })
                .collect(),
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let text = serde_json::to_string_pretty(&self.to_export())
            .map_err(|e| Error::Invalid(e.to_string()))?;
        file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// JSON form: beam vectors as interleaved `re, im` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookExport {
    pub sector: u8,
    pub resolution: [usize; 2],
    pub theta_min: f64,
    pub beams: Vec<BeamExport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamExport {
    pub index: usize,
    pub theta_deg: f64,
    pub phi_deg: f64,
    pub vector: Vec<f64>,
}

/// Grid of `(θ, φ)` pairs in degrees, row-major in `(k, l)`.
pub fn angle_grid(x1: usize, x2: usize, theta_min: f64) -> Result<Vec<(f64, f64)>> {
    let res = Resolution::new(x1, x2)?;
    let az_step = SECTOR_SPAN_DEG / res.azimuth as f64;
    let el_step = 180.0 / res.elevation as f64;
    let mut grid = Vec::with_capacity(res.beam_count());
    for k in 0..x1 {
        for l in 0..x2 {
            grid.push((theta_min + az_step * k as f64, -90.0 + el_step * l as f64));
        }
    }
    Ok(grid)
}

/// `m × n` beamforming matrix with entry `(r, c) = a^(m-1-r) · b^c`, where
/// `a = exp(jπ sinθ)` and `b = exp(-jπ cosθ cosφ)`.
pub fn bf_matrix(theta_deg: f64, phi_deg: f64, m: usize, n: usize) -> Result<Array2<Complex64>> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!("bf matrix {m}x{n} must be non-empty")));
    }
    let (sin_t, cos_t) = theta_deg.to_radians().sin_cos();
    let cos_p = phi_deg.to_radians().cos();
    let a_turns = sin_t;
    let b_turns = -cos_t * cos_p;
    Ok(Array2::from_shape_fn((m, n), |(r, c)| {
        cis_pi(a_turns * (m - 1 - r) as f64 + b_turns * c as f64)
    }))
}

/// Rows and columns of the 2-D beamforming matrix for a planar geometry.
///
/// Columns follow the fastest-varying non-degenerate axis of the Kronecker
/// flattening, rows the slower one, so row-major unfolding matches the
/// steering-vector element order.
fn planar_shape(geom: &UpaGeometry) -> Result<(usize, usize)> {
    match (geom.m_x(), geom.m_y(), geom.m_z()) {
        (mx, my, 1) => Ok((my, mx)),
        (mx, 1, mz) => Ok((mz, mx)),
        (1, my, mz) => Ok((mz, my)),
        (mx, my, mz) => Err(Error::InvalidGeometry(format!(
            "{mx}x{my}x{mz} array has no planar unfolding; one axis must have a single element"
        ))),
    }
}

pub fn build_codebook(
    sector: SectorId,
    resolution: Resolution,
    geom: &UpaGeometry,
) -> Result<Codebook> {
    let (rows, cols) = planar_shape(geom)?;
    let theta_min = sector.theta_min();
    let grid = angle_grid(resolution.azimuth, resolution.elevation, theta_min)?;
    let beams = grid
        .into_iter()
        .enumerate()
        .map(|(index, (theta, phi))| {
            let f = bf_matrix(theta, phi, rows, cols)?;
            let norm = f.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let vector = f.iter().map(|z| z / norm).collect();
            Ok(BeamEntry {
                index,
                azimuth_deg: theta,
                elevation_deg: phi,
                vector,
            })
        })
        .collect::<Result<Vec<BeamEntry>>>()?;
    let matrix = Array2::from_shape_fn((rows * cols, beams.len()), |(e, b)| beams[b].vector[e]);
    Ok(Codebook {
        sector,
        resolution,
        theta_min,
        beams,
        matrix,
    })
}

/// Parent/child relation between a coarse and a fine codebook of one sector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierarchyMap {
    children: Vec<Vec<usize>>,
    parent: Vec<usize>,
}

impl HierarchyMap {
    pub fn children(&self, coarse_index: usize) -> &[usize] {
        &self.children[coarse_index]
    }

    pub fn parent(&self, fine_index: usize) -> usize {
        self.parent[fine_index]
    }

    pub fn coarse_len(&self) -> usize {
        self.children.len()
    }

    pub fn fine_len(&self) -> usize {
        self.parent.len()
    }
}

/// Assigns each fine beam to the coarse beam whose half-open angular cell
/// contains it.
///
/// Cell membership is decided in grid-index space: fine azimuth index `k'`
/// sits at `θ_min + 120·k'/X1'`, inside coarse cell `k` iff
/// `k ≤ k'·X1/X1' < k + 1`. Integer division makes this exact.
pub fn parent_child_map(coarse: &Codebook, fine: &Codebook) -> Result<HierarchyMap> {
    if coarse.sector != fine.sector {
        return Err(Error::InvalidArgument(format!(
            "codebooks belong to different sectors ({} vs {})",
            coarse.sector, fine.sector
        )));
    }
    let (c, f) = (coarse.resolution, fine.resolution);
    if !f.refines(&c) {
        return Err(Error::InvalidArgument(format!(
            "fine resolution {f} does not refine coarse resolution {c}"
        )));
    }
    let mut children = vec![Vec::new(); c.beam_count()];
    let mut parent = Vec::with_capacity(f.beam_count());
    for kf in 0..f.azimuth {
        for lf in 0..f.elevation {
            let k = kf * c.azimuth / f.azimuth;
            let l = lf * c.elevation / f.elevation;
            let p = k * c.elevation + l;
            children[p].push(kf * f.elevation + lf);
            parent.push(p);
        }
    }
    for list in &mut children {
        list.sort_unstable();
    }
    Ok(HierarchyMap { children, parent })
}
