//! Codebook-search baselines: two-stage hierarchical (coarse then the
//! winner's children) and exhaustive fine sweeps, with measurement traces.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::{add_noise, ChannelTensor};
use crate::codebook::{parent_child_map, Codebook, HierarchyMap};
use crate::error::{Error, Result};
use crate::measurement::{argmax, sweep, sweep_subset};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Resolution label of the swept codebook, e.g. `4x4`.
    pub codebook: String,
    pub measured: Vec<usize>,
    pub rsrp: Vec<f64>,
    /// Winning index within that codebook.
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub stages: Vec<StageRecord>,
    pub total_measurements: usize,
    pub final_beam: usize,
}

impl SearchTrace {
    fn from_stages(stages: Vec<StageRecord>) -> Self {
        let total_measurements = stages.iter().map(|s| s.measured.len()).sum();
        let final_beam = stages.last().map_or(0, |s| s.selected);
        Self {
            stages,
            total_measurements,
            final_beam,
        }
    }
}

/// Two-stage search with an independent noise draw per stage.
pub fn hierarchical_search(
    h: &ChannelTensor,
    coarse: &Codebook,
    fine: &Codebook,
    noise_power: f64,
    seed: u64,
) -> Result<SearchTrace> {
    let map = parent_child_map(coarse, fine)?;
    hierarchical_search_with(h, coarse, fine, &map, noise_power, seed)
}

/// As [`hierarchical_search`], reusing a precomputed hierarchy.
pub fn hierarchical_search_with(
    h: &ChannelTensor,
    coarse: &Codebook,
    fine: &Codebook,
    map: &HierarchyMap,
    noise_power: f64,
    seed: u64,
) -> Result<SearchTrace> {
    if map.coarse_len() != coarse.len() || map.fine_len() != fine.len() {
        return Err(Error::InvalidArgument("hierarchy does not match the codebooks".into()));
    }
    let first = add_noise(h, noise_power, derive_seed(seed, 0))?;
    let grid = sweep(&first, coarse)?;
    let winner = argmax(grid.values());
    let stage1 = StageRecord {
        codebook: coarse.resolution().to_string(),
        measured: (0..coarse.len()).collect(),
        rsrp: grid.values().to_vec(),
        selected: winner,
    };

    let children = map.children(winner).to_vec();
    let second = add_noise(h, noise_power, derive_seed(seed, 1))?;
    let rsrp = sweep_subset(&second, fine, &children)?;
    let stage2 = StageRecord {
        codebook: fine.resolution().to_string(),
        selected: children[argmax(&rsrp)],
        measured: children,
        rsrp,
    };
    Ok(SearchTrace::from_stages(vec![stage1, stage2]))
}

/// Noisy sweep over every fine beam.
pub fn exhaustive_search(
    h: &ChannelTensor,
    fine: &Codebook,
    noise_power: f64,
    seed: u64,
) -> Result<SearchTrace> {
    let noisy = add_noise(h, noise_power, derive_seed(seed, 0))?;
    let grid = sweep(&noisy, fine)?;
    let stage = StageRecord {
        codebook: fine.resolution().to_string(),
        measured: (0..fine.len()).collect(),
        selected: argmax(grid.values()),
        rsrp: grid.values().to_vec(),
    };
    Ok(SearchTrace::from_stages(vec![stage]))
}

/// One JSON object per line.
pub fn write_traces_jsonl<W: Write>(traces: &[SearchTrace], mut out: W) -> Result<()> {
    for t in traces {
        let line = serde_json::to_string(t)
            .map_err(|e| Error::Invalid(format!("serializing trace: {e}")))?;
        writeln!(out, "{line}").map_err(|e| Error::io("trace output", e))?;
    }
    Ok(())
}
