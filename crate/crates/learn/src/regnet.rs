use serde::{Deserialize, Serialize};

use crate::error::{LearnError, Result};

/// Parameters of the quantized linear width rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegnetParams {
    pub w_a: f64,
    pub w_0: f64,
    pub w_m: f64,
    pub depth: usize,
}

impl Default for RegnetParams {
    fn default() -> Self {
        Self {
            w_a: 31.41,
            w_0: 96.0,
            w_m: 2.24,
            depth: 22,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub width: usize,
    pub depth: usize,
}

/// Per-block widths `w_0·w_m^round(log(w̄_i/w_0)/log w_m)` with
/// `w̄_i = w_0 + w_a·i`, rounded and grouped into stages of equal width.
pub fn regnet_widths(p: &RegnetParams) -> Result<Vec<Stage>> {
    if !(p.w_a > 0.0 && p.w_0 > 0.0 && p.w_m > 1.0 && p.depth >= 1) {
        return Err(LearnError::Config(format!(
            "regnet parameters need w_a > 0, w_0 > 0, w_m > 1, d ≥ 1; got {p:?}"
        )));
    }
    let mut stages: Vec<Stage> = Vec::new();
    for i in 0..p.depth {
        let linear = p.w_0 + p.w_a * i as f64;
        let exponent = ((linear / p.w_0).ln() / p.w_m.ln()).round();
        let width = (p.w_0 * p.w_m.powf(exponent)).round() as usize;
        match stages.last_mut() {
            Some(s) if s.width == width => s.depth += 1,
            _ => stages.push(Stage { width, depth: 1 }),
        }
    }
    Ok(stages)
}
