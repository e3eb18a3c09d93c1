//! Parameterized layers and the two branch backbones.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LearnError, Result};
use crate::graph::{BatchStats, ConvSpec, Graph, NormStats, Var};
use crate::params::{he_uniform, BufferId, ParamId, ParamStore};
use crate::regnet::{regnet_widths, RegnetParams};
use crate::tensor::DenseTensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A pending running-statistics update produced by a training-mode
/// normalization layer.
#[derive(Debug, Clone)]
pub struct StatUpdate {
    mean: BufferId,
    var: BufferId,
    stats: BatchStats,
}

/// One forward pass: the tape plus the side effects it will cause.
pub struct Forward<'s> {
    pub graph: Graph<'s>,
    pub mode: Mode,
    pub(crate) updates: Vec<StatUpdate>,
}

impl<'s> Forward<'s> {
    pub fn new(store: &'s ParamStore, mode: Mode) -> Self {
        Self {
            graph: Graph::new(store),
            mode,
            updates: Vec::new(),
        }
    }

    pub fn into_updates(self) -> Vec<StatUpdate> {
        self.updates
    }
}

pub fn apply_stat_updates(store: &mut ParamStore, updates: &[StatUpdate]) {
    for u in updates {
        let blend = |buf: &mut DenseTensor, batch: &[f64]| {
            for (r, b) in buf.data_mut().iter_mut().zip(batch) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
        };
        blend(store.buffer_mut(u.mean), &u.stats.mean);
        blend(store.buffer_mut(u.var), &u.stats.var_unbiased);
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add(format!("{name}.weight"), he_uniform(&[output, input], input, rng));
        let b = store.add(format!("{name}.bias"), DenseTensor::zeros(&[output]));
        Self { w, b }
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let (w, b) = (f.graph.param(self.w), f.graph.param(self.b));
        f.graph.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    mean: BufferId,
    var: BufferId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), DenseTensor::filled(&[channels], 1.0)),
            beta: store.add(format!("{name}.beta"), DenseTensor::zeros(&[channels])),
            mean: store.add_buffer(format!("{name}.running_mean"), DenseTensor::zeros(&[channels])),
            var: store.add_buffer(format!("{name}.running_var"), DenseTensor::filled(&[channels], 1.0)),
        }
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let (gamma, beta) = (f.graph.param(self.gamma), f.graph.param(self.beta));
        match f.mode {
            Mode::Train => {
                let (y, stats) = f.graph.batch_norm(x, gamma, beta, NormStats::Batch)?;
                if let Some(stats) = stats {
                    f.updates.push(StatUpdate {
                        mean: self.mean,
                        var: self.var,
                        stats,
                    });
                }
                Ok(y)
            }
            Mode::Eval => {
                let store = f.graph.store();
                let stats = NormStats::Running {
                    mean: store.buffer(self.mean).data(),
                    var: store.buffer(self.var).data(),
                };
                Ok(f.graph.batch_norm(x, gamma, beta, stats)?.0)
            }
        }
    }
}

/// Bias-free square convolution; always followed by normalization here.
#[derive(Debug, Clone)]
pub struct Conv {
    w: ParamId,
    spec: ConvSpec,
    out: usize,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        (input, output, k): (usize, usize, usize),
        spec: ConvSpec,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add(format!("{name}.weight"), he_uniform(&[output, input, k, k], input * k * k, rng));
        Self { w, spec, out: output }
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let w = f.graph.param(self.w);
        let b = f.graph.input(DenseTensor::zeros(&[self.out]));
        f.graph.conv2d(x, w, b, self.spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    Mlp,
    ConvLite,
}

pub const MLP_HIDDEN: [usize; 2] = [1024, 256];
/// Conv-lite widths are the leading schedule widths divided by this.
pub const CONV_WIDTH_DIVISOR: f64 = 8.0;

#[derive(Debug, Clone)]
struct Bottleneck {
    reduce: Conv,
    bn1: BatchNorm,
    spatial: Conv,
    bn2: BatchNorm,
    expand: Conv,
    bn3: BatchNorm,
    shortcut: Conv,
    bn_short: BatchNorm,
}

impl Bottleneck {
    fn new(store: &mut ParamStore, name: &str, input: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let one = ConvSpec { stride: 1, padding: 0 };
        let down = ConvSpec { stride: 2, padding: 1 };
        Self {
            reduce: Conv::new(store, &format!("{name}.conv1"), (input, width, 1), one, rng),
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), width),
            spatial: Conv::new(store, &format!("{name}.conv2"), (width, width, 3), down, rng),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), width),
            expand: Conv::new(store, &format!("{name}.conv3"), (width, width, 1), one, rng),
            bn3: BatchNorm::new(store, &format!("{name}.bn3"), width),
            shortcut: Conv::new(
                store,
                &format!("{name}.shortcut"),
                (input, width, 1),
                ConvSpec { stride: 2, padding: 0 },
                rng,
            ),
            bn_short: BatchNorm::new(store, &format!("{name}.bn_short"), width),
        }
    }

    fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let mut y = self.reduce.forward(f, x)?;
        y = self.bn1.forward(f, y)?;
        y = f.graph.relu(y);
        y = self.spatial.forward(f, y)?;
        y = self.bn2.forward(f, y)?;
        y = f.graph.relu(y);
        y = self.expand.forward(f, y)?;
        y = self.bn3.forward(f, y)?;
        let mut s = self.shortcut.forward(f, x)?;
        s = self.bn_short.forward(f, s)?;
        let sum = f.graph.add(y, s)?;
        Ok(f.graph.relu(sum))
    }
}

#[derive(Debug, Clone)]
enum BackboneLayers {
    Mlp([Linear; 3]),
    ConvLite {
        stem: Conv,
        stem_bn: BatchNorm,
        blocks: [Bottleneck; 2],
        proj: Linear,
    },
}

/// Feature extractor mapping a flattened `side×side` map to `output` features.
#[derive(Debug, Clone)]
pub struct Backbone {
    layers: BackboneLayers,
    side: usize,
}

/// Conv-lite stage widths: stem then two bottleneck blocks.
pub fn conv_lite_widths(p: &RegnetParams) -> Result<[usize; 3]> {
    let stages = regnet_widths(p)?;
    if stages.len() < 3 {
        return Err(LearnError::Config("conv-lite needs at least three width stages".into()));
    }
    let w = |i: usize| ((stages[i].width as f64 / CONV_WIDTH_DIVISOR).round() as usize).max(1);
    Ok([w(0), w(1), w(2)])
}

impl Backbone {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kind: BackboneKind,
        side: usize,
        output: usize,
        regnet: &RegnetParams,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let layers = match kind {
            BackboneKind::Mlp => {
                let [h1, h2] = MLP_HIDDEN;
                BackboneLayers::Mlp([
                    Linear::new(store, &format!("{name}.fc1"), side * side, h1, rng),
                    Linear::new(store, &format!("{name}.fc2"), h1, h2, rng),
                    Linear::new(store, &format!("{name}.fc3"), h2, output, rng),
                ])
            }
            BackboneKind::ConvLite => {
                let [w0, w1, w2] = conv_lite_widths(regnet)?;
                let stem_spec = ConvSpec { stride: 2, padding: 1 };
                BackboneLayers::ConvLite {
                    stem: Conv::new(store, &format!("{name}.stem"), (1, w0, 3), stem_spec, rng),
                    stem_bn: BatchNorm::new(store, &format!("{name}.stem_bn"), w0),
                    blocks: [
                        Bottleneck::new(store, &format!("{name}.block1"), w0, w1, rng),
                        Bottleneck::new(store, &format!("{name}.block2"), w1, w2, rng),
                    ],
                    proj: Linear::new(store, &format!("{name}.proj"), w2, output, rng),
                }
            }
        };
        Ok(Self { layers, side })
    }

    /// `x` is `B × side²`.
    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let shape = f.graph.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.side * self.side {
            return Err(LearnError::shape("backbone input", &[shape[0], self.side * self.side], &shape));
        }
        match &self.layers {
            BackboneLayers::Mlp([a, b, c]) => {
                let mut y = a.forward(f, x)?;
                y = f.graph.relu(y);
                y = b.forward(f, y)?;
                y = f.graph.relu(y);
                c.forward(f, y)
            }
            BackboneLayers::ConvLite {
                stem,
                stem_bn,
                blocks,
                proj,
            } => {
                let img = f.graph.reshape(x, &[shape[0], 1, self.side, self.side])?;
                let mut y = stem.forward(f, img)?;
                y = stem_bn.forward(f, y)?;
                y = f.graph.relu(y);
                for block in blocks {
                    y = block.forward(f, y)?;
                }
                let pooled = f.graph.global_avg_pool(y)?;
                proj.forward(f, pooled)
            }
        }
    }
}
