//! Dual-branch fusion model: two backbones, a fusion module, three sector
//! heads and a position head.

use beamsim_core::rng::rng_from_seed;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, PositionScaler};
use crate::error::{LearnError, Result};
use crate::graph::Var;
use crate::layers::{apply_stat_updates, Backbone, BackboneKind, BatchNorm, Forward, Linear, Mode, StatUpdate, LEAKY_SLOPE};
use crate::optim::AdamW;
use crate::params::ParamStore;
use crate::regnet::RegnetParams;
use crate::tensor::DenseTensor;

/// One classification head per sector.
pub const HEADS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Auto,
    Gan,
    Concat,
}

impl std::str::FromStr for FusionKind {
    type Err = LearnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "gan" => Ok(Self::Gan),
            "concat" | "concat-only" => Ok(Self::Concat),
            other => Err(LearnError::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pos: f64,
    pub bm: f64,
    pub adv: f64,
    pub auto: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pos: 0.01,
            bm: 0.99,
            adv: 0.1,
            auto: 0.1,
        }
    }
}

impl LossWeights {
    /// Weights must be nonnegative and the two task weights sum to at most one.
    pub fn validate(&self) -> Result<()> {
        let all = [self.pos, self.bm, self.adv, self.auto];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(LearnError::Config(format!("loss weights must be ≥ 0: {self:?}")));
        }
        if self.pos + self.bm > 1.0 + 1e-12 {
            return Err(LearnError::Config("λ_pos + λ_bm must not exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    /// Per-branch feature size F; the fused vector has 2F entries.
    pub feature_dim: usize,
    pub fusion: FusionKind,
    /// Fine beams per sector (classes per head).
    pub fine_beams: usize,
    pub input_side: usize,
    pub weights: LossWeights,
    pub regnet: RegnetParams,
    /// Normalization layers inside the discriminator.
    pub discriminator_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::Mlp,
            feature_dim: 64,
            fusion: FusionKind::Auto,
            fine_beams: 64,
            input_side: 64,
            weights: LossWeights::default(),
            regnet: RegnetParams::default(),
            discriminator_norm: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.feature_dim == 0 || self.fine_beams == 0 || self.input_side == 0 {
            return Err(LearnError::Config("feature_dim, fine_beams and input_side must be positive".into()));
        }
        Ok(())
    }

    /// Width of the compressed latent inside AutoFusion.
    pub fn latent_dim(&self) -> usize {
        (2 * self.feature_dim / 2).max(1)
    }

    fn branch_dim(&self) -> usize {
        match self.fusion {
            FusionKind::Gan => 2 * self.feature_dim,
            _ => self.feature_dim,
        }
    }
}

/// Loss terms of one batch. Unused fusion terms are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub j_pos: f64,
    pub j_bm: f64,
    pub j_adv: f64,
    pub j_auto: f64,
    pub j_total: f64,
}

impl LossTerms {
    pub fn weighted(j_pos: f64, j_bm: f64, j_adv: f64, j_auto: f64, w: &LossWeights) -> Self {
        let mut t = Self {
            j_pos,
            j_bm,
            j_adv,
            j_auto,
            j_total: 0.0,
        };
        t.j_total = t.contributions(w).iter().sum();
        t
    }

    /// Weighted terms `[λ_pos J_pos, λ_bm J_bm, λ_adv J_adv, λ_auto J_auto]`.
    pub fn contributions(&self, w: &LossWeights) -> [f64; 4] {
        [w.pos * self.j_pos, w.bm * self.j_bm, w.adv * self.j_adv, w.auto * self.j_auto]
    }

    pub fn is_finite(&self) -> bool {
        [self.j_pos, self.j_bm, self.j_adv, self.j_auto, self.j_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Compress-then-reconstruct module: `Basic` produces the fused features
/// and `Gen` tries to recover its input from them.
#[derive(Debug, Clone)]
pub struct AutoFusion {
    basic: [Linear; 2],
    gen: [Linear; 2],
}

pub struct AutoFusionOut {
    pub fused: Var,
    pub reconstruction: Var,
    pub j_auto: Var,
}

impl AutoFusion {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, latent: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        Self {
            basic: [
                Linear::new(store, &format!("{name}.basic1"), width, latent, rng),
                Linear::new(store, &format!("{name}.basic2"), latent, width, rng),
            ],
            gen: [
                Linear::new(store, &format!("{name}.gen1"), width, latent, rng),
                Linear::new(store, &format!("{name}.gen2"), latent, width, rng),
            ],
        }
    }

    pub fn forward(&self, f: &mut Forward, input: Var) -> Result<AutoFusionOut> {
        let mut h = self.basic[0].forward(f, input)?;
        h = f.graph.relu(h);
        h = self.basic[1].forward(f, h)?;
        let fused = f.graph.relu(h);
        let mut r = self.gen[0].forward(f, fused)?;
        r = f.graph.relu(r);
        let reconstruction = self.gen[1].forward(f, r)?;
        let j_auto = f.graph.sq_dist_mean(reconstruction, input)?;
        Ok(AutoFusionOut {
            fused,
            reconstruction,
            j_auto,
        })
    }
}

#[derive(Debug, Clone)]
struct Generator([Linear; 3]);

impl Generator {
    fn new(store: &mut ParamStore, width: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        Self([
            Linear::new(store, "generator.fc1", width, 2 * width, rng),
            Linear::new(store, "generator.fc2", 2 * width, 2 * width, rng),
            Linear::new(store, "generator.fc3", 2 * width, width, rng),
        ])
    }

    fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let mut h = self.0[0].forward(f, x)?;
        h = f.graph.relu(h);
        h = self.0[1].forward(f, h)?;
        h = f.graph.relu(h);
        self.0[2].forward(f, h)
    }
}

/// Binary critic returning logits; `σ(logit)` is the probability that a
/// feature vector is an enhanced auxiliary feature.
#[derive(Debug, Clone)]
pub struct Discriminator {
    fc: [Linear; 3],
    norms: Option<[BatchNorm; 2]>,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, width: usize, normalize: bool, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        Self {
            fc: [
                Linear::new(store, "discriminator.fc1", width, width, rng),
                Linear::new(store, "discriminator.fc2", width, width, rng),
                Linear::new(store, "discriminator.out", width, 1, rng),
            ],
            norms: normalize.then(|| {
                [
                    BatchNorm::new(store, "discriminator.bn1", width),
                    BatchNorm::new(store, "discriminator.bn2", width),
                ]
            }),
        }
    }

    pub fn logits(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..2 {
            h = self.fc[i].forward(f, h)?;
            h = f.graph.leaky_relu(h, LEAKY_SLOPE);
            if let Some(norms) = &self.norms {
                h = norms[i].forward(f, h)?;
            }
        }
        self.fc[2].forward(f, h)
    }

    pub fn output_layer(&self) -> &Linear {
        &self.fc[2]
    }
}

/// Discriminator together with its own parameters, which are optimized
/// separately from the rest of the model.
#[derive(Debug, Clone)]
pub struct Critic {
    pub net: Discriminator,
    pub store: ParamStore,
}

/// Discriminator and generator losses on detached features, with logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLosses {
    pub j_d: f64,
    pub j_g: f64,
}

impl Critic {
    /// `J_D = −[log D(real) + log(1 − D(fake))]`, `J_G = −log D(fake)`,
    /// batch means, normalization in batch mode.
    pub fn losses(&self, real: &DenseTensor, fake: &DenseTensor) -> Result<GanLosses> {
        let mut f = Forward::new(&self.store, Mode::Train);
        let r = f.graph.input(real.clone());
        let z = f.graph.input(fake.clone());
        let zr = self.net.logits(&mut f, r)?;
        let zf = self.net.logits(&mut f, z)?;
        let real_term = f.graph.softplus_mean(zr, -1.0);
        let fake_term = f.graph.softplus_mean(zf, 1.0);
        let fooled = f.graph.softplus_mean(zf, -1.0);
        Ok(GanLosses {
            j_d: f.graph.value(real_term).item() + f.graph.value(fake_term).item(),
            j_g: f.graph.value(fooled).item(),
        })
    }

    /// One discriminator update; returns `J_D` before the step.
    pub fn step(&mut self, real: &DenseTensor, fake: &DenseTensor, opt: &mut AdamW, lr: f64) -> Result<f64> {
        let (j_d, grads, updates) = {
            let mut f = Forward::new(&self.store, Mode::Train);
            let r = f.graph.input(real.clone());
            let z = f.graph.input(fake.clone());
            let zr = self.net.logits(&mut f, r)?;
            let zf = self.net.logits(&mut f, z)?;
            let real_term = f.graph.softplus_mean(zr, -1.0);
            let fake_term = f.graph.softplus_mean(zf, 1.0);
            let total = f.graph.weighted_sum(&[(real_term, 1.0), (fake_term, 1.0)])?;
            let grads = f.graph.backward(total)?;
            (f.graph.value(total).item(), grads.into_param_grads(), f.into_updates())
        };
        if !j_d.is_finite() {
            return Err(LearnError::NonFinite {
                epoch: 0,
                batch: 0,
                terms: format!("discriminator loss {j_d}"),
            });
        }
        apply_stat_updates(&mut self.store, &updates);
        opt.step(&mut self.store, &grads, lr)?;
        Ok(j_d)
    }

    /// `J_G` and its gradient with respect to the generated features.
    pub fn generator_loss(&self, fake: &DenseTensor) -> Result<(f64, DenseTensor)> {
        let mut f = Forward::new(&self.store, Mode::Train);
        let z = f.graph.variable(fake.clone());
        let logits = self.net.logits(&mut f, z)?;
        let j_g = f.graph.softplus_mean(logits, -1.0);
        let grads = f.graph.backward(j_g)?;
        let dz = grads.wrt(z).cloned().unwrap_or_else(|| DenseTensor::zeros(fake.shape()));
        Ok((f.graph.value(j_g).item(), dz))
    }
}

#[derive(Debug, Clone)]
enum FusionLayers {
    Auto(AutoFusion),
    Gan { enhance: AutoFusion, generator: Generator },
    Concat,
}

/// Vars of one model forward pass.
pub struct ModelOutputs {
    /// `B × 3J` logits, head `s` in columns `[sJ, (s+1)J)`.
    pub logits: Var,
    /// Standardized position estimate, `B × 3`.
    pub position: Var,
    pub j_auto: Option<Var>,
    /// Generated features fed to the discriminator (gan fusion only).
    pub generated: Option<Var>,
    /// Enhanced auxiliary features, the discriminator's real samples.
    pub enhanced: Option<Var>,
}

/// Result of one generator-side pass.
pub struct Pass {
    pub terms: LossTerms,
    pub grads: Vec<DenseTensor>,
    pub updates: Vec<StatUpdate>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub beam: usize,
    pub position: Option<[f64; 3]>,
}

/// Argmax within head `head` of a concatenated logit row; lowest index on ties.
pub fn head_argmax(row: &[f64], head: usize, classes: usize) -> usize {
    let slice = &row[head * classes..(head + 1) * classes];
    let mut best = 0;
    for (i, v) in slice.iter().enumerate() {
        if *v > slice[best] {
            best = i;
        }
    }
    best
}

/// Everything except the critic, which is optimized on its own.
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    pub store: ParamStore,
    beam_branch: Backbone,
    pos_branch: Backbone,
    fusion: FusionLayers,
    heads: Vec<Linear>,
    pos_head: Linear,
}

impl Network {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<ModelOutputs> {
        let f_beam = self.beam_branch.forward(f, x)?;
        let f_pos = self.pos_branch.forward(f, x)?;
        let (task, aux, j_auto, generated, enhanced) = match &self.fusion {
            FusionLayers::Auto(af) => {
                let cat = f.graph.concat(&[f_beam, f_pos])?;
                let out = af.forward(f, cat)?;
                (out.fused, out.fused, Some(out.j_auto), None, None)
            }
            FusionLayers::Concat => {
                let cat = f.graph.concat(&[f_beam, f_pos])?;
                (cat, cat, None, None, None)
            }
            FusionLayers::Gan { enhance, generator } => {
                let out = enhance.forward(f, f_pos)?;
                let gen = generator.forward(f, f_beam)?;
                (gen, out.fused, Some(out.j_auto), Some(gen), Some(out.fused))
            }
        };
        let mut head_logits = Vec::with_capacity(HEADS);
        for head in &self.heads {
            head_logits.push(head.forward(f, task)?);
        }
        let logits = f.graph.concat(&head_logits)?;
        let position = self.pos_head.forward(f, aux)?;
        Ok(ModelOutputs {
            logits,
            position,
            j_auto,
            generated,
            enhanced,
        })
    }

    /// Generator-side objective and its parameter gradients. For gan fusion
    /// the adversarial term uses `critic` as it is after `before_adv` has
    /// seen the detached (enhanced, generated) features; training performs
    /// its discriminator update there.
    pub fn pass<F>(&self, batch: &Batch, mode: Mode, critic: Option<&mut Critic>, mut before_adv: F) -> Result<Pass>
    where
        F: FnMut(&mut Critic, &DenseTensor, &DenseTensor) -> Result<()>,
    {
        let w = self.config.weights;
        let mut f = Forward::new(&self.store, mode);
        let x = f.graph.input(batch.x.clone());
        let out = self.forward(&mut f, x)?;
        let j_bm = f
            .graph
            .routed_cross_entropy(out.logits, &batch.sectors, &batch.labels, self.config.fine_beams)?;
        let target = f.graph.input(batch.positions.clone());
        let j_pos = f.graph.sq_dist_mean(out.position, target)?;
        let mut weighted = vec![(j_pos, w.pos), (j_bm, w.bm)];
        if let Some(ja) = out.j_auto {
            weighted.push((ja, w.auto));
        }
        let root = f.graph.weighted_sum(&weighted)?;
        let mut seeds = Vec::new();
        let mut j_adv = 0.0;
        if let (Some(gen), Some(enh)) = (out.generated, out.enhanced) {
            let critic = critic.ok_or_else(|| LearnError::Config("gan fusion needs a discriminator".into()))?;
            let (real, fake) = (f.graph.value(enh).clone(), f.graph.value(gen).clone());
            before_adv(critic, &real, &fake)?;
            let (j_g, grad) = critic.generator_loss(&fake)?;
            j_adv = j_g;
            seeds.push((gen, grad.map(|g| w.adv * g)));
        }
        let grads = f.graph.backward_with(root, seeds)?;
        let value = |v: Var| f.graph.value(v).item();
        let j_auto = out.j_auto.map_or(0.0, value);
        let terms = LossTerms::weighted(value(j_pos), value(j_bm), j_adv, j_auto, &w);
        Ok(Pass {
            terms,
            grads: grads.into_param_grads(),
            updates: f.into_updates(),
        })
    }

    /// Logits (`B × 3J`) and de-standardization-free position outputs.
    pub fn infer(&self, x: DenseTensor) -> Result<(DenseTensor, DenseTensor)> {
        let mut f = Forward::new(&self.store, Mode::Eval);
        let xv = f.graph.input(x);
        let out = self.forward(&mut f, xv)?;
        Ok((f.graph.value(out.logits).clone(), f.graph.value(out.position).clone()))
    }
}

#[derive(Debug, Clone)]
pub struct FusionModel {
    pub net: Network,
    pub critic: Option<Critic>,
    pub scaler: PositionScaler,
}

impl FusionModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut store = ParamStore::new();
        let (side, branch, regnet) = (config.input_side, config.branch_dim(), config.regnet);
        let beam_branch = Backbone::new(&mut store, "beam_branch", config.backbone, side, branch, &regnet, &mut rng)?;
        let pos_branch = Backbone::new(&mut store, "pos_branch", config.backbone, side, branch, &regnet, &mut rng)?;
        let fused = 2 * config.feature_dim;
        let latent = config.latent_dim();
        let (fusion, critic) = match config.fusion {
            FusionKind::Auto => (
                FusionLayers::Auto(AutoFusion::new(&mut store, "autofusion", fused, latent, &mut rng)),
                None,
            ),
            FusionKind::Concat => (FusionLayers::Concat, None),
            FusionKind::Gan => {
                let enhance = AutoFusion::new(&mut store, "autofusion", fused, latent, &mut rng);
                let generator = Generator::new(&mut store, fused, &mut rng);
                let mut dstore = ParamStore::new();
                let net = Discriminator::new(&mut dstore, fused, config.discriminator_norm, &mut rng);
                (FusionLayers::Gan { enhance, generator }, Some(Critic { net, store: dstore }))
            }
        };
        let heads = (0..HEADS)
            .map(|s| Linear::new(&mut store, &format!("head{s}"), fused, config.fine_beams, &mut rng))
            .collect();
        let pos_head = Linear::new(&mut store, "position_head", fused, 3, &mut rng);
        let net = Network {
            config,
            store,
            beam_branch,
            pos_branch,
            fusion,
            heads,
            pos_head,
        };
        Ok(Self {
            net,
            critic,
            scaler: PositionScaler::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    /// Objective and gradients without updating anything.
    pub fn loss_and_grads(&mut self, batch: &Batch) -> Result<(LossTerms, Vec<DenseTensor>)> {
        let pass = self.net.pass(batch, Mode::Train, self.critic.as_mut(), |_, _, _| Ok(()))?;
        Ok((pass.terms, pass.grads))
    }

    /// One discriminator step (gan fusion) followed by one generator and
    /// task step.
    pub fn step(&mut self, batch: &Batch, opts: &mut [AdamW], lr: f64) -> Result<LossTerms> {
        let (main, rest) = opts
            .split_first_mut()
            .ok_or_else(|| LearnError::Config("missing optimizer".into()))?;
        let mut d_opt = rest.first_mut();
        let pass = self.net.pass(batch, Mode::Train, self.critic.as_mut(), |critic, real, fake| {
            let opt = d_opt
                .as_deref_mut()
                .ok_or_else(|| LearnError::Config("missing discriminator optimizer".into()))?;
            critic.step(real, fake, opt, lr).map(|_| ())
        })?;
        if pass.terms.is_finite() {
            apply_stat_updates(&mut self.net.store, &pass.updates);
            main.step(&mut self.net.store, &pass.grads, lr)?;
        }
        Ok(pass.terms)
    }

    /// Beam index from the head of each sample's sector, plus the position
    /// estimate. Only the RSRP features are consumed.
    pub fn predict(&self, x: DenseTensor, sectors: &[usize]) -> Result<Vec<Prediction>> {
        let (logits, position) = self.net.infer(x)?;
        if logits.rows() != sectors.len() {
            return Err(LearnError::shape("sector routing", &[logits.rows()], &[sectors.len()]));
        }
        let j = self.config().fine_beams;
        sectors
            .iter()
            .enumerate()
            .map(|(r, &s)| {
                if s >= HEADS {
                    return Err(LearnError::Config(format!("no head for sector index {s}")));
                }
                Ok(Prediction {
                    beam: head_argmax(logits.row(r), s, j),
                    position: Some(self.scaler.inverse(position.row(r))),
                })
            })
            .collect()
    }
}
