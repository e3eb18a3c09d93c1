//! Reference classifier: one dense layer per sector on the flattened map.

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{LearnError, Result};
use crate::layers::{Forward, Linear, Mode};
use crate::model::{head_argmax, LossTerms, Prediction, HEADS};
use crate::optim::AdamW;
use crate::params::ParamStore;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftmaxRefConfig {
    pub fine_beams: usize,
    pub input_side: usize,
}

#[derive(Debug, Clone)]
pub struct SoftmaxRef {
    config: SoftmaxRefConfig,
    pub store: ParamStore,
    heads: Vec<Linear>,
}

impl SoftmaxRef {
    /// Zero-initialized, so the untrained model is uniform over each head.
    pub fn new(config: SoftmaxRefConfig) -> Result<Self> {
        if config.fine_beams == 0 || config.input_side == 0 {
            return Err(LearnError::Config("softmax-ref needs positive sizes".into()));
        }
        let mut rng = beamsim_core::rng::rng_from_seed(0);
        let mut store = ParamStore::new();
        let input = config.input_side * config.input_side;
        let heads: Vec<Linear> = (0..HEADS)
            .map(|s| Linear::new(&mut store, &format!("head{s}"), input, config.fine_beams, &mut rng))
            .collect();
        for h in &heads {
            store.get_mut(h.w).data_mut().fill(0.0);
        }
        Ok(Self { config, store, heads })
    }

    pub fn config(&self) -> &SoftmaxRefConfig {
        &self.config
    }

    fn logits(&self, f: &mut Forward, x: DenseTensor) -> Result<crate::graph::Var> {
        let xv = f.graph.input(x);
        let mut outs = Vec::with_capacity(HEADS);
        for h in &self.heads {
            outs.push(h.forward(f, xv)?);
        }
        f.graph.concat(&outs)
    }

    pub fn step(&mut self, batch: &Batch, opts: &mut [AdamW], lr: f64) -> Result<LossTerms> {
        let (j_bm, grads) = {
            let mut f = Forward::new(&self.store, Mode::Train);
            let logits = self.logits(&mut f, batch.x.clone())?;
            let ce = f
                .graph
                .routed_cross_entropy(logits, &batch.sectors, &batch.labels, self.config.fine_beams)?;
            (f.graph.value(ce).item(), f.graph.backward(ce)?.into_param_grads())
        };
        let terms = LossTerms {
            j_bm,
            j_total: j_bm,
            ..LossTerms::default()
        };
        if terms.is_finite() {
            let opt = opts.first_mut().ok_or_else(|| LearnError::Config("missing optimizer".into()))?;
            opt.step(&mut self.store, &grads, lr)?;
        }
        Ok(terms)
    }

    pub fn predict(&self, x: DenseTensor, sectors: &[usize]) -> Result<Vec<Prediction>> {
        let mut f = Forward::new(&self.store, Mode::Eval);
        let logits = self.logits(&mut f, x)?;
        let lv = f.graph.value(logits);
        if lv.rows() != sectors.len() {
            return Err(LearnError::shape("sector routing", &[lv.rows()], &[sectors.len()]));
        }
        sectors
            .iter()
            .enumerate()
            .map(|(r, &s)| {
                if s >= HEADS {
                    return Err(LearnError::Config(format!("no head for sector index {s}")));
                }
                Ok(Prediction {
                    beam: head_argmax(lv.row(r), s, self.config.fine_beams),
                    position: None,
                })
            })
            .collect()
    }
}
