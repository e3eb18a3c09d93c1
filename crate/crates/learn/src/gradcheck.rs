//! Central finite-difference gradient checks.

use beamsim_core::rng::rng_from_seed;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::Batch;
use crate::error::{LearnError, Result};
use crate::graph::{ConvSpec, Graph, NormStats, Var};
use crate::model::{FusionModel, HEADS};
use crate::params::{ParamId, ParamStore};
use crate::tensor::DenseTensor;

/// Gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Location of the worst entry, `name[index]`.
    pub worst: Option<String>,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            checked: 0,
            max_rel_error: 0.0,
            worst: None,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, location: impl FnOnce() -> String) {
        let err = rel_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || err.is_nan() {
            self.max_rel_error = err;
            self.worst = Some(location());
        }
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks every entry of every input of the scalar function built by `build`.
pub fn check_inputs<F>(inputs: &[DenseTensor], step: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let store = ParamStore::new();
    let eval = |values: &[DenseTensor]| -> f64 {
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let root = build(&mut g, &vars);
        g.value(root).item()
    };
    let analytic = {
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let root = build(&mut g, &vars);
        let grads = g.backward(root)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, t)| grads.wrt(*v).cloned().unwrap_or_else(|| DenseTensor::zeros(t.shape())))
            .collect::<Vec<_>>()
    };
    let mut report = GradCheckReport::new();
    let mut values = inputs.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        for idx in 0..inputs[k].len() {
            let orig = values[k].data()[idx];
            values[k].data_mut()[idx] = orig + step;
            let plus = eval(&values);
            values[k].data_mut()[idx] = orig - step;
            let minus = eval(&values);
            values[k].data_mut()[idx] = orig;
            report.record(grad.data()[idx], (plus - minus) / (2.0 * step), || format!("input{k}[{idx}]"));
        }
    }
    Ok(report)
}

/// Checks selected parameter entries. `loss` returns the objective and the
/// analytic gradients for every parameter of the store, in store order.
pub fn check_params<F>(
    store: &mut ParamStore,
    probes: &[(ParamId, usize)],
    step: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, Vec<DenseTensor>)>,
{
    let (_, grads) = loss(store)?;
    if grads.len() != store.len() {
        return Err(LearnError::shape("parameter gradients", &[store.len()], &[grads.len()]));
    }
    let mut report = GradCheckReport::new();
    for &(id, idx) in probes {
        let orig = store.get(id).data()[idx];
        store.get_mut(id).data_mut()[idx] = orig + step;
        let plus = loss(store)?.0;
        store.get_mut(id).data_mut()[idx] = orig - step;
        let minus = loss(store)?.0;
        store.get_mut(id).data_mut()[idx] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        report.record(grads[id.index()].data()[idx], numeric, || format!("{}[{idx}]", store.name(id)));
    }
    Ok(report)
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
    let n = shape.iter().product();
    DenseTensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Reduces any node to a scalar through a fixed random target.
fn reduce(g: &mut Graph, y: Var, rng: &mut ChaCha8Rng) -> Var {
    let target = g.input(uniform(g.shape(y), rng));
    g.sq_dist_mean(y, target).expect("matching shapes")
}

/// Checks every differentiable primitive on small random shapes.
pub fn check_primitives(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::new();
    let step = 1e-5;
    let t = rng.random::<u64>();
    let linear = vec![uniform(&[3, 4], &mut rng), uniform(&[5, 4], &mut rng), uniform(&[5], &mut rng)];
    out.push((
        "linear",
        check_inputs(&linear, step, |g, v| {
            let y = g.linear(v[0], v[1], v[2]).expect("shapes");
            reduce(g, y, &mut rng_from_seed(t))
        })?,
    ));
    let act = vec![uniform(&[4, 5], &mut rng)];
    out.push((
        "activations",
        check_inputs(&act, step, |g, v| {
            let a = g.relu(v[0]);
            let b = g.leaky_relu(v[0], 0.2);
            let c = g.sigmoid(v[0]);
            let ab = g.add(a, b).expect("shapes");
            let y = g.add(ab, c).expect("shapes");
            reduce(g, y, &mut rng_from_seed(t))
        })?,
    ));
    for shape in [vec![5, 3], vec![3, 3, 2, 2]] {
        let bn = vec![uniform(&shape, &mut rng), uniform(&[3], &mut rng), uniform(&[3], &mut rng)];
        out.push((
            "batch_norm",
            check_inputs(&bn, step, |g, v| {
                let (y, _) = g.batch_norm(v[0], v[1], v[2], NormStats::Batch).expect("shapes");
                reduce(g, y, &mut rng_from_seed(t))
            })?,
        ));
    }
    let (mean, var) = ([0.1, -0.2, 0.3], [1.5, 0.7, 2.0]);
    let bn = vec![uniform(&[4, 3], &mut rng), uniform(&[3], &mut rng), uniform(&[3], &mut rng)];
    out.push((
        "batch_norm_running",
        check_inputs(&bn, step, |g, v| {
            let stats = NormStats::Running { mean: &mean, var: &var };
            let (y, _) = g.batch_norm(v[0], v[1], v[2], stats).expect("shapes");
            reduce(g, y, &mut rng_from_seed(t))
        })?,
    ));
    let parts = vec![uniform(&[2, 4], &mut rng), uniform(&[2, 6], &mut rng)];
    out.push((
        "concat_reshape",
        check_inputs(&parts, step, |g, v| {
            let c = g.concat(&[v[0], v[1]]).expect("shapes");
            let r = g.reshape(c, &[2, 2, 5]).expect("shapes");
            let back = g.reshape(r, &[2, 10]).expect("shapes");
            reduce(g, back, &mut rng_from_seed(t))
        })?,
    ));
    for (stride, padding) in [(1, 1), (2, 1), (2, 0)] {
        let conv = vec![uniform(&[2, 2, 5, 5], &mut rng), uniform(&[3, 2, 3, 3], &mut rng), uniform(&[3], &mut rng)];
        out.push((
            "conv2d_pool",
            check_inputs(&conv, step, |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], ConvSpec { stride, padding }).expect("shapes");
                let p = g.global_avg_pool(y).expect("rank 4");
                let mut r = rng_from_seed(t);
                let a = reduce(g, y, &mut r);
                let b = reduce(g, p, &mut r);
                g.weighted_sum(&[(a, 1.0), (b, 0.5)]).expect("scalars")
            })?,
        ));
    }
    let losses = vec![
        uniform(&[3, 6], &mut rng),
        uniform(&[3, 1], &mut rng),
        uniform(&[3, 4], &mut rng),
        uniform(&[3, 4], &mut rng),
    ];
    out.push((
        "losses",
        check_inputs(&losses, step, |g, v| {
            let ce = g.routed_cross_entropy(v[0], &[1, 0, 1], &[2, 0, 1], 3).expect("shapes");
            let sp = g.softplus_mean(v[1], -1.0);
            let sn = g.softplus_mean(v[1], 1.0);
            let sq = g.sq_dist_mean(v[2], v[3]).expect("shapes");
            g.weighted_sum(&[(ce, 0.7), (sp, 1.3), (sn, 0.4), (sq, 2.0)]).expect("scalars")
        })?,
    ));
    Ok(out)
}

/// Random standardized-looking batch for `model`.
pub fn random_batch(model: &FusionModel, batch: usize, seed: u64) -> Batch {
    let mut rng = rng_from_seed(seed);
    let cfg = model.config();
    let width = cfg.input_side * cfg.input_side;
    Batch {
        x: uniform(&[batch, width], &mut rng).map(|v| 2.0 * v),
        sectors: (0..batch).map(|i| i % HEADS).collect(),
        labels: (0..batch).map(|_| rng.random_range(0..cfg.fine_beams)).collect(),
        positions: uniform(&[batch, 3], &mut rng),
    }
}

/// Finite-difference check of the full training objective at `probes`
/// randomly chosen parameter entries (parameter chosen uniformly, then an
/// entry within it).
pub fn check_model(model: &FusionModel, batch: &Batch, probes: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_from_seed(seed);
    let mut store = model.net.store.clone();
    let ids: Vec<ParamId> = store.ids().collect();
    let picks: Vec<(ParamId, usize)> = (0..probes)
        .map(|_| {
            let id = ids[rng.random_range(0..ids.len())];
            (id, rng.random_range(0..store.get(id).len()))
        })
        .collect();
    check_params(&mut store, &picks, 1e-5, |s| {
        let mut m = model.clone();
        m.net.store = s.clone();
        let (terms, grads) = m.loss_and_grads(batch)?;
        Ok((terms.j_total, grads))
    })
}
