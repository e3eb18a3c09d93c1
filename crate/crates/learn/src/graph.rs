//! Tensor-level reverse-mode autodiff.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! referenced from a borrowed [`ParamStore`] rather than copied, and
//! [`Graph::backward`] walks the tape once in reverse, accumulating
//! gradients only for nodes that depend on a parameter or a tracked
//! variable.

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{LearnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
}

/// How a normalization layer obtains its statistics.
#[derive(Debug, Clone, Copy)]
pub enum NormStats<'a> {
    /// Normalize with the statistics of the current batch.
    Batch,
    /// Normalize with stored running statistics.
    Running { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel batch mean and unbiased variance, for running-average updates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Concat(Vec<Var>),
    Add(Var, Var),
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Var, spec: ConvSpec },
    GlobalAvgPool(Var),
    RoutedCe { logits: Var, columns: Vec<(usize, usize)>, probs: Vec<f64>, classes: usize },
    SqDistMean(Var, Var),
    SoftplusMean { x: Var, sign: f64 },
    Weighted(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Option<DenseTensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

/// Gradients of one backward pass.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<DenseTensor>>,
    params: Vec<Option<DenseTensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of a tracked node, if any flowed into it.
    pub fn wrt(&self, v: Var) -> Option<&DenseTensor> {
        self.nodes[v.0].as_ref()
    }

    /// Parameter gradient; zeros when the parameter did not affect the loss.
    pub fn param(&self, id: ParamId) -> DenseTensor {
        self.params[id.0]
            .clone()
            .unwrap_or_else(|| DenseTensor::zeros(&self.shapes[id.0]))
    }

    /// Parameters with no path to the differentiated output.
    pub fn disconnected(&self) -> Vec<ParamId> {
        (0..self.params.len()).filter(|&i| self.params[i].is_none()).map(ParamId).collect()
    }

    /// Dense gradients for every parameter of the store, in store order.
    pub fn into_param_grads(self) -> Vec<DenseTensor> {
        self.params
            .into_iter()
            .zip(&self.shapes)
            .map(|(g, s)| g.unwrap_or_else(|| DenseTensor::zeros(s)))
            .collect()
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<DenseTensor>, g: DenseTensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

struct ConvDims {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    out_h: usize,
    out_w: usize,
}

fn im2col(x: &[f64], d: &ConvDims, spec: ConvSpec) -> Array2<f64> {
    let mut cols = Array2::zeros((d.c * d.k * d.k, d.out_h * d.out_w));
    let pad = spec.padding as isize;
    for c in 0..d.c {
        for ki in 0..d.k {
            for kj in 0..d.k {
                let row = (c * d.k + ki) * d.k + kj;
                for oi in 0..d.out_h {
                    let i = (oi * spec.stride + ki) as isize - pad;
                    if i < 0 || i >= d.h as isize {
                        continue;
                    }
                    for oj in 0..d.out_w {
                        let j = (oj * spec.stride + kj) as isize - pad;
                        if j < 0 || j >= d.w as isize {
                            continue;
                        }
                        cols[[row, oi * d.out_w + oj]] = x[(c * d.h + i as usize) * d.w + j as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, d: &ConvDims, spec: ConvSpec, dx: &mut [f64]) {
    let pad = spec.padding as isize;
    for c in 0..d.c {
        for ki in 0..d.k {
            for kj in 0..d.k {
                let row = (c * d.k + ki) * d.k + kj;
                for oi in 0..d.out_h {
                    let i = (oi * spec.stride + ki) as isize - pad;
                    if i < 0 || i >= d.h as isize {
                        continue;
                    }
                    for oj in 0..d.out_w {
                        let j = (oj * spec.stride + kj) as isize - pad;
                        if j < 0 || j >= d.w as isize {
                            continue;
                        }
                        dx[(c * d.h + i as usize) * d.w + j as usize] += cols[[row, oi * d.out_w + oj]];
                    }
                }
            }
        }
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, value: DenseTensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &DenseTensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.get(*id),
            _ => unreachable!("non-parameter nodes always own a value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: DenseTensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is recorded (used for gradient checks and for
    /// injecting upstream gradients).
    pub fn variable(&mut self, t: DenseTensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x · wᵀ + b` with `x: B×in`, `w: out×in`, `b: out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(LearnError::Shape {
                context: "linear",
                expected: vec![xs[0], ws[1]],
                actual: xs.to_vec(),
            });
        }
        let mut y = self.value(x).matrix().dot(&self.value(w).matrix().t());
        y += &ArrayView2::from_shape((1, bs[0]), self.value(b).data()).expect("bias row");
        let rg = self.tracked(&[x, w, b]);
        Ok(self.push(DenseTensor::from_array(y), Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        let rg = self.tracked(&[x]);
        self.push(y, Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let y = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.tracked(&[x]);
        self.push(y, Op::LeakyRelu(x, slope), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        let rg = self.tracked(&[x]);
        self.push(y, Op::Sigmoid(x), rg)
    }

    /// Per-channel normalization of `B×C` or `B×C×H×W` input, followed by
    /// the affine map `γ·x̂ + β`. Returns batch statistics when they were used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(LearnError::shape("batch norm input", &[0, 0], &shape));
        }
        let (b, c) = (shape[0], shape[1]);
        let spatial: usize = shape[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(LearnError::shape("batch norm affine", &[c], self.shape(gamma)));
        }
        let xv = self.value(x).data();
        let n = (b * spatial) as f64;
        let idx = |bi: usize, ci: usize, si: usize| (bi * c + ci) * spatial + si;

        let (mean, var, out_stats) = match stats {
            NormStats::Batch => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ci in 0..c {
                    let mut acc = 0.0;
                    for bi in 0..b {
                        for si in 0..spatial {
                            acc += xv[idx(bi, ci, si)];
                        }
                    }
                    mean[ci] = acc / n;
                    let mut sq = 0.0;
                    for bi in 0..b {
                        for si in 0..spatial {
                            sq += (xv[idx(bi, ci, si)] - mean[ci]).powi(2);
                        }
                    }
                    var[ci] = sq / n;
                }
                let unbiased = var.iter().map(|v| if n > 1.0 { v * n / (n - 1.0) } else { *v }).collect();
                let st = BatchStats {
                    mean: mean.clone(),
                    var_unbiased: unbiased,
                };
                (mean, var, Some(st))
            }
            NormStats::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(LearnError::shape("batch norm running stats", &[c], &[mean.len()]));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xv.len()];
        let mut y = vec![0.0; xv.len()];
        for bi in 0..b {
            for ci in 0..c {
                for si in 0..spatial {
                    let i = idx(bi, ci, si);
                    xhat[i] = (xv[i] - mean[ci]) * inv_std[ci];
                    y[i] = g[ci] * xhat[i] + bt[ci];
                }
            }
        }
        let rg = self.tracked(&[x, gamma, beta]);
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats: out_stats.is_some(),
        };
        Ok((self.push(DenseTensor::from_parts(shape, y), op, rg), out_stats))
    }

    /// Concatenation of matrices along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.shape(p).len() != 2 || self.value(p).rows() != rows) {
            return Err(LearnError::shape("concat", &[rows], self.shape(parts[0])));
        }
        let width: usize = parts.iter().map(|&p| self.value(p).row_len()).sum();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.tracked(parts);
        Ok(self.push(DenseTensor::from_parts(vec![rows, width], out), Op::Concat(parts.to_vec()), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(LearnError::shape("add", self.shape(a), self.shape(b)));
        }
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        let rg = self.tracked(&[a, b]);
        Ok(self.push(y, Op::Add(a, b), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshaped(shape)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(y, Op::Reshape(x), rg))
    }

    /// 2-D convolution of `B×C×H×W` input with `O×C×k×k` kernels.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] || spec.stride == 0 {
            return Err(LearnError::shape("conv2d", &ws, &xs));
        }
        if self.shape(b) != [ws[0]] {
            return Err(LearnError::shape("conv2d bias", &[ws[0]], self.shape(b)));
        }
        let (batch, o, k) = (xs[0], ws[0], ws[2]);
        if xs[2] + 2 * spec.padding < k || xs[3] + 2 * spec.padding < k {
            return Err(LearnError::shape("conv2d kernel larger than input", &ws, &xs));
        }
        let d = ConvDims {
            c: xs[1],
            h: xs[2],
            w: xs[3],
            k,
            out_h: (xs[2] + 2 * spec.padding - k) / spec.stride + 1,
            out_w: (xs[3] + 2 * spec.padding - k) / spec.stride + 1,
        };
        let plane = d.out_h * d.out_w;
        let wm = ArrayView2::from_shape((o, d.c * k * k), self.value(w).data()).expect("kernel layout");
        let bias = self.value(b).data();
        let xv = self.value(x).data();
        let in_len = d.c * d.h * d.w;
        let mut out = vec![0.0; batch * o * plane];
        for bi in 0..batch {
            let cols = im2col(&xv[bi * in_len..(bi + 1) * in_len], &d, spec);
            let y = wm.dot(&cols);
            let dst = &mut out[bi * o * plane..(bi + 1) * o * plane];
            for (oc, row) in y.outer_iter().enumerate() {
                for (p, v) in row.iter().enumerate() {
                    dst[oc * plane + p] = v + bias[oc];
                }
            }
        }
        let rg = self.tracked(&[x, w, b]);
        let shape = vec![batch, o, d.out_h, d.out_w];
        Ok(self.push(DenseTensor::from_parts(shape, out), Op::Conv2d { x, w, b, spec }, rg))
    }

    /// Mean over the spatial axes of `B×C×H×W`, giving `B×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(LearnError::shape("global average pool", &[0, 0, 0, 0], &xs));
        }
        let plane = xs[2] * xs[3];
        let y: Vec<f64> = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|c| c.iter().sum::<f64>() / plane as f64)
            .collect();
        let rg = self.tracked(&[x]);
        Ok(self.push(DenseTensor::from_parts(vec![xs[0], xs[1]], y), Op::GlobalAvgPool(x), rg))
    }

    /// Mean cross-entropy where each row of `logits` (`B × heads·classes`)
    /// is scored only on the head selected by `heads[i]`.
    pub fn routed_cross_entropy(
        &mut self,
        logits: Var,
        heads: &[usize],
        labels: &[usize],
        classes: usize,
    ) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, width) = (lv.rows(), lv.row_len());
        if heads.len() != rows || labels.len() != rows || classes == 0 || width % classes != 0 {
            return Err(LearnError::shape("routed cross-entropy", &[rows, classes], &[heads.len(), width]));
        }
        let mut probs = Vec::with_capacity(rows * classes);
        let mut columns = Vec::with_capacity(rows);
        let mut total = 0.0;
        for r in 0..rows {
            if labels[r] >= classes {
                return Err(LearnError::LabelOutOfRange {
                    label: labels[r],
                    classes,
                });
            }
            let start = heads[r] * classes;
            if start + classes > width {
                return Err(LearnError::Config(format!("head {} does not exist", heads[r])));
            }
            let z = &lv.row(r)[start..start + classes];
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - z[labels[r]];
            probs.extend(z.iter().map(|v| (v - lse).exp()));
            columns.push((start, labels[r]));
        }
        let rg = self.tracked(&[logits]);
        let op = Op::RoutedCe {
            logits,
            columns,
            probs,
            classes,
        };
        Ok(self.push(DenseTensor::scalar(total / rows as f64), op, rg))
    }

    /// Batch mean of the row-wise squared distance `‖a_i − b_i‖²`.
    pub fn sq_dist_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(LearnError::shape("squared distance", self.shape(a), self.shape(b)));
        }
        let rows = self.value(a).rows() as f64;
        let total: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y).powi(2))
            .sum();
        let rg = self.tracked(&[a, b]);
        Ok(self.push(DenseTensor::scalar(total / rows), Op::SqDistMean(a, b), rg))
    }

    /// Mean of `softplus(sign · x)`; with logits `x` this is the binary
    /// cross-entropy `−log σ(x)` (sign −1) or `−log(1 − σ(x))` (sign +1).
    pub fn softplus_mean(&mut self, x: Var, sign: f64) -> Var {
        let v = self.value(x);
        let total: f64 = v.data().iter().map(|t| softplus(sign * t)).sum();
        let y = DenseTensor::scalar(total / v.len() as f64);
        let rg = self.tracked(&[x]);
        self.push(y, Op::SoftplusMean { x, sign }, rg)
    }

    /// `Σ w_k · v_k` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(LearnError::shape("weighted sum term", &[1], self.shape(v)));
            }
            total += w * self.value(v).item();
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.tracked(&vars);
        Ok(self.push(DenseTensor::scalar(total), Op::Weighted(terms.to_vec()), rg))
    }

    pub fn backward(&self, root: Var) -> Result<Gradients> {
        self.backward_with(root, Vec::new())
    }

    /// Backward pass from scalar `root`, additionally seeding the given nodes
    /// with upstream gradients (for losses computed on another graph).
    pub fn backward_with(&self, root: Var, seeds: Vec<(Var, DenseTensor)>) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(LearnError::shape("backward root", &[1], self.shape(root)));
        }
        let mut grads: Vec<Option<DenseTensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(DenseTensor::scalar(1.0));
        let mut last = root.0;
        for (v, g) in seeds {
            if g.shape() != self.shape(v) {
                return Err(LearnError::shape("gradient seed", self.shape(v), g.shape()));
            }
            last = last.max(v.0);
            accumulate(&mut grads[v.0], g);
        }
        let mut params: Vec<Option<DenseTensor>> = (0..self.store.len()).map(|_| None).collect();

        for i in (0..=last).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(i, &gy, &mut grads, &mut params);
            grads[i] = Some(gy);
        }
        let shapes = self.store.ids().map(|id| self.store.get(id).shape().to_vec()).collect();
        Ok(Gradients {
            nodes: grads,
            params,
            shapes,
        })
    }

    fn propagate(
        &self,
        i: usize,
        gy: &DenseTensor,
        grads: &mut [Option<DenseTensor>],
        params: &mut [Option<DenseTensor>],
    ) {
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        let send = |grads: &mut [Option<DenseTensor>], v: Var, g: DenseTensor| {
            if self.nodes[v.0].requires_grad {
                accumulate(&mut grads[v.0], g);
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Param(id) => accumulate(&mut params[id.0], gy.clone()),
            Op::Linear { x, w, b } => {
                let dy = gy.matrix();
                if wants(w) {
                    send(grads, *w, DenseTensor::from_array(dy.t().dot(&self.value(*x).matrix())));
                }
                if wants(b) {
                    send(grads, *b, DenseTensor::from_parts(vec![dy.ncols()], dy.sum_axis(Axis(0)).to_vec()));
                }
                if wants(x) {
                    send(grads, *x, DenseTensor::from_array(dy.dot(&self.value(*w).matrix())));
                }
            }
            Op::Relu(x) => {
                let y = self.value(Var(i)).data();
                let g = gy.data().iter().zip(y).map(|(g, &y)| if y > 0.0 { *g } else { 0.0 }).collect();
                send(grads, *x, DenseTensor::from_parts(gy.shape().to_vec(), g));
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                let g = gy
                    .data()
                    .iter()
                    .zip(xv)
                    .map(|(g, &v)| if v > 0.0 { *g } else { slope * g })
                    .collect();
                send(grads, *x, DenseTensor::from_parts(gy.shape().to_vec(), g));
            }
            Op::Sigmoid(x) => {
                let y = self.value(Var(i)).data();
                let g = gy.data().iter().zip(y).map(|(g, &y)| g * y * (1.0 - y)).collect();
                send(grads, *x, DenseTensor::from_parts(gy.shape().to_vec(), g));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let shape = gy.shape();
                let (b, c) = (shape[0], shape[1]);
                let spatial = gy.len() / (b * c);
                let n = (b * spatial) as f64;
                let dy = gy.data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        for si in 0..spatial {
                            let k = (bi * c + ci) * spatial + si;
                            dgamma[ci] += dy[k] * xhat[k];
                            dbeta[ci] += dy[k];
                        }
                    }
                }
                if wants(x) {
                    let g = self.value(*gamma).data();
                    let mut dx = vec![0.0; dy.len()];
                    for bi in 0..b {
                        for ci in 0..c {
                            for si in 0..spatial {
                                let k = (bi * c + ci) * spatial + si;
                                dx[k] = if *batch_stats {
                                    g[ci] * inv_std[ci] / n
                                        * (n * dy[k] - dbeta[ci] - xhat[k] * dgamma[ci])
                                } else {
                                    g[ci] * inv_std[ci] * dy[k]
                                };
                            }
                        }
                    }
                    send(grads, *x, DenseTensor::from_parts(shape.to_vec(), dx));
                }
                send(grads, *gamma, DenseTensor::from_parts(vec![c], dgamma));
                send(grads, *beta, DenseTensor::from_parts(vec![c], dbeta));
            }
            Op::Concat(parts) => {
                let rows = gy.rows();
                let mut offset = 0;
                for p in parts {
                    let width = self.value(*p).row_len();
                    if wants(p) {
                        let g = gy.matrix().slice(s![.., offset..offset + width]).to_owned();
                        send(grads, *p, DenseTensor::from_array(g));
                    }
                    offset += width;
                    debug_assert_eq!(self.value(*p).rows(), rows);
                }
            }
            Op::Add(a, b) => {
                send(grads, *a, gy.clone());
                send(grads, *b, gy.clone());
            }
            Op::Reshape(x) => {
                let g = gy.clone().reshaped(self.shape(*x)).expect("same element count");
                send(grads, *x, g);
            }
            Op::Conv2d { x, w, b, spec } => {
                let (xs, ws) = (self.shape(*x).to_vec(), self.shape(*w).to_vec());
                let (batch, o, k) = (xs[0], ws[0], ws[2]);
                let d = ConvDims {
                    c: xs[1],
                    h: xs[2],
                    w: xs[3],
                    k,
                    out_h: gy.shape()[2],
                    out_w: gy.shape()[3],
                };
                let plane = d.out_h * d.out_w;
                let in_len = d.c * d.h * d.w;
                let wm = ArrayView2::from_shape((o, d.c * k * k), self.value(*w).data()).expect("kernel");
                let xv = self.value(*x).data();
                let mut dw = Array2::<f64>::zeros((o, d.c * k * k));
                let mut db = vec![0.0; o];
                let mut dx = vec![0.0; if wants(x) { xv.len() } else { 0 }];
                for bi in 0..batch {
                    let dout = ArrayView2::from_shape((o, plane), &gy.data()[bi * o * plane..(bi + 1) * o * plane])
                        .expect("output plane");
                    for (oc, row) in dout.outer_iter().enumerate() {
                        db[oc] += row.sum();
                    }
                    let xin = &xv[bi * in_len..(bi + 1) * in_len];
                    if wants(w) {
                        let cols = im2col(xin, &d, *spec);
                        dw += &dout.dot(&cols.t());
                    }
                    if wants(x) {
                        let dcols = wm.t().dot(&dout);
                        col2im(&dcols, &d, *spec, &mut dx[bi * in_len..(bi + 1) * in_len]);
                    }
                }
                if wants(w) {
                    send(grads, *w, DenseTensor::from_parts(ws.clone(), dw.into_raw_vec_and_offset().0));
                }
                send(grads, *b, DenseTensor::from_parts(vec![o], db));
                if wants(x) {
                    send(grads, *x, DenseTensor::from_parts(xs, dx));
                }
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.shape(*x).to_vec();
                let plane = xs[2] * xs[3];
                let g = gy
                    .data()
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v / plane as f64, plane))
                    .collect();
                send(grads, *x, DenseTensor::from_parts(xs, g));
            }
            Op::RoutedCe {
                logits,
                columns,
                probs,
                classes,
            } => {
                let shape = self.shape(*logits).to_vec();
                let rows = shape[0];
                let width = shape[1];
                let scale = gy.item() / rows as f64;
                let mut g = vec![0.0; rows * width];
                for (r, &(start, label)) in columns.iter().enumerate() {
                    for j in 0..*classes {
                        let target = if j == label { 1.0 } else { 0.0 };
                        g[r * width + start + j] = scale * (probs[r * classes + j] - target);
                    }
                }
                send(grads, *logits, DenseTensor::from_parts(shape, g));
            }
            Op::SqDistMean(a, b) => {
                let rows = self.value(*a).rows() as f64;
                let scale = 2.0 * gy.item() / rows;
                let diff: Vec<f64> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(x, y)| scale * (x - y))
                    .collect();
                let shape = self.shape(*a).to_vec();
                if wants(b) {
                    let neg = diff.iter().map(|v| -v).collect();
                    send(grads, *b, DenseTensor::from_parts(shape.clone(), neg));
                }
                send(grads, *a, DenseTensor::from_parts(shape, diff));
            }
            Op::SoftplusMean { x, sign } => {
                let xv = self.value(*x);
                let scale = gy.item() / xv.len() as f64;
                let g = xv.data().iter().map(|t| scale * sign * sigmoid(sign * t)).collect();
                send(grads, *x, DenseTensor::from_parts(xv.shape().to_vec(), g));
            }
            Op::Weighted(terms) => {
                for &(v, w) in terms {
                    send(grads, v, DenseTensor::scalar(w * gy.item()));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::rel_error;
    use beamsim_core::rng::rng_from_seed;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> DenseTensor {
        let mut rng = rng_from_seed(seed);
        let n = shape.iter().product();
        DenseTensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn quadratic_gradient() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let w = g.variable(DenseTensor::new(vec![1, 1], vec![3.0]).unwrap());
        let zero = g.input(DenseTensor::zeros(&[1, 1]));
        let f = g.sq_dist_mean(w, zero).unwrap();
        assert_eq!(g.value(f).item(), 9.0);
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.wrt(w).unwrap().item(), 6.0);
    }

    #[test]
    fn softmax_ce_gradient_at_uniform_logits() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let z = g.variable(DenseTensor::zeros(&[1, 4]));
        let ce = g.routed_cross_entropy(z, &[0], &[2], 4).unwrap();
        assert!((g.value(ce).item() - 4f64.ln()).abs() < 1e-12);
        let grads = g.backward(ce).unwrap();
        assert_eq!(grads.wrt(z).unwrap().data(), &[0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn routed_ce_only_touches_the_selected_head() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let z = g.variable(random(&[2, 6], 1));
        let ce = g.routed_cross_entropy(z, &[2, 0], &[1, 0], 2).unwrap();
        let grads = g.backward(ce).unwrap();
        let gz = grads.wrt(z).unwrap();
        assert_eq!(&gz.row(0)[..4], &[0.0; 4]);
        assert_eq!(&gz.row(1)[2..], &[0.0; 4]);
        assert!(g.routed_cross_entropy(z, &[0, 0], &[2, 0], 2).is_err());
    }

    #[test]
    fn softplus_and_sigmoid_values() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn disconnected_params_get_zero_gradients() {
        let mut store = ParamStore::new();
        let a = store.add("a", DenseTensor::filled(&[1, 1], 2.0));
        let unused = store.add("unused", DenseTensor::filled(&[3], 1.0));
        let mut g = Graph::new(&store);
        let va = g.param(a);
        let zero = g.input(DenseTensor::zeros(&[1, 1]));
        let loss = g.sq_dist_mean(va, zero).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.disconnected(), vec![unused]);
        assert_eq!(grads.param(unused).data(), &[0.0; 3]);
        assert_eq!(grads.param(a).item(), 4.0);
    }

    #[test]
    fn every_primitive_passes_finite_differences() {
        for (name, report) in crate::gradcheck::check_primitives(11).unwrap() {
            assert!(report.checked > 0);
            assert!(report.max_rel_error < 1e-4, "{name}: {report:?}");
        }
    }

    #[test]
    fn seeded_backward_adds_external_gradient() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.variable(random(&[2, 3], 1));
        let y = g.relu(x);
        let zero = g.input(DenseTensor::zeros(&[1]));
        let root = g.weighted_sum(&[(zero, 0.0)]).unwrap();
        let seed = DenseTensor::filled(&[2, 3], 1.0);
        let grads = g.backward_with(root, vec![(y, seed)]).unwrap();
        let expect: Vec<f64> = g.value(x).data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        assert_eq!(grads.wrt(x).unwrap().data(), expect.as_slice());
        assert!(rel_error(1.0, 1.0) == 0.0);
    }

    #[test]
    fn shape_errors() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(DenseTensor::zeros(&[2, 3]));
        let w = g.input(DenseTensor::zeros(&[4, 2]));
        let b = g.input(DenseTensor::zeros(&[4]));
        assert!(g.linear(x, w, b).is_err());
        let y = g.input(DenseTensor::zeros(&[3, 3]));
        assert!(g.add(x, y).is_err());
        assert!(g.concat(&[x, y]).is_err());
        assert!(g.backward(x).is_err());
    }
}
