//! Reverse-mode differentiation over a recorded sequence of tensor
//! operations.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! and whatever it needs for the exact reverse pass. Node order is a valid
//! topological order, so the backward sweep is a single reverse scan.

use std::collections::HashMap;
use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Batch statistics produced by a training-mode normalization, used by the
/// caller to update running statistics.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased variance over the statistic rows.
    pub var: Vec<f64>,
    /// Number of rows the statistics were computed over.
    pub count: usize,
}

/// How a normalization node obtains its statistics.
#[derive(Clone, Debug)]
pub enum NormStats<'a> {
    /// Statistics over the rows flagged `true` (all rows when `None`).
    Batch(Option<&'a [bool]>),
    /// Fixed running statistics.
    Running { mean: &'a [f64], var: &'a [f64] },
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    MaskRows(Var, Arc<Vec<bool>>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        /// `Some` in batch-statistics mode: rows that fed the statistics.
        stat_rows: Option<Vec<bool>>,
    },
    GatherRows(Var, Arc<Vec<usize>>),
    SegmentSoftmax(Var, Arc<Vec<usize>>),
    SegmentSum(Var, Arc<Vec<usize>>),
    MaskedSoftmax {
        x: Var,
        axis: usize,
        mask: Vec<bool>,
    },
    ReduceSum {
        x: Var,
        axis: usize,
    },
    SumAll(Var),
    /// A scalar whose gradient with respect to `input` was computed in closed
    /// form during the forward pass.
    Closed {
        input: Var,
        grad: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of a root with respect to every node that influences it.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

fn check_offsets(offsets: &[usize], rows: usize) -> Result<()> {
    if offsets.first() != Some(&0)
        || offsets.last() != Some(&rows)
        || offsets.windows(2).any(|w| w[0] > w[1])
    {
        return Err(Error::Shape(format!(
            "segment offsets must run monotonically from 0 to {rows}"
        )));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::Graph(format!("node {} is not recorded in this graph", v.0)))
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Smallest `|x|` over the inputs of every ReLU on the tape, the distance
    /// to the nearest kink; infinite without ReLUs.
    pub fn relu_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(&self.nodes[x.0].value),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    /// A constant input: gradients flow to it but nowhere further.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// The current value of a parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.node(a)?.value.dims2()?;
        let (k2, n) = self.node(b)?.value.dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul {m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), self.value(b).data(), &mut out, false);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_parts(va.shape().to_vec(), data);
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_map(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_map(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_map(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds a length-`m` vector to every row of an `n×m` matrix.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, m) = self.node(x)?.value.dims2()?;
        if self.node(b)?.value.len() != m {
            return Err(Error::Shape(format!("add_row: bias of {} for width {m}", self.value(b).len())));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(m) {
            for (v, c) in row.iter_mut().zip(&bias) {
                *v += c;
            }
        }
        Ok(self.push(out, Op::AddRow(x, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = &self.node(x)?.value;
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|a| a * c).collect());
        Ok(self.push(t, Op::Scale(x, c)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = &self.node(x)?.value;
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|a| a.max(0.0)).collect());
        Ok(self.push(t, Op::Relu(x)))
    }

    /// Gaussian error linear unit, exact (erf) form.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let v = &self.node(x)?.value;
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&a| gelu(a)).collect());
        Ok(self.push(t, Op::Gelu(x)))
    }

    /// Zeroes the rows whose flag is `false`.
    pub fn mask_rows(&mut self, x: Var, keep: Arc<Vec<bool>>) -> Result<Var> {
        let v = &self.node(x)?.value;
        if keep.len() != v.rows() {
            return Err(Error::Shape(format!("mask_rows: {} flags for {} rows", keep.len(), v.rows())));
        }
        let c = v.cols();
        let mut out = v.clone();
        for (row, &k) in out.data_mut().chunks_mut(c).zip(keep.iter()) {
            if !k {
                row.iter_mut().for_each(|a| *a = 0.0);
            }
        }
        Ok(self.push(out, Op::MaskRows(x, keep)))
    }

    /// Per-column normalization of an `n×d` matrix followed by the affine
    /// map `gamma ⊙ x̂ + beta`.
    ///
    /// In batch mode, statistics come from the flagged rows only but every
    /// row is normalized with them. Returns the batch statistics so the
    /// caller can maintain running averages.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (n, d) = self.node(x)?.value.dims2()?;
        if self.node(gamma)?.value.len() != d || self.node(beta)?.value.len() != d {
            return Err(Error::Shape(format!("batch_norm: affine width differs from {d}")));
        }
        let xv = self.value(x).data();
        let (mean, var, stat_rows, count) = match stats {
            NormStats::Batch(rows) => {
                if let Some(r) = rows {
                    if r.len() != n {
                        return Err(Error::Shape(format!("batch_norm: {} row flags for {n} rows", r.len())));
                    }
                }
                let use_row = |i: usize| rows.is_none_or(|r| r[i]);
                let count = (0..n).filter(|&i| use_row(i)).count();
                let mut mean = vec![0.0; d];
                let mut var = vec![0.0; d];
                if count > 0 {
                    for i in (0..n).filter(|&i| use_row(i)) {
                        for (m, v) in mean.iter_mut().zip(&xv[i * d..(i + 1) * d]) {
                            *m += v;
                        }
                    }
                    mean.iter_mut().for_each(|m| *m /= count as f64);
                    for i in (0..n).filter(|&i| use_row(i)) {
                        for ((s, v), m) in var.iter_mut().zip(&xv[i * d..(i + 1) * d]).zip(&mean) {
                            *s += (v - m) * (v - m);
                        }
                    }
                    var.iter_mut().for_each(|s| *s /= count as f64);
                }
                let flags = rows.map_or_else(|| vec![true; n], |r| r.to_vec());
                (mean, var, Some(flags), count)
            }
            NormStats::Running { mean, var } => {
                if mean.len() != d || var.len() != d {
                    return Err(Error::Shape("batch_norm: running statistics width".into()));
                }
                (mean.to_vec(), var.to_vec(), None, 0)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                let h = (xv[i * d + j] - mean[j]) * inv_std[j];
                xhat[i * d + j] = h;
                out[i * d + j] = g[j] * h + b[j];
            }
        }
        let batch = stat_rows.is_some().then(|| BatchStats {
            mean: mean.clone(),
            var: var.clone(),
            count,
        });
        let v = self.push(
            Tensor::from_parts(vec![n, d], out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                stat_rows,
            },
        );
        Ok((v, batch))
    }

    pub fn gather_rows(&mut self, x: Var, indices: Arc<Vec<usize>>) -> Result<Var> {
        let v = &self.node(x)?.value;
        let n = v.rows();
        let c = v.cols();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("gather_rows: index {bad} out of {n} rows")));
        }
        if indices.is_empty() {
            return Err(Error::Shape("gather_rows: empty index list".into()));
        }
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices.iter() {
            out.extend_from_slice(v.row(i));
        }
        let mut shape = v.shape().to_vec();
        shape[0] = indices.len();
        Ok(self.push(Tensor::from_parts(shape, out), Op::GatherRows(x, indices)))
    }

    /// Column-wise softmax within each contiguous row segment
    /// `offsets[s]..offsets[s+1]`.
    pub fn segment_softmax(&mut self, x: Var, offsets: Arc<Vec<usize>>) -> Result<Var> {
        let (n, d) = self.node(x)?.value.dims2()?;
        check_offsets(&offsets, n)?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * d];
        for w in offsets.windows(2) {
            let (s, e) = (w[0], w[1]);
            if s == e {
                continue;
            }
            for j in 0..d {
                let mx = (s..e).map(|i| xv[i * d + j]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for i in s..e {
                    let ex = (xv[i * d + j] - mx).exp();
                    out[i * d + j] = ex;
                    z += ex;
                }
                for i in s..e {
                    out[i * d + j] /= z;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, d], out), Op::SegmentSoftmax(x, offsets)))
    }

    /// Sums the rows of each contiguous segment into one output row.
    pub fn segment_sum(&mut self, x: Var, offsets: Arc<Vec<usize>>) -> Result<Var> {
        let (n, d) = self.node(x)?.value.dims2()?;
        check_offsets(&offsets, n)?;
        let segs = offsets.len() - 1;
        if segs == 0 {
            return Err(Error::Shape("segment_sum: no segments".into()));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; segs * d];
        for (s, w) in offsets.windows(2).enumerate() {
            for i in w[0]..w[1] {
                for j in 0..d {
                    out[s * d + j] += xv[i * d + j];
                }
            }
        }
        Ok(self.push(Tensor::from_parts(vec![segs, d], out), Op::SegmentSum(x, offsets)))
    }

    /// Softmax along `axis` restricted to slots where `mask` is true. Masked
    /// slots receive exactly 0; a lane with no valid slot is all 0.
    ///
    /// `mask` has the same rank as `x`; each of its dimensions equals the
    /// corresponding dimension of `x` or is 1 (broadcast).
    pub fn masked_softmax(&mut self, x: Var, axis: usize, mask: &[bool], mask_shape: &[usize]) -> Result<Var> {
        let shape = self.node(x)?.value.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("softmax axis {axis} out of range for rank {}", shape.len())));
        }
        if mask_shape.len() != shape.len()
            || mask_shape.iter().zip(&shape).any(|(&m, &s)| m != s && m != 1)
            || mask.len() != mask_shape.iter().product::<usize>()
        {
            return Err(Error::Shape(format!("mask {mask_shape:?} does not broadcast to {shape:?}")));
        }
        // Expand the mask to the full shape.
        let total: usize = shape.iter().product();
        let mut full = vec![false; total];
        let rank = shape.len();
        let mut idx = vec![0usize; rank];
        for slot in full.iter_mut() {
            let mut mi = 0;
            for k in 0..rank {
                let c = if mask_shape[k] == 1 { 0 } else { idx[k] };
                mi = mi * mask_shape[k] + c;
            }
            *slot = mask[mi];
            for k in (0..rank).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        let xv = self.value(x).data();
        let (outer, len, inner) = lanes(&shape, axis);
        let mut out = vec![0.0; total];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let mx = (0..len)
                    .filter(|&k| full[at(k)])
                    .map(|k| xv[at(k)])
                    .fold(f64::NEG_INFINITY, f64::max);
                if mx == f64::NEG_INFINITY {
                    continue;
                }
                let mut z = 0.0;
                for k in (0..len).filter(|&k| full[at(k)]) {
                    let e = (xv[at(k)] - mx).exp();
                    out[at(k)] = e;
                    z += e;
                }
                for k in (0..len).filter(|&k| full[at(k)]) {
                    out[at(k)] /= z;
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::MaskedSoftmax { x, axis, mask: full },
        ))
    }

    /// Sums out one axis. Reducing the only axis yields a scalar of shape `[1]`.
    pub fn reduce_sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.node(x)?.value.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("reduce axis {axis} out of range for rank {}", shape.len())));
        }
        let (outer, len, inner) = lanes(&shape, axis);
        let xv = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += xv[(o * len + k) * inner + i];
                }
            }
        }
        let mut new_shape: Vec<usize> = shape.clone();
        new_shape.remove(axis);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        Ok(self.push(Tensor::from_parts(new_shape, out), Op::ReduceSum { x, axis }))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.node(x)?.value.sum();
        Ok(self.push(Tensor::scalar(s), Op::SumAll(x)))
    }

    /// Records a scalar computed outside the tape together with its exact
    /// gradient with respect to `input`.
    pub fn closed_form(&mut self, input: Var, value: f64, grad: Tensor) -> Result<Var> {
        if self.node(input)?.value.shape() != grad.shape() {
            return Err(Error::Shape("closed_form: gradient shape differs from input".into()));
        }
        Ok(self.push(Tensor::scalar(value), Op::Closed { input, grad }))
    }

    /// Gradients of a scalar root with respect to every upstream node.
    pub fn gradients(&self, root: Var) -> Result<Gradients> {
        let r = self.node(root)?;
        if !r.value.is_scalar() {
            return Err(Error::Graph(format!(
                "backward root must be scalar, got shape {:?}",
                r.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(r.value.shape(), 1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backpropagates from `root` and adds the result into every reachable
    /// parameter's gradient accumulator.
    pub fn backward(&self, root: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(root)?;
        for (&id, &v) in &self.param_vars {
            if let Some(g) = grads.get(v) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            let slot = &mut grads[v.0];
            let t = slot.get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()));
            f(t.data_mut());
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).cols();
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &|ga| gemm_nt(m, n, k, gd, bv, ga));
                acc(*b, &|gb| gemm_tn(m, k, n, av, gd, gb));
            }
            Op::Add(a, b) => {
                acc(*a, &|ga| ga.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                acc(*b, &|gb| gb.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &|ga| ga.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                acc(*b, &|gb| gb.iter_mut().zip(gd).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &|ga| {
                    for ((x, y), w) in ga.iter_mut().zip(gd).zip(bv) {
                        *x += y * w;
                    }
                });
                acc(*b, &|gb| {
                    for ((x, y), w) in gb.iter_mut().zip(gd).zip(av) {
                        *x += y * w;
                    }
                });
            }
            Op::AddRow(x, b) => {
                acc(*x, &|gx| gx.iter_mut().zip(gd).for_each(|(p, q)| *p += q));
                let m = self.value(*b).len();
                acc(*b, &|gb| {
                    for row in gd.chunks(m) {
                        for (p, q) in gb.iter_mut().zip(row) {
                            *p += q;
                        }
                    }
                });
            }
            Op::Scale(x, c) => {
                acc(*x, &|gx| gx.iter_mut().zip(gd).for_each(|(p, q)| *p += c * q));
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &|gx| {
                    for ((p, q), v) in gx.iter_mut().zip(gd).zip(xv) {
                        if *v > 0.0 {
                            *p += q;
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &|gx| {
                    for ((p, q), v) in gx.iter_mut().zip(gd).zip(xv) {
                        *p += q * gelu_grad(*v);
                    }
                });
            }
            Op::MaskRows(x, keep) => {
                let c = g.cols();
                acc(*x, &|gx| {
                    for ((rg, ru), &k) in gx.chunks_mut(c).zip(gd.chunks(c)).zip(keep.iter()) {
                        if k {
                            rg.iter_mut().zip(ru).for_each(|(p, q)| *p += q);
                        }
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                stat_rows,
            } => {
                let (n, d) = g.dims2().unwrap();
                let gam = self.value(*gamma).data();
                acc(*gamma, &|gg| {
                    for i in 0..n {
                        for j in 0..d {
                            gg[j] += gd[i * d + j] * xhat[i * d + j];
                        }
                    }
                });
                acc(*beta, &|gb| {
                    for i in 0..n {
                        for j in 0..d {
                            gb[j] += gd[i * d + j];
                        }
                    }
                });
                match stat_rows {
                    None => acc(*x, &|gx| {
                        for i in 0..n {
                            for j in 0..d {
                                gx[i * d + j] += gd[i * d + j] * gam[j] * inv_std[j];
                            }
                        }
                    }),
                    Some(rows) => {
                        let m = rows.iter().filter(|&&r| r).count();
                        // Mean and variance depend on the statistic rows; every
                        // output row depends on the mean and variance.
                        let mut sum_g = vec![0.0; d];
                        let mut sum_gx = vec![0.0; d];
                        for i in 0..n {
                            for j in 0..d {
                                sum_g[j] += gd[i * d + j];
                                sum_gx[j] += gd[i * d + j] * xhat[i * d + j];
                            }
                        }
                        acc(*x, &|gx| {
                            for i in 0..n {
                                for j in 0..d {
                                    let k = gam[j] * inv_std[j];
                                    let mut v = gd[i * d + j];
                                    if rows[i] && m > 0 {
                                        let mf = m as f64;
                                        v -= sum_g[j] / mf + xhat[i * d + j] * sum_gx[j] / mf;
                                    }
                                    gx[i * d + j] += k * v;
                                }
                            }
                        });
                    }
                }
            }
            Op::GatherRows(x, indices) => {
                let c = g.cols();
                acc(*x, &|gx| {
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..c {
                            gx[i * c + j] += gd[r * c + j];
                        }
                    }
                });
            }
            Op::SegmentSoftmax(x, offsets) => {
                let d = g.cols();
                let y = node.value.data();
                acc(*x, &|gx| {
                    for w in offsets.windows(2) {
                        for j in 0..d {
                            let dot: f64 = (w[0]..w[1]).map(|i| y[i * d + j] * gd[i * d + j]).sum();
                            for i in w[0]..w[1] {
                                gx[i * d + j] += y[i * d + j] * (gd[i * d + j] - dot);
                            }
                        }
                    }
                });
            }
            Op::SegmentSum(x, offsets) => {
                let d = g.cols();
                acc(*x, &|gx| {
                    for (s, w) in offsets.windows(2).enumerate() {
                        for i in w[0]..w[1] {
                            for j in 0..d {
                                gx[i * d + j] += gd[s * d + j];
                            }
                        }
                    }
                });
            }
            Op::MaskedSoftmax { x, axis, mask } => {
                let shape = node.value.shape();
                let (outer, len, inner) = lanes(shape, *axis);
                let y = node.value.data();
                acc(*x, &|gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * len + k) * inner + i;
                            let dot: f64 = (0..len).map(|k| y[at(k)] * gd[at(k)]).sum();
                            for k in (0..len).filter(|&k| mask[at(k)]) {
                                gx[at(k)] += y[at(k)] * (gd[at(k)] - dot);
                            }
                        }
                    }
                });
            }
            Op::ReduceSum { x, axis } => {
                let shape = self.value(*x).shape();
                let (outer, len, inner) = lanes(shape, *axis);
                acc(*x, &|gx| {
                    for o in 0..outer {
                        for k in 0..len {
                            for i in 0..inner {
                                gx[(o * len + k) * inner + i] += gd[o * inner + i];
                            }
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                let s = gd[0];
                acc(*x, &|gx| gx.iter_mut().for_each(|p| *p += s));
            }
            Op::Closed { input, grad } => {
                let s = gd[0];
                acc(*input, &|gx| {
                    for (p, q) in gx.iter_mut().zip(grad.data()) {
                        *p += s * q;
                    }
                });
            }
        }
    }
}
