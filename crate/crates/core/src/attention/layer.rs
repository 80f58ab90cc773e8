use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::Neighborhood;
use crate::error::{Error, Result};
use crate::layers::{glorot, BatchNorm, Ctx};
use crate::numerics::{ParamId, ParamStore, Tensor, Var};

/// Treatment of padded neighbor slots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PadMode {
    /// Padded slots are removed before the attention MLP and softmax.
    #[default]
    Mask,
    /// Padded slots carry zero queries, keys, values and encodings through
    /// the attention MLP and take part in the softmax.
    ZeroPad,
}

impl FromStr for PadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask" => Ok(PadMode::Mask),
            "zeropad" => Ok(PadMode::ZeroPad),
            _ => Err(Error::Config(format!("attn-pad must be mask or zeropad, got `{s}`"))),
        }
    }
}

impl fmt::Display for PadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PadMode::Mask => "mask",
            PadMode::ZeroPad => "zeropad",
        })
    }
}

/// Flattened (anchor, neighbor) slots of one or more neighborhoods, grouped
/// into one contiguous segment per anchor.
#[derive(Clone, Debug)]
pub struct PairList {
    pub num_points: usize,
    pub anchor: Arc<Vec<usize>>,
    pub neighbor: Arc<Vec<usize>>,
    pub valid: Arc<Vec<bool>>,
    pub offsets: Arc<Vec<usize>>,
    /// `P×2` relative positions.
    pub rel_pos: Tensor,
}

impl PairList {
    /// Concatenates neighborhoods of independent point sets; each
    /// neighborhood's indices are shifted by the number of points before it.
    pub fn build(neighborhoods: &[&Neighborhood], pad: PadMode) -> Result<Self> {
        let mut anchor = Vec::new();
        let mut neighbor = Vec::new();
        let mut valid = Vec::new();
        let mut offsets = vec![0];
        let mut rel = Vec::new();
        let mut base = 0;
        for nb in neighborhoods {
            for i in 0..nb.n {
                for k in 0..nb.nmax {
                    let (j, v, r) = nb.slot(i, k);
                    if !v && pad == PadMode::Mask {
                        continue;
                    }
                    anchor.push(base + i);
                    neighbor.push(base + j);
                    valid.push(v);
                    rel.extend_from_slice(&r);
                }
                offsets.push(anchor.len());
            }
            base += nb.n;
        }
        if anchor.is_empty() {
            return Err(Error::InvalidArgument("pair list needs at least one point".into()));
        }
        let p = anchor.len();
        Ok(PairList {
            num_points: base,
            anchor: Arc::new(anchor),
            neighbor: Arc::new(neighbor),
            valid: Arc::new(valid),
            offsets: Arc::new(offsets),
            rel_pos: Tensor::from_parts(vec![p, 2], rel),
        })
    }

    pub fn len(&self) -> usize {
        self.anchor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor.is_empty()
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }
}

/// Parameters of one radius transformer layer of width `D`.
#[derive(Clone, Debug)]
pub struct RadiusAttention {
    pub width: usize,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    /// Positional encoding: `rel·W_p1 → BN → ReLU → ·W_p2`.
    pub w_p1: ParamId,
    pub bn_p: BatchNorm,
    pub w_p2: ParamId,
    /// Attention MLP: `BN → ReLU → ·W_1 → BN → ReLU → ·W_2`.
    pub bn_a1: BatchNorm,
    pub w_1: ParamId,
    pub bn_a2: BatchNorm,
    pub w_2: ParamId,
}

/// Intermediate results of a forward pass, exposed for tests and tools.
pub struct AttentionTrace {
    pub output: Var,
    pub encoding: Var,
    pub weights: Var,
}

impl RadiusAttention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, width: usize) -> Self {
        let mut w = |suffix: &str, i: usize, o: usize| store_add(store, rng, &format!("{name}.{suffix}"), i, o);
        let w_q = w("w_q", width, width);
        let w_k = w("w_k", width, width);
        let w_v = w("w_v", width, width);
        let w_p1 = w("w_p1", 2, 2);
        let w_p2 = w("w_p2", 2, width);
        let w_1 = w("w_1", width, width);
        let w_2 = w("w_2", width, width);
        RadiusAttention {
            width,
            w_q,
            w_k,
            w_v,
            w_p1,
            bn_p: BatchNorm::new(store, &format!("{name}.bn_p"), 2),
            w_p2,
            bn_a1: BatchNorm::new(store, &format!("{name}.bn_a1"), width),
            w_1,
            bn_a2: BatchNorm::new(store, &format!("{name}.bn_a2"), width),
            w_2,
        }
    }

    /// Relative positional encoding `R` (`P×D`); padded slots are exactly 0
    /// and do not contribute to normalization statistics.
    pub fn positional_encoding(&self, ctx: &mut Ctx<'_>, pairs: &PairList) -> Result<Var> {
        let rel = ctx.graph.leaf(pairs.rel_pos.clone());
        let w1 = ctx.param(self.w_p1);
        let h = ctx.graph.matmul(rel, w1)?;
        let h = self.bn_p.forward(ctx, h, Some(&pairs.valid))?;
        let h = ctx.graph.relu(h)?;
        let w2 = ctx.param(self.w_p2);
        let r = ctx.graph.matmul(h, w2)?;
        if pairs.all_valid() {
            Ok(r)
        } else {
            ctx.graph.mask_rows(r, pairs.valid.clone())
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var, pairs: &PairList) -> Result<Var> {
        Ok(self.forward_traced(ctx, x, pairs)?.output)
    }

    pub fn forward_traced(&self, ctx: &mut Ctx<'_>, x: Var, pairs: &PairList) -> Result<AttentionTrace> {
        let (n, d) = ctx.graph.value(x).dims2()?;
        if n != pairs.num_points {
            return Err(Error::Shape(format!(
                "attention input has {n} points, neighborhood has {}",
                pairs.num_points
            )));
        }
        if d != self.width {
            return Err(Error::Shape(format!("attention width {} given {d} features", self.width)));
        }
        let g = &mut ctx.graph;
        let wq = g.param(ctx.store, self.w_q);
        let wk = g.param(ctx.store, self.w_k);
        let wv = g.param(ctx.store, self.w_v);
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let mut q_r = g.gather_rows(q, pairs.anchor.clone())?;
        let mut k_r = g.gather_rows(k, pairs.neighbor.clone())?;
        let mut v_r = g.gather_rows(v, pairs.neighbor.clone())?;
        if !pairs.all_valid() {
            q_r = g.mask_rows(q_r, pairs.valid.clone())?;
            k_r = g.mask_rows(k_r, pairs.valid.clone())?;
            v_r = g.mask_rows(v_r, pairs.valid.clone())?;
        }
        let r = self.positional_encoding(ctx, pairs)?;
        let g = &mut ctx.graph;
        let qk = g.sub(q_r, k_r)?;
        let a = g.add(qk, r)?;

        let a = self.bn_a1.forward(ctx, a, Some(&pairs.valid))?;
        let a = ctx.graph.relu(a)?;
        let w1 = ctx.param(self.w_1);
        let a = ctx.graph.matmul(a, w1)?;
        let a = self.bn_a2.forward(ctx, a, Some(&pairs.valid))?;
        let a = ctx.graph.relu(a)?;
        let w2 = ctx.param(self.w_2);
        let a = ctx.graph.matmul(a, w2)?;

        let g = &mut ctx.graph;
        let weights = g.segment_softmax(a, pairs.offsets.clone())?;
        let vr = g.add(v_r, r)?;
        let weighted = g.mul(weights, vr)?;
        let output = g.segment_sum(weighted, pairs.offsets.clone())?;
        Ok(AttentionTrace {
            output,
            encoding: r,
            weights,
        })
    }
}

fn store_add(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, i: usize, o: usize) -> ParamId {
    store.add(name, glorot(rng, i, o))
}
