//! Parameterized building blocks shared by the attention layer and the
//! network: linear maps, batch normalization and the forward context that
//! carries the tape and the normalization mode.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{BatchStats, Graph, NormStats, ParamId, ParamStore, Tensor, Var};

/// Whether normalization layers use batch statistics (and report them for
/// running-average updates) or their stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// One forward pass: the tape, the parameters it reads and the batch
/// statistics collected from training-mode normalization.
pub struct Ctx<'a> {
    pub graph: Graph,
    pub store: &'a ParamStore,
    pub mode: Mode,
    pub bn_updates: Vec<BnUpdate>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode) -> Self {
        Ctx {
            graph: Graph::new(),
            store,
            mode,
            bn_updates: Vec::new(),
        }
    }

    /// Continues recording on an existing tape.
    pub fn with_graph(store: &'a ParamStore, mode: Mode, graph: Graph) -> Self {
        Ctx {
            graph,
            store,
            mode,
            bn_updates: Vec::new(),
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.graph.param(self.store, id)
    }
}

#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub prefix: String,
    pub momentum: f64,
    pub stats: BatchStats,
}

/// Folds collected batch statistics into the running averages:
/// `running ← (1 − momentum)·running + momentum·batch`, with the unbiased
/// batch variance.
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[BnUpdate]) {
    for u in updates {
        if u.stats.count == 0 {
            continue;
        }
        let n = u.stats.count as f64;
        let unbias = if u.stats.count > 1 { n / (n - 1.0) } else { 1.0 };
        let m = u.momentum;
        if let Some(rm) = store.buffer_mut(&format!("{}.running_mean", u.prefix)) {
            for (r, b) in rm.data_mut().iter_mut().zip(&u.stats.mean) {
                *r = (1.0 - m) * *r + m * b;
            }
        }
        if let Some(rv) = store.buffer_mut(&format!("{}.running_var", u.prefix)) {
            for (r, b) in rv.data_mut().iter_mut().zip(&u.stats.var) {
                *r = (1.0 - m) * *r + m * b * unbias;
            }
        }
    }
}

/// Uniform Glorot initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..=a)).collect();
    Tensor::from_parts(vec![fan_in, fan_out], data)
}

/// `x·W (+ b)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let weight = store.add(&format!("{name}.weight"), glorot(rng, fan_in, fan_out));
        let bias = bias.then(|| store.add(&format!("{name}.bias"), Tensor::zeros(&[fan_out])));
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let y = ctx.graph.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let bv = ctx.param(b);
                ctx.graph.add_row(y, bv)
            }
            None => Ok(y),
        }
    }
}

/// Per-feature batch normalization with learned affine parameters.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub prefix: String,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPSILON: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add(&format!("{name}.gamma"), Tensor::full(&[width], 1.0));
        let beta = store.add(&format!("{name}.beta"), Tensor::zeros(&[width]));
        store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[width]));
        store.add_buffer(&format!("{name}.running_var"), Tensor::full(&[width], 1.0));
        BatchNorm {
            gamma,
            beta,
            prefix: name.to_string(),
            momentum: Self::MOMENTUM,
            epsilon: Self::EPSILON,
        }
    }

    /// In training mode the statistics come from the rows flagged in
    /// `stat_rows` (all rows when `None`).
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var, stat_rows: Option<&[bool]>) -> Result<Var> {
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = ctx.graph.batch_norm(x, g, b, NormStats::Batch(stat_rows), self.epsilon)?;
                if let Some(stats) = stats {
                    ctx.bn_updates.push(BnUpdate {
                        prefix: self.prefix.clone(),
                        momentum: self.momentum,
                        stats,
                    });
                }
                Ok(y)
            }
            Mode::Infer => {
                let store = ctx.store;
                let mean = store
                    .buffer(&format!("{}.running_mean", self.prefix))
                    .expect("running mean registered at construction");
                let var = store
                    .buffer(&format!("{}.running_var", self.prefix))
                    .expect("running var registered at construction");
                let (y, _) = ctx.graph.batch_norm(
                    x,
                    g,
                    b,
                    NormStats::Running {
                        mean: mean.data(),
                        var: var.data(),
                    },
                    self.epsilon,
                )?;
                Ok(y)
            }
        }
    }
}
