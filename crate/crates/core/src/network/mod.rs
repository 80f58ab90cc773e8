//! The classification network: feature embedding, two residual radius
//! transformer blocks and a three-stage MLP head producing per-point logits.

mod config;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{EmbedAct, MlpNorm, NetworkConfig, D_IN};

use crate::attention::{ball_query, PairList, RadiusAttention};
use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Ctx, Linear, Mode};
use crate::numerics::{ParamStore, Tensor, Var};
use crate::scan::SemanticClass;

/// Network input for one or more independent point sets stacked row-wise.
#[derive(Clone, Debug)]
pub struct NetInput {
    /// `N×5` rows `(x, y, z, rcs, doppler)`.
    pub features: Tensor,
    pub pairs: PairList,
    /// Row offsets of each point set, with a trailing total.
    pub offsets: Vec<usize>,
}

impl NetInput {
    /// Builds neighborhoods per point set; sets never see each other.
    pub fn new(config: &NetworkConfig, parts: &[(&[[f64; 2]], &[[f64; 5]])]) -> Result<Self> {
        let mut neighborhoods = Vec::with_capacity(parts.len());
        let mut rows = Vec::new();
        let mut offsets = vec![0];
        for (coords, feats) in parts {
            if coords.len() != feats.len() {
                return Err(Error::Shape(format!("{} coordinates for {} feature rows", coords.len(), feats.len())));
            }
            if coords.is_empty() {
                continue;
            }
            neighborhoods.push(ball_query(coords, config.radius, config.nmax)?);
            rows.extend(feats.iter().flatten().copied());
            offsets.push(offsets.last().unwrap() + coords.len());
        }
        if neighborhoods.is_empty() {
            return Err(Error::InvalidArgument("network input needs at least one point".into()));
        }
        let refs: Vec<_> = neighborhoods.iter().collect();
        let pairs = PairList::build(&refs, config.attn_pad)?;
        let n = *offsets.last().unwrap();
        Ok(NetInput {
            features: Tensor::matrix(n, D_IN, rows)?,
            pairs,
            offsets,
        })
    }

    pub fn single(config: &NetworkConfig, coords: &[[f64; 2]], features: &[[f64; 5]]) -> Result<Self> {
        Self::new(config, &[(coords, features)])
    }

    pub fn num_points(&self) -> usize {
        self.features.rows()
    }
}

/// `Linear → [BN] → activation`.
#[derive(Clone, Debug)]
struct Stage {
    linear: Linear,
    norm: Option<BatchNorm>,
    gelu: bool,
}

impl Stage {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, i: usize, o: usize, norm: MlpNorm, gelu: bool) -> Self {
        let batch = norm == MlpNorm::Batch;
        Stage {
            linear: Linear::new(store, rng, &format!("{name}.linear"), i, o, !batch),
            norm: batch.then(|| BatchNorm::new(store, &format!("{name}.bn"), o)),
            gelu,
        }
    }

    fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut y = self.linear.forward(ctx, x)?;
        if let Some(bn) = &self.norm {
            y = bn.forward(ctx, y, None)?;
        }
        if self.gelu {
            y = ctx.graph.gelu(y)?;
        }
        Ok(y)
    }
}

/// Two linears with a GELU between them.
#[derive(Clone, Debug)]
struct Mlp {
    first: Linear,
    second: Linear,
}

impl Mlp {
    /// `out_bias = false` when batch normalization follows directly.
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, i: usize, o: usize, out_bias: bool) -> Self {
        Mlp {
            first: Linear::new(store, rng, &format!("{name}.0"), i, o, true),
            second: Linear::new(store, rng, &format!("{name}.1"), o, o, out_bias),
        }
    }

    fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.first.forward(ctx, x)?;
        let h = ctx.graph.gelu(h)?;
        self.second.forward(ctx, h)
    }
}

/// Pre-MLP raising the width, radius attention with a skip connection
/// around it, post-MLP.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pre: Mlp,
    pub attention: RadiusAttention,
    post: Mlp,
    pub width_in: usize,
    pub width_out: usize,
}

impl TransformerBlock {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, width_in: usize, width_out: usize, out_bias: bool) -> Self {
        TransformerBlock {
            pre: Mlp::new(store, rng, &format!("{name}.pre"), width_in, width_out, true),
            attention: RadiusAttention::new(store, rng, &format!("{name}.attn"), width_out),
            post: Mlp::new(store, rng, &format!("{name}.post"), width_out, width_out, out_bias),
            width_in,
            width_out,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var, pairs: &PairList) -> Result<Var> {
        let width = ctx.graph.value(x).cols();
        if width != self.width_in {
            return Err(Error::Shape(format!("block expects width {}, got {width}", self.width_in)));
        }
        let skip = self.pre.forward(ctx, x)?;
        let att = self.attention.forward(ctx, skip, pairs)?;
        let sum = ctx.graph.add(att, skip)?;
        self.post.forward(ctx, sum)
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    pub config: NetworkConfig,
    embed: Stage,
    embed_out: Linear,
    pub blocks: [TransformerBlock; 2],
    head: [Stage; 5],
    classifier: Linear,
}

impl Network {
    /// Fresh parameters drawn deterministically from `config.seed`.
    pub fn new(config: &NetworkConfig) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = config;
        let norm = c.mlp_norm;
        let [h1, h2, h3] = c.head;
        let s = &mut store;
        let r = &mut rng;
        let embed = Stage::new(s, r, "embed.0", D_IN, c.d1, norm, c.embed_act == EmbedAct::Gelu);
        let embed_out = Linear::new(s, r, "embed.1", c.d1, c.d1, true);
        let blocks = [
            TransformerBlock::new(s, r, "block1", c.d1, c.d1, true),
            TransformerBlock::new(s, r, "block2", c.d1, c.d2, norm == MlpNorm::None),
        ];
        let head = [
            Stage::new(s, r, "head.a.0", c.d2, c.d2, norm, true),
            Stage::new(s, r, "head.a.1", c.d2, h1, norm, true),
            Stage::new(s, r, "head.b.0", h1, h1, norm, true),
            Stage::new(s, r, "head.b.1", h1, h2, norm, true),
            Stage::new(s, r, "head.c.0", h2, h3, norm, true),
        ];
        let classifier = Linear::new(s, r, "head.c.1", h3, c.classes, true);
        let net = Network {
            config: config.clone(),
            embed,
            embed_out,
            blocks,
            head,
            classifier,
        };
        net.check_ladder()?;
        Ok((net, store))
    }

    /// Architecture from `config` with parameters read from a checkpoint.
    pub fn load(config: &NetworkConfig, checkpoint: &Path) -> Result<(Self, ParamStore)> {
        let (net, mut store) = Self::new(config)?;
        store.load_checkpoint(checkpoint)?;
        Ok((net, store))
    }

    fn check_ladder(&self) -> Result<()> {
        let mut width = D_IN;
        let mut links = vec![(self.embed.linear.fan_in, self.embed.linear.fan_out), (self.embed_out.fan_in, self.embed_out.fan_out)];
        for b in &self.blocks {
            links.push((b.width_in, b.width_out));
        }
        links.extend(self.head.iter().map(|s| (s.linear.fan_in, s.linear.fan_out)));
        links.push((self.classifier.fan_in, self.classifier.fan_out));
        for (i, o) in links {
            if i != width {
                return Err(Error::Shape(format!("layer expecting width {i} follows width {width}")));
            }
            width = o;
        }
        if width != self.config.classes {
            return Err(Error::Shape(format!("network ends at width {width}, not {}", self.config.classes)));
        }
        Ok(())
    }

    /// Per-point class logits, `N×C`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, input: &NetInput) -> Result<Var> {
        let x = ctx.graph.leaf(input.features.clone());
        let h = self.embed.forward(ctx, x)?;
        let mut h = self.embed_out.forward(ctx, h)?;
        for block in &self.blocks {
            h = block.forward(ctx, h, &input.pairs)?;
        }
        for stage in &self.head {
            h = stage.forward(ctx, h)?;
        }
        self.classifier.forward(ctx, h)
    }

    /// Inference-mode logits.
    pub fn infer(&self, store: &ParamStore, input: &NetInput) -> Result<Tensor> {
        let mut ctx = Ctx::new(store, Mode::Infer);
        let out = self.forward(&mut ctx, input)?;
        Ok(ctx.graph.value(out).clone())
    }
}

/// Adds uniform noise in `±scale` to every normalization gamma and beta.
///
/// At initialization symmetric neighbor offsets give the self slot of the
/// positional encoding a pre-activation of exactly zero, a ReLU kink where
/// central differences are meaningless. Gradient checks run at a jittered
/// point instead.
pub fn jitter_normalization(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    use rand::Rng;
    for p in store.params_mut() {
        if p.name.ends_with(".gamma") || p.name.ends_with(".beta") {
            for v in p.value.data_mut() {
                *v += rng.random_range(-scale..=scale);
            }
        }
    }
}

/// Row-wise argmax; ties go to the lowest class code.
pub fn predict_codes(logits: &Tensor) -> Vec<usize> {
    let c = logits.cols();
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub fn predict_classes(logits: &Tensor) -> Result<Vec<SemanticClass>> {
    predict_codes(logits)
        .into_iter()
        .map(|k| SemanticClass::from_code(k).ok_or_else(|| Error::Shape(format!("logit column {k} is not a class code"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::attention::tests::{mat, oracle, vm};
    use crate::attention::PadMode;
    use crate::numerics::gradient_check;

    fn cloud(seed: u64, n: usize, extent: f64) -> (Vec<[f64; 2]>, Vec<[f64; 5]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(-extent..extent), rng.random_range(-extent..extent)])
            .collect();
        let feats = coords
            .iter()
            .map(|p| [p[0], p[1], 0.0, rng.random_range(-10.0..20.0), rng.random_range(-8.0..8.0)])
            .collect();
        (coords, feats)
    }

    #[test]
    fn logits_have_class_width() {
        let cfg = NetworkConfig::toy();
        let (net, store) = Network::new(&cfg).unwrap();
        let (c, f) = cloud(1, 10, 6.0);
        let logits = net.infer(&store, &NetInput::single(&cfg, &c, &f).unwrap()).unwrap();
        assert_eq!(logits.shape(), &[10, 6]);
        let again = net.infer(&store, &NetInput::single(&cfg, &c, &f).unwrap()).unwrap();
        assert_eq!(logits, again);
    }

    #[test]
    fn initialization_is_seeded() {
        let cfg = NetworkConfig::paper();
        let (_, a) = Network::new(&cfg).unwrap();
        let (_, b) = Network::new(&cfg).unwrap();
        assert_eq!(a.to_checkpoint_string(), b.to_checkpoint_string());
        for p in a.params() {
            if p.name.ends_with("gamma") {
                assert!(p.value.data().iter().all(|&v| v == 1.0));
            }
        }
        // Uniform on ±a has standard deviation a/sqrt(3); the mean of n
        // draws lies within 3·a/sqrt(3n) of zero.
        let w = &a.get(a.id("embed.0.linear.weight").unwrap()).value;
        let bound = (6.0f64 / (5.0 + 64.0)).sqrt();
        let n = w.len() as f64;
        let mean = w.sum() / n;
        assert!(mean.abs() < 3.0 * bound / (3.0 * n).sqrt());
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn block_widens_features() {
        let cfg = NetworkConfig::toy();
        let (net, store) = Network::new(&cfg).unwrap();
        let (c, f) = cloud(2, 10, 4.0);
        let input = NetInput::single(&cfg, &c, &f).unwrap();
        let mut ctx = Ctx::new(&store, Mode::Train);
        let x = ctx.graph.leaf(Tensor::full(&[10, cfg.d1], 0.1));
        let y = net.blocks[1].forward(&mut ctx, x, &input.pairs).unwrap();
        assert_eq!(ctx.graph.value(y).shape(), &[10, cfg.d2]);
        let bad = ctx.graph.leaf(Tensor::full(&[10, cfg.d2], 0.1));
        assert!(net.blocks[1].forward(&mut ctx, bad, &input.pairs).is_err());
    }

    fn mlp_oracle(store: &ParamStore, name: &str, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let lin = |rows: &[Vec<f64>], l: &str| -> Vec<Vec<f64>> {
            let w = mat(store, &format!("{name}.{l}.weight"));
            let b = store
                .id(&format!("{name}.{l}.bias"))
                .map(|id| store.get(id).value.data().to_vec())
                .unwrap_or_else(|| vec![0.0; w[0].len()]);
            rows.iter()
                .map(|r| vm(r, &w).iter().zip(&b).map(|(v, b)| v + b).collect())
                .collect()
        };
        let h = lin(x, "0");
        let h: Vec<Vec<f64>> = h
            .iter()
            .map(|r| r.iter().map(|&v| 0.5 * v * (1.0 + libm::erf(v / 2f64.sqrt()))).collect())
            .collect();
        lin(&h, "1")
    }

    #[test]
    fn block_matches_loop_oracle() {
        let cfg = NetworkConfig::toy();
        let (net, store) = Network::new(&cfg).unwrap();
        let (c, _) = cloud(3, 12, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let x: Vec<Vec<f64>> = (0..12).map(|_| (0..cfg.d1).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let xt = Tensor::matrix(12, cfg.d1, x.iter().flatten().copied().collect()).unwrap();

        let pre = mlp_oracle(&store, "block2.pre", &x);
        let pre_t = Tensor::matrix(12, cfg.d2, pre.iter().flatten().copied().collect()).unwrap();
        let att = oracle(&store, "block2.attn", &pre_t, &c, cfg.radius, cfg.nmax);
        let sum: Vec<Vec<f64>> = att.iter().zip(&pre).map(|(a, p)| a.iter().zip(p).map(|(a, p)| a + p).collect()).collect();
        let expected = mlp_oracle(&store, "block2.post", &sum);

        let nb = ball_query(&c, cfg.radius, cfg.nmax).unwrap();
        let pairs = PairList::build(&[&nb], PadMode::Mask).unwrap();
        let mut ctx = Ctx::new(&store, Mode::Train);
        let xv = ctx.graph.leaf(xt);
        let y = net.blocks[1].forward(&mut ctx, xv, &pairs).unwrap();
        let y = ctx.graph.value(y);
        for i in 0..12 {
            for k in 0..cfg.d2 {
                assert!((y.at2(i, k) - expected[i][k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn silenced_attention_leaves_the_residual_path() {
        let cfg = NetworkConfig::toy();
        let (net, mut store) = Network::new(&cfg).unwrap();
        for name in ["block2.attn.w_v", "block2.attn.w_p2"] {
            let id = store.id(name).unwrap();
            store.get_mut(id).value.fill(0.0);
        }
        let (c, _) = cloud(4, 9, 3.0);
        let x: Vec<Vec<f64>> = (0..9).map(|i| (0..cfg.d1).map(|k| ((i * 7 + k) as f64).sin()).collect()).collect();
        let xt = Tensor::matrix(9, cfg.d1, x.iter().flatten().copied().collect()).unwrap();
        let input = NetInput::single(&cfg, &c, &vec![[0.0; 5]; 9]).unwrap();
        let mut ctx = Ctx::new(&store, Mode::Train);
        let xv = ctx.graph.leaf(xt);
        let y = net.blocks[1].forward(&mut ctx, xv, &input.pairs).unwrap();
        let expected = mlp_oracle(&store, "block2.post", &mlp_oracle(&store, "block2.pre", &x));
        let y = ctx.graph.value(y);
        for i in 0..9 {
            for k in 0..cfg.d2 {
                assert!((y.at2(i, k) - expected[i][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distant_copies_do_not_change_logits() {
        let cfg = NetworkConfig::toy();
        let (net, store) = Network::new(&cfg).unwrap();
        let (c, f) = cloud(5, 8, 2.0);
        let base = net.infer(&store, &NetInput::single(&cfg, &c, &f).unwrap()).unwrap();
        let mut c2 = c.clone();
        let mut f2 = f.clone();
        for (p, q) in c.iter().zip(&f) {
            c2.push([p[0] + 100.0, p[1]]);
            f2.push([q[0] + 100.0, q[1], q[2], q[3], q[4]]);
        }
        let both = net.infer(&store, &NetInput::single(&cfg, &c2, &f2).unwrap()).unwrap();
        for i in 0..8 {
            assert_eq!(base.row(i), both.row(i));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = NetworkConfig::toy();
        let (net, store) = Network::new(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        store.save_checkpoint(&path).unwrap();
        let mut other_cfg = cfg.clone();
        other_cfg.seed = 99;
        let (_, loaded) = Network::load(&other_cfg, &path).unwrap();
        let (c, f) = cloud(6, 15, 5.0);
        let input = NetInput::single(&cfg, &c, &f).unwrap();
        let a = net.infer(&store, &input).unwrap();
        let b = net.infer(&loaded, &input).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn full_network_gradients() {
        let cfg = NetworkConfig::toy();
        let (net, mut store) = Network::new(&cfg).unwrap();
        let (c, f) = cloud(7, 20, 4.0);
        let input = NetInput::single(&cfg, &c, &f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        jitter_normalization(&mut store, &mut rng, 0.1);
        let w = Tensor::matrix(20, 6, (0..120).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let report = gradient_check(&mut store, 1e-5, |s, g| {
            let mut ctx = Ctx::with_graph(s, Mode::Train, std::mem::take(g));
            let logits = net.forward(&mut ctx, &input)?;
            let wv = ctx.graph.leaf(w.clone());
            let prod = ctx.graph.mul(logits, wv)?;
            let loss = ctx.graph.sum_all(prod)?;
            *g = ctx.graph;
            Ok(loss)
        })
        .unwrap();
        assert!(report.max_relative_error() < 1e-4, "{:#?}", report.tensors.iter().filter(|t| t.max_relative_error > 1e-6).collect::<Vec<_>>());
    }

    #[test]
    fn argmax_ties_go_low() {
        let t = Tensor::matrix(3, 6, vec![
            0.0, 0.0, 0.0, 1.0, 0.0, 0.0,
            0.5, 0.5, 0.5, 0.5, 0.5, 0.5,
            -1.0, 2.0, 3.0, 3.0, 0.0, 0.0,
        ])
        .unwrap();
        assert_eq!(
            predict_classes(&t).unwrap(),
            vec![SemanticClass::PedestrianGroup, SemanticClass::Static, SemanticClass::Pedestrian]
        );
    }

    #[test]
    fn argmax_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = Tensor::matrix(200, 6, (0..1200).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let got = predict_codes(&t);
        for r in 0..200 {
            let row = t.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(got[r], row.iter().position(|&v| v == m).unwrap());
        }
    }
}
