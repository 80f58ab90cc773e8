use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::augment::{augment_scan, AugmentConfig, AugmentedSample};
use super::losses::{consistency_soft, cross_entropy, lovasz_softmax, LossBreakdown, LossValue};
use crate::error::{Error, Result};
use crate::layers::{apply_bn_updates, Ctx, Mode};
use crate::metrics::PanopticStats;
use crate::network::{NetInput, Network, NetworkConfig};
use crate::numerics::{AdamW, AdamWConfig, ParamStore, Tensor, Var};
use crate::pipeline::{evaluate, panoptic, ClassSource, Combine};
use crate::refinement::RefineMode;
use crate::scan::{MovingPrediction, RadarScan};
use crate::seeds::derive_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Epochs after this one run at `lr / lr_drop_factor`.
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub seed: u64,
    /// Checkpoint period in epochs; the last epoch is always saved.
    pub ckpt_every: usize,
    pub refine_mode: RefineMode,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 80,
            batch_size: 64,
            optimizer: AdamWConfig::default(),
            lr_drop_epoch: 60,
            lr_drop_factor: 10.0,
            seed: 0,
            ckpt_every: 10,
            refine_mode: RefineMode::Split,
        }
    }

    /// Same schedule shape at desk scale.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 4,
            lr_drop_epoch: 30,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.lr_drop_epoch >= self.epochs {
            return Err(Error::Config(format!(
                "lr_drop_epoch ({}) must be below epochs ({})",
                self.lr_drop_epoch, self.epochs
            )));
        }
        if !(self.lr_drop_factor >= 1.0) || !(self.optimizer.lr > 0.0) {
            return Err(Error::Config("lr must be positive and lr_drop_factor at least 1".into()));
        }
        Ok(())
    }

    /// Learning rate of a 1-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch > self.lr_drop_epoch {
            self.optimizer.lr / self.lr_drop_factor
        } else {
            self.optimizer.lr
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's optimizer steps.
    pub loss: LossBreakdown,
    pub val_pq: Option<f64>,
    pub val_miou: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"));
        let mut s = String::from("epoch,ce,lovasz,consistency,total,val_PQ,val_mIoU,lr\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:.8},{:.8},{:.8},{:.8},{},{},{}",
                r.epoch,
                r.loss.ce,
                r.loss.lovasz,
                r.loss.consistency,
                r.loss.total,
                opt(r.val_pq),
                opt(r.val_miou),
                r.lr
            );
        }
        s
    }
}

/// Training scans plus an optional disjoint validation split with its
/// backbone predictions.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [RadarScan],
    pub val: &'a [RadarScan],
    pub val_preds: &'a [MovingPrediction],
}

fn scale_loss(v: LossValue, w: f64) -> LossValue {
    LossValue {
        value: v.value * w,
        grad: v.grad.into_iter().map(|g| g * w).collect(),
    }
}

/// Batch losses on one tape: per-scan means, averaged over the
/// nonempty scans. Returns `None` when every sample is empty.
pub fn batch_loss<'a>(network: &Network, store: &'a ParamStore, samples: &[AugmentedSample]) -> Result<Option<(LossBreakdown, Ctx<'a>, Var)>> {
    let used: Vec<&AugmentedSample> = samples.iter().filter(|s| !s.is_empty()).collect();
    if used.is_empty() {
        return Ok(None);
    }
    let parts: Vec<(&[[f64; 2]], &[[f64; 5]])> = used.iter().map(|s| (&s.coords[..], &s.features[..])).collect();
    let input = NetInput::new(&network.config, &parts)?;
    let mut ctx = Ctx::new(store, Mode::Train);
    let logits = network.forward(&mut ctx, &input)?;
    let value = ctx.graph.value(logits).clone();
    let c = value.cols();
    let w = 1.0 / used.len() as f64;
    let mut grad = vec![0.0; value.len()];
    let (mut ce, mut lv, mut cs) = (0.0, 0.0, 0.0);
    for (k, s) in used.iter().enumerate() {
        let (lo, hi) = (input.offsets[k], input.offsets[k + 1]);
        let part = Tensor::matrix(hi - lo, c, value.data()[lo * c..hi * c].to_vec())?;
        let terms = [
            scale_loss(cross_entropy(&part, &s.targets)?, w),
            scale_loss(lovasz_softmax(&part, &s.targets)?, w),
            scale_loss(consistency_soft(&part, &s.instance_ids)?, w),
        ];
        ce += terms[0].value;
        lv += terms[1].value;
        cs += terms[2].value;
        for t in &terms {
            for (g, d) in grad[lo * c..hi * c].iter_mut().zip(&t.grad) {
                *g += d;
            }
        }
    }
    let breakdown = LossBreakdown::new(ce, lv, cs);
    let root = ctx.graph.closed_form(logits, breakdown.total, Tensor::new(value.shape().to_vec(), grad)?)?;
    Ok(Some((breakdown, ctx, root)))
}

/// Network, parameters and optimizer state.
pub struct Trainer {
    pub network: Network,
    pub store: ParamStore,
    pub config: TrainConfig,
    pub augment: AugmentConfig,
    optimizer: AdamW,
}

impl Trainer {
    pub fn new(net: &NetworkConfig, config: TrainConfig, augment: AugmentConfig) -> Result<Self> {
        config.validate()?;
        augment.validate()?;
        let (network, store) = Network::new(net)?;
        let optimizer = AdamW::new(config.optimizer, &store);
        Ok(Trainer {
            network,
            store,
            config,
            augment,
            optimizer,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.optimizer.step_count()
    }

    /// Augmented samples of `scans` for one epoch; each depends only on the
    /// seed, the epoch and the scan id.
    pub fn samples(&self, epoch: usize, scans: &[&RadarScan]) -> Result<Vec<AugmentedSample>> {
        let seed = self.config.seed;
        let aug = self.augment;
        scans
            .par_iter()
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["augment", &epoch.to_string(), &s.scan_id]));
                augment_scan(s, &aug, &mut rng)
            })
            .collect()
    }

    pub fn batch_loss(&self, samples: &[AugmentedSample]) -> Result<Option<(LossBreakdown, Ctx<'_>, Var)>> {
        batch_loss(&self.network, &self.store, samples)
    }

    /// One optimizer step on a batch.
    pub fn step(&mut self, samples: &[AugmentedSample]) -> Result<Option<LossBreakdown>> {
        let Some((loss, ctx, root)) = self.batch_loss(samples)? else {
            return Ok(None);
        };
        if !loss.total.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {}", loss.total)));
        }
        let Ctx { graph, bn_updates, .. } = ctx;
        self.store.zero_grads();
        graph.backward(root, &mut self.store)?;
        self.optimizer.step(&mut self.store)?;
        apply_bn_updates(&mut self.store, &bn_updates);
        Ok(Some(loss))
    }

    /// Shuffled pass over `scans` at the scheduled learning rate.
    pub fn run_epoch(&mut self, epoch: usize, scans: &[RadarScan]) -> Result<LossBreakdown> {
        self.optimizer.set_lr(self.config.lr_at(epoch));
        let mut order: Vec<&RadarScan> = scans.iter().collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &["shuffle", &epoch.to_string()])));
        let mut sum = (0.0, 0.0, 0.0);
        let mut steps = 0usize;
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let samples = self.samples(epoch, batch)?;
            let loss = self.step(&samples).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("diverged at epoch {epoch}, batch {}: {m}", b + 1)),
                other => other,
            })?;
            if let Some(l) = loss {
                sum.0 += l.ce;
                sum.1 += l.lovasz;
                sum.2 += l.consistency;
                steps += 1;
            }
        }
        let n = steps.max(1) as f64;
        Ok(LossBreakdown::new(sum.0 / n, sum.1 / n, sum.2 / n))
    }

    /// Refined panoptic statistics of the current network on a split.
    pub fn validate(&self, scans: &[RadarScan], preds: &[MovingPrediction]) -> Result<PanopticStats> {
        let source = ClassSource::Network(&self.network, &self.store);
        let combine = Combine::Refine(self.config.refine_mode);
        Ok(evaluate(scans, preds, |s, p| panoptic(source, combine, s, p))?.0)
    }
}

/// Checkpoint file name of a 1-based epoch.
pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch{epoch:02}")
}

/// Full training run. With `out_dir`, writes `net.cfg`, `history.csv`
/// (rewritten after every epoch) and periodic checkpoints.
pub fn train(
    net: &NetworkConfig,
    config: &TrainConfig,
    augment: &AugmentConfig,
    data: TrainData<'_>,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Trainer, History)> {
    if data.train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let train_ids: std::collections::BTreeSet<&str> = data.train.iter().map(|s| s.scan_id.as_str()).collect();
    if let Some(s) = data.val.iter().find(|s| train_ids.contains(s.scan_id.as_str())) {
        return Err(Error::InvalidArgument(format!("scan `{}` is in both training and validation splits", s.scan_id)));
    }
    let mut trainer = Trainer::new(net, config.clone(), *augment)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        net.save(&dir.join("net.cfg"))?;
    }
    let mut history = History::default();
    for epoch in 1..=config.epochs {
        let loss = trainer.run_epoch(epoch, data.train)?;
        let (val_pq, val_miou) = if data.val.is_empty() {
            (None, None)
        } else {
            let stats = trainer.validate(data.val, data.val_preds)?;
            (Some(stats.panoptic_quality().1), Some(stats.mean_iou().1))
        };
        let record = EpochRecord {
            epoch,
            loss,
            val_pq,
            val_miou,
            lr: config.lr_at(epoch),
        };
        on_epoch(&record);
        history.records.push(record);
        if let Some(dir) = out_dir {
            if epoch % config.ckpt_every.max(1) == 0 || epoch == config.epochs {
                trainer.store.save_checkpoint(&dir.join(checkpoint_name(epoch)))?;
            }
            let path = dir.join("history.csv");
            fs::write(&path, history.to_csv()).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok((trainer, history))
}
