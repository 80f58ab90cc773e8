//! Finite-difference check of the whole training objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{augment_scan, AugmentConfig, AugmentedSample};
use super::losses::{consistency_soft, cross_entropy, lovasz_softmax, softmax_rows, LossValue};
use super::trainer::batch_loss;
use crate::error::{Error, Result};
use crate::layers::{Ctx, Mode};
use crate::network::{jitter_normalization, NetInput, Network, NetworkConfig};
use crate::numerics::{gradient_check, relative_error, GradCheckReport, ParamStore, Tensor, TensorCheck};
use crate::seeds::derive_seed;
use crate::synth::SceneConfig;

const JITTER: f64 = 0.1;
const SHARPEN: f64 = 2.0;
const CANDIDATES: usize = 16;

/// Outcome of [`objective_gradient_check`].
#[derive(Clone, Debug)]
pub struct ObjectiveCheck {
    /// One entry per parameter tensor, then `loss.ce`, `loss.lovasz` and
    /// `loss.consistency` checked against generic logits.
    pub report: GradCheckReport,
    pub points: usize,
    /// Smallest distance between adjacent sorted Lovász errors.
    pub breakpoint_gap: f64,
    /// Smallest absolute ReLU input.
    pub relu_margin: f64,
    /// Index of the jitter draw the check ran at.
    pub candidate: usize,
}

/// Smallest gap between neighbouring sorted errors over the classes present
/// in `targets`. The Lovász loss is linear between these breakpoints, so a
/// central difference is exact only when the step stays inside one piece.
pub fn lovasz_breakpoint_gap(logits: &Tensor, targets: &[usize]) -> f64 {
    let c = logits.cols();
    let p = softmax_rows(logits);
    let mut present: Vec<usize> = targets.to_vec();
    present.sort_unstable();
    present.dedup();
    let mut gap = f64::INFINITY;
    for k in present {
        let mut e: Vec<f64> = (0..targets.len())
            .map(|i| if targets[i] == k { 1.0 - p[i * c + k] } else { p[i * c + k] })
            .collect();
        e.sort_by(f64::total_cmp);
        for w in e.windows(2) {
            gap = gap.min(w[1] - w[0]);
        }
    }
    gap
}

/// A sample of exactly `points` rows: injected static points first kept,
/// the rest filled with ground-truth moving points.
fn sample(points: usize, seed: u64) -> Result<AugmentedSample> {
    let scene = SceneConfig::default();
    let aug = AugmentConfig {
        p_instance: 1.0,
        p_scan: 1.0,
        ..AugmentConfig::default()
    };
    for i in 0..1000 {
        let id = format!("gradcheck{i}");
        let scan = crate::synth::generate_scene(&scene, derive_seed(seed, &["gradcheck", &id]), &id)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["augment", &id]));
        let s = augment_scan(&scan, &aug, &mut rng)?;
        let added = (s.len() - s.base_len).min(points / 4);
        let distinct = s.instance_ids[..s.base_len].iter().collect::<std::collections::BTreeSet<_>>().len();
        if s.base_len + added < points || distinct < 2 {
            continue;
        }
        let rows: Vec<usize> = (0..points - added).chain(s.base_len..s.base_len + added).collect();
        return Ok(AugmentedSample {
            coords: rows.iter().map(|&r| s.coords[r]).collect(),
            features: rows.iter().map(|&r| s.features[r]).collect(),
            targets: rows.iter().map(|&r| s.targets[r]).collect(),
            instance_ids: rows.iter().map(|&r| s.instance_ids[r]).collect(),
            base_len: points - added,
            instance_points_added: added,
            clutter_points_added: 0,
        });
    }
    Err(Error::InvalidArgument(format!("no generated scene yields a {points}-point sample")))
}

/// Training-mode logits and the tape's ReLU margin.
fn train_logits(net: &Network, store: &ParamStore, s: &AugmentedSample) -> Result<(Tensor, f64)> {
    let input = NetInput::single(&net.config, &s.coords, &s.features)?;
    let mut ctx = Ctx::new(store, Mode::Train);
    let out = net.forward(&mut ctx, &input)?;
    Ok((ctx.graph.value(out).clone(), ctx.graph.relu_margin()))
}

fn logit_check(name: &str, logits: &Tensor, h: f64, f: impl Fn(&Tensor) -> Result<LossValue>) -> Result<TensorCheck> {
    let g = f(logits)?.grad;
    let mut worst = 0.0f64;
    let mut max_a = 0.0f64;
    for k in 0..logits.len() {
        let mut a = logits.clone();
        a.data_mut()[k] += h;
        let mut b = logits.clone();
        b.data_mut()[k] -= h;
        let num = (f(&a)?.value - f(&b)?.value) / (2.0 * h);
        worst = worst.max(relative_error(g[k], num));
        max_a = max_a.max(g[k].abs());
    }
    Ok(TensorCheck {
        name: name.to_string(),
        entries: logits.len(),
        max_relative_error: worst,
        max_abs_analytic: max_a,
    })
}

/// Logits in `[-2, 2]` for the per-loss checks, the candidate draw with
/// the widest Lovász breakpoint gap.
fn probe_logits(n: usize, c: usize, seed: u64, targets: &[usize]) -> Result<Tensor> {
    use rand::Rng;
    let mut best: Option<(f64, Tensor)> = None;
    for k in 0..CANDIDATES {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["logits", &k.to_string()]));
        let t = Tensor::matrix(n, c, (0..n * c).map(|_| rng.random_range(-2.0..=2.0)).collect())?;
        let gap = lovasz_breakpoint_gap(&t, targets);
        if best.as_ref().is_none_or(|b| gap > b.0) {
            best = Some((gap, t));
        }
    }
    Ok(best.expect("at least one candidate").1)
}

/// Checks the gradient of `ce + lovasz + soft consistency` on a
/// training-mode forward pass of `points` generated points.
///
/// The objective is only piecewise smooth: ReLUs kink at zero and the
/// Lovász loss kinks wherever two sorted errors swap. Central differences
/// are meaningless across a kink, so the check runs at the jitter draw of
/// normalization parameters that lies farthest from both. The classifier
/// is sharpened so class probabilities, and with them the sorted errors,
/// spread out.
pub fn objective_gradient_check(config: &NetworkConfig, points: usize, seed: u64, h: f64) -> Result<ObjectiveCheck> {
    let s = sample(points, seed)?;
    let (net, base) = Network::new(config)?;
    let mut best: Option<(f64, usize, ParamStore, f64, f64)> = None;
    for k in 0..CANDIDATES {
        let mut store = base.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["jitter", &k.to_string()]));
        jitter_normalization(&mut store, &mut rng, JITTER);
        for p in store.params_mut() {
            if p.name == "head.c.1.weight" {
                p.value.data_mut().iter_mut().for_each(|v| *v *= SHARPEN);
            }
        }
        let (logits, margin) = train_logits(&net, &store, &s)?;
        let gap = lovasz_breakpoint_gap(&logits, &s.targets);
        let score = margin.min(gap);
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, k, store, gap, margin));
        }
    }
    let (_, candidate, mut store, breakpoint_gap, relu_margin) = best.expect("at least one candidate");
    let samples = [s];
    let mut report = gradient_check(&mut store, h, |st, g| {
        let (_, ctx, root) = batch_loss(&net, st, &samples)?
            .ok_or_else(|| Error::InvalidArgument("empty gradient-check sample".into()))?;
        *g = ctx.graph;
        Ok(root)
    })?;
    let s = &samples[0];
    let logits = probe_logits(s.len(), config.classes, seed, &s.targets)?;
    report.tensors.push(logit_check("loss.ce", &logits, h, |l| cross_entropy(l, &s.targets))?);
    report.tensors.push(logit_check("loss.lovasz", &logits, h, |l| lovasz_softmax(l, &s.targets))?);
    report.tensors.push(logit_check("loss.consistency", &logits, h, |l| consistency_soft(l, &s.instance_ids))?);
    Ok(ObjectiveCheck {
        report,
        points,
        breakpoint_gap,
        relu_margin,
        candidate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_objective_passes() {
        let check = objective_gradient_check(&NetworkConfig::toy(), 20, 1, 1e-5).unwrap();
        for t in &check.report.tensors {
            assert!(t.max_relative_error < 1e-4, "{} {}", t.name, t.max_relative_error);
        }
        let names: Vec<&str> = check.report.tensors.iter().map(|t| t.name.as_str()).collect();
        assert!(names.contains(&"block2.attn.w_p1") && names.contains(&"loss.lovasz"));
        assert_eq!(check.points, 20);
    }

    #[test]
    fn gap_of_tied_errors_is_zero() {
        let x = Tensor::zeros(&[3, 2]);
        assert_eq!(lovasz_breakpoint_gap(&x, &[0, 0, 1]), 0.0);
    }
}
