use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::scan::SemanticClass;

/// Per-part loss values; `total` is their plain sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub lovasz: f64,
    pub consistency: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(ce: f64, lovasz: f64, consistency: f64) -> Self {
        LossBreakdown {
            ce,
            lovasz,
            consistency,
            total: ce + lovasz + consistency,
        }
    }
}

/// Value and gradient with respect to the logits.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check(logits: &Tensor, targets: Option<&[usize]>) -> Result<(usize, usize)> {
    let (n, c) = logits.dims2()?;
    if !logits.all_finite() {
        return Err(Error::Numerical("non-finite logits".into()));
    }
    if let Some(t) = targets {
        if t.len() != n {
            return Err(Error::Shape(format!("{} targets for {n} rows", t.len())));
        }
        if let Some(&bad) = t.iter().find(|&&k| k >= c) {
            return Err(Error::InvalidArgument(format!("target {bad} outside {c} classes")));
        }
    }
    Ok((n, c))
}

/// Row-wise softmax with max shifting.
pub fn softmax_rows(logits: &Tensor) -> Vec<f64> {
    let c = logits.cols();
    let mut p = logits.data().to_vec();
    for row in p.chunks_mut(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    p
}

/// Chains a gradient with respect to softmax probabilities back to logits.
fn through_softmax(p: &[f64], gp: &[f64], c: usize) -> Vec<f64> {
    let mut g = vec![0.0; p.len()];
    for ((gr, pr), gpr) in g.chunks_mut(c).zip(p.chunks(c)).zip(gp.chunks(c)) {
        let dot: f64 = pr.iter().zip(gpr).map(|(a, b)| a * b).sum();
        for k in 0..c {
            gr[k] = pr[k] * (gpr[k] - dot);
        }
    }
    g
}

/// Mean negative log-likelihood of the targets.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<LossValue> {
    let (n, c) = check(logits, Some(targets))?;
    let mut value = 0.0;
    let mut grad = vec![0.0; n * c];
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let log_z = m + z.ln();
        value += log_z - row[t];
        for k in 0..c {
            grad[i * c + k] = (row[k] - log_z).exp() / n as f64;
        }
        grad[i * c + t] -= 1.0 / n as f64;
    }
    Ok(LossValue {
        value: value / n as f64,
        grad,
    })
}

/// Discrete gradient of the Jaccard loss's Lovász extension for ground
/// truth flags sorted by decreasing error.
fn lovasz_weights(gt_sorted: &[bool]) -> Vec<f64> {
    let total: f64 = gt_sorted.iter().filter(|&&g| g).count() as f64;
    let mut w = Vec::with_capacity(gt_sorted.len());
    let mut cum_pos = 0.0;
    let mut cum_neg = 0.0;
    let mut prev = 0.0;
    for &g in gt_sorted {
        if g {
            cum_pos += 1.0;
        } else {
            cum_neg += 1.0;
        }
        let jaccard = 1.0 - (total - cum_pos) / (total + cum_neg);
        w.push(jaccard - prev);
        prev = jaccard;
    }
    w
}

/// Lovász-softmax averaged over the classes present in `targets`.
pub fn lovasz_softmax(logits: &Tensor, targets: &[usize]) -> Result<LossValue> {
    let (n, c) = check(logits, Some(targets))?;
    let p = softmax_rows(logits);
    let present: BTreeSet<usize> = targets.iter().copied().collect();
    let mut value = 0.0;
    let mut gp = vec![0.0; n * c];
    let scale = 1.0 / present.len() as f64;
    for &k in &present {
        let mut errs: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let fg = targets[i] == k;
                let e = if fg { 1.0 - p[i * c + k] } else { p[i * c + k] };
                (e, i)
            })
            .collect();
        errs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let gt: Vec<bool> = errs.iter().map(|&(_, i)| targets[i] == k).collect();
        let w = lovasz_weights(&gt);
        for (r, &(e, i)) in errs.iter().enumerate() {
            value += scale * e * w[r];
            let de = if gt[r] { -1.0 } else { 1.0 };
            gp[i * c + k] += scale * w[r] * de;
        }
    }
    Ok(LossValue {
        value,
        grad: through_softmax(&p, &gp, c),
    })
}

fn groups(instance_ids: &[u32]) -> BTreeMap<u32, Vec<usize>> {
    let mut g: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &id) in instance_ids.iter().enumerate() {
        if id != 0 {
            g.entry(id).or_default().push(i);
        }
    }
    g
}

/// Mean over instances of `1 − 1/|distinct classes|`; points with id 0 are
/// ignored and no instances gives 0.
pub fn consistency_hard(classes: &[SemanticClass], instance_ids: &[u32]) -> Result<f64> {
    if classes.len() != instance_ids.len() {
        return Err(Error::Shape(format!("{} classes for {} ids", classes.len(), instance_ids.len())));
    }
    let g = groups(instance_ids);
    if g.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = g
        .values()
        .map(|pts| {
            let distinct: BTreeSet<SemanticClass> = pts.iter().map(|&i| classes[i]).collect();
            1.0 - 1.0 / distinct.len() as f64
        })
        .sum();
    Ok(sum / g.len() as f64)
}

/// Differentiable stand-in: per instance, the Gini impurity `1 − Σ q_c²` of
/// the mean softmax distribution `q`, averaged over instances. It is 0 when
/// one class holds all mass and `1 − 1/C` at the uniform distribution, the
/// same endpoints as the hard count.
pub fn consistency_soft(logits: &Tensor, instance_ids: &[u32]) -> Result<LossValue> {
    let (n, c) = check(logits, None)?;
    if instance_ids.len() != n {
        return Err(Error::Shape(format!("{} ids for {n} rows", instance_ids.len())));
    }
    let p = softmax_rows(logits);
    let g = groups(instance_ids);
    let mut gp = vec![0.0; n * c];
    let mut value = 0.0;
    if !g.is_empty() {
        let nh = g.len() as f64;
        for pts in g.values() {
            let m = pts.len() as f64;
            let mut q = vec![0.0; c];
            for &i in pts {
                for k in 0..c {
                    q[k] += p[i * c + k] / m;
                }
            }
            value += (1.0 - q.iter().map(|v| v * v).sum::<f64>()) / nh;
            for &i in pts {
                for k in 0..c {
                    gp[i * c + k] = -2.0 * q[k] / (m * nh);
                }
            }
        }
    }
    Ok(LossValue {
        value,
        grad: through_softmax(&p, &gp, c),
    })
}

/// Records a precomputed loss on the tape as a scalar node over `logits`.
pub fn record(graph: &mut Graph, logits: Var, loss: LossValue) -> Result<Var> {
    let shape = graph.value(logits).shape().to_vec();
    let grad = Tensor::new(shape, loss.grad)?;
    graph.closed_form(logits, loss.value, grad)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::relative_error;
    use SemanticClass::*;

    fn random_logits(seed: u64, n: usize, c: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(n, c, (0..n * c).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    fn fd_check(f: impl Fn(&Tensor) -> LossValue, x: &Tensor, tol: f64) {
        let g = f(x).grad;
        let h = 1e-6;
        for k in 0..x.len() {
            let mut a = x.clone();
            a.data_mut()[k] += h;
            let mut b = x.clone();
            b.data_mut()[k] -= h;
            let num = (f(&a).value - f(&b).value) / (2.0 * h);
            assert!(relative_error(g[k], num) < tol, "entry {k}: {} vs {num}", g[k]);
        }
    }

    #[test]
    fn cross_entropy_values() {
        let uniform = Tensor::zeros(&[4, 6]);
        let v = cross_entropy(&uniform, &[0, 3, 5, 1]).unwrap().value;
        assert!((v - 6f64.ln()).abs() < 1e-12);
        let confident = Tensor::matrix(1, 6, vec![0.0, 800.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(cross_entropy(&confident, &[1]).unwrap().value, 0.0);
        assert!(cross_entropy(&uniform, &[6, 0, 0, 0]).is_err());
        let nan = Tensor::matrix(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(cross_entropy(&nan, &[0]), Err(Error::Numerical(_))));
    }

    #[test]
    fn cross_entropy_gradient() {
        let x = random_logits(1, 7, 6);
        let t = [0, 1, 2, 3, 4, 5, 0];
        fd_check(|l| cross_entropy(l, &t).unwrap(), &x, 1e-6);
    }

    #[test]
    fn lovasz_single_point() {
        // p_correct = 0.6 for class 0 of two.
        let x = Tensor::matrix(1, 2, vec![0.6f64.ln(), 0.4f64.ln()]).unwrap();
        let v = lovasz_softmax(&x, &[0]).unwrap().value;
        assert!((v - 0.4).abs() < 1e-12);
    }

    #[test]
    fn lovasz_perfect_is_zero() {
        let mut d = vec![0.0; 5 * 6];
        let t = [1, 1, 3, 0, 5];
        for (i, &k) in t.iter().enumerate() {
            d[i * 6 + k] = 1000.0;
        }
        let x = Tensor::matrix(5, 6, d).unwrap();
        assert!(lovasz_softmax(&x, &t).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn lovasz_gradient() {
        let x = random_logits(3, 9, 6);
        let t = [0, 1, 1, 2, 5, 5, 5, 0, 3];
        fd_check(|l| lovasz_softmax(l, &t).unwrap(), &x, 1e-5);
    }

    #[test]
    fn lovasz_jaccard_oracle() {
        // For hard 0/1 probabilities the loss is the mean Jaccard distance.
        let preds = [0usize, 1, 1, 2, 0, 2];
        let t = [0usize, 1, 2, 2, 1, 2];
        let mut d = vec![0.0; 6 * 3];
        for (i, &k) in preds.iter().enumerate() {
            d[i * 3 + k] = 1000.0;
        }
        let x = Tensor::matrix(6, 3, d).unwrap();
        let mut expected = 0.0;
        for k in 0..3 {
            let inter = (0..6).filter(|&i| preds[i] == k && t[i] == k).count() as f64;
            let union = (0..6).filter(|&i| preds[i] == k || t[i] == k).count() as f64;
            expected += (1.0 - inter / union) / 3.0;
        }
        assert!((lovasz_softmax(&x, &t).unwrap().value - expected).abs() < 1e-12);
    }

    #[test]
    fn consistency_values() {
        assert_eq!(consistency_hard(&[Car, Car, Car], &[1, 1, 1]).unwrap(), 0.0);
        let v = consistency_hard(&[Car, Truck, Bike, Static], &[1, 1, 2, 0]).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        let v = consistency_hard(&[Car, Truck, Bike], &[4, 4, 4]).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(consistency_hard(&[Car], &[0]).unwrap(), 0.0);
    }

    #[test]
    fn soft_consistency_endpoints_and_gradient() {
        let uniform = Tensor::zeros(&[3, 6]);
        let v = consistency_soft(&uniform, &[2, 2, 2]).unwrap().value;
        assert!((v - (1.0 - 1.0 / 6.0)).abs() < 1e-12);
        let pure = Tensor::matrix(2, 3, vec![900.0, 0.0, 0.0, 900.0, 0.0, 0.0]).unwrap();
        assert!(consistency_soft(&pure, &[1, 1]).unwrap().value.abs() < 1e-12);
        let x = random_logits(5, 8, 6);
        let ids = [1, 1, 2, 0, 2, 2, 3, 1];
        fd_check(|l| consistency_soft(l, &ids).unwrap(), &x, 1e-6);
    }

    proptest! {
        #[test]
        fn lovasz_non_increasing_in_target_probability(seed in 0u64..500, row in 0usize..6, step in 0.01f64..2.0) {
            let x = random_logits(seed, 6, 4);
            let t = [0usize, 1, 2, 3, 1, 0];
            let before = lovasz_softmax(&x, &t).unwrap().value;
            // Raising the target logit raises p_target and lowers the rest.
            let mut y = x.clone();
            y.data_mut()[row * 4 + t[row]] += step;
            let after = lovasz_softmax(&y, &t).unwrap().value;
            prop_assert!(after <= before + 1e-12);
        }

        #[test]
        fn uniform_cross_entropy_ignores_targets(t in prop::collection::vec(0usize..6, 1..20)) {
            let v = cross_entropy(&Tensor::zeros(&[t.len(), 6]), &t).unwrap().value;
            prop_assert!((v - 6f64.ln()).abs() < 1e-12);
        }

        #[test]
        fn hard_consistency_bounded(pairs in prop::collection::vec((0u32..4, 0usize..6), 1..30)) {
            let ids: Vec<u32> = pairs.iter().map(|p| p.0).collect();
            let cls: Vec<SemanticClass> = pairs.iter().map(|p| SemanticClass::ALL[p.1]).collect();
            let v = consistency_hard(&cls, &ids).unwrap();
            prop_assert!((0.0..=1.0 - 1.0 / 6.0).contains(&v));
        }
    }
}
