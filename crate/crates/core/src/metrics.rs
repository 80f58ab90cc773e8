//! Panoptic quality and IoU with per-class accumulators that merge by
//! summation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scan::{PanopticPrediction, SemanticClass, NUM_CLASSES};

/// Matching threshold: a pair matches when IoU exceeds this.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassStats {
    pub tp_iou_sum: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PanopticStats {
    pub classes: [ClassStats; NUM_CLASSES],
    /// Rows ground truth, columns prediction.
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Matching {
    /// `(gt index, pred index, IoU)`.
    pub matches: Vec<(usize, usize, f64)>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_pred: Vec<usize>,
}

fn check_disjoint(segments: &[Vec<usize>], side: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for s in segments {
        for &p in s {
            if !seen.insert(p) {
                return Err(Error::InvalidArgument(format!("{side} segments overlap at point {p}")));
            }
        }
    }
    Ok(())
}

/// Matches segments of one class by point-set IoU > 0.5. With disjoint
/// segments on each side a segment has at most one partner above the
/// threshold, so no assignment search is needed.
pub fn match_instances(gt: &[Vec<usize>], pred: &[Vec<usize>]) -> Result<Matching> {
    check_disjoint(gt, "ground-truth")?;
    check_disjoint(pred, "predicted")?;
    let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
    for (k, s) in pred.iter().enumerate() {
        for &p in s {
            owner.insert(p, k);
        }
    }
    let mut m = Matching::default();
    let mut pred_used = vec![false; pred.len()];
    for (g, s) in gt.iter().enumerate() {
        let mut overlap: BTreeMap<usize, usize> = BTreeMap::new();
        for p in s {
            if let Some(&k) = owner.get(p) {
                *overlap.entry(k).or_default() += 1;
            }
        }
        let hit = overlap.into_iter().find_map(|(k, inter)| {
            let union = s.len() + pred[k].len() - inter;
            let iou = inter as f64 / union as f64;
            (iou > MATCH_IOU).then_some((k, iou))
        });
        match hit {
            Some((k, iou)) => {
                pred_used[k] = true;
                m.matches.push((g, k, iou));
            }
            None => m.unmatched_gt.push(g),
        }
    }
    m.unmatched_pred = (0..pred.len()).filter(|&k| !pred_used[k]).collect();
    Ok(m)
}

/// Segments of one class: thing classes by instance id, the stuff class as
/// one segment of all its points.
fn segments(labels: &PanopticPrediction, class: SemanticClass) -> Vec<Vec<usize>> {
    if class.is_thing() {
        let mut by_id: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, (&c, &id)) in labels.semantic.iter().zip(&labels.instance_id).enumerate() {
            if c == class {
                by_id.entry(id).or_default().push(i);
            }
        }
        by_id.into_values().collect()
    } else {
        let all: Vec<usize> = (0..labels.len()).filter(|&i| labels.semantic[i] == class).collect();
        if all.is_empty() {
            Vec::new()
        } else {
            vec![all]
        }
    }
}

impl PanopticStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one scan.
    pub fn accumulate(&mut self, gt: &PanopticPrediction, pred: &PanopticPrediction) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::Shape(format!(
                "scan `{}`: {} ground-truth points vs {} predicted",
                gt.scan_id,
                gt.len(),
                pred.len()
            )));
        }
        gt.validate()?;
        pred.validate()?;
        for class in SemanticClass::ALL {
            let m = match_instances(&segments(gt, class), &segments(pred, class))?;
            let s = &mut self.classes[class.code()];
            s.tp += m.matches.len() as u64;
            s.tp_iou_sum += m.matches.iter().map(|x| x.2).sum::<f64>();
            s.fn_ += m.unmatched_gt.len() as u64;
            s.fp += m.unmatched_pred.len() as u64;
        }
        for (g, p) in gt.semantic.iter().zip(&pred.semantic) {
            self.confusion[g.code()][p.code()] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &PanopticStats) {
        for (a, b) in self.classes.iter_mut().zip(&other.classes) {
            a.tp_iou_sum += b.tp_iou_sum;
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
        }
        for (ra, rb) in self.confusion.iter_mut().zip(&other.confusion) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
    }

    pub fn total_points(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Whether the class appears in ground truth or predictions anywhere.
    pub fn occurs(&self, class: SemanticClass) -> bool {
        let c = class.code();
        let s = &self.classes[c];
        s.tp + s.fp + s.fn_ > 0 || (0..NUM_CLASSES).any(|k| self.confusion[c][k] + self.confusion[k][c] > 0)
    }

    /// Per-class PQ (`None` for classes that never occur).
    pub fn pq_per_class(&self) -> [Option<f64>; NUM_CLASSES] {
        SemanticClass::ALL.map(|class| {
            let s = &self.classes[class.code()];
            if !self.occurs(class) {
                return None;
            }
            let denom = s.tp as f64 + 0.5 * s.fp as f64 + 0.5 * s.fn_ as f64;
            Some(if denom > 0.0 { s.tp_iou_sum / denom } else { 0.0 })
        })
    }

    /// Per-class IoU from the confusion matrix.
    pub fn iou_per_class(&self) -> [Option<f64>; NUM_CLASSES] {
        SemanticClass::ALL.map(|class| {
            let c = class.code();
            if !self.occurs(class) {
                return None;
            }
            let row: u64 = self.confusion[c].iter().sum();
            let col: u64 = (0..NUM_CLASSES).map(|k| self.confusion[k][c]).sum();
            let inter = self.confusion[c][c];
            let union = row + col - inter;
            Some(if union > 0 { inter as f64 / union as f64 } else { 0.0 })
        })
    }

    /// `(per-class PQ, mean PQ over occurring classes)`.
    pub fn panoptic_quality(&self) -> ([Option<f64>; NUM_CLASSES], f64) {
        let per = self.pq_per_class();
        (per, mean(&per, true))
    }

    /// Mean PQ over occurring thing classes only.
    pub fn mean_pq_things(&self) -> f64 {
        mean(&self.pq_per_class(), false)
    }

    /// `(per-class IoU, mIoU over occurring classes)`.
    pub fn mean_iou(&self) -> ([Option<f64>; NUM_CLASSES], f64) {
        let per = self.iou_per_class();
        (per, mean(&per, true))
    }

    /// Text table with per-class PQ and IoU plus means with and without the
    /// static class.
    pub fn report(&self) -> String {
        let (pq, mpq) = self.panoptic_quality();
        let (iou, miou) = self.mean_iou();
        let mut s = String::new();
        let _ = write!(s, "{:<8}{:>8}{:>12}", "", "mean", "mean(thing)");
        for c in SemanticClass::ALL {
            let _ = write!(s, "{:>11}", c.name());
        }
        s.push('\n');
        let row = |s: &mut String, label: &str, m: f64, mt: f64, per: &[Option<f64>; NUM_CLASSES]| {
            let _ = write!(s, "{label:<8}{:>8}{:>12}", pct(Some(m)), pct(Some(mt)));
            for v in per {
                let _ = write!(s, "{:>11}", pct(*v));
            }
            s.push('\n');
        };
        row(&mut s, "PQ", mpq, self.mean_pq_things(), &pq);
        row(&mut s, "IoU", miou, mean(&iou, false), &iou);
        s
    }

    /// One row per class plus mean rows; values with 6 decimals.
    pub fn to_csv(&self) -> String {
        let (pq, mpq) = self.panoptic_quality();
        let (iou, miou) = self.mean_iou();
        let mut s = String::from("class,pq,iou,tp,fp,fn\n");
        for c in SemanticClass::ALL {
            let st = &self.classes[c.code()];
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                c.name(),
                num(pq[c.code()]),
                num(iou[c.code()]),
                st.tp,
                st.fp,
                st.fn_
            );
        }
        let _ = writeln!(s, "mean,{},{},,,", num(Some(mpq)), num(Some(miou)));
        let _ = writeln!(s, "mean_things,{},{},,,", num(Some(self.mean_pq_things())), num(Some(mean(&iou, false))));
        s
    }
}

fn mean(per: &[Option<f64>; NUM_CLASSES], with_static: bool) -> f64 {
    let vals: Vec<f64> = per
        .iter()
        .enumerate()
        .filter(|(k, _)| with_static || *k != SemanticClass::Static.code())
        .filter_map(|(_, v)| *v)
        .collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.1}", 100.0 * v))
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use SemanticClass::*;

    fn labels(semantic: Vec<SemanticClass>, ids: Vec<u32>) -> PanopticPrediction {
        PanopticPrediction {
            scan_id: "m".into(),
            moving: semantic.iter().map(|c| c.is_thing()).collect(),
            semantic,
            instance_id: ids,
        }
    }

    #[test]
    fn identical_segments_match_perfectly() {
        let segs = vec![vec![0, 1], vec![2, 3, 4]];
        let m = match_instances(&segs, &segs).unwrap();
        assert_eq!(m.matches, vec![(0, 0, 1.0), (1, 1, 1.0)]);
    }

    #[test]
    fn half_overlap_does_not_match() {
        let m = match_instances(&[(0..10).collect()], &[(0..5).collect()]).unwrap();
        assert!(m.matches.is_empty());
        assert_eq!((m.unmatched_gt.len(), m.unmatched_pred.len()), (1, 1));
    }

    #[test]
    fn overlapping_segments_rejected() {
        assert!(match_instances(&[vec![0, 1], vec![1]], &[]).is_err());
    }

    #[test]
    fn all_static_prediction_misses_the_car() {
        let gt = labels(vec![Car, Car, Static, Static, Static], vec![1, 1, 0, 0, 0]);
        let pred = labels(vec![Static; 5], vec![0; 5]);
        let mut st = PanopticStats::new();
        st.accumulate(&gt, &pred).unwrap();
        assert_eq!(st.classes[Car.code()].fn_, 1);
        let (iou, _) = st.mean_iou();
        assert!((iou[Static.code()].unwrap() - 3.0 / 5.0).abs() < 1e-15);
        // The static segments overlap with IoU 0.6 and match.
        assert_eq!(st.classes[Static.code()].tp, 1);
    }

    #[test]
    fn pq_formula() {
        let mut st = PanopticStats::new();
        st.classes[Car.code()] = ClassStats {
            tp_iou_sum: 0.8,
            tp: 1,
            fp: 1,
            fn_: 0,
        };
        let (pq, _) = st.panoptic_quality();
        assert!((pq[Car.code()].unwrap() - 0.8 / 1.5).abs() < 1e-12);
        assert_eq!(pq[Truck.code()], None);
    }

    #[test]
    fn perfect_prediction() {
        let gt = labels(vec![Car, Car, Static, Bike, Pedestrian, PedestrianGroup, Truck], vec![1, 1, 0, 2, 3, 4, 5]);
        let mut st = PanopticStats::new();
        st.accumulate(&gt, &gt).unwrap();
        let (_, mpq) = st.panoptic_quality();
        let (_, miou) = st.mean_iou();
        assert_eq!((mpq, miou), (1.0, 1.0));
        assert!(st.report().contains("100.0"));
        assert!(st.to_csv().starts_with("class,pq,iou"));
    }

    fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> PanopticPrediction {
        let mut semantic = Vec::new();
        let mut ids = Vec::new();
        for _ in 0..n {
            let c = SemanticClass::ALL[rng.random_range(0..NUM_CLASSES)];
            semantic.push(c);
            // Ids encode the class so instances stay pure.
            ids.push(if c.is_thing() { (c.code() as u32) * 10 + rng.random_range(1..3) } else { 0 });
        }
        labels(semantic, ids)
    }

    #[test]
    fn accumulation_is_additive_and_id_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut total = PanopticStats::new();
        let mut parts = Vec::new();
        for _ in 0..20 {
            let gt = random_labels(&mut rng, 25);
            let pred = random_labels(&mut rng, 25);
            let mut one = PanopticStats::new();
            one.accumulate(&gt, &pred).unwrap();
            parts.push(one);
            total.accumulate(&gt, &pred).unwrap();

            let mut renamed = pred.clone();
            for id in renamed.instance_id.iter_mut().filter(|i| **i != 0) {
                *id = 1000 - *id;
            }
            let mut again = PanopticStats::new();
            again.accumulate(&gt, &renamed).unwrap();
            assert_eq!(again, parts[parts.len() - 1]);
        }
        let mut merged = PanopticStats::new();
        for p in parts.iter().rev() {
            merged.merge(p);
        }
        assert_eq!(merged.confusion, total.confusion);
        for (a, b) in merged.classes.iter().zip(&total.classes) {
            assert_eq!((a.tp, a.fp, a.fn_), (b.tp, b.fp, b.fn_));
            assert!((a.tp_iou_sum - b.tp_iou_sum).abs() < 1e-12);
        }
        assert_eq!(total.total_points(), 500);
    }
}
