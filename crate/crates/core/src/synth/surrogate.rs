use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SurrogateConfig;
use crate::scan::{MovingPrediction, RadarScan};

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Counts of injected errors, for calibration and tests.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InjectionLog {
    pub missed: usize,
    pub boundary_eligible: usize,
    pub boundary_flagged: usize,
    pub clutter_instances: usize,
    pub merges: usize,
}

/// Replays ground-truth moving labels with seeded errors.
pub fn surrogate_backbone(scan: &RadarScan, cfg: &SurrogateConfig, seed: u64) -> MovingPrediction {
    surrogate_backbone_logged(scan, cfg, seed).0
}

/// Applies, in order: missed moving points, boundary false positives that
/// join the nearest instance, false clutter instances, and merges of
/// instance pairs closer than `merge_gap` (the smaller id survives).
pub fn surrogate_backbone_logged(scan: &RadarScan, cfg: &SurrogateConfig, seed: u64) -> (MovingPrediction, InjectionLog) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = InjectionLog::default();
    let n = scan.len();
    let xy: Vec<[f64; 2]> = scan.points.iter().map(|p| p.xy()).collect();
    let gt_moving = scan.gt_moving();
    let mut moving = gt_moving.clone();
    let mut ids: Vec<u32> = scan.gt.iter().map(|l| l.instance_id).collect();

    for i in 0..n {
        if moving[i] && rng.random_bool(cfg.eps_miss) {
            moving[i] = false;
            ids[i] = 0;
            log.missed += 1;
        }
    }

    let gt_things: Vec<usize> = (0..n).filter(|&i| gt_moving[i]).collect();
    let r2 = cfg.boundary_radius * cfg.boundary_radius;
    for i in 0..n {
        if gt_moving[i] {
            continue;
        }
        let nearest = gt_things
            .iter()
            .map(|&j| (dist2(xy[i], xy[j]), j))
            .filter(|&(d, _)| d <= r2)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, j)) = nearest {
            log.boundary_eligible += 1;
            if rng.random_bool(cfg.eps_boundary) {
                moving[i] = true;
                ids[i] = scan.gt[j].instance_id;
                log.boundary_flagged += 1;
            }
        }
    }

    if rng.random_bool(cfg.eps_clutter) {
        let candidates: Vec<usize> = (0..n).filter(|&i| !gt_moving[i] && !moving[i]).collect();
        if !candidates.is_empty() {
            let seed_pt = candidates[rng.random_range(0..candidates.len())];
            let k = rng.random_range(1..=5usize).min(candidates.len());
            let mut by_dist: Vec<(f64, usize)> = candidates.iter().map(|&j| (dist2(xy[seed_pt], xy[j]), j)).collect();
            by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let fresh = ids.iter().copied().max().unwrap_or(0).max(scan.gt.iter().map(|l| l.instance_id).max().unwrap_or(0)) + 1;
            for &(_, j) in by_dist.iter().take(k) {
                moving[j] = true;
                ids[j] = fresh;
            }
            log.clutter_instances += 1;
        }
    }

    let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        if ids[i] != 0 {
            members.entry(ids[i]).or_default().push(i);
        }
    }
    let inst: Vec<u32> = members.keys().copied().collect();
    let mut parent: Vec<usize> = (0..inst.len()).collect();
    let gap2 = cfg.merge_gap * cfg.merge_gap;
    for a in 0..inst.len() {
        for b in a + 1..inst.len() {
            let close = members[&inst[a]]
                .iter()
                .any(|&i| members[&inst[b]].iter().any(|&j| dist2(xy[i], xy[j]) < gap2));
            if close && rng.random_bool(cfg.eps_merge) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                    log.merges += 1;
                }
            }
        }
    }
    let remap: BTreeMap<u32, u32> = (0..inst.len()).map(|k| (inst[k], inst[find(&mut parent, k)])).collect();
    for id in ids.iter_mut().filter(|i| **i != 0) {
        *id = remap[id];
    }

    let pred = MovingPrediction {
        scan_id: scan.scan_id.clone(),
        moving,
        instance_id: ids,
    };
    (pred, log)
}
