use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scan::{RadarScan, SemanticClass};

/// Where per-scan clutter groups come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ClutterSource {
    /// Positions drawn uniformly in the scan's bounding box.
    #[default]
    Synthetic,
    /// A real cluster of static points from the same scan.
    Sampled,
}

impl FromStr for ClutterSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(ClutterSource::Synthetic),
            "sampled" => Ok(ClutterSource::Sampled),
            _ => Err(Error::Config(format!("clutter-source must be synthetic or sampled, got `{s}`"))),
        }
    }
}

impl fmt::Display for ClutterSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClutterSource::Synthetic => "synthetic",
            ClutterSource::Sampled => "sampled",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub p_instance: f64,
    pub p_scan: f64,
    /// Scale of the radial offset of a point injected next to an instance, m.
    pub boundary_sigma: f64,
    pub clutter_min: usize,
    pub clutter_max: usize,
    pub clutter_source: ClutterSource,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_instance: 0.4,
            p_scan: 0.4,
            boundary_sigma: 1.0,
            clutter_min: 1,
            clutter_max: 5,
            clutter_source: ClutterSource::Synthetic,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            p_instance: 0.0,
            p_scan: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_instance", self.p_instance), ("p_scan", self.p_scan)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.boundary_sigma >= 0.0 && self.boundary_sigma.is_finite()) {
            return Err(Error::Config(format!("boundary_sigma must be finite and >= 0, got {}", self.boundary_sigma)));
        }
        if self.clutter_min < 1 || self.clutter_max > 5 || self.clutter_min > self.clutter_max {
            return Err(Error::Config(format!(
                "clutter sizes must satisfy 1 <= min <= max <= 5, got {}..{}",
                self.clutter_min, self.clutter_max
            )));
        }
        Ok(())
    }
}

/// One training sample for the moving-point head. The ground-truth moving
/// points come first in scan order; injected points follow.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentedSample {
    pub coords: Vec<[f64; 2]>,
    pub features: Vec<[f64; 5]>,
    pub targets: Vec<usize>,
    /// Ground-truth instance ids; 0 for injected points.
    pub instance_ids: Vec<u32>,
    /// Number of leading rows that are real moving points.
    pub base_len: usize,
    pub instance_points_added: usize,
    pub clutter_points_added: usize,
}

impl AugmentedSample {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn push(&mut self, xy: [f64; 2], rcs: f64, doppler: f64, target: SemanticClass, id: u32) {
        self.coords.push(xy);
        self.features.push([xy[0], xy[1], 0.0, rcs, doppler]);
        self.targets.push(target.code());
        self.instance_ids.push(id);
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Builds the augmented moving sample of one scan.
///
/// Each ground-truth instance, with probability `p_instance`, gains one
/// static-target point at a random member plus an offset of half-normal
/// length at a uniform angle. The scan, with probability `p_scan`, gains a
/// group of clutter points. Injected points take RCS and doppler from the
/// nearest real static point; a scan without static points falls back to
/// zero doppler and the median moving RCS.
pub fn augment_scan(scan: &RadarScan, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<AugmentedSample> {
    cfg.validate()?;
    let mut out = AugmentedSample::default();
    let mut statics = Vec::new();
    for (i, (p, l)) in scan.points.iter().zip(&scan.gt).enumerate() {
        if l.semantic.is_thing() {
            out.push(p.xy(), p.rcs, p.doppler, l.semantic, l.instance_id);
        } else {
            statics.push(i);
        }
    }
    out.base_len = out.len();
    let fallback_rcs = median(scan.points.iter().zip(&scan.gt).filter(|(_, l)| l.semantic.is_thing()).map(|(p, _)| p.rcs).collect());
    let kinematics = |xy: [f64; 2]| -> (f64, f64) {
        statics
            .iter()
            .map(|&j| (dist2(scan.points[j].xy(), xy), j))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, j)| (scan.points[j].rcs, scan.points[j].doppler))
            .unwrap_or((fallback_rcs, 0.0))
    };

    let mut instances: Vec<u32> = out.instance_ids.clone();
    instances.sort_unstable();
    instances.dedup();
    let radial = Normal::new(0.0, cfg.boundary_sigma.max(f64::MIN_POSITIVE)).expect("finite deviation");
    for id in instances {
        if !rng.random_bool(cfg.p_instance) {
            continue;
        }
        let members: Vec<usize> = (0..out.base_len).filter(|&k| out.instance_ids[k] == id).collect();
        let anchor = out.coords[*members.choose(rng).expect("instance has points")];
        let r = if cfg.boundary_sigma > 0.0 { radial.sample(rng).abs() } else { 0.0 };
        let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let xy = [anchor[0] + r * a.cos(), anchor[1] + r * a.sin()];
        let (rcs, doppler) = kinematics(xy);
        out.push(xy, rcs, doppler, SemanticClass::Static, 0);
        out.instance_points_added += 1;
    }

    if rng.random_bool(cfg.p_scan) {
        let k = rng.random_range(cfg.clutter_min..=cfg.clutter_max);
        match cfg.clutter_source {
            ClutterSource::Sampled if !statics.is_empty() => {
                let seed = scan.points[*statics.choose(rng).expect("nonempty")].xy();
                let mut near: Vec<(f64, usize)> = statics.iter().map(|&j| (dist2(scan.points[j].xy(), seed), j)).collect();
                near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, j) in near.iter().take(k) {
                    let p = &scan.points[j];
                    out.push(p.xy(), p.rcs, p.doppler, SemanticClass::Static, 0);
                    out.clutter_points_added += 1;
                }
            }
            _ => {
                let (lo, hi) = bounding_box(scan);
                let center = [rng.random_range(lo[0]..=hi[0]), rng.random_range(lo[1]..=hi[1])];
                for _ in 0..k {
                    let r = if cfg.boundary_sigma > 0.0 { radial.sample(rng).abs() } else { 0.0 };
                    let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                    let xy = [center[0] + r * a.cos(), center[1] + r * a.sin()];
                    let (rcs, doppler) = kinematics(xy);
                    out.push(xy, rcs, doppler, SemanticClass::Static, 0);
                    out.clutter_points_added += 1;
                }
            }
        }
    }
    Ok(out)
}

fn bounding_box(scan: &RadarScan) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in &scan.points {
        for (d, v) in p.xy().into_iter().enumerate() {
            lo[d] = lo[d].min(v);
            hi[d] = hi[d].max(v);
        }
    }
    if scan.points.is_empty() {
        return ([0.0; 2], [0.0; 2]);
    }
    (lo, hi)
}
