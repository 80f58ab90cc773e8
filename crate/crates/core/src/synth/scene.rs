use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{SceneConfig, Span};
use crate::error::{Error, Result};
use crate::scan::{PanopticLabel, RadarPoint, RadarScan, SemanticClass};

const PLACEMENT_ATTEMPTS: usize = 200;

/// Rectangular footprint of a placed instance.
#[derive(Clone, Debug)]
struct Footprint {
    center: [f64; 2],
    heading: f64,
    half_len: f64,
    half_wid: f64,
}

impl Footprint {
    fn radius(&self) -> f64 {
        self.half_len.hypot(self.half_wid)
    }

    fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.heading.sin_cos();
        [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)].map(|(a, b)| {
            let u = a * self.half_len;
            let v = b * self.half_wid;
            [self.center[0] + u * c - v * s, self.center[1] + u * s + v * c]
        })
    }

    fn contains(&self, p: [f64; 2], margin: f64) -> bool {
        let (s, c) = self.heading.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= self.half_len + margin && v.abs() <= self.half_wid + margin
    }
}

fn uniform_span(rng: &mut ChaCha8Rng, s: Span<f64>) -> f64 {
    if s.hi > s.lo {
        rng.random_range(s.lo..=s.hi)
    } else {
        s.lo
    }
}

fn uniform_count(rng: &mut ChaCha8Rng, s: Span<usize>) -> usize {
    rng.random_range(s.lo..=s.hi)
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        Normal::new(mean, sd).expect("finite positive deviation").sample(rng)
    } else {
        mean
    }
}

fn in_fov(cfg: &SceneConfig, p: [f64; 2]) -> bool {
    let r = p[0].hypot(p[1]);
    let half = cfg.fov_deg.to_radians() / 2.0;
    r >= cfg.min_range && r <= cfg.max_range && p[1].atan2(p[0]).abs() <= half
}

/// Area-uniform position inside the sensor sector.
fn sample_fov(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> [f64; 2] {
    let half = cfg.fov_deg.to_radians() / 2.0;
    let r2 = rng.random_range(cfg.min_range.powi(2)..=cfg.max_range.powi(2));
    let r = r2.sqrt();
    let a = rng.random_range(-half..=half);
    [r * a.cos(), r * a.sin()]
}

/// Projection of a ground velocity onto the line of sight from the sensor
/// at the origin; positive when receding.
pub fn radial_velocity(vel: [f64; 2], p: [f64; 2]) -> f64 {
    (vel[0] * p[0] + vel[1] * p[1]) / p[0].hypot(p[1])
}

fn pick_class(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> SemanticClass {
    let total: f64 = SemanticClass::THINGS.iter().map(|c| cfg.laws[c.code()].weight).sum();
    let mut u = rng.random_range(0.0..total);
    for c in SemanticClass::THINGS {
        let w = cfg.laws[c.code()].weight;
        if u < w {
            return c;
        }
        u -= w;
    }
    SemanticClass::Car
}

/// One scan drawn deterministically from `seed`. Instance ids start at 1
/// in placement order; points are shuffled.
pub fn generate_scene(cfg: &SceneConfig, seed: u64, scan_id: &str) -> Result<RadarScan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_inst = uniform_count(&mut rng, cfg.instances);
    let mut placed: Vec<Footprint> = Vec::with_capacity(n_inst);
    let mut points = Vec::new();
    let mut labels = Vec::new();

    for k in 0..n_inst {
        let class = pick_class(&mut rng, cfg);
        let law = &cfg.laws[class.code()];
        let (half_len, half_wid) = (law.length / 2.0, law.width / 2.0);
        let mut fp = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let center = if !placed.is_empty() && rng.random_bool(cfg.cluster_prob) {
                let other = &placed[rng.random_range(0..placed.len())];
                let dir = rng.random_range(-PI..PI);
                let d = other.radius() + half_len.hypot(half_wid) + uniform_span(&mut rng, cfg.cluster_gap);
                [other.center[0] + d * dir.cos(), other.center[1] + d * dir.sin()]
            } else {
                sample_fov(&mut rng, cfg)
            };
            let radial = center[1].atan2(center[0]);
            let flip = if rng.random_bool(0.5) { PI } else { 0.0 };
            let heading = radial + flip + rng.random_range(-PI / 3.0..=PI / 3.0);
            let cand = Footprint {
                center,
                heading,
                half_len,
                half_wid,
            };
            let fits = cand.corners().iter().all(|&c| in_fov(cfg, c));
            let clear = placed
                .iter()
                .all(|o| (o.center[0] - center[0]).hypot(o.center[1] - center[1]) > o.radius() + cand.radius() + 0.3);
            if fits && clear {
                fp = Some(cand);
                break;
            }
        }
        let fp = fp.ok_or_else(|| {
            Error::Config(format!("cannot place instance {} of {n_inst} inside the field of view", k + 1))
        })?;

        let speed = uniform_span(&mut rng, law.speed);
        let vel = [speed * fp.heading.cos(), speed * fp.heading.sin()];
        let id = k as u32 + 1;
        let (s, c) = fp.heading.sin_cos();
        for _ in 0..uniform_count(&mut rng, law.points) {
            let u = rng.random_range(-half_len..=half_len);
            let v = rng.random_range(-half_wid..=half_wid);
            let p = [fp.center[0] + u * c - v * s, fp.center[1] + u * s + v * c];
            let doppler = radial_velocity(vel, p) + normal(&mut rng, 0.0, cfg.doppler_noise);
            let rcs = normal(&mut rng, law.rcs_mean, law.rcs_spread);
            points.push(RadarPoint::new(p[0], p[1], rcs, doppler));
            labels.push(PanopticLabel::new(class, id));
        }
        placed.push(fp);
    }

    let moving_count = points.len();
    let mut static_pos = Vec::new();
    // Static returns hugging instance outlines.
    let instance_points: Vec<Vec<[f64; 2]>> = (1..=n_inst as u32)
        .map(|id| {
            labels
                .iter()
                .zip(&points)
                .filter(|(l, _)| l.instance_id == id)
                .map(|(_, p)| p.xy())
                .collect()
        })
        .collect();
    for pts in &instance_points {
        for _ in 0..uniform_count(&mut rng, cfg.boundary_static) {
            for _ in 0..PLACEMENT_ATTEMPTS {
                let anchor = pts[rng.random_range(0..pts.len())];
                let d = uniform_span(&mut rng, cfg.boundary_dist);
                let a = rng.random_range(-PI..PI);
                let p = [anchor[0] + d * a.cos(), anchor[1] + d * a.sin()];
                if in_fov(cfg, p) && !placed.iter().any(|f| f.contains(p, 0.0)) {
                    static_pos.push(p);
                    break;
                }
            }
        }
    }
    let clutter = if cfg.target_points > 0 {
        cfg.target_points.saturating_sub(moving_count + static_pos.len())
    } else {
        uniform_count(&mut rng, cfg.static_points)
    };
    let mut added = 0;
    while added < clutter {
        let p = sample_fov(&mut rng, cfg);
        if placed.iter().any(|f| f.contains(p, 0.0)) {
            continue;
        }
        static_pos.push(p);
        added += 1;
    }
    for p in static_pos {
        let doppler = normal(&mut rng, 0.0, cfg.doppler_noise);
        let rcs = normal(&mut rng, cfg.static_rcs_mean, cfg.static_rcs_spread);
        points.push(RadarPoint::new(p[0], p[1], rcs, doppler));
        labels.push(PanopticLabel::STATIC);
    }
    if points.is_empty() {
        let p = sample_fov(&mut rng, cfg);
        points.push(RadarPoint::new(p[0], p[1], cfg.static_rcs_mean, 0.0));
        labels.push(PanopticLabel::STATIC);
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut rng);
    let scan = RadarScan {
        scan_id: scan_id.to_string(),
        points: order.iter().map(|&i| points[i]).collect(),
        gt: order.iter().map(|&i| labels[i]).collect(),
    };
    scan.validate()?;
    Ok(scan)
}
