use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scan::SemanticClass;

/// Inclusive range written `lo..hi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Span<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Copy> Span<T> {
    pub const fn new(lo: T, hi: T) -> Self {
        Span { lo, hi }
    }
}

impl<T: FromStr + PartialOrd + Copy> FromStr for Span<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("expected a range `lo..hi`, got `{s}`"));
        let (a, b) = s.split_once("..").ok_or_else(bad)?;
        let lo: T = a.trim().parse().map_err(|_| bad())?;
        let hi: T = b.trim().parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(Error::Config(format!("range `{s}` is reversed")));
        }
        Ok(Span { lo, hi })
    }
}

impl<T: fmt::Debug> fmt::Display for Span<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}..{:?}", self.lo, self.hi)
    }
}

/// Generation law for one thing class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassLaw {
    pub weight: f64,
    pub points: Span<usize>,
    /// Footprint length along the heading and width across it, meters.
    pub length: f64,
    pub width: f64,
    pub speed: Span<f64>,
    pub rcs_mean: f64,
    pub rcs_spread: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    /// Full opening angle of the sensor, degrees, centered on +x.
    pub fov_deg: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub instances: Span<usize>,
    pub static_points: Span<usize>,
    /// When nonzero, static clutter is sized so the scan has this many points.
    pub target_points: usize,
    pub boundary_static: Span<usize>,
    pub boundary_dist: Span<f64>,
    /// Probability that an instance is placed next to an earlier one.
    pub cluster_prob: f64,
    pub cluster_gap: Span<f64>,
    /// Doppler noise standard deviation, m/s, for every point.
    pub doppler_noise: f64,
    pub static_rcs_mean: f64,
    pub static_rcs_spread: f64,
    /// Laws indexed by class code; entry 0 (static) is unused.
    pub laws: [ClassLaw; 6],
}

impl Default for SceneConfig {
    fn default() -> Self {
        let law = |weight, points: (usize, usize), length, width, speed: (f64, f64), rcs_mean, rcs_spread| ClassLaw {
            weight,
            points: Span::new(points.0, points.1),
            length,
            width,
            speed: Span::new(speed.0, speed.1),
            rcs_mean,
            rcs_spread,
        };
        SceneConfig {
            fov_deg: 120.0,
            min_range: 3.0,
            max_range: 60.0,
            instances: Span::new(2, 8),
            static_points: Span::new(150, 400),
            target_points: 0,
            boundary_static: Span::new(0, 3),
            boundary_dist: Span::new(0.5, 2.0),
            cluster_prob: 0.3,
            cluster_gap: Span::new(0.5, 2.5),
            doppler_noise: 0.2,
            static_rcs_mean: 0.0,
            static_rcs_spread: 6.0,
            laws: [
                law(0.0, (1, 1), 1.0, 1.0, (0.0, 0.0), 0.0, 1.0),
                law(0.35, (3, 15), 4.5, 1.8, (3.0, 15.0), 5.0, 4.0),
                law(0.2, (1, 4), 0.6, 0.6, (0.8, 2.0), -8.0, 3.0),
                law(0.15, (5, 15), 3.0, 3.0, (0.8, 1.8), -5.0, 3.0),
                law(0.15, (1, 6), 1.8, 0.7, (2.0, 7.0), -2.0, 3.0),
                law(0.15, (8, 30), 10.0, 2.5, (3.0, 13.0), 12.0, 4.0),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateConfig {
    pub eps_boundary: f64,
    pub eps_clutter: f64,
    pub eps_merge: f64,
    pub eps_miss: f64,
    pub merge_gap: f64,
    /// Static points within this distance of an instance may turn into
    /// boundary false positives.
    pub boundary_radius: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            eps_boundary: 0.15,
            eps_clutter: 0.2,
            eps_merge: 0.2,
            eps_miss: 0.05,
            merge_gap: 2.0,
            boundary_radius: 2.0,
        }
    }
}

impl SurrogateConfig {
    /// Error-free surrogate: replays ground truth.
    pub fn perfect() -> Self {
        SurrogateConfig {
            eps_boundary: 0.0,
            eps_clutter: 0.0,
            eps_merge: 0.0,
            eps_miss: 0.0,
            ..Self::default()
        }
    }
}

/// Scene and surrogate settings read from one `key=value` file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeneratorConfig {
    pub scene: SceneConfig,
    pub surrogate: SurrogateConfig,
}

const CLASS_KEYS: [(&str, SemanticClass); 5] = [
    ("car", SemanticClass::Car),
    ("ped", SemanticClass::Pedestrian),
    ("ped_grp", SemanticClass::PedestrianGroup),
    ("bike", SemanticClass::Bike),
    ("truck", SemanticClass::Truck),
];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

fn prob(key: &str, v: &str) -> Result<f64> {
    let p: f64 = num(key, v)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{key} must lie in [0, 1], got {p}")));
    }
    Ok(p)
}

impl GeneratorConfig {
    /// Parses `key=value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.scene;
        let g = &mut self.surrogate;
        match key {
            "fov_deg" => s.fov_deg = num(key, v)?,
            "min_range" => s.min_range = num(key, v)?,
            "max_range" => s.max_range = num(key, v)?,
            "instances" => s.instances = v.parse()?,
            "static_points" => s.static_points = v.parse()?,
            "target_points" => s.target_points = num(key, v)?,
            "boundary_static" => s.boundary_static = v.parse()?,
            "boundary_dist" => s.boundary_dist = v.parse()?,
            "cluster_prob" => s.cluster_prob = prob(key, v)?,
            "cluster_gap" => s.cluster_gap = v.parse()?,
            "doppler_noise" => s.doppler_noise = num(key, v)?,
            "static_rcs_mean" => s.static_rcs_mean = num(key, v)?,
            "static_rcs_spread" => s.static_rcs_spread = num(key, v)?,
            "eps_boundary" => g.eps_boundary = prob(key, v)?,
            "eps_clutter" => g.eps_clutter = prob(key, v)?,
            "eps_merge" => g.eps_merge = prob(key, v)?,
            "eps_miss" => g.eps_miss = prob(key, v)?,
            "merge_gap" => g.merge_gap = num(key, v)?,
            "boundary_radius" => g.boundary_radius = num(key, v)?,
            _ => {
                let (class, field) = key
                    .split_once('.')
                    .ok_or_else(|| Error::Config(format!("unknown generator key `{key}`")))?;
                let (_, sc) = CLASS_KEYS
                    .iter()
                    .find(|(name, _)| *name == class)
                    .ok_or_else(|| Error::Config(format!("unknown class `{class}` in `{key}`")))?;
                let law = &mut s.laws[sc.code()];
                match field {
                    "weight" => law.weight = num(key, v)?,
                    "points" => law.points = v.parse()?,
                    "length" => law.length = num(key, v)?,
                    "width" => law.width = num(key, v)?,
                    "speed" => law.speed = v.parse()?,
                    "rcs_mean" => law.rcs_mean = num(key, v)?,
                    "rcs_spread" => law.rcs_spread = num(key, v)?,
                    _ => return Err(Error::Config(format!("unknown class field `{field}` in `{key}`"))),
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scene;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(s.max_range > 0.0) || !(s.min_range >= 0.0) || s.min_range >= s.max_range {
            return bad("ranges must satisfy 0 ≤ min_range < max_range");
        }
        if !(s.fov_deg > 0.0 && s.fov_deg <= 360.0) {
            return bad("fov_deg must lie in (0, 360]");
        }
        if s.doppler_noise < 0.0 || s.static_rcs_spread < 0.0 {
            return bad("noise and spread parameters must be non-negative");
        }
        if s.boundary_dist.lo < 0.0 || s.cluster_gap.lo < 0.0 {
            return bad("distances must be non-negative");
        }
        let mut total = 0.0;
        for (name, c) in CLASS_KEYS {
            let l = &s.laws[c.code()];
            if l.weight < 0.0 || l.points.lo == 0 || l.length <= 0.0 || l.width <= 0.0 || l.rcs_spread < 0.0 || l.speed.lo <= 0.0 {
                return Err(Error::Config(format!(
                    "class `{name}` needs weight ≥ 0, at least one point, positive size and speed"
                )));
            }
            total += l.weight;
        }
        if !(total > 0.0) {
            return bad("class weights must not all be zero");
        }
        if self.surrogate.merge_gap < 0.0 || self.surrogate.boundary_radius < 0.0 {
            return bad("surrogate distances must be non-negative");
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn to_text(&self) -> String {
        let s = &self.scene;
        let g = &self.surrogate;
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k}={v}");
        };
        kv("fov_deg", format!("{:?}", s.fov_deg));
        kv("min_range", format!("{:?}", s.min_range));
        kv("max_range", format!("{:?}", s.max_range));
        kv("instances", s.instances.to_string());
        kv("static_points", s.static_points.to_string());
        kv("target_points", s.target_points.to_string());
        kv("boundary_static", s.boundary_static.to_string());
        kv("boundary_dist", s.boundary_dist.to_string());
        kv("cluster_prob", format!("{:?}", s.cluster_prob));
        kv("cluster_gap", s.cluster_gap.to_string());
        kv("doppler_noise", format!("{:?}", s.doppler_noise));
        kv("static_rcs_mean", format!("{:?}", s.static_rcs_mean));
        kv("static_rcs_spread", format!("{:?}", s.static_rcs_spread));
        for (name, c) in CLASS_KEYS {
            let l = &s.laws[c.code()];
            kv(&format!("{name}.weight"), format!("{:?}", l.weight));
            kv(&format!("{name}.points"), l.points.to_string());
            kv(&format!("{name}.length"), format!("{:?}", l.length));
            kv(&format!("{name}.width"), format!("{:?}", l.width));
            kv(&format!("{name}.speed"), l.speed.to_string());
            kv(&format!("{name}.rcs_mean"), format!("{:?}", l.rcs_mean));
            kv(&format!("{name}.rcs_spread"), format!("{:?}", l.rcs_spread));
        }
        kv("eps_boundary", format!("{:?}", g.eps_boundary));
        kv("eps_clutter", format!("{:?}", g.eps_clutter));
        kv("eps_merge", format!("{:?}", g.eps_merge));
        kv("eps_miss", format!("{:?}", g.eps_miss));
        kv("merge_gap", format!("{:?}", g.merge_gap));
        kv("boundary_radius", format!("{:?}", g.boundary_radius));
        o
    }
}
