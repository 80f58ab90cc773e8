//! Synthetic radar scenes and a backbone surrogate that replays ground truth
//! with controlled label errors.

mod config;
mod scene;
mod surrogate;

use rayon::prelude::*;

pub use config::{ClassLaw, GeneratorConfig, SceneConfig, Span, SurrogateConfig};
pub use scene::{generate_scene, radial_velocity};
pub use surrogate::{surrogate_backbone, surrogate_backbone_logged, InjectionLog};

use crate::error::Result;
use crate::scan::{MovingPrediction, RadarScan};
use crate::seeds::derive_seed;

/// Scan id of the `index`-th generated scan of a corpus.
pub fn scan_id(prefix: &str, index: usize) -> String {
    format!("{prefix}{index:05}")
}

/// Seed of the surrogate run on a given scan.
pub fn surrogate_seed(seed: u64, scan_id: &str) -> u64 {
    derive_seed(seed, &["surrogate", scan_id])
}

/// `count` scans with their surrogate predictions. Each scan depends only on
/// `(seed, scan id)`, so the result is the same for any thread count.
pub fn generate_corpus(
    cfg: &GeneratorConfig,
    prefix: &str,
    count: usize,
    seed: u64,
) -> Result<(Vec<RadarScan>, Vec<MovingPrediction>)> {
    let pairs: Result<Vec<_>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let id = scan_id(prefix, i);
            let scan = generate_scene(&cfg.scene, derive_seed(seed, &["scene", &id]), &id)?;
            let pred = surrogate_backbone(&scan, &cfg.surrogate, surrogate_seed(seed, &id));
            Ok((scan, pred))
        })
        .collect();
    Ok(pairs?.into_iter().unzip())
}
