//! Latency of select → forward → refine for the full-size network on
//! 600-point scans: first the backbone's moving points only, then every
//! point sent through the network.
//!
//! cargo run --release --example bench_forward -- [scans]

use radfiner::cli::{all_moving, bench_latency};
use radfiner::network::{Network, NetworkConfig};
use radfiner::refinement::RefineMode;
use radfiner::synth::{generate_corpus, GeneratorConfig};

fn main() -> radfiner::Result<()> {
    let count = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let mut gen = GeneratorConfig::default();
    gen.set("target_points", "600")?;
    let (scans, preds) = generate_corpus(&gen, "bench", count, 0)?;
    let everything: Vec<_> = scans.iter().map(all_moving).collect();
    let (net, store) = Network::new(&NetworkConfig::paper())?;
    for (name, preds) in [("backbone moving points", &preds), ("all points", &everything)] {
        let (lat, points) = bench_latency(&net, &store, &scans, preds, RefineMode::Split, 1, 3)?;
        println!(
            "{name}: {} scans, {points} network points each, mean {:.1} ms, median {:.1} ms, p95 {:.1} ms",
            lat.samples, lat.mean, lat.median, lat.p95
        );
    }
    Ok(())
}
