//! Finite-difference check of every parameter gradient of the full training
//! objective on a small network.
//!
//! cargo run --release --example gradient_check -- [seed]

use radfiner::network::NetworkConfig;
use radfiner::training::objective_gradient_check;

fn main() -> radfiner::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let check = objective_gradient_check(&NetworkConfig::toy(), 20, seed, 1e-5)?;
    for t in &check.report.tensors {
        println!("{:<28} {:>5} entries  max rel err {:.2e}", t.name, t.entries, t.max_relative_error);
    }
    println!(
        "worst {:.2e} (jitter draw {}, relu margin {:.2e}, lovasz gap {:.2e})",
        check.report.max_relative_error(),
        check.candidate,
        check.relu_margin,
        check.breakpoint_gap
    );
    Ok(())
}
