//! Grid-accelerated ball query against the brute-force reference.
//!
//! cargo run --release --example ball_query -- [points]

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radfiner::attention::{ball_query, ball_query_brute_force};

fn main() -> radfiner::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let (radius, nmax) = (5.0, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)]).collect();

    let reps = 10;
    let grid = ball_query(&pts, radius, nmax)?;
    let t = Instant::now();
    for _ in 0..reps {
        ball_query(&pts, radius, nmax)?;
    }
    let t_grid = t.elapsed() / reps;
    let brute = ball_query_brute_force(&pts, radius, nmax)?;
    let t = Instant::now();
    for _ in 0..reps {
        ball_query_brute_force(&pts, radius, nmax)?;
    }
    let t_brute = t.elapsed() / reps;

    assert_eq!(grid, brute, "grid and brute force disagree");
    println!("{n} points, r={radius} m, nmax={nmax}");
    println!("anchor 0 neighbors: {:?}", grid.neighbors(0));
    println!("fullest row holds {} of {nmax} slots", grid.max_population());
    println!(
        "grid {:.2} ms, brute force {:.2} ms ({:.1}x)",
        t_grid.as_secs_f64() * 1e3,
        t_brute.as_secs_f64() * 1e3,
        t_brute.as_secs_f64() / t_grid.as_secs_f64()
    );
    Ok(())
}
