//! One radius attention layer on a handful of points: neighborhoods,
//! positional encodings and per-channel attention weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radfiner::attention::{ball_query, PadMode, PairList, RadiusAttention};
use radfiner::layers::{Ctx, Mode};
use radfiner::numerics::{ParamStore, Tensor};

fn main() -> radfiner::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<[f64; 2]> = (0..12).map(|_| [rng.random_range(0.0..8.0), rng.random_range(0.0..8.0)]).collect();
    let width = 4;

    let mut store = ParamStore::new();
    let layer = RadiusAttention::new(&mut store, &mut rng, "attn", width);
    let nb = ball_query(&pts, 3.0, 6)?;

    for pad in [PadMode::Mask, PadMode::ZeroPad] {
        let pairs = PairList::build(&[&nb], pad)?;
        let mut ctx = Ctx::new(&store, Mode::Infer);
        let x = ctx.graph.leaf(Tensor::matrix(12, width, (0..12 * width).map(|_| rng.random_range(-1.0..1.0)).collect())?);
        let trace = layer.forward_traced(&mut ctx, x, &pairs)?;
        let w = ctx.graph.value(trace.weights);
        let (lo, hi) = (pairs.offsets[0], pairs.offsets[1]);
        let sums: Vec<f64> = (0..width).map(|c| (lo..hi).map(|p| w.data()[p * width + c]).sum()).collect();
        println!("{pad}: {} pair slots", pairs.len());
        println!("  anchor 0 neighbors {:?}", nb.neighbors(0));
        println!("  anchor 0 weight sums per channel {sums:.6?}");
        println!("  output row 0 {:.4?}", &ctx.graph.value(trace.output).data()[..width]);
    }
    Ok(())
}
