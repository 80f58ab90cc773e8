//! Radius-limited vector attention over capped ball-query neighborhoods.

mod ball_query;
mod layer;

pub use ball_query::{ball_query, ball_query_brute_force, Neighborhood};
pub use layer::{AttentionTrace, PadMode, PairList, RadiusAttention};
