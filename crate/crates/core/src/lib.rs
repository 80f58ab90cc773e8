pub mod attention;
pub mod cli;
pub mod error;
pub mod layers;
pub mod network;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod refinement;
pub mod scan;
pub mod seeds;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
