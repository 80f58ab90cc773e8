//! Trains the desk network for a few epochs on a small generated corpus and
//! reports validation PQ after each epoch.
//!
//! cargo run --release --example train_tiny -- [epochs]

use radfiner::network::NetworkConfig;
use radfiner::synth::{generate_corpus, GeneratorConfig};
use radfiner::training::{train, AugmentConfig, TrainConfig, TrainData};

fn main() -> radfiner::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let gen = GeneratorConfig::default();
    let (train_scans, _) = generate_corpus(&gen, "train", 40, 0)?;
    let (val, val_preds) = generate_corpus(&gen, "val", 10, 1)?;

    let cfg = TrainConfig {
        epochs,
        lr_drop_epoch: epochs * 3 / 4,
        ..TrainConfig::desk()
    };
    let data = TrainData {
        train: &train_scans,
        val: &val,
        val_preds: &val_preds,
    };
    let (_, history) = train(&NetworkConfig::desk(), &cfg, &AugmentConfig::default(), data, None, |r| {
        println!(
            "epoch {:2}  ce {:.4}  lovasz {:.4}  consistency {:.4}  val PQ {:.4}",
            r.epoch,
            r.loss.ce,
            r.loss.lovasz,
            r.loss.consistency,
            r.val_pq.unwrap_or(f64::NAN)
        );
    })?;
    print!("\n{}", history.to_csv());
    Ok(())
}
