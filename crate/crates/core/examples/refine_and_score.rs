//! Scores the raw backbone against class-split refinement, using ground
//! truth as a perfect classifier to show what refinement can recover.

use radfiner::pipeline::{evaluate, panoptic, ClassSource, Combine};
use radfiner::refinement::{refine, RefineMode};
use radfiner::scan::SemanticClass;
use radfiner::synth::{generate_corpus, GeneratorConfig};

fn main() -> radfiner::Result<()> {
    use SemanticClass::*;
    let ids = [1, 1, 1, 1, 2, 2];
    let classes = [Car, Car, Pedestrian, Pedestrian, Truck, Truck];
    let (split, split_classes) = refine(&ids, &classes, RefineMode::Split)?;
    println!("ids {ids:?} with classes {classes:?}\n  -> split {split:?} {split_classes:?}\n");

    let (scans, preds) = generate_corpus(&GeneratorConfig::default(), "score", 100, 5)?;
    for (name, combine) in [
        ("majority vote", Combine::Vote),
        ("split", Combine::Refine(RefineMode::Split)),
    ] {
        let (stats, _) = evaluate(&scans, &preds, |s, p| panoptic(ClassSource::GroundTruth, combine, s, p))?;
        println!("{name:>14}: PQ {:.4}  PQ(things) {:.4}", stats.panoptic_quality().1, stats.mean_pq_things());
    }
    Ok(())
}
