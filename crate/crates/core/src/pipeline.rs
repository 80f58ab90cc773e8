//! Per-scan inference: select the backbone's moving points, classify them,
//! refine instances and score against ground truth.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::PanopticStats;
use crate::network::{predict_classes, NetInput, Network};
use crate::numerics::ParamStore;
use crate::refinement::{assemble_panoptic, refine, refine_majority, RefineMode};
use crate::scan::{select_moving, MovingPrediction, MovingSelection, PanopticPrediction, RadarScan, SemanticClass};

/// Where moving-point classes come from.
#[derive(Clone, Copy)]
pub enum ClassSource<'a> {
    /// Ground-truth class of every point (an oracle classifier).
    GroundTruth,
    Network(&'a Network, &'a ParamStore),
}

/// How classes and backbone instances are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combine {
    /// Each backbone instance takes its majority class.
    Vote,
    Refine(RefineMode),
}

/// Classes of the selected moving points.
pub fn classify(source: ClassSource<'_>, scan: &RadarScan, sel: &MovingSelection) -> Result<Vec<SemanticClass>> {
    if sel.is_empty() {
        return Ok(Vec::new());
    }
    match source {
        ClassSource::GroundTruth => Ok(sel.index_map.iter().map(|&i| scan.gt[i].semantic).collect()),
        ClassSource::Network(net, store) => {
            let input = NetInput::single(&net.config, &sel.coords, &sel.features)?;
            predict_classes(&net.infer(store, &input)?)
        }
    }
}

/// Full panoptic output of one scan.
pub fn panoptic(
    source: ClassSource<'_>,
    combine: Combine,
    scan: &RadarScan,
    pred: &MovingPrediction,
) -> Result<PanopticPrediction> {
    let sel = select_moving(scan, pred)?;
    let classes = classify(source, scan, &sel)?;
    let ids: Vec<u32> = sel.index_map.iter().map(|&i| pred.instance_id[i]).collect();
    let (refined, classes) = match combine {
        Combine::Vote => refine_majority(&ids, &classes)?,
        Combine::Refine(mode) => refine(&ids, &classes, mode)?,
    };
    assemble_panoptic(scan, pred, &refined, &classes, &sel.index_map)
}

/// Raw backbone instances labeled with their majority ground-truth class.
pub fn baseline_panoptic(scan: &RadarScan, pred: &MovingPrediction) -> Result<PanopticPrediction> {
    panoptic(ClassSource::GroundTruth, Combine::Vote, scan, pred)
}

/// Scores every scan; per-scan work runs on the current rayon pool and the
/// statistics are summed in scan order.
pub fn evaluate(
    scans: &[RadarScan],
    preds: &[MovingPrediction],
    run: impl Fn(&RadarScan, &MovingPrediction) -> Result<PanopticPrediction> + Sync,
) -> Result<(PanopticStats, Vec<PanopticPrediction>)> {
    if scans.len() != preds.len() {
        return Err(Error::Shape(format!("{} scans with {} predictions", scans.len(), preds.len())));
    }
    let outputs: Result<Vec<PanopticPrediction>> = scans
        .par_iter()
        .zip(preds)
        .map(|(s, p)| {
            if s.scan_id != p.scan_id {
                return Err(Error::invariant(&s.scan_id, format!("paired with prediction for `{}`", p.scan_id)));
            }
            run(s, p)
        })
        .collect();
    let outputs = outputs?;
    let mut stats = PanopticStats::new();
    for (s, o) in scans.iter().zip(&outputs) {
        stats.accumulate(&s.gt_panoptic(), o)?;
    }
    Ok((stats, outputs))
}
