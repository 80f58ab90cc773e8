//! Combines backbone instance ids with per-point semantic predictions:
//! instances are split along class boundaries and points classified static
//! leave their instance.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scan::{MovingPrediction, PanopticPrediction, RadarScan, SemanticClass};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RefineMode {
    /// One instance per (backbone id, predicted class); static points drop out.
    #[default]
    Split,
    /// Every backbone instance takes the majority class of its points.
    Majority,
}

impl FromStr for RefineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split" => Ok(RefineMode::Split),
            "majority" => Ok(RefineMode::Majority),
            _ => Err(Error::Config(format!("refine-mode must be split or majority, got `{s}`"))),
        }
    }
}

impl fmt::Display for RefineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RefineMode::Split => "split",
            RefineMode::Majority => "majority",
        })
    }
}

fn check_aligned(ids: &[u32], classes: &[SemanticClass]) -> Result<()> {
    if ids.len() != classes.len() {
        return Err(Error::Shape(format!("{} instance ids for {} classes", ids.len(), classes.len())));
    }
    Ok(())
}

/// Split refinement. Fresh ids start at 1 and follow ascending
/// `(original id, class code)`; points without a backbone id that are
/// classified as a thing form one group per class.
pub fn refine_instances(ids: &[u32], classes: &[SemanticClass]) -> Result<Vec<u32>> {
    check_aligned(ids, classes)?;
    let mut groups: BTreeMap<(u32, SemanticClass), u32> = BTreeMap::new();
    for (&id, &c) in ids.iter().zip(classes) {
        if c.is_thing() {
            groups.insert((id, c), 0);
        }
    }
    for (k, v) in groups.values_mut().enumerate() {
        *v = k as u32 + 1;
    }
    Ok(ids
        .iter()
        .zip(classes)
        .map(|(&id, &c)| if c.is_thing() { groups[&(id, c)] } else { 0 })
        .collect())
}

/// Majority-vote refinement: per backbone instance the most frequent class
/// (ties to the lowest code) is imposed on all its points; an instance
/// voted static dissolves.
pub fn refine_majority(ids: &[u32], classes: &[SemanticClass]) -> Result<(Vec<u32>, Vec<SemanticClass>)> {
    check_aligned(ids, classes)?;
    let mut votes: BTreeMap<u32, [usize; SemanticClass::ALL.len()]> = BTreeMap::new();
    for (&id, &c) in ids.iter().zip(classes) {
        if id != 0 {
            votes.entry(id).or_default()[c.code()] += 1;
        }
    }
    let winner: BTreeMap<u32, SemanticClass> = votes
        .iter()
        .map(|(&id, v)| {
            let best = (0..v.len()).fold(0, |b, k| if v[k] > v[b] { k } else { b });
            (id, SemanticClass::ALL[best])
        })
        .collect();
    let voted: Vec<SemanticClass> = ids
        .iter()
        .zip(classes)
        .map(|(&id, &c)| if id == 0 { c } else { winner[&id] })
        .collect();
    let refined = refine_instances(ids, &voted)?;
    Ok((refined, voted))
}

/// Refines according to `mode`, returning ids and (possibly revoted) classes.
pub fn refine(ids: &[u32], classes: &[SemanticClass], mode: RefineMode) -> Result<(Vec<u32>, Vec<SemanticClass>)> {
    match mode {
        RefineMode::Split => Ok((refine_instances(ids, classes)?, classes.to_vec())),
        RefineMode::Majority => refine_majority(ids, classes),
    }
}

/// Writes refined moving-point labels back over the full scan; points the
/// backbone left static become `(static, 0)`.
pub fn assemble_panoptic(
    scan: &RadarScan,
    pred: &MovingPrediction,
    refined_ids: &[u32],
    classes: &[SemanticClass],
    index_map: &[usize],
) -> Result<PanopticPrediction> {
    pred.validate_against(scan)?;
    check_aligned(refined_ids, classes)?;
    if index_map.len() != refined_ids.len() {
        return Err(Error::Shape(format!(
            "index map of {} rows for {} refined points",
            index_map.len(),
            refined_ids.len()
        )));
    }
    let n = scan.len();
    let mut out = PanopticPrediction {
        scan_id: scan.scan_id.clone(),
        moving: pred.moving.clone(),
        semantic: vec![SemanticClass::Static; n],
        instance_id: vec![0; n],
    };
    for (k, &i) in index_map.iter().enumerate() {
        if i >= n {
            return Err(Error::invariant(&scan.scan_id, format!("index map entry {i} outside {n} points")));
        }
        if !pred.moving[i] {
            return Err(Error::invariant(&scan.scan_id, format!("index map entry {i} is not a moving point")));
        }
        out.semantic[i] = classes[k];
        out.instance_id[i] = refined_ids[k];
    }
    out.validate()?;
    Ok(out)
}

/// Whether split refinement leaves `(ids, classes)` unchanged.
pub fn refinement_is_idempotent(ids: &[u32], classes: &[SemanticClass]) -> Result<bool> {
    let once = refine_instances(ids, classes)?;
    let twice = refine_instances(&once, classes)?;
    Ok(once == twice)
}
