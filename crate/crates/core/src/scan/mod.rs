//! Radar scans, panoptic labels, backbone predictions and their text file
//! formats.

mod format;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

pub use format::{
    load_dataset, load_panoptic, load_predictions, parse_dataset, parse_panoptic, parse_predictions, save_dataset,
    save_panoptic, save_predictions, write_dataset, write_panoptic, write_predictions, PRED_HEADER, SCAN_HEADER,
};

/// Number of semantic classes.
pub const NUM_CLASSES: usize = 6;

/// Semantic classes with stable integer codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SemanticClass {
    Static = 0,
    Car = 1,
    Pedestrian = 2,
    PedestrianGroup = 3,
    Bike = 4,
    Truck = 5,
}

impl SemanticClass {
    pub const ALL: [SemanticClass; NUM_CLASSES] = [
        SemanticClass::Static,
        SemanticClass::Car,
        SemanticClass::Pedestrian,
        SemanticClass::PedestrianGroup,
        SemanticClass::Bike,
        SemanticClass::Truck,
    ];

    pub const THINGS: [SemanticClass; NUM_CLASSES - 1] = [
        SemanticClass::Car,
        SemanticClass::Pedestrian,
        SemanticClass::PedestrianGroup,
        SemanticClass::Bike,
        SemanticClass::Truck,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    /// `static` is the only stuff class.
    pub fn is_thing(self) -> bool {
        self != SemanticClass::Static
    }

    pub fn name(self) -> &'static str {
        match self {
            SemanticClass::Static => "static",
            SemanticClass::Car => "car",
            SemanticClass::Pedestrian => "ped.",
            SemanticClass::PedestrianGroup => "ped. grp.",
            SemanticClass::Bike => "bike",
            SemanticClass::Truck => "truck",
        }
    }
}

impl fmt::Display for SemanticClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One radar detection. `z` is a placeholder fixed at 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Radar cross section, dBsm.
    pub rcs: f64,
    /// Ego-motion compensated radial velocity, m/s.
    pub doppler: f64,
}

impl RadarPoint {
    pub fn new(x: f64, y: f64, rcs: f64, doppler: f64) -> Self {
        RadarPoint {
            x,
            y,
            z: 0.0,
            rcs,
            doppler,
        }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Network input row `(x, y, z, rcs, doppler)`.
    pub fn features(&self) -> [f64; 5] {
        [self.x, self.y, self.z, self.rcs, self.doppler]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PanopticLabel {
    pub semantic: SemanticClass,
    /// 0 means "no instance".
    pub instance_id: u32,
}

impl PanopticLabel {
    pub const STATIC: PanopticLabel = PanopticLabel {
        semantic: SemanticClass::Static,
        instance_id: 0,
    };

    pub fn new(semantic: SemanticClass, instance_id: u32) -> Self {
        PanopticLabel { semantic, instance_id }
    }
}

/// One sensor sweep with ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct RadarScan {
    pub scan_id: String,
    pub points: Vec<RadarPoint>,
    pub gt: Vec<PanopticLabel>,
}

impl RadarScan {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        validate_scan_id(&self.scan_id)?;
        if self.points.is_empty() {
            return Err(Error::invariant(&self.scan_id, "scan has no points"));
        }
        if self.points.len() != self.gt.len() {
            return Err(Error::invariant(
                &self.scan_id,
                format!("{} points but {} labels", self.points.len(), self.gt.len()),
            ));
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.z != 0.0 {
                return Err(Error::invariant(&self.scan_id, format!("point {i}: z = {} must be 0", p.z)));
            }
            if ![p.x, p.y, p.rcs, p.doppler].iter().all(|v| v.is_finite()) {
                return Err(Error::invariant(&self.scan_id, format!("point {i}: non-finite value")));
            }
        }
        let mut classes: BTreeMap<u32, SemanticClass> = BTreeMap::new();
        for (i, l) in self.gt.iter().enumerate() {
            if (l.semantic == SemanticClass::Static) != (l.instance_id == 0) {
                return Err(Error::invariant(
                    &self.scan_id,
                    format!("point {i}: class {} with instance {}", l.semantic, l.instance_id),
                ));
            }
            if l.instance_id != 0 {
                let c = classes.entry(l.instance_id).or_insert(l.semantic);
                if *c != l.semantic {
                    return Err(Error::invariant(
                        &self.scan_id,
                        format!("instance {} mixes classes {} and {}", l.instance_id, c, l.semantic),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Ground-truth moving mask (every thing-class point).
    pub fn gt_moving(&self) -> Vec<bool> {
        self.gt.iter().map(|l| l.semantic.is_thing()).collect()
    }

    /// Ground truth as a backbone prediction with no errors.
    pub fn gt_prediction(&self) -> MovingPrediction {
        MovingPrediction {
            scan_id: self.scan_id.clone(),
            moving: self.gt_moving(),
            instance_id: self.gt.iter().map(|l| l.instance_id).collect(),
        }
    }

    /// Ground-truth panoptic labelling in prediction form.
    pub fn gt_panoptic(&self) -> PanopticPrediction {
        PanopticPrediction {
            scan_id: self.scan_id.clone(),
            moving: self.gt_moving(),
            semantic: self.gt.iter().map(|l| l.semantic).collect(),
            instance_id: self.gt.iter().map(|l| l.instance_id).collect(),
        }
    }
}

pub(crate) fn validate_scan_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        return Err(Error::invariant(id, "scan id must be non-empty and contain no whitespace"));
    }
    Ok(())
}

/// Moving/static flags and instance ids from the upstream moving instance
/// segmentation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MovingPrediction {
    pub scan_id: String,
    pub moving: Vec<bool>,
    pub instance_id: Vec<u32>,
}

impl MovingPrediction {
    pub fn len(&self) -> usize {
        self.moving.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moving.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        validate_scan_id(&self.scan_id)?;
        if self.moving.len() != self.instance_id.len() {
            return Err(Error::invariant(&self.scan_id, "moving flags and instance ids differ in length"));
        }
        if let Some(i) = (0..self.moving.len()).find(|&i| !self.moving[i] && self.instance_id[i] != 0) {
            return Err(Error::invariant(
                &self.scan_id,
                format!("point {i}: static point carries instance {}", self.instance_id[i]),
            ));
        }
        Ok(())
    }

    pub fn validate_against(&self, scan: &RadarScan) -> Result<()> {
        self.validate()?;
        if self.scan_id != scan.scan_id || self.len() != scan.len() {
            return Err(Error::invariant(
                &scan.scan_id,
                format!(
                    "prediction `{}` with {} points does not align with scan of {} points",
                    self.scan_id,
                    self.len(),
                    scan.len()
                ),
            ));
        }
        Ok(())
    }

    /// Distinct nonzero instance ids, ascending.
    pub fn instance_ids(&self) -> BTreeSet<u32> {
        self.instance_id.iter().copied().filter(|&i| i != 0).collect()
    }
}

/// Final per-point panoptic output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PanopticPrediction {
    pub scan_id: String,
    /// Backbone moving flags the output was assembled from.
    pub moving: Vec<bool>,
    pub semantic: Vec<SemanticClass>,
    pub instance_id: Vec<u32>,
}

impl PanopticPrediction {
    pub fn len(&self) -> usize {
        self.semantic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.semantic.is_empty()
    }

    /// Checks `static ⇔ id 0` and per-instance semantic purity.
    pub fn validate(&self) -> Result<()> {
        validate_scan_id(&self.scan_id)?;
        if self.semantic.len() != self.instance_id.len() || self.moving.len() != self.semantic.len() {
            return Err(Error::invariant(&self.scan_id, "panoptic columns differ in length"));
        }
        let mut classes: BTreeMap<u32, SemanticClass> = BTreeMap::new();
        for (i, (&s, &id)) in self.semantic.iter().zip(&self.instance_id).enumerate() {
            if (s == SemanticClass::Static) != (id == 0) {
                return Err(Error::invariant(&self.scan_id, format!("point {i}: class {s} with instance {id}")));
            }
            if id != 0 && *classes.entry(id).or_insert(s) != s {
                return Err(Error::invariant(&self.scan_id, format!("instance {id} is not semantically pure")));
            }
        }
        Ok(())
    }
}

/// Points flagged moving by a prediction, in original order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MovingSelection {
    pub coords: Vec<[f64; 2]>,
    /// Rows `(x, y, z, rcs, doppler)`.
    pub features: Vec<[f64; 5]>,
    /// Original point index of each selected row.
    pub index_map: Vec<usize>,
}

impl MovingSelection {
    pub fn len(&self) -> usize {
        self.index_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_map.is_empty()
    }
}

/// Selects the points a prediction marks as moving. No moving point yields
/// an empty selection.
pub fn select_moving(scan: &RadarScan, pred: &MovingPrediction) -> Result<MovingSelection> {
    pred.validate_against(scan)?;
    let mut sel = MovingSelection::default();
    for (i, (p, &m)) in scan.points.iter().zip(&pred.moving).enumerate() {
        if m {
            sel.coords.push(p.xy());
            sel.features.push(p.features());
            sel.index_map.push(i);
        }
    }
    Ok(sel)
}
