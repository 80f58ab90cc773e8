//! Line-oriented text formats.
//!
//! Scan files:
//!
//! ```text
//! #radfiner-scans v1
//! scan <scan_id> <N>
//! <x> <y> <z> <rcs> <doppler> <sem_code> <instance_id>     (N lines)
//! ```
//!
//! Prediction files:
//!
//! ```text
//! #radfiner-pred v1
//! scan <scan_id> <N>
//! <moving 0|1> <instance_id> [<sem_code>]                    (N lines)
//! ```
//!
//! Reals are written with Rust's shortest round-trip decimal formatting, so
//! parse followed by write reproduces the input bytes.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{MovingPrediction, PanopticLabel, PanopticPrediction, RadarPoint, RadarScan, SemanticClass};
use crate::error::{Error, Result};

pub const SCAN_HEADER: &str = "#radfiner-scans v1";
pub const PRED_HEADER: &str = "#radfiner-pred v1";

struct Lines<'a> {
    origin: &'a str,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, origin: &'a str) -> Self {
        Lines {
            origin,
            iter: text.lines().enumerate(),
            last: 0,
        }
    }

    fn err(&self, line: usize, field: &str, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.origin.to_string(),
            line,
            field: field.to_string(),
            msg: msg.into(),
        }
    }

    /// Next line and its 1-based number.
    fn next(&mut self) -> Option<(usize, &'a str)> {
        let (i, l) = self.iter.next()?;
        self.last = i + 1;
        Some((i + 1, l))
    }

    fn header(&mut self, expected: &str) -> Result<()> {
        match self.next() {
            Some((_, l)) if l == expected => Ok(()),
            Some((n, l)) => Err(self.err(n, "header", format!("expected `{expected}`, found `{l}`"))),
            None => Err(self.err(1, "header", format!("missing `{expected}`"))),
        }
    }

    /// Parses `scan <id> <N>`; `None` at end of input.
    fn scan_header(&mut self) -> Result<Option<(String, usize)>> {
        let Some((n, l)) = self.next() else {
            return Ok(None);
        };
        let toks: Vec<&str> = l.split(' ').collect();
        if toks.len() != 3 || toks[0] != "scan" {
            return Err(self.err(n, "scan", format!("expected `scan <id> <N>`, found `{l}`")));
        }
        let count = toks[2]
            .parse::<usize>()
            .map_err(|e| self.err(n, "N", e.to_string()))?;
        Ok(Some((toks[1].to_string(), count)))
    }

    fn field<T: FromStr>(&self, line: usize, tok: Option<&str>, name: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let tok = tok.ok_or_else(|| self.err(line, name, "missing"))?;
        tok.parse::<T>().map_err(|e| self.err(line, name, format!("`{tok}`: {e}")))
    }

    fn class(&self, line: usize, tok: Option<&str>) -> Result<SemanticClass> {
        let code: usize = self.field(line, tok, "sem_code")?;
        SemanticClass::from_code(code).ok_or_else(|| self.err(line, "sem_code", format!("unknown class code {code}")))
    }

    fn body_line(&mut self, scan_id: &str) -> Result<(usize, &'a str)> {
        let last = self.last;
        self.next()
            .ok_or_else(|| self.err(last + 1, "points", format!("scan `{scan_id}` ends early")))
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_dataset(text: &str, origin: &str) -> Result<Vec<RadarScan>> {
    let mut lines = Lines::new(text, origin);
    lines.header(SCAN_HEADER)?;
    let mut scans = Vec::new();
    let mut ids = HashSet::new();
    while let Some((scan_id, n)) = lines.scan_header()? {
        let mut points = Vec::with_capacity(n);
        let mut gt = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, l) = lines.body_line(&scan_id)?;
            let mut t = l.split(' ');
            let x = lines.field(ln, t.next(), "x")?;
            let y = lines.field(ln, t.next(), "y")?;
            let z = lines.field(ln, t.next(), "z")?;
            let rcs = lines.field(ln, t.next(), "rcs")?;
            let doppler = lines.field(ln, t.next(), "doppler")?;
            let semantic = lines.class(ln, t.next())?;
            let instance_id = lines.field(ln, t.next(), "instance_id")?;
            if let Some(extra) = t.next() {
                return Err(lines.err(ln, "line", format!("unexpected trailing field `{extra}`")));
            }
            points.push(RadarPoint { x, y, z, rcs, doppler });
            gt.push(PanopticLabel { semantic, instance_id });
        }
        let scan = RadarScan { scan_id, points, gt };
        scan.validate()?;
        if !ids.insert(scan.scan_id.clone()) {
            return Err(Error::invariant(&scan.scan_id, "duplicate scan id"));
        }
        scans.push(scan);
    }
    Ok(scans)
}

pub fn load_dataset(path: &Path) -> Result<Vec<RadarScan>> {
    parse_dataset(&read(path)?, &path.display().to_string())
}

pub fn write_dataset(scans: &[RadarScan]) -> Result<String> {
    let mut out = String::new();
    out.push_str(SCAN_HEADER);
    out.push('\n');
    let mut ids = HashSet::new();
    for s in scans {
        s.validate()?;
        if !ids.insert(s.scan_id.as_str()) {
            return Err(Error::invariant(&s.scan_id, "duplicate scan id"));
        }
        writeln!(out, "scan {} {}", s.scan_id, s.points.len()).unwrap();
        for (p, l) in s.points.iter().zip(&s.gt) {
            writeln!(
                out,
                "{} {} {} {} {} {} {}",
                p.x,
                p.y,
                p.z,
                p.rcs,
                p.doppler,
                l.semantic.code(),
                l.instance_id
            )
            .unwrap();
        }
    }
    Ok(out)
}

pub fn save_dataset(scans: &[RadarScan], path: &Path) -> Result<()> {
    write(path, write_dataset(scans)?)
}

type RawPrediction = (String, Vec<bool>, Vec<u32>, Option<Vec<SemanticClass>>);

fn parse_pred_file(text: &str, origin: &str) -> Result<Vec<RawPrediction>> {
    let mut lines = Lines::new(text, origin);
    lines.header(PRED_HEADER)?;
    let mut out = Vec::new();
    let mut has_sem: Option<bool> = None;
    while let Some((scan_id, n)) = lines.scan_header()? {
        let mut moving = Vec::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        let mut sem = Vec::new();
        for _ in 0..n {
            let (ln, l) = lines.body_line(&scan_id)?;
            let toks: Vec<&str> = l.split(' ').collect();
            let m = match toks[0] {
                "0" => false,
                "1" => true,
                other => return Err(lines.err(ln, "moving", format!("expected 0 or 1, found `{other}`"))),
            };
            moving.push(m);
            ids.push(lines.field(ln, toks.get(1).copied(), "instance_id")?);
            let with_sem = match toks.len() {
                2 => false,
                3 => true,
                _ => return Err(lines.err(ln, "line", format!("expected 2 or 3 fields, found {}", toks.len()))),
            };
            if *has_sem.get_or_insert(with_sem) != with_sem {
                return Err(lines.err(ln, "sem_code", "column present on some lines only"));
            }
            if with_sem {
                sem.push(lines.class(ln, Some(toks[2]))?);
            }
        }
        out.push((scan_id, moving, ids, has_sem.unwrap_or(false).then_some(sem)));
    }
    Ok(out)
}

pub fn parse_predictions(text: &str, origin: &str) -> Result<Vec<MovingPrediction>> {
    parse_pred_file(text, origin)?
        .into_iter()
        .map(|(scan_id, moving, instance_id, _)| {
            let p = MovingPrediction {
                scan_id,
                moving,
                instance_id,
            };
            p.validate()?;
            Ok(p)
        })
        .collect()
}

pub fn load_predictions(path: &Path) -> Result<Vec<MovingPrediction>> {
    parse_predictions(&read(path)?, &path.display().to_string())
}

pub fn parse_panoptic(text: &str, origin: &str) -> Result<Vec<PanopticPrediction>> {
    parse_pred_file(text, origin)?
        .into_iter()
        .map(|(scan_id, moving, instance_id, sem)| {
            let semantic = sem.ok_or_else(|| Error::invariant(&scan_id, "prediction file lacks the sem_code column"))?;
            let p = PanopticPrediction {
                scan_id,
                moving,
                semantic,
                instance_id,
            };
            p.validate()?;
            Ok(p)
        })
        .collect()
}

pub fn load_panoptic(path: &Path) -> Result<Vec<PanopticPrediction>> {
    parse_panoptic(&read(path)?, &path.display().to_string())
}

pub fn write_predictions(preds: &[MovingPrediction]) -> Result<String> {
    let mut out = String::new();
    out.push_str(PRED_HEADER);
    out.push('\n');
    for p in preds {
        p.validate()?;
        writeln!(out, "scan {} {}", p.scan_id, p.len()).unwrap();
        for (&m, &id) in p.moving.iter().zip(&p.instance_id) {
            writeln!(out, "{} {}", u8::from(m), id).unwrap();
        }
    }
    Ok(out)
}

pub fn save_predictions(preds: &[MovingPrediction], path: &Path) -> Result<()> {
    write(path, write_predictions(preds)?)
}

pub fn write_panoptic(preds: &[PanopticPrediction]) -> Result<String> {
    let mut out = String::new();
    out.push_str(PRED_HEADER);
    out.push('\n');
    for p in preds {
        p.validate()?;
        writeln!(out, "scan {} {}", p.scan_id, p.len()).unwrap();
        for ((&m, &id), s) in p.moving.iter().zip(&p.instance_id).zip(&p.semantic) {
            writeln!(out, "{} {} {}", u8::from(m), id, s.code()).unwrap();
        }
    }
    Ok(out)
}

pub fn save_panoptic(preds: &[PanopticPrediction], path: &Path) -> Result<()> {
    write(path, write_panoptic(preds)?)
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_scan;
    use super::*;

    #[test]
    fn parses_three_point_scan() {
        let text = "#radfiner-scans v1\nscan a 3\n0 0 0 1 2 0 0\n1.5 -2 0 3 4.25 1 7\n2 2 0 -1 4 1 7\n";
        let scans = parse_dataset(text, "mem").unwrap();
        assert_eq!(scans.len(), 1);
        assert_eq!(scans[0].len(), 3);
        assert_eq!(scans[0].gt[1], PanopticLabel::new(SemanticClass::Car, 7));
        assert_eq!(write_dataset(&scans).unwrap(), text);
    }

    #[test]
    fn rejects_nonzero_z_naming_the_point() {
        let text = "#radfiner-scans v1\nscan a 2\n0 0 0 1 2 0 0\n1 1 0.5 1 2 0 0\n";
        let err = parse_dataset(text, "mem").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("scan `a`") && msg.contains("point 1"), "{msg}");
    }

    #[test]
    fn malformed_field_names_line_and_field() {
        let text = "#radfiner-scans v1\nscan a 1\n0 0 0 abc 2 0 0\n";
        match parse_dataset(text, "mem").unwrap_err() {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "rcs");
            }
            e => panic!("unexpected {e}"),
        }
        let short = "#radfiner-scans v1\nscan a 2\n0 0 0 1 2 0 0\n";
        assert!(matches!(parse_dataset(short, "mem"), Err(Error::Parse { line: 4, .. })));
        assert!(parse_dataset("#radfiner-scans v2\n", "mem").is_err());
    }

    #[test]
    fn empty_dataset_is_header_only() {
        assert_eq!(write_dataset(&[]).unwrap(), "#radfiner-scans v1\n");
        assert!(parse_dataset("#radfiner-scans v1\n", "mem").unwrap().is_empty());
    }

    #[test]
    fn duplicate_scan_ids_are_rejected() {
        let s = tiny_scan();
        assert!(write_dataset(&[s.clone(), s]).is_err());
    }

    #[test]
    fn prediction_files_round_trip() {
        let scan = tiny_scan();
        let pred = scan.gt_prediction();
        let text = write_predictions(std::slice::from_ref(&pred)).unwrap();
        assert_eq!(text, "#radfiner-pred v1\nscan t0 3\n1 1\n0 0\n1 1\n");
        assert_eq!(parse_predictions(&text, "mem").unwrap(), vec![pred]);
        let pan = scan.gt_panoptic();
        let text = write_panoptic(std::slice::from_ref(&pan)).unwrap();
        assert_eq!(text, "#radfiner-pred v1\nscan t0 3\n1 1 1\n0 0 0\n1 1 1\n");
        assert_eq!(parse_panoptic(&text, "mem").unwrap(), vec![pan]);
        assert!(parse_panoptic("#radfiner-pred v1\nscan t0 1\n1 1\n", "mem").is_err());
        assert!(parse_predictions("#radfiner-pred v1\nscan t0 1\n0 4\n", "mem").is_err());
    }
}
