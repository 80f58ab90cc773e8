use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::attention::PadMode;
use crate::error::{Error, Result};

/// Input feature width `(x, y, z, rcs, doppler)`.
pub const D_IN: usize = 5;

/// Normalization inside the embedding and head MLPs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlpNorm {
    Batch,
    None,
}

/// Activation between the two embedding linears.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedAct {
    Gelu,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub d1: usize,
    pub d2: usize,
    pub head: [usize; 3],
    pub classes: usize,
    pub radius: f64,
    pub nmax: usize,
    pub seed: u64,
    pub attn_pad: PadMode,
    pub mlp_norm: MlpNorm,
    pub embed_act: EmbedAct,
}

impl NetworkConfig {
    fn with_widths(d1: usize, d2: usize, head: [usize; 3]) -> Self {
        NetworkConfig {
            d1,
            d2,
            head,
            classes: 6,
            radius: 5.0,
            nmax: 24,
            seed: 0,
            attn_pad: PadMode::Mask,
            mlp_norm: MlpNorm::Batch,
            embed_act: EmbedAct::Gelu,
        }
    }

    /// 64/256 blocks with a 128/64/32 head.
    pub fn paper() -> Self {
        Self::with_widths(64, 256, [128, 64, 32])
    }

    pub fn desk() -> Self {
        Self::with_widths(32, 64, [32, 16, 8])
    }

    pub fn toy() -> Self {
        let mut c = Self::with_widths(8, 16, [8, 4, 2]);
        c.seed = 1;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [("d1", self.d1), ("d2", self.d2), ("head1", self.head[0]), ("head2", self.head[1]), ("head3", self.head[2])];
        if let Some((k, _)) = widths.iter().find(|(_, w)| *w == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if self.classes < 2 {
            return Err(Error::Config("classes must be at least 2".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("radius must be positive, got {}", self.radius)));
        }
        if self.nmax == 0 {
            return Err(Error::Config("nmax must be at least 1".into()));
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment. Keys not given keep
    /// the desk defaults; `head` widths not given follow `d2/2, d2/4, d2/8`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::desk();
        let mut head: [Option<usize>; 3] = [None; 3];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1)))?;
            cfg.set(key.trim(), value.trim(), &mut head)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.finish_head(head);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies one override; used for config lines and command-line flags.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let mut head = [Some(self.head[0]), Some(self.head[1]), Some(self.head[2])];
        self.set(key, value, &mut head)?;
        self.finish_head(head);
        self.validate()
    }

    fn finish_head(&mut self, head: [Option<usize>; 3]) {
        for (k, h) in head.iter().enumerate() {
            self.head[k] = h.unwrap_or(self.d2 >> (k + 1)).max(1);
        }
    }

    fn set(&mut self, key: &str, value: &str, head: &mut [Option<usize>; 3]) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
        }
        match key {
            "d1" => self.d1 = num(key, value)?,
            "d2" => self.d2 = num(key, value)?,
            "head1" => head[0] = Some(num(key, value)?),
            "head2" => head[1] = Some(num(key, value)?),
            "head3" => head[2] = Some(num(key, value)?),
            "classes" => self.classes = num(key, value)?,
            "radius" => self.radius = num(key, value)?,
            "nmax" => self.nmax = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "attn_pad" => self.attn_pad = value.parse()?,
            "mlp_norm" => {
                self.mlp_norm = match value {
                    "batch" => MlpNorm::Batch,
                    "none" => MlpNorm::None,
                    _ => return Err(Error::Config(format!("mlp_norm must be batch or none, got `{value}`"))),
                }
            }
            "embed_act" => {
                self.embed_act = match value {
                    "gelu" => EmbedAct::Gelu,
                    "none" => EmbedAct::None,
                    _ => return Err(Error::Config(format!("embed_act must be gelu or none, got `{value}`"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown network key `{key}`"))),
        }
        Ok(())
    }

    /// Every key, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "d1={}", self.d1);
        let _ = writeln!(s, "d2={}", self.d2);
        for (k, h) in self.head.iter().enumerate() {
            let _ = writeln!(s, "head{}={h}", k + 1);
        }
        let _ = writeln!(s, "classes={}", self.classes);
        let _ = writeln!(s, "radius={:?}", self.radius);
        let _ = writeln!(s, "nmax={}", self.nmax);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "attn_pad={}", self.attn_pad);
        let _ = writeln!(
            s,
            "mlp_norm={}",
            match self.mlp_norm {
                MlpNorm::Batch => "batch",
                MlpNorm::None => "none",
            }
        );
        let _ = writeln!(
            s,
            "embed_act={}",
            match self.embed_act {
                EmbedAct::Gelu => "gelu",
                EmbedAct::None => "none",
            }
        );
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Compact shape token such as `64x256`.
    pub fn shape_token(&self) -> String {
        format!("{}x{}", self.d1, self.d2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for cfg in [NetworkConfig::paper(), NetworkConfig::desk(), NetworkConfig::toy()] {
            assert_eq!(NetworkConfig::parse(&cfg.to_text()).unwrap(), cfg);
        }
    }

    #[test]
    fn head_defaults_follow_d2() {
        let cfg = NetworkConfig::parse("d1=64\nd2=256 # paper\n").unwrap();
        assert_eq!(cfg.head, [128, 64, 32]);
        let cfg = NetworkConfig::parse("d2=64\nhead1=40").unwrap();
        assert_eq!(cfg.head, [40, 16, 8]);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(NetworkConfig::parse("d1").is_err());
        assert!(NetworkConfig::parse("d1=abc").is_err());
        assert!(NetworkConfig::parse("width=3").is_err());
        assert!(NetworkConfig::parse("classes=1").is_err());
        assert!(NetworkConfig::parse("radius=-1").is_err());
        assert!(NetworkConfig::parse("attn_pad=both").is_err());
    }
}
