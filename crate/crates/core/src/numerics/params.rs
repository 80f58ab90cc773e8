use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "#radfiner-ckpt v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learned tensor together with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Owns every learned parameter and every non-learned buffer (normalization
/// running statistics) of a model.
///
/// Names are unique across parameters and buffers; iteration follows
/// insertion order, serialization follows name order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.by_name.contains_key(name) && !self.buffers.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) {
        assert!(
            !self.by_name.contains_key(name) && !self.buffers.contains_key(name),
            "duplicate buffer name {name}"
        );
        self.buffers.insert(name.to_string(), value);
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.buffers.get_mut(name)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of learned scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds another store's gradients into this one. Both stores must have
    /// been built by the same constructor.
    pub fn merge_grads(&mut self, other: &ParamStore) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::Shape("parameter stores differ in size".into()));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.grad.shape() != b.grad.shape() {
                return Err(Error::Shape(format!("gradient shape mismatch for {}", a.name)));
            }
            a.grad.add_assign(&b.grad);
        }
        Ok(())
    }

    /// Serializes parameters and buffers, sorted by name.
    pub fn to_checkpoint_string(&self) -> String {
        let mut entries: BTreeMap<&str, &Tensor> = BTreeMap::new();
        for p in &self.params {
            entries.insert(&p.name, &p.value);
        }
        for (name, t) in &self.buffers {
            entries.insert(name, t);
        }
        let mut out = String::new();
        out.push_str(CHECKPOINT_HEADER);
        out.push('\n');
        for (name, t) in entries {
            out.push_str(name);
            out.push(' ');
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            out.push_str(&dims.join("x"));
            for v in t.data() {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    /// Overwrites values of an already-constructed store from checkpoint
    /// text. Every name must be known and every shape must match.
    pub fn load_checkpoint_str(&mut self, text: &str, origin: &str) -> Result<()> {
        let perr = |line: usize, field: &str, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            field: field.to_string(),
            msg,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == CHECKPOINT_HEADER => {}
            _ => return Err(perr(1, "header", format!("expected `{CHECKPOINT_HEADER}`"))),
        }
        let mut seen = 0usize;
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut toks = line.split(' ');
            let name = toks.next().unwrap_or_default();
            let shape_tok = toks
                .next()
                .ok_or_else(|| perr(lineno, "shape", "missing".into()))?;
            let shape: Vec<usize> = shape_tok
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| perr(lineno, "shape", e.to_string()))?;
            let values: Vec<f64> = toks
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| perr(lineno, "values", e.to_string()))?;
            let t = Tensor::new(shape, values).map_err(|e| perr(lineno, "values", e.to_string()))?;
            let target = if let Some(id) = self.by_name.get(name) {
                &mut self.params[id.0].value
            } else if let Some(b) = self.buffers.get_mut(name) {
                b
            } else {
                return Err(perr(lineno, "name", format!("unknown tensor `{name}`")));
            };
            if target.shape() != t.shape() {
                return Err(perr(
                    lineno,
                    "shape",
                    format!("`{name}` expects {:?}, file has {:?}", target.shape(), t.shape()),
                ));
            }
            *target = t;
            seen += 1;
        }
        let expected = self.params.len() + self.buffers.len();
        if seen != expected {
            return Err(perr(
                text.lines().count(),
                "count",
                format!("checkpoint holds {seen} tensors, model has {expected}"),
            ));
        }
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.load_checkpoint_str(&text, &path.display().to_string())
    }
}
