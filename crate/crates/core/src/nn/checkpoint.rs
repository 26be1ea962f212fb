//! Portable text container for network parameters.
//!
//! ```text
//! aiig-checkpoint 1
//! arch td3
//! seed 42
//! step 1000
//! meta arch.actor dense:7-64-64-6:softmax
//! tensor actor.l0.weight 64x7
//! 0.0123 -0.456 ...
//! end
//! ```
//!
//! Values are printed in shortest round-trip form, so save/load is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{DenseNet, GruNet, NnError};

const MAGIC: &str = "aiig-checkpoint 1";
const PER_LINE: usize = 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("checkpoint is missing `{0}`")]
    Missing(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub label: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: String,
    pub seed: u64,
    pub step: u64,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(arch: impl Into<String>, seed: u64, step: u64) -> Self {
        Self { arch: arch.into(), seed, step, meta: BTreeMap::new(), tensors: Vec::new() }
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.insert(key.into(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str, CheckpointError> {
        self.meta.get(key).map(String::as_str).ok_or_else(|| CheckpointError::Missing(key.to_string()))
    }

    pub fn tensor(&self, label: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|t| t.label == label)
            .ok_or_else(|| CheckpointError::Missing(label.to_string()))
    }

    fn push_blocks(&mut self, prefix: &str, blocks: Vec<(String, Vec<usize>, &[f64])>) {
        for (suffix, shape, data) in blocks {
            self.tensors.push(Tensor { label: format!("{prefix}.{suffix}"), shape, data: data.to_vec() });
        }
    }

    fn gather(&self, prefix: &str, blocks: Vec<(String, Vec<usize>, &[f64])>) -> Result<Vec<f64>, CheckpointError> {
        let mut params = Vec::new();
        for (suffix, shape, _) in blocks {
            let label = format!("{prefix}.{suffix}");
            let t = self.tensor(&label)?;
            if t.shape != shape {
                return Err(CheckpointError::Parse { line: 0, reason: format!("tensor {label} has shape {:?}, expected {shape:?}", t.shape) });
            }
            params.extend_from_slice(&t.data);
        }
        Ok(params)
    }

    pub fn push_dense(&mut self, prefix: &str, net: &DenseNet) {
        self.set_meta(format!("arch.{prefix}"), net.descriptor());
        self.push_blocks(prefix, net.tensors());
    }

    pub fn dense(&self, prefix: &str) -> Result<DenseNet, CheckpointError> {
        let shell = DenseNet::from_descriptor(self.meta(&format!("arch.{prefix}"))?)?;
        let params = self.gather(prefix, shell.tensors())?;
        Ok(DenseNet::from_params(shell.sizes(), shell.head(), params)?)
    }

    pub fn push_gru(&mut self, prefix: &str, net: &GruNet) {
        self.set_meta(format!("arch.{prefix}"), net.descriptor());
        self.push_blocks(prefix, net.tensors());
    }

    pub fn gru(&self, prefix: &str) -> Result<GruNet, CheckpointError> {
        let shell = GruNet::from_descriptor(self.meta(&format!("arch.{prefix}"))?)?;
        let params = self.gather(prefix, shell.tensors())?;
        Ok(GruNet::from_params(shell.input_size(), shell.hidden_size(), shell.output_size(), shell.head(), params)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        out.push_str(&format!("arch {}\nseed {}\nstep {}\n", self.arch, self.seed, self.step));
        for (k, v) in &self.meta {
            out.push_str(&format!("meta {k} {v}\n"));
        }
        for t in &self.tensors {
            let shape: Vec<String> = t.shape.iter().map(|s| s.to_string()).collect();
            out.push_str(&format!("tensor {} {}\n", t.label, shape.join("x")));
            for chunk in t.data.chunks(PER_LINE) {
                let line: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CheckpointError> {
        let err = |line: usize, reason: &str| CheckpointError::Parse { line: line + 1, reason: reason.to_string() };
        let mut lines = text.lines().enumerate().peekable();
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(err(0, "missing header")),
        }
        let mut arch = None;
        let mut seed = None;
        let mut step = None;
        let mut meta = BTreeMap::new();
        let mut tensors = Vec::new();
        let mut ended = false;
        while let Some((n, line)) = lines.next() {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "arch" => arch = Some(rest.to_string()),
                "seed" => seed = Some(rest.parse::<u64>().map_err(|_| err(n, "bad seed"))?),
                "step" => step = Some(rest.parse::<u64>().map_err(|_| err(n, "bad step"))?),
                "meta" => {
                    let (k, v) = rest.split_once(' ').ok_or_else(|| err(n, "meta needs key and value"))?;
                    meta.insert(k.to_string(), v.to_string());
                }
                "tensor" => {
                    let (label, shape) = rest.split_once(' ').ok_or_else(|| err(n, "tensor needs label and shape"))?;
                    let shape = shape
                        .split('x')
                        .map(|s| s.parse::<usize>().map_err(|_| err(n, "bad shape")))
                        .collect::<Result<Vec<_>, _>>()?;
                    let len: usize = shape.iter().product();
                    let mut data = Vec::with_capacity(len);
                    while data.len() < len {
                        let (m, values) = lines.next().ok_or_else(|| err(n, "truncated tensor"))?;
                        for v in values.split_ascii_whitespace() {
                            data.push(v.parse::<f64>().map_err(|_| err(m, "bad value"))?);
                        }
                    }
                    if data.len() != len {
                        return Err(err(n, "tensor length does not match its shape"));
                    }
                    tensors.push(Tensor { label: label.to_string(), shape, data });
                }
                "end" => {
                    ended = true;
                    break;
                }
                _ => return Err(err(n, "unknown record")),
            }
        }
        if !ended {
            return Err(CheckpointError::Missing("end".into()));
        }
        Ok(Self {
            arch: arch.ok_or_else(|| CheckpointError::Missing("arch".into()))?,
            seed: seed.ok_or_else(|| CheckpointError::Missing("seed".into()))?,
            step: step.ok_or_else(|| CheckpointError::Missing("step".into()))?,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}
