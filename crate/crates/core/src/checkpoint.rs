//! Single-file checkpoints of a trained pipeline.
//!
//! Layout:
//!
//! ```text
//! SPARG-CHECKPOINT v1\n
//! <header: one line of JSON>\n
//! <payload: little-endian f64 values, tensors back to back>
//! ```
//!
//! The header carries the training configuration, the pipeline layout and a
//! tensor table (`name`, `shape`, `offset`, `len`, offsets counted in values).
//! Tensors are stored row-major. The training history is not part of the
//! checkpoint; it is written next to it as `history.csv`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::gcn::{Classifier, FcnParams, GcnParams};
use crate::mask::{MaskMode, SparseMask};
use crate::nn::{ModelError, Module};
use crate::train::{History, MethodVariant, Model, TrainConfig, TrainedModel};
use crate::vae::VaeParams;

pub const MAGIC: &str = "SPARG-CHECKPOINT v1";
pub const EXTENSION: &str = "ckpt";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn format_err(path: &Path, detail: impl Into<String>) -> CheckpointError {
    CheckpointError::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Gcn,
    Fcn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MaskHeader {
    Continuous,
    Binary { kept: Vec<usize>, occlusion_ratio: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub variant: MethodVariant,
    pub config: TrainConfig,
    pub fold: usize,
    pub best_epoch: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub k: usize,
    pub classifier: ClassifierKind,
    /// Latent width of the VAE, absent for pipelines without one.
    pub latent_dim: Option<usize>,
    pub mask: Option<MaskHeader>,
    pub tensors: Vec<TensorEntry>,
}

/// Appends `.ckpt` unless the path already ends with it.
pub fn with_extension(path: impl AsRef<Path>) -> PathBuf {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == EXTENSION) {
        path.to_path_buf()
    } else {
        let mut s = path.as_os_str().to_owned();
        s.push(".");
        s.push(EXTENSION);
        PathBuf::from(s)
    }
}

/// `path` if it exists, else `path.ckpt`.
pub fn resolve(path: impl AsRef<Path>) -> PathBuf {
    let path = path.as_ref();
    if path.is_file() {
        path.to_path_buf()
    } else {
        with_extension(path)
    }
}

fn named_tensors(model: &Model) -> Vec<(String, &Tensor<f64>)> {
    let mut out = Vec::new();
    if let Some(m) = &model.mask {
        out.push(("mask.logits".to_string(), m.logits()));
    }
    if let Some(v) = &model.vae {
        out.extend(v.params());
    }
    out.extend(model.classifier.params());
    out
}

pub fn encode(trained: &TrainedModel) -> Vec<u8> {
    let model = &trained.model;
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0;
    for (name, t) in named_tensors(model) {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
            len: t.numel(),
        });
        offset += t.numel();
        for v in t.values() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        variant: trained.variant,
        config: trained.config.clone(),
        fold: trained.fold,
        best_epoch: trained.best_epoch,
        initial_loss: trained.initial_loss,
        final_loss: trained.final_loss,
        k: model.k,
        classifier: match model.classifier {
            Classifier::Gcn(_) => ClassifierKind::Gcn,
            Classifier::Fcn(_) => ClassifierKind::Fcn,
        },
        latent_dim: model.vae.as_ref().map(|v| v.latent()),
        mask: model.mask.as_ref().map(|m| match m.mode() {
            MaskMode::Continuous => MaskHeader::Continuous,
            MaskMode::Binary { kept, occlusion_ratio } => MaskHeader::Binary {
                kept: kept.clone(),
                occlusion_ratio: *occlusion_ratio,
            },
        }),
        tensors,
    };
    let mut out = Vec::with_capacity(payload.len() + 4096);
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(serde_json::to_string(&header).expect("header serializes").as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&payload);
    out
}

/// Writes `trained` to `path` (with `.ckpt` appended if missing) and returns
/// the path written.
pub fn save(trained: &TrainedModel, path: impl AsRef<Path>) -> Result<PathBuf, CheckpointError> {
    let path = with_extension(path);
    std::fs::write(&path, encode(trained)).map_err(|source| CheckpointError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn split_line<'a>(bytes: &'a [u8], path: &Path, what: &str) -> Result<(&'a [u8], &'a [u8]), CheckpointError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err(path, format!("missing {what} line")))?;
    Ok((&bytes[..nl], &bytes[nl + 1..]))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(Header, TrainedModel), CheckpointError> {
    let (magic, rest) = split_line(bytes, path, "magic")?;
    if magic != MAGIC.as_bytes() {
        return Err(format_err(path, "not a checkpoint (bad magic line)"));
    }
    let (header_line, payload) = split_line(rest, path, "header")?;
    let header: Header =
        serde_json::from_slice(header_line).map_err(|e| format_err(path, format!("header: {e}")))?;
    if payload.len() % 8 != 0 {
        return Err(format_err(path, "payload is not a whole number of f64 values"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let mut model = skeleton(&header).map_err(|e| format_err(path, e.to_string()))?;
    let expected: Vec<(String, Vec<usize>)> = named_tensors(&model)
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != header.tensors.len() {
        return Err(format_err(
            path,
            format!("{} tensors stored, the layout needs {}", header.tensors.len(), expected.len()),
        ));
    }
    let mut fetched = Vec::with_capacity(expected.len());
    for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
        if &entry.name != name || &entry.shape != shape || entry.len != shape.iter().product::<usize>() {
            return Err(format_err(
                path,
                format!("tensor `{}` {:?} does not match expected `{name}` {shape:?}", entry.name, entry.shape),
            ));
        }
        let data = values
            .get(entry.offset..entry.offset + entry.len)
            .ok_or_else(|| format_err(path, format!("tensor `{name}` runs past the payload")))?;
        fetched.push(data.to_vec());
    }
    if let Some(last) = header.tensors.last() {
        if last.offset + last.len != values.len() {
            return Err(format_err(path, "payload has trailing values"));
        }
    }

    let mut data = fetched.into_iter();
    if let Some(mask) = model.mask.take() {
        let logits = data.next().expect("mask tensor listed");
        let restored = SparseMask::from_logits(header.k, logits)?;
        model.mask = Some(match mask.mode() {
            MaskMode::Continuous => restored,
            MaskMode::Binary { kept, occlusion_ratio } => restored.with_binary(kept.clone(), *occlusion_ratio)?,
        });
    }
    let mut rest: Vec<(String, &mut Tensor<f64>)> = Vec::new();
    if let Some(v) = model.vae.as_mut() {
        rest.extend(v.params_mut());
    }
    rest.extend(model.classifier.params_mut());
    for ((_, t), v) in rest.into_iter().zip(data) {
        t.values_mut().copy_from_slice(&v);
    }

    let trained = TrainedModel {
        variant: header.variant,
        config: header.config.clone(),
        fold: header.fold,
        model,
        history: History::default(),
        best_epoch: header.best_epoch,
        initial_loss: header.initial_loss,
        final_loss: header.final_loss,
    };
    Ok((header, trained))
}

fn skeleton(h: &Header) -> Result<Model, ModelError> {
    if h.k < 2 {
        return Err(ModelError::Length {
            what: "k",
            expected: 2,
            actual: h.k,
        });
    }
    let e = crate::data::edge_count(h.k);
    let classifier = match h.classifier {
        ClassifierKind::Gcn => Classifier::Gcn(GcnParams::zeros(h.k)),
        ClassifierKind::Fcn => Classifier::Fcn(FcnParams::zeros(e)),
    };
    let mask = match &h.mask {
        None => None,
        Some(MaskHeader::Continuous) => Some(SparseMask::new(h.k)),
        Some(MaskHeader::Binary { kept, occlusion_ratio }) => Some(SparseMask::fixed(h.k, kept.clone(), *occlusion_ratio)?),
    };
    Ok(Model {
        k: h.k,
        mask,
        vae: h.latent_dim.map(|d| VaeParams::zeros(e, d)),
        classifier,
    })
}

/// Loads `path`, or `path.ckpt` when `path` itself does not exist.
pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel, CheckpointError> {
    load_with_header(path).map(|(_, t)| t)
}

pub fn load_with_header(path: impl AsRef<Path>) -> Result<(Header, TrainedModel), CheckpointError> {
    let path = resolve(path);
    let bytes = std::fs::read(&path).map_err(|source| CheckpointError::Io {
        path: path.clone(),
        source,
    })?;
    decode(&bytes, &path)
}
