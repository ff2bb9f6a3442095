//! Trainable occlusion mask over the canonical edge vector.
//!
//! One logit per unordered edge; the effective mask value is
//! `sigmoid(logit)` while training and 0/1 after binarization. Since each
//! edge parameter is shared by `(i, j)` and `(j, i)`, the mask is symmetric by
//! construction and the diagonal is never used.

use std::fmt::Display;
use std::io::Write;
use std::path::Path;

use crate::autodiff::{sigmoid, Tape, Tensor, Var};
use crate::data::{edge_count, edge_pair, ConnectivityMatrix, DataError};
use crate::nn::{Module, ModelError};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub enum MaskMode {
    Continuous,
    Binary { kept: Vec<usize>, occlusion_ratio: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMask<T> {
    k: usize,
    logits: Tensor<T>,
    mode: MaskMode,
}

/// Tape handles for one forward pass through the mask.
#[derive(Clone, Copy, Debug)]
pub struct MaskVars {
    /// Present only in continuous mode.
    pub logits: Option<Var>,
    /// Effective mask values, shape `[1, E]`.
    pub values: Var,
}

/// Number of edges kept at a given occlusion ratio: `E - floor(ratio * E)`.
pub fn kept_count(edges: usize, ratio: f64) -> usize {
    // the slack absorbs decimal representation error, e.g. 0.29 * 100
    let occluded = ((ratio * edges as f64) + 1e-9).floor() as usize;
    edges - occluded.min(edges)
}

/// Indices of the `keep` largest scores, ties going to the lower index,
/// returned in ascending index order.
pub fn top_edges(scores: &[f64], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order.into_iter().take(keep).collect();
    kept.sort_unstable();
    kept
}

impl<T: Scalar> SparseMask<T> {
    /// Continuous mask with all logits 0, i.e. every mask value 0.5.
    pub fn new(k: usize) -> Self {
        assert!(k >= 2, "a mask needs at least two parcels");
        Self {
            k,
            logits: Tensor::zeros(vec![edge_count(k)]).with_grad(),
            mode: MaskMode::Continuous,
        }
    }

    pub fn from_logits(k: usize, logits: Vec<T>) -> Result<Self, ModelError> {
        let e = edge_count(k);
        if logits.len() != e || e == 0 {
            return Err(ModelError::Length {
                what: "mask logits",
                expected: e,
                actual: logits.len(),
            });
        }
        Ok(Self {
            k,
            logits: Tensor::vector(logits).with_grad(),
            mode: MaskMode::Continuous,
        })
    }

    /// Binary mask keeping exactly `kept` (edge indices).
    pub fn fixed(k: usize, mut kept: Vec<usize>, occlusion_ratio: f64) -> Result<Self, ModelError> {
        let e = edge_count(k);
        kept.sort_unstable();
        kept.dedup();
        if let Some(&bad) = kept.iter().find(|&&i| i >= e) {
            return Err(ModelError::Length {
                what: "kept edge index",
                expected: e,
                actual: bad,
            });
        }
        let mut mask = Self::new(k);
        mask.logits.set_requires_grad(false);
        mask.mode = MaskMode::Binary { kept, occlusion_ratio };
        Ok(mask)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn edge_count(&self) -> usize {
        edge_count(self.k)
    }

    pub fn mode(&self) -> &MaskMode {
        &self.mode
    }

    pub fn is_binary(&self) -> bool {
        matches!(self.mode, MaskMode::Binary { .. })
    }

    pub fn logits(&self) -> &Tensor<T> {
        &self.logits
    }

    pub fn kept_edges(&self) -> Option<&[usize]> {
        match &self.mode {
            MaskMode::Binary { kept, .. } => Some(kept),
            MaskMode::Continuous => None,
        }
    }

    pub fn occlusion_ratio(&self) -> Option<f64> {
        match &self.mode {
            MaskMode::Binary { occlusion_ratio, .. } => Some(*occlusion_ratio),
            MaskMode::Continuous => None,
        }
    }

    /// Effective per-edge mask values.
    pub fn values(&self) -> Vec<T> {
        match &self.mode {
            MaskMode::Continuous => self.logits.values().iter().map(|&l| sigmoid(l)).collect(),
            MaskMode::Binary { kept, .. } => {
                let mut v = vec![T::zero(); self.edge_count()];
                for &e in kept {
                    v[e] = T::one();
                }
                v
            }
        }
    }

    /// `x' = m ⊙ x` on the canonical edge vector.
    pub fn apply(&self, x: &ConnectivityMatrix) -> Result<Vec<T>, ModelError> {
        if x.k() != self.k {
            return Err(ModelError::KMismatch {
                expected: self.k,
                actual: x.k(),
            });
        }
        let edges: Vec<T> = x.edges().into_iter().map(T::of).collect();
        self.apply_edges(&edges)
    }

    pub fn apply_edges(&self, edges: &[T]) -> Result<Vec<T>, ModelError> {
        if edges.len() != self.edge_count() {
            return Err(ModelError::Length {
                what: "edge vector",
                expected: self.edge_count(),
                actual: edges.len(),
            });
        }
        Ok(self.values().iter().zip(edges).map(|(&m, &x)| m * x).collect())
    }

    /// ElasticNet penalty over the unordered-edge mask values.
    pub fn elasticnet_penalty(&self, lambda_mix: T) -> Result<T, ModelError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape)?;
        let p = elasticnet_on_tape(&mut tape, &vars, lambda_mix)?;
        Ok(tape.scalar(p))
    }

    /// Keeps the `E - floor(ratio * E)` edges with the largest mask values.
    pub fn binarize(&self, occlusion_ratio: f64) -> Result<Self, ModelError> {
        if self.is_binary() {
            return Err(ModelError::BinaryMask("binarize"));
        }
        if !(0.0..1.0).contains(&occlusion_ratio) {
            return Err(ModelError::InvalidRatio(occlusion_ratio));
        }
        // logits rank identically to sigmoid values without saturating
        let scores: Vec<f64> = self.logits.values().iter().map(|v| v.to_f64_lossy()).collect();
        let kept = top_edges(&scores, kept_count(scores.len(), occlusion_ratio));
        Ok(Self {
            k: self.k,
            logits: {
                let mut l = self.logits.clone();
                l.set_requires_grad(false);
                l.clear_grad();
                l
            },
            mode: MaskMode::Binary { kept, occlusion_ratio },
        })
    }

    /// Binary mask with an explicit kept set that retains these logits.
    pub fn with_binary(&self, kept: Vec<usize>, occlusion_ratio: f64) -> Result<Self, ModelError> {
        let mut out = Self::fixed(self.k, kept, occlusion_ratio)?;
        out.logits = self.logits.clone();
        out.logits.set_requires_grad(false);
        out.logits.clear_grad();
        Ok(out)
    }

    /// Records the mask on a tape. In continuous mode the logits become a
    /// trainable leaf; in binary mode the 0/1 values are a constant.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<MaskVars, ModelError> {
        let e = self.edge_count();
        match self.mode {
            MaskMode::Continuous => {
                let logits = tape.leaf(&self.logits);
                let s = tape.sigmoid(logits)?;
                let values = tape.reshape(s, vec![1, e])?;
                Ok(MaskVars {
                    logits: Some(logits),
                    values,
                })
            }
            MaskMode::Binary { .. } => Ok(MaskVars {
                logits: None,
                values: tape.constant(vec![1, e], self.values())?,
            }),
        }
    }

    /// Sparsifies a `[B, E]` batch.
    pub fn apply_on_tape(tape: &mut Tape<T>, vars: &MaskVars, x: Var) -> Result<Var, ModelError> {
        Ok(tape.mul_rows(x, vars.values)?)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError>
    where
        T: Display,
    {
        let path = path.as_ref();
        let mut out = Vec::new();
        let values = self.values();
        let k = self.k;
        match &self.mode {
            MaskMode::Continuous => {
                writeln!(out, "i,j,m").unwrap();
                for (e, v) in values.iter().enumerate() {
                    let (i, j) = edge_pair(e, k);
                    writeln!(out, "{i},{j},{v}").unwrap();
                }
            }
            MaskMode::Binary { .. } => {
                writeln!(out, "i,j,kept").unwrap();
                for (e, v) in values.iter().enumerate() {
                    let (i, j) = edge_pair(e, k);
                    writeln!(out, "{i},{j},{}", u8::from(*v > T::zero())).unwrap();
                }
            }
        }
        std::fs::write(path, out).map_err(|e| DataError::io(path, e))
    }
}

/// Reads an `i,j,kept` CSV written by [`SparseMask::write_csv`].
pub fn read_binary_mask_csv(path: impl AsRef<Path>) -> Result<SparseMask<f64>, DataError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::parse(path, e))?;
    let headers = reader.headers().map_err(|e| DataError::parse(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["i", "j", "kept"] {
        return Err(DataError::parse(path, "expected header `i,j,kept`"));
    }
    let mut rows = Vec::new();
    for rec in reader.deserialize::<(usize, usize, u8)>() {
        rows.push(rec.map_err(|e| DataError::parse(path, e))?);
    }
    let k = rows.iter().map(|&(i, j, _)| i.max(j) + 1).max().unwrap_or(0);
    if rows.len() != edge_count(k) {
        return Err(DataError::parse(
            path,
            format!("{} rows, expected {} for k={k}", rows.len(), edge_count(k)),
        ));
    }
    let mut kept = Vec::new();
    for &(i, j, flag) in &rows {
        if i >= j {
            return Err(DataError::parse(path, format!("row ({i},{j}) is not an upper-triangle pair")));
        }
        if flag > 1 {
            return Err(DataError::parse(path, format!("kept flag {flag} is not 0/1")));
        }
        if flag == 1 {
            kept.push(crate::data::edge_index(i, j, k));
        }
    }
    let e = edge_count(k);
    let ratio = (e - kept.len()) as f64 / e as f64;
    SparseMask::fixed(k, kept, ratio).map_err(|err| DataError::parse(path, err))
}

/// `λ Σ|m| + (1-λ)/2 Σ m²` over the mask values.
pub fn elasticnet_on_tape<T: Scalar>(tape: &mut Tape<T>, vars: &MaskVars, lambda_mix: T) -> Result<Var, ModelError> {
    if vars.logits.is_none() {
        return Err(ModelError::BinaryMask("elasticnet penalty"));
    }
    elasticnet_of_values(tape, vars.values, lambda_mix)
}

/// ElasticNet of arbitrary values on a tape.
pub fn elasticnet_of_values<T: Scalar>(tape: &mut Tape<T>, values: Var, lambda_mix: T) -> Result<Var, ModelError> {
    if !(lambda_mix >= T::zero() && lambda_mix <= T::one()) {
        return Err(ModelError::InvalidMix(lambda_mix.to_f64_lossy()));
    }
    let abs = tape.abs(values)?;
    let l1 = tape.sum(abs)?;
    let sq = tape.square(values)?;
    let l2 = tape.sum(sq)?;
    let l1 = tape.scale(l1, lambda_mix)?;
    let l2 = tape.scale(l2, (T::one() - lambda_mix) / T::of(2.0))?;
    Ok(tape.add(l1, l2)?)
}

impl<T: Scalar> Module<T> for SparseMask<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        match self.mode {
            MaskMode::Continuous => vec![("mask.logits".into(), &self.logits)],
            MaskMode::Binary { .. } => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        match self.mode {
            MaskMode::Continuous => vec![("mask.logits".into(), &mut self.logits)],
            MaskMode::Binary { .. } => Vec::new(),
        }
    }
}
