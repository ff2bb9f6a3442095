use crate::data::DataError;

/// Tolerance for the unit-diagonal and symmetry checks.
pub const MATRIX_TOLERANCE: f64 = 1e-9;

/// Number of unordered parcel pairs, `k(k-1)/2`.
pub fn edge_count(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

/// Position of pair `(i, j)`, `i < j`, in the canonical edge order
/// (sorted by `i`, then `j`).
pub fn edge_index(i: usize, j: usize, k: usize) -> usize {
    debug_assert!(i < j && j < k);
    // edges before row i: sum_{r<i} (k-1-r)
    i * (2 * k - i - 1) / 2 + (j - i - 1)
}

/// Inverse of [`edge_index`].
pub fn edge_pair(e: usize, k: usize) -> (usize, usize) {
    let mut i = 0;
    let mut start = 0;
    loop {
        let row = k - 1 - i;
        if e < start + row {
            return (i, i + 1 + (e - start));
        }
        start += row;
        i += 1;
    }
}

/// Symmetric `k x k` Pearson-correlation matrix with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectivityMatrix {
    k: usize,
    entries: Vec<f64>,
}

impl ConnectivityMatrix {
    /// Validates symmetry, the unit diagonal and the `[-1, 1]` range.
    /// `subject` only labels the error.
    pub fn new(k: usize, entries: Vec<f64>, subject: &str) -> Result<Self, DataError> {
        let bad = |reason: String| DataError::InvalidMatrix {
            subject: subject.to_string(),
            reason,
        };
        if k == 0 || entries.len() != k * k {
            return Err(bad(format!("expected {} entries for k={k}, got {}", k * k, entries.len())));
        }
        for i in 0..k {
            let d = entries[i * k + i];
            if d.is_nan() || (d - 1.0).abs() > MATRIX_TOLERANCE {
                return Err(bad(format!("diagonal entry ({i},{i}) is {d}, expected 1")));
            }
            for j in 0..k {
                let v = entries[i * k + j];
                if i == j {
                    continue;
                }
                if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                    return Err(bad(format!("entry ({i},{j}) = {v} is outside [-1, 1]")));
                }
                if j > i {
                    let w = entries[j * k + i];
                    if (v - w).abs() > MATRIX_TOLERANCE {
                        return Err(bad(format!("asymmetric: ({i},{j}) = {v} but ({j},{i}) = {w}")));
                    }
                }
            }
        }
        Ok(Self { k, entries })
    }

    /// Builds a matrix from its canonical edge vector; the diagonal is set to 1.
    pub fn from_edges(edges: &[f64], k: usize, subject: &str) -> Result<Self, DataError> {
        let mut entries = unflatten_upper(edges, k)?;
        for i in 0..k {
            entries[i * k + i] = 1.0;
        }
        Self::new(k, entries, subject)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.k + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn edges(&self) -> Vec<f64> {
        flatten_upper(self)
    }
}

/// Upper-triangle entries in canonical order, length `k(k-1)/2`.
pub fn flatten_upper(matrix: &ConnectivityMatrix) -> Vec<f64> {
    let k = matrix.k;
    let mut out = Vec::with_capacity(edge_count(k));
    for i in 0..k {
        out.extend_from_slice(&matrix.entries[i * k + i + 1..(i + 1) * k]);
    }
    out
}

/// Dense row-major symmetric `k x k` matrix from an edge vector, zero diagonal.
pub fn unflatten_upper(edges: &[f64], k: usize) -> Result<Vec<f64>, DataError> {
    let expected = edge_count(k);
    if edges.len() != expected {
        return Err(DataError::EdgeLength {
            expected,
            actual: edges.len(),
        });
    }
    let mut out = vec![0.0; k * k];
    let mut e = 0;
    for i in 0..k {
        for j in (i + 1)..k {
            out[i * k + j] = edges[e];
            out[j * k + i] = edges[e];
            e += 1;
        }
    }
    Ok(out)
}
