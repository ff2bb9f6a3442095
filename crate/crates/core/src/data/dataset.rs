use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ConnectivityMatrix, DataError};

/// Whether a subject comes from a site seen with labels or from a shifted site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Id,
    Ood,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: String,
    pub site: String,
    /// Class in {0, 1}; OOD subjects may carry one for scoring, but training
    /// never reads it.
    pub label: Option<u8>,
    pub domain: Domain,
    pub matrix: ConnectivityMatrix,
}

/// Ground-truth edge sets of a synthetic dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedEdges {
    pub informative: Vec<usize>,
    pub nuisance: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub k: usize,
    pub subjects: Vec<Subject>,
    pub planted: Option<PlantedEdges>,
}

impl Dataset {
    /// Checks uniform `k` and label values.
    pub fn new(k: usize, subjects: Vec<Subject>, planted: Option<PlantedEdges>) -> Result<Self, DataError> {
        for s in &subjects {
            if s.matrix.k() != k {
                return Err(DataError::MixedK {
                    subject: s.id.clone(),
                    expected: k,
                    found: s.matrix.k(),
                });
            }
            if let Some(l) = s.label {
                if l > 1 {
                    return Err(DataError::InvalidMatrix {
                        subject: s.id.clone(),
                        reason: format!("label {l} is not 0 or 1"),
                    });
                }
            }
        }
        Ok(Self { k, subjects, planted })
    }

    pub fn edge_count(&self) -> usize {
        super::edge_count(self.k)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.subjects.iter().position(|s| s.id == id)
    }

    /// Edge vectors of the given subjects, in order.
    pub fn edges_of(&self, indices: &[usize]) -> Vec<Vec<f64>> {
        indices.iter().map(|&i| self.subjects[i].matrix.edges()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub site: String,
    pub label: Option<u8>,
    /// Matrix file, relative to the manifest's directory unless absolute.
    pub path: String,
    pub split_hint: Domain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub k: usize,
    pub subjects: Vec<ManifestEntry>,
}

const MANIFEST_FILE: &str = "manifest.json";
const PLANTED_FILE: &str = "planted.json";

fn resolve_manifest(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

fn read_matrix(path: &Path, k: usize, subject: &str) -> Result<ConnectivityMatrix, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::parse(path, e))?;
    let mut entries = Vec::with_capacity(k * k);
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| DataError::parse(path, e))?;
        if record.len() != k {
            return Err(DataError::MixedK {
                subject: subject.to_string(),
                expected: k,
                found: record.len(),
            });
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| DataError::parse(path, format!("row {}: `{field}` is not a number", rows + 1)))?;
            entries.push(v);
        }
        rows += 1;
    }
    if rows != k {
        return Err(DataError::MixedK {
            subject: subject.to_string(),
            expected: k,
            found: rows,
        });
    }
    ConnectivityMatrix::new(k, entries, subject)
}

/// Loads a dataset from a manifest file, or from a directory holding `manifest.json`.
///
/// A `planted.json` beside the manifest, when present, supplies the
/// ground-truth edge sets of a synthetic dataset.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let manifest_path = resolve_manifest(manifest_path.as_ref());
    let text = fs::read_to_string(&manifest_path).map_err(|e| DataError::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DataError::parse(&manifest_path, e))?;
    if manifest.k == 0 {
        return Err(DataError::parse(&manifest_path, "k must be positive"));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let p = Path::new(&entry.path);
        let path = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let matrix = read_matrix(&path, manifest.k, &entry.id)?;
        subjects.push(Subject {
            id: entry.id.clone(),
            site: entry.site.clone(),
            label: entry.label,
            domain: entry.split_hint,
            matrix,
        });
    }
    let planted_path = base.join(PLANTED_FILE);
    let planted = if planted_path.is_file() {
        let text = fs::read_to_string(&planted_path).map_err(|e| DataError::io(&planted_path, e))?;
        Some(serde_json::from_str(&text).map_err(|e| DataError::parse(&planted_path, e))?)
    } else {
        None
    };
    Dataset::new(manifest.k, subjects, planted)
}

fn format_matrix(m: &ConnectivityMatrix) -> String {
    let k = m.k();
    let mut out = String::with_capacity(k * k * 8);
    for row in m.entries().chunks(k) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Writes `manifest.json`, one matrix file per subject under `matrices/`, and
/// `planted.json` when ground truth is known.
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<(), DataError> {
    let dir = dir.as_ref();
    let mdir = dir.join("matrices");
    fs::create_dir_all(&mdir).map_err(|e| DataError::io(&mdir, e))?;
    let mut entries = Vec::with_capacity(dataset.subjects.len());
    for s in &dataset.subjects {
        let rel = format!("matrices/{}.csv", s.id);
        let path = dir.join(&rel);
        fs::write(&path, format_matrix(&s.matrix)).map_err(|e| DataError::io(&path, e))?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            site: s.site.clone(),
            label: s.label,
            path: rel,
            split_hint: s.domain,
        });
    }
    let manifest = Manifest {
        k: dataset.k,
        subjects: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| DataError::io(&path, e))?;
    if let Some(planted) = &dataset.planted {
        let path = dir.join(PLANTED_FILE);
        let json = serde_json::to_string_pretty(planted).expect("planted edges serialize");
        fs::write(&path, json).map_err(|e| DataError::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_manifest(dir: &Path, k: usize, files: &[(&str, &str)]) {
        let subjects: Vec<ManifestEntry> = files
            .iter()
            .map(|(id, _)| ManifestEntry {
                id: id.to_string(),
                site: "a".into(),
                label: Some(0),
                path: format!("{id}.csv"),
                split_hint: Domain::Id,
            })
            .collect();
        for (id, body) in files {
            fs::write(dir.join(format!("{id}.csv")), body).unwrap();
        }
        let m = Manifest { k, subjects };
        fs::write(dir.join("manifest.json"), serde_json::to_string(&m).unwrap()).unwrap();
    }

    fn identity_csv(k: usize) -> String {
        (0..k)
            .map(|i| (0..k).map(|j| if i == j { "1" } else { "0" }).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn loads_valid_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let body = identity_csv(4);
        write_manifest(dir.path(), 4, &[("s1", &body), ("s2", &body)]);
        let d = load_dataset(dir.path()).unwrap();
        assert_eq!(d.subjects.len(), 2);
        assert_eq!(d.k, 4);
        assert!(d.planted.is_none());
    }

    #[test]
    fn asymmetric_matrix_names_subject() {
        let dir = tempfile::tempdir().unwrap();
        let body = "1,0.5,0,0\n0.4,1,0,0\n0,0,1,0\n0,0,0,1\n";
        write_manifest(dir.path(), 4, &[("bad-subject", body)]);
        let err = load_dataset(dir.path().join("manifest.json")).unwrap_err();
        assert!(matches!(err, DataError::InvalidMatrix { ref subject, .. } if subject == "bad-subject"));
    }

    #[test]
    fn mixed_k_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let big = identity_csv(64);
        let small = identity_csv(16);
        write_manifest(dir.path(), 64, &[("a", &big), ("b", &small)]);
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, DataError::MixedK { ref subject, .. } if subject == "b"));
    }
}
