//! Metrics and report artifacts: balanced accuracy, confusion matrices,
//! occlusion sweeps, network-level counts of kept edges, support recovery
//! on synthetic data, and SVG heatmaps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{edge_pair, DataError, ParcelNetworkMap};
use crate::mask::SparseMask;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("predictions ({predictions}) and labels ({labels}) differ in length")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("balanced accuracy needs both classes among the labels")]
    OneClass,
    #[error("label {0} is not a class in {{0, 1}}")]
    InvalidLabel(u8),
    #[error("{0} needs a binary mask")]
    ContinuousMask(&'static str),
    #[error("the planted edge set is empty")]
    EmptyPlanted,
    #[error("mask has k={mask}, parcel map covers {map} parcels")]
    MapSize { mask: usize, map: usize },
    #[error("matrix rows have unequal lengths")]
    Ragged,
}

fn check_labels(predictions: &[u8], labels: &[u8]) -> Result<(), EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&c| c > 1) {
        return Err(EvalError::InvalidLabel(bad));
    }
    Ok(())
}

/// 2x2 confusion matrix, `counts[true][predicted]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[usize; 2]; 2],
}

impl Confusion {
    pub fn new(predictions: &[u8], labels: &[u8]) -> Result<Self, EvalError> {
        check_labels(predictions, labels)?;
        let mut counts = [[0; 2]; 2];
        for (&p, &l) in predictions.iter().zip(labels) {
            counts[l as usize][p as usize] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

/// Mean of the per-class recalls.
pub fn balanced_accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64, EvalError> {
    let c = Confusion::new(predictions, labels)?;
    let mut sum = 0.0;
    for (class, row) in c.counts.iter().enumerate() {
        let n = row[0] + row[1];
        if n == 0 {
            return Err(EvalError::OneClass);
        }
        sum += row[class] as f64 / n as f64;
    }
    Ok(sum / 2.0)
}

/// One row of an occlusion sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub id_balacc: Option<f64>,
    pub ood_balacc: Option<f64>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("ratio,id_balacc,ood_balacc\n");
    for r in rows {
        writeln!(s, "{},{},{}", r.ratio, opt(r.id_balacc), opt(r.ood_balacc)).unwrap();
    }
    s
}

/// Counts of kept edges between networks, indexed by the sorted network names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkCounts {
    pub networks: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl NetworkCounts {
    /// Each kept edge counted once: the upper triangle plus the diagonal.
    pub fn total(&self) -> u64 {
        let n = self.networks.len();
        (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).map(|(a, b)| self.counts[a][b]).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("network_a,network_b,count\n");
        for (a, na) in self.networks.iter().enumerate() {
            for (b, nb) in self.networks.iter().enumerate() {
                writeln!(s, "{na},{nb},{}", self.counts[a][b]).unwrap();
            }
        }
        s
    }
}

/// Kept edges per network pair. Within-network edges land on the diagonal;
/// between-network edges are mirrored to both off-diagonal cells.
pub fn network_report(mask: &SparseMask<f64>, map: &ParcelNetworkMap) -> Result<NetworkCounts, ReportError> {
    let kept = mask.kept_edges().ok_or(EvalError::ContinuousMask("network report"))?;
    if map.len() < mask.k() {
        // surfaces the first parcel the map does not cover
        map.network(map.len())?;
    }
    let networks = map.network_names();
    let index: BTreeMap<&str, usize> = networks.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut counts = vec![vec![0u64; networks.len()]; networks.len()];
    for &e in kept {
        let (i, j) = edge_pair(e, mask.k());
        let a = index[map.network(i)?];
        let b = index[map.network(j)?];
        counts[a][b] += 1;
        if a != b {
            counts[b][a] += 1;
        }
    }
    Ok(NetworkCounts { networks, counts })
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Precision and recall of kept edges against a planted edge set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportMetrics {
    pub precision: f64,
    pub recall: f64,
    /// Set when no edge is kept; precision is then reported as 0.
    pub empty_kept: bool,
}

pub fn support_recovery(mask: &SparseMask<f64>, planted: &[usize]) -> Result<SupportMetrics, EvalError> {
    let kept = mask.kept_edges().ok_or(EvalError::ContinuousMask("support recovery"))?;
    support_of(kept, planted)
}

/// [`support_recovery`] on raw edge index sets.
pub fn support_of(kept: &[usize], planted: &[usize]) -> Result<SupportMetrics, EvalError> {
    if planted.is_empty() {
        return Err(EvalError::EmptyPlanted);
    }
    let planted: std::collections::BTreeSet<usize> = planted.iter().copied().collect();
    let kept: std::collections::BTreeSet<usize> = kept.iter().copied().collect();
    let hits = kept.intersection(&planted).count() as f64;
    Ok(SupportMetrics {
        precision: if kept.is_empty() { 0.0 } else { hits / kept.len() as f64 },
        recall: hits / planted.len() as f64,
        empty_kept: kept.is_empty(),
    })
}

fn heat_color(t: f64) -> String {
    // white to dark blue
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG document of a heatmap with row/column labels and a two-stop legend.
pub fn heatmap_svg(matrix: &[Vec<f64>], row_labels: &[String], col_labels: &[String]) -> Result<String, EvalError> {
    let rows = matrix.len();
    let cols = matrix.first().map_or(0, Vec::len);
    if matrix.iter().any(|r| r.len() != cols) || row_labels.len() != rows || col_labels.len() != cols {
        return Err(EvalError::Ragged);
    }
    let (lo, hi) = matrix
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let cell = 24.0;
    let margin = 12.0 + 7.0 * row_labels.iter().chain(col_labels).map(|l| l.chars().count()).max().unwrap_or(1) as f64;
    let width = margin + cell * cols as f64 + 20.0;
    let height = margin + cell * rows as f64 + 50.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    for (c, label) in col_labels.iter().enumerate() {
        let x = margin + cell * (c as f64 + 0.5);
        writeln!(
            s,
            r#"<text x="{x}" y="{y}" transform="rotate(-90 {x} {y})">{}</text>"#,
            escape(label),
            y = margin - 4.0
        )
        .unwrap();
    }
    for (r, row) in matrix.iter().enumerate() {
        let y = margin + cell * r as f64;
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            margin - 4.0,
            y + cell * 0.7,
            escape(&row_labels[r])
        )
        .unwrap();
        for (c, &v) in row.iter().enumerate() {
            let t = if span > 0.0 { (v - lo) / span } else { 0.5 };
            writeln!(
                s,
                r#"<rect class="cell" x="{}" y="{y}" width="{cell}" height="{cell}" fill="{}"><title>{v}</title></rect>"#,
                margin + cell * c as f64,
                heat_color(t)
            )
            .unwrap();
        }
    }
    let ly = margin + cell * rows as f64 + 16.0;
    writeln!(
        s,
        r#"<defs><linearGradient id="scale"><stop offset="0" stop-color="{}"/><stop offset="1" stop-color="{}"/></linearGradient></defs>"#,
        heat_color(0.0),
        heat_color(1.0)
    )
    .unwrap();
    writeln!(s, r#"<rect x="{margin}" y="{ly}" width="120" height="10" fill="url(#scale)"/>"#).unwrap();
    let (lo, hi) = if rows * cols == 0 { (0.0, 0.0) } else { (lo, hi) };
    writeln!(s, r#"<text x="{margin}" y="{}">{lo}</text>"#, ly + 24.0).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{hi}</text>"#, margin + 120.0, ly + 24.0).unwrap();
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes `<path>` as SVG and `<path>` with a `.csv` extension holding the raw values.
pub fn emit_heatmap(matrix: &[Vec<f64>], row_labels: &[String], col_labels: &[String], path: impl AsRef<Path>) -> Result<(), ReportError> {
    let path = path.as_ref();
    let svg = heatmap_svg(matrix, row_labels, col_labels)?;
    std::fs::write(path, svg).map_err(|e| DataError::io(path, e))?;
    let csv_path = path.with_extension("csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| DataError::parse(&csv_path, e))?;
    let mut header = vec![String::new()];
    header.extend(col_labels.iter().cloned());
    w.write_record(&header).map_err(|e| DataError::parse(&csv_path, e))?;
    for (label, row) in row_labels.iter().zip(matrix) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| DataError::parse(&csv_path, e))?;
    }
    w.flush().map_err(|e| DataError::io(&csv_path, e))?;
    Ok(())
}

/// Reads back the companion CSV of [`emit_heatmap`].
pub fn read_heatmap_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>, DataError> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| DataError::parse(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| DataError::parse(path, e))?;
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| DataError::parse(path, e)))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(row);
    }
    Ok(out)
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Balanced accuracy per split; `None` when a split is empty or unlabeled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub validation: Option<f64>,
    pub id_test: Option<f64>,
    pub ood_test: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub split: String,
    pub class: u8,
    pub predicted: u8,
    pub count: usize,
}

/// Flattens per-split confusion matrices in split-name order.
pub fn confusion_rows(by_split: &BTreeMap<String, Confusion>) -> Vec<ConfusionRow> {
    let mut out = Vec::new();
    for (split, c) in by_split {
        for class in 0..2u8 {
            for predicted in 0..2u8 {
                out.push(ConfusionRow {
                    split: split.clone(),
                    class,
                    predicted,
                    count: c.counts[class as usize][predicted as usize],
                });
            }
        }
    }
    out
}

/// Everything `eval` reports for one checkpoint on one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub variant: String,
    pub fold: usize,
    /// Occlusion ratio of the evaluated mask (0 without a mask).
    pub occlusion_ratio: f64,
    pub kept_edges: usize,
    pub balanced_accuracy: SplitAccuracy,
    pub confusion: Vec<ConfusionRow>,
    /// Empty unless the checkpoint holds a continuous mask.
    pub sweep: Vec<SweepRow>,
    pub network_counts: Option<NetworkCounts>,
    /// Recovery of the planted informative edges (synthetic data only).
    pub support: Option<SupportMetrics>,
    /// Kept edges that are planted nuisance edges (synthetic data only).
    pub nuisance_kept: Option<usize>,
}

impl EvalReport {
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("split,class,predicted,count\n");
        for r in &self.confusion {
            writeln!(s, "{},{},{},{}", r.split, r.class, r.predicted, r.count).unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::edge_index;
    use proptest::prelude::*;

    #[test]
    fn confusion_csv_lists_every_cell_by_split() {
        let mut by_split = BTreeMap::new();
        by_split.insert("validation".to_string(), Confusion::new(&[0, 1, 1], &[0, 0, 1]).unwrap());
        by_split.insert("id_test".to_string(), Confusion::new(&[1], &[1]).unwrap());
        let report = EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            variant: "sparg".into(),
            fold: 0,
            occlusion_ratio: 0.0,
            kept_edges: 3,
            balanced_accuracy: SplitAccuracy::default(),
            confusion: confusion_rows(&by_split),
            sweep: Vec::new(),
            network_counts: None,
            support: None,
            nuisance_kept: None,
        };
        assert_eq!(
            report.confusion_csv(),
            "split,class,predicted,count\n\
             id_test,0,0,0\nid_test,0,1,0\nid_test,1,0,0\nid_test,1,1,1\n\
             validation,0,0,1\nvalidation,0,1,1\nvalidation,1,0,0\nvalidation,1,1,1\n"
        );
    }

    #[test]
    fn balanced_accuracy_examples() {
        assert_eq!(balanced_accuracy(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.5);
        let v = balanced_accuracy(&[0, 1, 1, 0], &[0, 1, 1, 1]).unwrap();
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(balanced_accuracy(&[0, 1], &[1, 1]), Err(EvalError::OneClass));
        assert!(matches!(balanced_accuracy(&[0], &[0, 1]), Err(EvalError::LengthMismatch { .. })));
    }

    proptest! {
        #[test]
        fn balanced_accuracy_symmetries(pairs in prop::collection::vec((0u8..2, 0u8..2), 2..40), rot in 0usize..40) {
            let mut labels: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            labels[0] = 0;
            labels[1] = 1;
            let preds: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let base = balanced_accuracy(&preds, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&base));
            let r = rot % labels.len();
            let (mut p2, mut l2) = (preds.clone(), labels.clone());
            p2.rotate_left(r);
            l2.rotate_left(r);
            prop_assert!((balanced_accuracy(&p2, &l2).unwrap() - base).abs() < 1e-12);
            let flip = |v: &[u8]| v.iter().map(|c| 1 - c).collect::<Vec<_>>();
            prop_assert!((balanced_accuracy(&flip(&preds), &flip(&labels)).unwrap() - base).abs() < 1e-12);
            prop_assert_eq!(Confusion::new(&preds, &labels).unwrap().total(), labels.len());
        }
    }

    fn map(names: &[&str]) -> ParcelNetworkMap {
        ParcelNetworkMap::new(names.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn network_report_examples() {
        let m = map(&["Vis", "DMN", "Vis", "DMN"]);
        let none = SparseMask::fixed(4, vec![], 1.0 - 1e-9).unwrap();
        let r = network_report(&none, &m).unwrap();
        assert!(r.counts.iter().flatten().all(|&c| c == 0));

        let one = SparseMask::fixed(4, vec![edge_index(0, 1, 4)], 0.9).unwrap();
        let r = network_report(&one, &m).unwrap();
        assert_eq!(r.networks, ["DMN", "Vis"]);
        assert_eq!(r.counts, vec![vec![0, 1], vec![1, 0]]);

        let full = SparseMask::fixed(4, (0..6).collect(), 0.0).unwrap();
        let r = network_report(&full, &m).unwrap();
        // within: (1,3) and (0,2); between: the other four
        assert_eq!(r.counts, vec![vec![1, 4], vec![4, 1]]);
        assert_eq!(r.total(), 6);
        assert!(r.to_csv().starts_with("network_a,network_b,count\nDMN,DMN,1\n"));

        let short = map(&["Vis", "DMN"]);
        assert!(matches!(
            network_report(&full, &short),
            Err(ReportError::Data(DataError::UnmappedParcel(2)))
        ));
        let cont = SparseMask::<f64>::new(4);
        assert!(network_report(&cont, &m).is_err());
    }

    #[test]
    fn support_examples() {
        let s = support_of(&[1, 4, 7], &[1, 4, 7]).unwrap();
        assert_eq!((s.precision, s.recall, s.empty_kept), (1.0, 1.0, false));
        let s = support_of(&[1, 2, 3, 4], &[1, 2]).unwrap();
        assert_eq!((s.precision, s.recall), (0.5, 1.0));
        let s = support_of(&[5, 6], &[1, 2]).unwrap();
        assert_eq!((s.precision, s.recall), (0.0, 0.0));
        let s = support_of(&[], &[1, 2]).unwrap();
        assert_eq!((s.precision, s.recall, s.empty_kept), (0.0, 0.0, true));
        assert_eq!(support_of(&[1], &[]), Err(EvalError::EmptyPlanted));
    }

    #[test]
    fn heatmap_cells_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.svg");
        let labels = vec!["a".to_string(), "b".to_string()];
        let m = vec![vec![0.125, -3.0], vec![7.5, 1e-3]];
        emit_heatmap(&m, &labels, &labels, &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert_eq!(svg.matches(r#"class="cell""#).count(), 4);
        assert_eq!(read_heatmap_csv(path.with_extension("csv")).unwrap(), m);

        let constant = heatmap_svg(&[vec![2.0, 2.0], vec![2.0, 2.0]], &labels, &labels).unwrap();
        let fills: std::collections::BTreeSet<&str> = constant
            .lines()
            .filter(|l| l.contains(r#"class="cell""#))
            .map(|l| l.split("fill=\"").nth(1).unwrap().split('"').next().unwrap())
            .collect();
        assert_eq!(fills.len(), 1);
        assert_eq!(heatmap_svg(&[vec![1.0], vec![1.0, 2.0]], &labels, &labels), Err(EvalError::Ragged));
    }

    #[test]
    fn sweep_csv_shape() {
        let rows: Vec<SweepRow> = [0.0, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99]
            .iter()
            .map(|&r| SweepRow {
                ratio: r,
                id_balacc: Some(0.5),
                ood_balacc: Some(0.75),
            })
            .collect();
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 8);
        assert_eq!(csv.lines().nth(1).unwrap(), "0,0.5,0.75");
    }
}
