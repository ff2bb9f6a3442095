//! Connectivity-matrix datasets: representation, on-disk format, synthetic
//! generation with planted signal and site shift, and cross-validation folds.

mod dataset;
mod error;
mod folds;
mod matrix;
mod parcels;
mod synthetic;

pub use dataset::{load_dataset, write_dataset, Dataset, Domain, Manifest, ManifestEntry, PlantedEdges, Subject};
pub use error::DataError;
pub use folds::{make_folds, make_folds_with, FoldPlan, FoldSplit, FOLD_COUNT};
pub use matrix::{edge_count, edge_index, edge_pair, flatten_upper, unflatten_upper, ConnectivityMatrix, MATRIX_TOLERANCE};
pub use parcels::ParcelNetworkMap;
pub use synthetic::{generate_synthetic, SiteSpec, SyntheticConfig};
