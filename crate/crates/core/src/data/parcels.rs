use std::path::Path;

use serde::Deserialize;

use crate::data::DataError;

/// Network name for every parcel index `0..k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParcelNetworkMap {
    networks: Vec<String>,
}

#[derive(Deserialize)]
struct Row {
    parcel: usize,
    network: String,
}

impl ParcelNetworkMap {
    pub fn new(networks: Vec<String>) -> Self {
        Self { networks }
    }

    /// Reads a CSV with header `parcel,network`. Every parcel `0..n` must
    /// appear exactly once.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| DataError::parse(path, e))?;
        let headers = reader.headers().map_err(|e| DataError::parse(path, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["parcel", "network"] {
            return Err(DataError::parse(path, "expected header `parcel,network`"));
        }
        let mut rows = Vec::new();
        for row in reader.deserialize::<Row>() {
            rows.push(row.map_err(|e| DataError::parse(path, e))?);
        }
        let mut networks: Vec<Option<String>> = vec![None; rows.len()];
        for row in rows {
            let slot = networks
                .get_mut(row.parcel)
                .ok_or_else(|| DataError::parse(path, format!("parcel {} out of range", row.parcel)))?;
            if slot.is_some() {
                return Err(DataError::parse(path, format!("parcel {} mapped twice", row.parcel)));
            }
            *slot = Some(row.network);
        }
        let networks = networks
            .into_iter()
            .enumerate()
            .map(|(i, n)| n.ok_or(DataError::UnmappedParcel(i)))
            .collect::<Result<_, _>>()?;
        Ok(Self { networks })
    }

    pub fn len(&self) -> usize {
        self.networks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.networks.is_empty()
    }

    pub fn network(&self, parcel: usize) -> Result<&str, DataError> {
        self.networks
            .get(parcel)
            .map(String::as_str)
            .ok_or(DataError::UnmappedParcel(parcel))
    }

    /// Distinct network names, sorted.
    pub fn network_names(&self) -> Vec<String> {
        let mut names = self.networks.clone();
        names.sort();
        names.dedup();
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("map.csv");
        std::fs::write(&p, "parcel,network\n1,DMN\n0,Vis\n2,DMN\n").unwrap();
        let m = ParcelNetworkMap::load(&p).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.network(0).unwrap(), "Vis");
        assert_eq!(m.network_names(), vec!["DMN", "Vis"]);
        assert!(matches!(m.network(3), Err(DataError::UnmappedParcel(3))));
    }

    #[test]
    fn rejects_duplicates_and_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dup.csv");
        std::fs::write(&p, "parcel,network\n0,A\n0,B\n").unwrap();
        assert!(ParcelNetworkMap::load(&p).is_err());
        std::fs::write(&p, "parcel,network\n0,A\n2,B\n").unwrap();
        assert!(ParcelNetworkMap::load(&p).is_err());
        std::fs::write(&p, "id,net\n0,A\n").unwrap();
        assert!(ParcelNetworkMap::load(&p).is_err());
    }
}
