use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{edge_count, ConnectivityMatrix, DataError, Dataset, Domain, PlantedEdges, Subject};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteSpec {
    pub name: String,
    /// Shifted site: contributes unlabeled training data and OOD test data.
    pub ood: bool,
    pub subjects: usize,
}

/// Parameters of the synthetic site-shifted generator.
///
/// Each subject's upper triangle starts as i.i.d. `Normal(0, noise_scale)`.
/// Informative edges get `+effect_size/2` for class 1 and `-effect_size/2`
/// for class 0. Nuisance edges of OOD sites get `site_bias` times a sign fixed
/// per (site, edge). Entries are clipped to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub k: usize,
    pub sites: Vec<SiteSpec>,
    /// Fraction of class-1 subjects per site.
    pub class_balance: f64,
    pub informative_edges: usize,
    pub effect_size: f64,
    pub nuisance_edges: usize,
    pub site_bias: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Four ID sites of 100 subjects and two OOD sites of 50, `k = 16`.
    pub fn desk_scale(seed: u64) -> Self {
        let mut sites: Vec<SiteSpec> = (0..4)
            .map(|i| SiteSpec {
                name: format!("id{i}"),
                ood: false,
                subjects: 100,
            })
            .collect();
        sites.extend((0..2).map(|i| SiteSpec {
            name: format!("ood{i}"),
            ood: true,
            subjects: 50,
        }));
        Self {
            k: 16,
            sites,
            class_balance: 0.5,
            informative_edges: 10,
            effect_size: 0.5,
            nuisance_edges: 40,
            site_bias: 0.4,
            noise_scale: 0.15,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.k < 2 {
            return bad(format!("k = {} must be at least 2", self.k));
        }
        let e = edge_count(self.k);
        if self.informative_edges + self.nuisance_edges > e {
            return bad(format!(
                "{} informative + {} nuisance edges exceed the {e} available",
                self.informative_edges, self.nuisance_edges
            ));
        }
        if self.sites.is_empty() {
            return bad("no sites".into());
        }
        let mut names: Vec<&str> = self.sites.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate site name".into());
        }
        if !(0.0..=1.0).contains(&self.class_balance) {
            return bad(format!("class_balance {} outside [0, 1]", self.class_balance));
        }
        for (name, v) in [
            ("effect_size", self.effect_size),
            ("site_bias", self.site_bias),
            ("noise_scale", self.noise_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Generates a dataset as a pure function of `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let k = cfg.k;
    let e = edge_count(k);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let chosen = index::sample(&mut rng, e, cfg.informative_edges + cfg.nuisance_edges).into_vec();
    let mut informative = chosen[..cfg.informative_edges].to_vec();
    let mut nuisance = chosen[cfg.informative_edges..].to_vec();
    informative.sort_unstable();
    nuisance.sort_unstable();

    let noise = Normal::new(0.0, cfg.noise_scale).map_err(|err| DataError::InvalidConfig(err.to_string()))?;
    let half_effect = cfg.effect_size / 2.0;
    let mut subjects = Vec::new();
    for site in &cfg.sites {
        let signs: Vec<f64> = nuisance
            .iter()
            .map(|_| if rand::Rng::random_bool(&mut rng, 0.5) { 1.0 } else { -1.0 })
            .collect();
        let n_pos = (site.subjects as f64 * cfg.class_balance).round() as usize;
        let mut labels: Vec<u8> = (0..site.subjects).map(|i| u8::from(i < n_pos)).collect();
        labels.shuffle(&mut rng);
        for (n, &label) in labels.iter().enumerate() {
            let mut edges: Vec<f64> = (0..e).map(|_| noise.sample(&mut rng)).collect();
            let shift = if label == 1 { half_effect } else { -half_effect };
            for &idx in &informative {
                edges[idx] += shift;
            }
            if site.ood {
                for (&idx, &sign) in nuisance.iter().zip(&signs) {
                    edges[idx] += sign * cfg.site_bias;
                }
            }
            for v in edges.iter_mut() {
                *v = v.clamp(-1.0, 1.0);
            }
            let id = format!("{}-{:04}", site.name, n);
            let matrix = ConnectivityMatrix::from_edges(&edges, k, &id)?;
            subjects.push(Subject {
                id,
                site: site.name.clone(),
                label: Some(label),
                domain: if site.ood { Domain::Ood } else { Domain::Id },
                matrix,
            });
        }
    }
    Dataset::new(k, subjects, Some(PlantedEdges { informative, nuisance }))
}
