//! Small synthetic datasets for fast training tests.

use sparg::data::{generate_synthetic, make_folds, Dataset, FoldSplit, SiteSpec, SyntheticConfig};

/// `k = 8`, two ID sites of 60 and one OOD site of 40.
pub fn small_config(seed: u64) -> SyntheticConfig {
    let site = |name: &str, ood: bool, subjects: usize| SiteSpec {
        name: name.to_string(),
        ood,
        subjects,
    };
    SyntheticConfig {
        k: 8,
        sites: vec![site("id0", false, 60), site("id1", false, 60), site("ood0", true, 40)],
        class_balance: 0.5,
        informative_edges: 4,
        effect_size: 0.6,
        nuisance_edges: 8,
        site_bias: 0.4,
        noise_scale: 0.15,
        seed,
    }
}

pub fn dataset_and_fold(cfg: &SyntheticConfig, split_seed: u64) -> (Dataset, FoldSplit) {
    let ds = generate_synthetic(cfg).expect("valid config");
    let fold = make_folds(&ds, split_seed).expect("enough subjects").swap_remove(0);
    (ds, fold)
}
