//! Synthetic clustered implicit-feedback datasets.
//!
//! Items are dealt round-robin into `clusters` groups and every user belongs
//! to one group. Each interaction is, with probability `noise`, a uniform
//! draw over all items; otherwise it is drawn from the user's own group with
//! Zipf weights `1 / (rank + 1)^popularity_exponent`, where rank is the
//! item's position inside its group. Trained with [`recipe_train_config`],
//! models on this data become markedly overconfident, which makes it a
//! fixture for calibration.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::RawDataset;
use crate::error::{Error, Result};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    pub min_interactions: usize,
    pub max_interactions: usize,
    pub noise: f64,
    pub popularity_exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 200,
            items: 300,
            clusters: 3,
            min_interactions: 5,
            max_interactions: 15,
            noise: 0.2,
            popularity_exponent: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Training settings for the overconfidence fixture: 32 dimensions, two
/// layers and 100 epochs of Adam at a high step size with no L2 penalty,
/// three negatives per positive, so the softmax over the catalog becomes
/// sharply peaked.
pub fn recipe_train_config(seed: u64, conf_weight: f64) -> TrainConfig {
    TrainConfig {
        epochs: 100,
        batch_size: 128,
        learning_rate: 0.1,
        embed_dim: 32,
        layers: 2,
        l2_weight: 0.0,
        conf_weight,
        negatives: 3,
        seed,
    }
}

/// Cluster of item `i`.
pub fn item_cluster(item: usize, clusters: usize) -> usize {
    item % clusters
}

pub fn generate(cfg: &SyntheticConfig) -> Result<RawDataset> {
    if cfg.clusters == 0 || cfg.items < cfg.clusters {
        return Err(Error::InvalidConfig(
            "need at least one item per cluster".into(),
        ));
    }
    if cfg.min_interactions == 0
        || cfg.min_interactions > cfg.max_interactions
        || cfg.max_interactions > cfg.items
    {
        return Err(Error::InvalidConfig("bad interaction count range".into()));
    }
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(Error::InvalidConfig("noise must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let members: Vec<Vec<usize>> = (0..cfg.clusters)
        .map(|c| {
            (0..cfg.items)
                .filter(|&i| item_cluster(i, cfg.clusters) == c)
                .collect()
        })
        .collect();
    let pickers: Vec<WeightedIndex<f64>> = members
        .iter()
        .map(|m| {
            WeightedIndex::new(
                (0..m.len()).map(|r| ((r + 1) as f64).powf(-cfg.popularity_exponent)),
            )
            .expect("positive weights")
        })
        .collect();

    let mut pairs = Vec::new();
    for u in 0..cfg.users {
        let cluster = rng.random_range(0..cfg.clusters);
        let n = rng.random_range(cfg.min_interactions..=cfg.max_interactions);
        let mut chosen: Vec<usize> = Vec::with_capacity(n);
        while chosen.len() < n {
            let item = if rng.random_bool(cfg.noise) {
                rng.random_range(0..cfg.items)
            } else {
                members[cluster][pickers[cluster].sample(&mut rng)]
            };
            if !chosen.contains(&item) {
                chosen.push(item);
            }
        }
        pairs.extend(chosen.into_iter().map(|i| (u, i)));
    }
    RawDataset::from_indexed(cfg.users, cfg.items, pairs)
}
