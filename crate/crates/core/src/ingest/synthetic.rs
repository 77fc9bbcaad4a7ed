//! Planted multi-interest fixture datasets.
//!
//! Items are partitioned into `n_clusters` clusters, each split into
//! contiguous sub-topics. Every user gets two distinct preferred clusters
//! (a primary and a secondary) and one sub-topic inside each; their sequence
//! holds exactly `round(primary_share · seq_len)` primary-cluster events in
//! shuffled order, each item drawn uniformly from the matching sub-topic.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::interactions::Interaction;
use crate::error::{DrimError, Result};

const BASE_TIMESTAMP: u64 = 1_600_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_clusters: usize,
    pub items_per_cluster: usize,
    pub seq_len: usize,
    pub subtopics_per_cluster: usize,
    pub primary_share: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_users: 1000,
            n_clusters: 2,
            items_per_cluster: 100,
            seq_len: 20,
            subtopics_per_cluster: 10,
            primary_share: 0.7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedInterests {
    pub primary_cluster: usize,
    pub secondary_cluster: usize,
    pub primary_subtopic: usize,
    pub secondary_subtopic: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub interactions: Vec<Interaction>,
    /// `(item_id, cluster)` for every catalogue item, drawn or not.
    pub item_clusters: Vec<(String, usize)>,
    pub users: Vec<PlantedInterests>,
}

pub fn item_id(cluster: usize, offset: usize, items_per_cluster: usize) -> String {
    format!("i{}", cluster * items_per_cluster + offset)
}

pub fn user_id(u: usize) -> String {
    format!("u{u}")
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.n_clusters < 2 {
        return Err(DrimError::Config("synthetic data needs at least 2 clusters".into()));
    }
    if cfg.items_per_cluster == 0 || cfg.subtopics_per_cluster == 0 || cfg.seq_len == 0 {
        return Err(DrimError::Config(
            "items per cluster, sub-topics and sequence length must be positive".into(),
        ));
    }
    if !(cfg.primary_share > 0.0 && cfg.primary_share < 1.0) {
        return Err(DrimError::Config(format!(
            "primary share must lie in (0, 1), got {}",
            cfg.primary_share
        )));
    }
    let n_sub = cfg.subtopics_per_cluster.min(cfg.items_per_cluster);
    let sub_range = |s: usize| {
        let lo = s * cfg.items_per_cluster / n_sub;
        let hi = (s + 1) * cfg.items_per_cluster / n_sub;
        lo..hi
    };
    let n_primary = if cfg.seq_len >= 2 {
        ((cfg.primary_share * cfg.seq_len as f64).round() as usize).clamp(1, cfg.seq_len - 1)
    } else {
        1
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut interactions = Vec::with_capacity(cfg.n_users * cfg.seq_len);
    let mut users = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let pair = sample(&mut rng, cfg.n_clusters, 2);
        let planted = PlantedInterests {
            primary_cluster: pair.index(0),
            secondary_cluster: pair.index(1),
            primary_subtopic: rng.random_range(0..n_sub),
            secondary_subtopic: rng.random_range(0..n_sub),
        };
        let mut is_primary: Vec<bool> = (0..cfg.seq_len).map(|t| t < n_primary).collect();
        is_primary.shuffle(&mut rng);
        let uid = user_id(u);
        for (t, primary) in is_primary.into_iter().enumerate() {
            let (cluster, sub) = if primary {
                (planted.primary_cluster, planted.primary_subtopic)
            } else {
                (planted.secondary_cluster, planted.secondary_subtopic)
            };
            let offset = rng.random_range(sub_range(sub));
            interactions.push(Interaction::new(
                uid.clone(),
                item_id(cluster, offset, cfg.items_per_cluster),
                BASE_TIMESTAMP + 60 * t as u64,
            ));
        }
        users.push(planted);
    }
    let item_clusters = (0..cfg.n_clusters)
        .flat_map(|c| (0..cfg.items_per_cluster).map(move |j| (c, j)))
        .map(|(c, j)| (item_id(c, j, cfg.items_per_cluster), c))
        .collect();
    Ok(SyntheticData {
        interactions,
        item_clusters,
        users,
    })
}

/// Writes the `item_id \t cluster_id` sidecar.
pub fn write_labels(path: &Path, labels: &[(String, usize)]) -> Result<()> {
    let file = File::create(path).map_err(|e| DrimError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (item, cluster) in labels {
        writeln!(w, "{item}\t{cluster}").map_err(|e| DrimError::io(path, e))?;
    }
    w.flush().map_err(|e| DrimError::io(path, e))
}
