use std::collections::{HashMap, HashSet};

use drim_core::ingest::{
    filter_min_counts, generate_synthetic, load_interactions, make_train_samples, sample_negatives,
    write_interactions, Dataset, Format, Interaction, NegativeDist, NegativeSampler, SyntheticConfig, Vocab,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn million_row_synthetic_log_round_trips() {
    let cfg = SyntheticConfig {
        n_users: 50_000,
        seq_len: 20,
        ..SyntheticConfig::default()
    };
    let syn = generate_synthetic(&cfg).unwrap();
    assert_eq!(syn.interactions.len(), 1_000_000);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.tsv");
    write_interactions(&path, &syn.interactions, Format::Tsv).unwrap();
    let back = load_interactions(&path, Format::Tsv).unwrap();
    assert_eq!(back.len(), 1_000_000);
    assert_eq!(back[999_999], syn.interactions[999_999]);
}

/// Removes one offending event class at a time until nothing changes.
fn naive_filter(mut data: Vec<(u8, u8)>, min_item: usize, min_user: usize) -> Vec<(u8, u8)> {
    loop {
        let mut items: HashMap<u8, usize> = HashMap::new();
        let mut users: HashMap<u8, usize> = HashMap::new();
        for &(u, i) in &data {
            *items.entry(i).or_default() += 1;
            *users.entry(u).or_default() += 1;
        }
        if let Some(pos) = data
            .iter()
            .position(|(u, i)| items[i] < min_item || users[u] < min_user)
        {
            let (u, i) = data[pos];
            if items[&i] < min_item {
                data.retain(|e| e.1 != i);
            } else {
                data.retain(|e| e.0 != u);
            }
        } else {
            return data;
        }
    }
}

proptest! {
    #[test]
    fn filter_reaches_the_same_fixpoint_as_naive_removal(
        events in prop::collection::vec((0u8..8, 0u8..10), 1..80),
        min_item in 1usize..4,
        min_user in 1usize..4,
    ) {
        let data: Vec<Interaction> = events
            .iter()
            .enumerate()
            .map(|(t, (u, i))| Interaction::new(format!("u{u}"), format!("i{i}"), t as u64))
            .collect();
        let expected = naive_filter(events.clone(), min_item, min_user);
        match filter_min_counts(data, min_item as u64, min_user as u64) {
            Ok((kept, _)) => {
                let got: Vec<(u8, u8)> = kept
                    .iter()
                    .map(|e| (e.user_id[1..].parse().unwrap(), e.item_id[1..].parse().unwrap()))
                    .collect();
                prop_assert_eq!(got, expected);
            }
            Err(_) => prop_assert!(expected.is_empty()),
        }
    }
}

#[test]
fn sample_count_is_sum_of_prefix_lengths_minus_one() {
    let syn = generate_synthetic(&SyntheticConfig {
        n_users: 300,
        seq_len: 17,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let data = Dataset::prepare(syn.interactions, 1, 1, 0.8).unwrap();
    let expected: usize = data.sequences.iter().map(|s| s.split_point - 1).sum();
    assert_eq!(make_train_samples(&data.sequences, 10).count(), expected);
    // floor(0.8 * 17) = 13 training events per user
    assert!(data.sequences.iter().all(|s| s.split_point == 13));
}

#[test]
fn uniform_negatives_pass_chi_square() {
    let n_items = 20;
    let vocab = Vocab::from_ids((0..n_items).map(|i| format!("i{i}")));
    let sampler = NegativeSampler::new(&vocab, NegativeDist::Uniform).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let target = 5;
    let mut counts = vec![0f64; n_items + 1];
    let draws = 200_000;
    for _ in 0..draws / 10 {
        for i in sampler.sample(target, 10, &mut rng).unwrap() {
            counts[i] += 1.0;
        }
    }
    assert_eq!(counts[0], 0.0);
    assert_eq!(counts[target], 0.0);
    let expected = draws as f64 / (n_items - 1) as f64;
    let chi2: f64 = (1..=n_items)
        .filter(|&i| i != target)
        .map(|i| (counts[i] - expected).powi(2) / expected)
        .sum();
    // 18 degrees of freedom; 42.3 is the 0.999 quantile
    assert!(chi2 < 42.3, "chi2 = {chi2}");
}

#[test]
fn popularity_negatives_follow_three_quarter_power() {
    let freq: Vec<u64> = vec![0, 1, 16, 81, 256];
    let mut vocab = Vocab::from_ids(["a", "b", "c", "d"]);
    vocab.set_frequencies(freq.clone());
    let sampler = NegativeSampler::new(&vocab, NegativeDist::PopularityPow).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target = 1;
    let draws = 100_000;
    let mut counts = [0f64; 5];
    for _ in 0..draws / 2 {
        for i in sampler.sample(target, 2, &mut rng).unwrap() {
            counts[i] += 1.0;
        }
    }
    // weights 16^0.75, 81^0.75, 256^0.75 = 8, 27, 64 once the target is rejected
    let total = 8.0 + 27.0 + 64.0;
    for (i, w) in [(2, 8.0), (3, 27.0), (4, 64.0)] {
        let p: f64 = w / total;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        assert!((counts[i] - mean).abs() < 5.0 * sd, "item {i}: {} vs {mean}", counts[i]);
    }
    assert_eq!(counts[target], 0.0);
}

#[test]
fn seeded_negative_helper_is_reproducible() {
    let vocab = Vocab::from_ids((0..50).map(|i| format!("i{i}")));
    let a = sample_negatives(&vocab, 7, 5, NegativeDist::Uniform, 9).unwrap();
    let b = sample_negatives(&vocab, 7, 5, NegativeDist::Uniform, 9).unwrap();
    assert_eq!(a, b);
    assert!(!a.contains(&7));
}

#[test]
fn synthetic_mixture_matches_configured_share() {
    let cfg = SyntheticConfig {
        n_users: 400,
        seq_len: 20,
        primary_share: 0.7,
        ..SyntheticConfig::default()
    };
    let syn = generate_synthetic(&cfg).unwrap();
    let cluster_of: HashMap<&str, usize> = syn.item_clusters.iter().map(|(id, c)| (id.as_str(), *c)).collect();
    let mut per_user: HashMap<&str, (usize, usize)> = HashMap::new();
    for e in &syn.interactions {
        let u: usize = e.user_id[1..].parse().unwrap();
        let planted = syn.users[u];
        let entry = per_user.entry(&e.user_id).or_default();
        if cluster_of[e.item_id.as_str()] == planted.primary_cluster {
            entry.0 += 1;
        } else {
            assert_eq!(cluster_of[e.item_id.as_str()], planted.secondary_cluster);
            entry.1 += 1;
        }
    }
    assert_eq!(per_user.len(), 400);
    assert!(per_user.values().all(|&(p, s)| p == 14 && s == 6));
    let clusters: HashSet<usize> = syn.users.iter().map(|u| u.primary_cluster).collect();
    assert_eq!(clusters.len(), 2);
}
