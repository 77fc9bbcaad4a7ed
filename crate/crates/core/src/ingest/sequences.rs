use std::collections::HashMap;

use log::info;

use super::filter::Vocab;
use super::interactions::Interaction;
use crate::error::{DrimError, Result};

/// A user's time-ordered item indices with a train/test boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSequence {
    pub user_index: usize,
    pub item_indices: Vec<usize>,
    /// Items before this position form the training prefix.
    pub split_point: usize,
}

impl UserSequence {
    pub fn train(&self) -> &[usize] {
        &self.item_indices[..self.split_point]
    }

    pub fn test(&self) -> &[usize] {
        &self.item_indices[self.split_point..]
    }

    /// The at-most `max_len` most recent training items.
    pub fn recent_train(&self, max_len: usize) -> &[usize] {
        let train = self.train();
        &train[train.len().saturating_sub(max_len)..]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainSample {
    pub user_index: usize,
    pub history: Vec<usize>,
    pub target: usize,
    pub profile: Vec<usize>,
}

/// Groups events per user (in order of first appearance) and sorts each
/// user's events by timestamp, keeping file order among equal timestamps.
/// Items missing from `vocab` are skipped. `split_point` is set to the full
/// length; see [`chronological_split`].
pub fn build_sequences(data: &[Interaction], vocab: &Vocab) -> (Vec<String>, Vec<UserSequence>) {
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut users: Vec<String> = Vec::new();
    let mut events: Vec<Vec<(u64, usize)>> = Vec::new();
    for it in data {
        let Some(item) = vocab.index_of(&it.item_id) else {
            continue;
        };
        let u = *user_index.entry(it.user_id.as_str()).or_insert_with(|| {
            users.push(it.user_id.clone());
            events.push(Vec::new());
            users.len() - 1
        });
        events[u].push((it.timestamp, item));
    }
    let sequences = events
        .into_iter()
        .enumerate()
        .map(|(u, mut ev)| {
            ev.sort_by_key(|&(t, _)| t);
            let item_indices: Vec<usize> = ev.into_iter().map(|(_, i)| i).collect();
            UserSequence {
                user_index: u,
                split_point: item_indices.len(),
                item_indices,
            }
        })
        .collect();
    (users, sequences)
}

/// Sets `split_point = ⌊train_frac · len⌋` and drops users whose train prefix
/// or test suffix would be empty.
pub fn chronological_split(sequences: Vec<UserSequence>, train_frac: f64) -> Result<Vec<UserSequence>> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DrimError::Config(format!(
            "train fraction must lie in (0, 1), got {train_frac}"
        )));
    }
    let total = sequences.len();
    let kept: Vec<UserSequence> = sequences
        .into_iter()
        .filter_map(|mut s| {
            let len = s.item_indices.len();
            // tolerance absorbs products like 0.29 * 100 = 28.999…
            let split = (train_frac * len as f64 + 1e-9).floor() as usize;
            if split == 0 || split >= len {
                return None;
            }
            s.split_point = split;
            Some(s)
        })
        .collect();
    let dropped = total - kept.len();
    if dropped > 0 {
        info!("split dropped {dropped} of {total} users with an empty train or test part");
    }
    if kept.is_empty() {
        return Err(DrimError::EmptyDataset(
            "no user has both a train and a test part".into(),
        ));
    }
    Ok(kept)
}

/// One sample per training position `t ≥ 1`: the target is the item at `t`,
/// the history the at-most `max_len` items right before it.
pub fn make_train_samples(
    sequences: &[UserSequence],
    max_len: usize,
) -> impl Iterator<Item = TrainSample> + '_ {
    assert!(max_len >= 1, "max_len must be at least 1");
    sequences.iter().flat_map(move |s| {
        let train = s.train();
        (1..train.len()).map(move |t| TrainSample {
            user_index: s.user_index,
            history: train[t.saturating_sub(max_len)..t].to_vec(),
            target: train[t],
            profile: Vec::new(),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(items: Vec<usize>, split: usize) -> UserSequence {
        UserSequence {
            user_index: 0,
            item_indices: items,
            split_point: split,
        }
    }

    #[test]
    fn build_sorts_by_time_and_skips_unknown_items() {
        let data = vec![
            Interaction::new("u", "b", 20),
            Interaction::new("v", "a", 1),
            Interaction::new("u", "a", 10),
            Interaction::new("u", "zz", 15),
            Interaction::new("u", "c", 20),
        ];
        let vocab = Vocab::from_ids(["a", "b", "c"]);
        let (users, seqs) = build_sequences(&data, &vocab);
        assert_eq!(users, vec!["u", "v"]);
        // equal timestamps keep file order: b before c
        assert_eq!(seqs[0].item_indices, vec![1, 2, 3]);
        assert_eq!(seqs[1].item_indices, vec![1]);
        assert_eq!(seqs[0].split_point, 3);
    }

    #[test]
    fn split_points() {
        let s = chronological_split(vec![seq((1..=10).collect(), 10)], 0.8).unwrap();
        assert_eq!(s[0].split_point, 8);
        let s = chronological_split(vec![seq(vec![1, 2, 3, 4], 4)], 0.8).unwrap();
        assert_eq!(s[0].split_point, 3);
        assert_eq!(s[0].test(), &[4]);
    }

    #[test]
    fn short_users_are_dropped() {
        let out = chronological_split(vec![seq(vec![1], 1), seq(vec![1, 2, 3], 3)], 0.8).unwrap();
        assert_eq!(out.len(), 1);
        assert!(matches!(
            chronological_split(vec![seq(vec![1], 1)], 0.8),
            Err(DrimError::EmptyDataset(_))
        ));
        assert!(chronological_split(vec![], 1.0).is_err());
    }

    #[test]
    fn samples_from_short_prefix() {
        let s = seq(vec![10, 11, 12, 99], 3);
        let samples: Vec<_> = make_train_samples(std::slice::from_ref(&s), 10).collect();
        assert_eq!(samples.len(), 2);
        assert_eq!((samples[0].history.clone(), samples[0].target), (vec![10], 11));
        assert_eq!((samples[1].history.clone(), samples[1].target), (vec![10, 11], 12));
    }

    #[test]
    fn history_is_truncated_to_most_recent() {
        let s = seq((1..=13).collect(), 12);
        let samples: Vec<_> = make_train_samples(std::slice::from_ref(&s), 10).collect();
        let last = samples.last().unwrap();
        assert_eq!(last.history, (2..=11).collect::<Vec<_>>());
        assert_eq!(last.target, 12);
    }

    proptest! {
        #[test]
        fn history_strictly_precedes_target(
            items in prop::collection::vec(1usize..50, 2..40),
            max_len in 1usize..12,
        ) {
            let n = items.len();
            let s = seq(items.clone(), n - 1);
            let mut count = 0;
            for (t, sample) in make_train_samples(std::slice::from_ref(&s), max_len).enumerate() {
                let pos = t + 1;
                prop_assert_eq!(sample.target, items[pos]);
                prop_assert!(!sample.history.is_empty() && sample.history.len() <= max_len);
                prop_assert_eq!(&sample.history[..], &items[pos - sample.history.len()..pos]);
                count += 1;
            }
            prop_assert_eq!(count, n - 2);
        }
    }
}
