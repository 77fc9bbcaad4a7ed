//! Interaction logs: loading, count filtering, chronological splits,
//! training samples, negative sampling and synthetic fixtures.

pub mod filter;
pub mod interactions;
pub mod negatives;
pub mod sequences;
pub mod synthetic;

pub use filter::{filter_min_counts, Vocab, PADDING};
pub use interactions::{load_interactions, write_interactions, Format, Interaction};
pub use negatives::{sample_negatives, NegativeDist, NegativeSampler};
pub use sequences::{build_sequences, chronological_split, make_train_samples, TrainSample, UserSequence};
pub use synthetic::{generate_synthetic, write_labels, SyntheticConfig, SyntheticData};

use crate::error::Result;

/// A filtered, split dataset ready for training and evaluation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocab,
    pub users: Vec<String>,
    pub sequences: Vec<UserSequence>,
}

impl Dataset {
    /// Builds sequences over `vocab`, splits them, and recounts item
    /// frequencies over the training prefixes only.
    pub fn new(data: &[Interaction], mut vocab: Vocab, train_frac: f64) -> Result<Self> {
        let (users, sequences) = build_sequences(data, &vocab);
        let sequences = chronological_split(sequences, train_frac)?;
        let mut freq = vec![0u64; vocab.len() + 1];
        for s in &sequences {
            for &i in s.train() {
                freq[i] += 1;
            }
        }
        vocab.set_frequencies(freq);
        Ok(Self {
            vocab,
            users,
            sequences,
        })
    }

    /// Filters `data` to the count fixpoint first.
    pub fn prepare(data: Vec<Interaction>, min_item: u64, min_user: u64, train_frac: f64) -> Result<Self> {
        let (data, vocab) = filter_min_counts(data, min_item, min_user)?;
        Self::new(&data, vocab, train_frac)
    }

    pub fn train_samples(&self, max_len: usize) -> Vec<TrainSample> {
        make_train_samples(&self.sequences, max_len).collect()
    }
}
