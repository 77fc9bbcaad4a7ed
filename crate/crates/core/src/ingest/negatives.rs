use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::filter::Vocab;
use crate::error::{DrimError, Result};

pub const POPULARITY_POWER: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeDist {
    Uniform,
    /// Proportional to `frequency^0.75`.
    #[default]
    PopularityPow,
}

impl FromStr for NegativeDist {
    type Err = DrimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(NegativeDist::Uniform),
            "popularity" | "popularity_pow" => Ok(NegativeDist::PopularityPow),
            other => Err(DrimError::Config(format!("unknown negative distribution {other:?}"))),
        }
    }
}

impl std::fmt::Display for NegativeDist {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NegativeDist::Uniform => "uniform",
            NegativeDist::PopularityPow => "popularity_pow",
        })
    }
}

#[derive(Debug, Clone)]
enum Sampler {
    Uniform(Uniform<usize>),
    Weighted(WeightedIndex<f64>),
}

/// Draws negative item indices (never the padding index).
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    sampler: Sampler,
    n_items: usize,
}

impl NegativeSampler {
    pub fn new(vocab: &Vocab, dist: NegativeDist) -> Result<Self> {
        let n_items = vocab.len();
        if n_items < 2 {
            return Err(DrimError::Config(format!(
                "need at least 2 items to sample negatives, vocabulary has {n_items}"
            )));
        }
        let sampler = match dist {
            NegativeDist::Uniform => Sampler::Uniform(
                Uniform::new_inclusive(1, n_items).expect("non-empty range"),
            ),
            NegativeDist::PopularityPow => {
                let weights = vocab
                    .indices()
                    .map(|i| (vocab.frequency(i) as f64).powf(POPULARITY_POWER));
                let w = WeightedIndex::new(weights).map_err(|e| {
                    DrimError::Config(format!("popularity weights unusable: {e}"))
                })?;
                Sampler::Weighted(w)
            }
        };
        Ok(Self { sampler, n_items })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.sampler {
            Sampler::Uniform(u) => u.sample(rng),
            Sampler::Weighted(w) => w.sample(rng) + 1,
        }
    }

    /// `n` draws (with replacement), each re-drawn until it differs from `target`.
    pub fn sample<R: Rng + ?Sized>(&self, target: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if n == 0 || self.n_items <= n {
            return Err(DrimError::Config(format!(
                "cannot draw {n} negatives from {} items",
                self.n_items
            )));
        }
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let mut guard = 0u32;
            let item = loop {
                let i = self.draw(rng);
                if i != target {
                    break i;
                }
                guard += 1;
                if guard > 1_000_000 {
                    return Err(DrimError::Config(format!(
                        "target {target} holds essentially all sampling mass"
                    )));
                }
            };
            out.push(item);
        }
        Ok(out)
    }
}

/// One-shot helper seeding its own generator.
pub fn sample_negatives(
    vocab: &Vocab,
    target: usize,
    n: usize,
    dist: NegativeDist,
    rng_seed: u64,
) -> Result<Vec<usize>> {
    let sampler = NegativeSampler::new(vocab, dist)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sampler.sample(target, n, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_items_always_other() {
        let mut vocab = Vocab::from_ids(["a", "b"]);
        vocab.set_frequencies(vec![0, 3, 1]);
        for seed in 0..20 {
            assert_eq!(sample_negatives(&vocab, 1, 1, NegativeDist::Uniform, seed).unwrap(), vec![2]);
            assert_eq!(
                sample_negatives(&vocab, 2, 1, NegativeDist::PopularityPow, seed).unwrap(),
                vec![1]
            );
        }
    }

    #[test]
    fn too_small_vocab_is_config_error() {
        let vocab = Vocab::from_ids(["a", "b", "c"]);
        assert!(matches!(
            sample_negatives(&vocab, 1, 3, NegativeDist::Uniform, 0),
            Err(DrimError::Config(_))
        ));
        let single = Vocab::from_ids(["a"]);
        assert!(NegativeSampler::new(&single, NegativeDist::Uniform).is_err());
    }

    #[test]
    fn never_returns_target_or_padding() {
        let mut vocab = Vocab::from_ids((0..5).map(|i| i.to_string()));
        vocab.set_frequencies(vec![0, 100, 1, 1, 1, 1]);
        let sampler = NegativeSampler::new(&vocab, NegativeDist::PopularityPow).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let negs = sampler.sample(1, 4, &mut rng).unwrap();
            assert!(negs.iter().all(|&i| i != 1 && (1..=5).contains(&i)));
        }
    }

    #[test]
    fn seeded_draws_repeat() {
        let vocab = Vocab::from_ids((0..50).map(|i| i.to_string()));
        let a = sample_negatives(&vocab, 7, 5, NegativeDist::Uniform, 42).unwrap();
        let b = sample_negatives(&vocab, 7, 5, NegativeDist::Uniform, 42).unwrap();
        assert_eq!(a, b);
    }
}
