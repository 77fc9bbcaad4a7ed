use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::TrainConfig;
use super::loss::{joint_loss, Freeze};
use super::model::Model;
use crate::error::{DrimError, Result};
use crate::extractor::Gradients;
use crate::ingest::{Dataset, NegativeSampler, TrainSample};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_joint: f64,
    pub mean_softmax: f64,
    /// Unweighted; zero when the separator is inactive.
    pub mean_separator: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub samples_per_epoch: usize,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Default, Clone, Copy)]
struct Sums {
    joint: f64,
    softmax: f64,
    separator: f64,
}

/// Training samples with profile features filled in per `model`.
pub fn samples_for(model: &Model, data: &Dataset) -> Vec<TrainSample> {
    data.train_samples(model.config.max_len)
        .into_iter()
        .map(|mut s| {
            s.profile = model.profile_for(s.user_index);
            s
        })
        .collect()
}

fn batch_gradients(
    model: &Model,
    batch: &[(&TrainSample, Vec<usize>)],
    grads: &mut Gradients,
) -> Result<Sums> {
    let routing = model.config.routing();
    let separator = model.config.separator();
    let mut sums = Sums::default();
    for (sample, negs) in batch {
        let parts = joint_loss(
            &model.params,
            sample,
            negs,
            &routing,
            &separator,
            Freeze::default(),
            Some(grads),
        )?;
        if !parts.total.is_finite() {
            return Err(DrimError::NonFinite {
                param: "joint loss".into(),
                detail: format!(
                    "user {} target {} history {:?}: softmax {} separator {:?}",
                    sample.user_index, sample.target, sample.history, parts.softmax, parts.separator
                ),
            });
        }
        sums.joint += parts.total;
        sums.softmax += parts.softmax;
        sums.separator += parts.separator.unwrap_or(0.0);
    }
    Ok(sums)
}

/// Trains a fresh model on `data`.
///
/// Each epoch shuffles the samples with the seeded generator, draws
/// negatives in sample order, averages gradients over each mini-batch and
/// applies one Adam step per parameter. With `threads > 1` a batch is split
/// into contiguous per-worker chunks whose gradients are summed in chunk
/// order. A checkpoint is written after every epoch (and once before the
/// first) when `checkpoint` is given.
pub fn train(data: &Dataset, config: &TrainConfig, checkpoint: Option<&Path>) -> Result<(Model, TrainReport)> {
    let mut model = Model::for_dataset(config.clone(), data)?;
    let samples = samples_for(&model, data);
    if samples.is_empty() {
        return Err(DrimError::EmptyDataset("no training samples".into()));
    }
    let sampler = NegativeSampler::new(&data.vocab, config.neg_dist)?;
    let adam = config.adam();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| DrimError::Config(format!("thread pool: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport {
        samples_per_epoch: samples.len(),
        checkpoint: checkpoint.map(Path::to_path_buf),
        ..Default::default()
    };
    if let Some(path) = checkpoint {
        model.save(path)?;
    }

    let mut worker_grads: Vec<Gradients> = (0..config.threads).map(|_| model.params.zero_grads()).collect();
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut sums = Sums::default();
        for (b, chunk) in order.chunks(config.batch).enumerate() {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &samples[i];
                batch.push((s, sampler.sample(s.target, config.n_neg, &mut rng)?));
            }
            let per_worker = batch.len().div_ceil(config.threads);
            let model_ref = &model;
            let results: Vec<Result<Sums>> = if config.threads == 1 {
                vec![batch_gradients(model_ref, &batch, &mut worker_grads[0])]
            } else {
                pool.install(|| {
                    worker_grads
                        .par_iter_mut()
                        .zip(batch.par_chunks(per_worker.max(1)))
                        .map(|(g, part)| batch_gradients(model_ref, part, g))
                        .collect()
                })
            };
            for r in results {
                let s = r.map_err(|e| match e {
                    DrimError::NonFinite { param, detail } => DrimError::NonFinite {
                        param,
                        detail: format!("epoch {epoch} batch {b}: {detail}"),
                    },
                    other => other,
                })?;
                sums.joint += s.joint;
                sums.softmax += s.softmax;
                sums.separator += s.separator;
            }
            let inv = 1.0 / batch.len() as f64;
            let (first, rest) = worker_grads.split_first_mut().unwrap();
            for g in rest.iter_mut() {
                first.add_scaled(1.0, g);
                g.clear();
            }
            for (slot, g) in model.params.slots_mut().into_iter().zip(&first.tensors) {
                slot.grad.add_scaled(inv, g);
                slot.adam_step(&adam)?;
            }
            first.clear();
        }
        let n = samples.len() as f64;
        let stats = EpochStats {
            epoch,
            mean_joint: sums.joint / n,
            mean_softmax: sums.softmax / n,
            mean_separator: sums.separator / n,
            wall_secs: start.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: joint {:.6} softmax {:.6} separator {:.6} ({:.1}s)",
            stats.mean_joint, stats.mean_softmax, stats.mean_separator, stats.wall_secs
        );
        report.epochs.push(stats);
        if let Some(path) = checkpoint {
            model.save(path)?;
        }
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Interaction, UserSequence, Vocab};
    use crate::regularizers::SeparatorKind;

    fn toy_dataset() -> Dataset {
        let mut data = Vec::new();
        for u in 0..6 {
            for t in 0..10u64 {
                let item = (u * 3 + t as usize) % 12;
                data.push(Interaction::new(format!("u{u}"), format!("i{item}"), t));
            }
        }
        Dataset::prepare(data, 1, 1, 0.8).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            dim: 8,
            k: 2,
            batch: 8,
            epochs: 2,
            n_neg: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let data = toy_dataset();
        let cfg = TrainConfig {
            epochs: 0,
            ..small_config()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let (model, report) = train(&data, &cfg, Some(&path)).unwrap();
        assert!(report.epochs.is_empty());
        let init = Model::for_dataset(cfg, &data).unwrap();
        assert_eq!(Model::load(&path).unwrap(), init);
        assert_eq!(model, init);
    }

    #[test]
    fn single_sample_loss_decreases() {
        let vocab = Vocab::from_ids((0..10).map(|i| format!("i{i}")));
        let data = Dataset {
            vocab: {
                let mut v = vocab;
                v.set_frequencies(vec![0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1]);
                v
            },
            users: vec!["u".into()],
            sequences: vec![UserSequence {
                user_index: 0,
                item_indices: vec![3, 7, 9],
                split_point: 2,
            }],
        };
        let cfg = TrainConfig {
            dim: 8,
            k: 2,
            epochs: 50,
            batch: 1,
            n_neg: 3,
            separator: SeparatorKind::None,
            lambda: 0.0,
            lr: 0.01,
            ..TrainConfig::default()
        };
        let (_, report) = train(&data, &cfg, None).unwrap();
        let first = report.epochs.first().unwrap().mean_softmax;
        let last = report.epochs.last().unwrap().mean_softmax;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn same_seed_same_losses() {
        let data = toy_dataset();
        let a = train(&data, &small_config(), None).unwrap();
        let b = train(&data, &small_config(), None).unwrap();
        let losses = |r: &TrainReport| r.epochs.iter().map(|e| e.mean_joint).collect::<Vec<_>>();
        assert_eq!(losses(&a.1), losses(&b.1));
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn multi_worker_matches_single_worker_closely() {
        let data = toy_dataset();
        let one = train(&data, &small_config(), None).unwrap().0;
        let cfg = TrainConfig {
            threads: 3,
            ..small_config()
        };
        let three = train(&data, &cfg, None).unwrap().0;
        let diff = one.params.item_embeddings.value.max_abs_diff(&three.params.item_embeddings.value);
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn padding_row_stays_zero() {
        let data = toy_dataset();
        let (model, _) = train(&data, &small_config(), None).unwrap();
        assert!(model.params.item_embeddings.value.row(0).iter().all(|&x| x == 0.0));
    }
}
