use std::path::Path;

use super::config::TrainConfig;
use crate::error::{DrimError, Result};
use crate::extractor::{self, ExtractorParams, FusionMlp};
use crate::ingest::{Dataset, Vocab};
use crate::numeric::{Container, DenseMatrix, ParamSlot};

/// Trained (or freshly initialized) model with the vocabularies it was built on.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub params: ExtractorParams,
    pub items: Vocab,
    pub users: Vec<String>,
}

impl Model {
    pub fn init(config: TrainConfig, items: Vocab, users: Vec<String>) -> Result<Self> {
        config.validate()?;
        let n_profile = if config.user_profile { users.len() } else { 0 };
        let params = ExtractorParams::init(items.len(), n_profile, config.dim, config.seed);
        Ok(Self {
            config,
            params,
            items,
            users,
        })
    }

    pub fn for_dataset(config: TrainConfig, data: &Dataset) -> Result<Self> {
        let items = Vocab::from_ids(data.vocab.ids().iter().cloned());
        Self::init(config, items, data.users.clone())
    }

    /// Profile features for a user: the user's own row when user-id
    /// profiles are enabled.
    pub fn profile_for(&self, user_index: usize) -> Vec<usize> {
        if self.params.profile_embeddings.is_some() {
            vec![user_index]
        } else {
            Vec::new()
        }
    }

    /// Profile features looked up by user id; empty without profiles.
    pub fn profile_for_id(&self, user_id: &str) -> Result<Vec<usize>> {
        if self.params.profile_embeddings.is_none() {
            return Ok(Vec::new());
        }
        self.users
            .iter()
            .position(|u| u == user_id)
            .map(|i| vec![i])
            .ok_or_else(|| DrimError::Precondition(format!("unknown user {user_id:?}")))
    }

    /// Post-fusion `K × d` interest vectors from the `max_len` most recent
    /// items of `history`.
    pub fn user_vectors(&self, history: &[usize], profile: &[usize]) -> Result<DenseMatrix> {
        let recent = &history[history.len().saturating_sub(self.config.max_len)..];
        if recent.is_empty() {
            return Err(DrimError::Precondition("empty history".into()));
        }
        let fwd = extractor::forward(&self.params, recent, profile, &self.config.routing(), None)?;
        Ok(fwd.output)
    }

    /// Same as [`Model::user_vectors`] for raw item ids; unknown ids are skipped.
    pub fn user_vectors_for_ids(&self, item_ids: &[&str], user_id: Option<&str>) -> Result<DenseMatrix> {
        let history: Vec<usize> = item_ids.iter().filter_map(|id| self.items.index_of(id)).collect();
        if history.is_empty() {
            return Err(DrimError::Precondition(
                "history has no item known to the model".into(),
            ));
        }
        let profile = match user_id {
            Some(u) => self.profile_for_id(u)?,
            None => Vec::new(),
        };
        self.user_vectors(&history, &profile)
    }

    pub fn to_container(&self) -> Container {
        let mut config = self.config.to_pairs();
        config.push(("routing_seed".into(), self.params.routing_seed.to_string()));
        let slots = self.params.slots();
        config.push(("adam_step".into(), slots[0].step.to_string()));
        let mut matrices = Vec::new();
        for s in &slots {
            matrices.push((s.name.clone(), s.value.clone()));
        }
        for s in &slots {
            matrices.push((format!("adam.m.{}", s.name), s.first_moment.clone()));
            matrices.push((format!("adam.v.{}", s.name), s.second_moment.clone()));
        }
        Container {
            d: self.config.dim as u32,
            k: self.config.k as u32,
            n_items: self.items.len() as u32,
            n_profile: self
                .params
                .profile_embeddings
                .as_ref()
                .map_or(0, |p| p.value.rows() as u32),
            config,
            tables: vec![
                ("items".into(), self.items.ids().to_vec()),
                ("users".into(), self.users.clone()),
            ],
            matrices,
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let mut config = TrainConfig::default();
        let mut routing_seed = None;
        let mut step = 0u64;
        for (k, v) in &c.config {
            match k.as_str() {
                "routing_seed" => routing_seed = v.parse().ok(),
                "adam_step" => {
                    step = v
                        .parse()
                        .map_err(|_| DrimError::Checkpoint(format!("bad adam_step {v:?}")))?
                }
                _ => config.set(k, v)?,
            }
        }
        let routing_seed =
            routing_seed.ok_or_else(|| DrimError::Checkpoint("missing routing_seed".into()))?;
        if config.dim != c.d as usize || config.k != c.k as usize {
            return Err(DrimError::Checkpoint("header and config disagree on d or k".into()));
        }
        let items = Vocab::from_ids(
            c.table("items")
                .ok_or_else(|| DrimError::Checkpoint("missing item table".into()))?
                .iter()
                .cloned(),
        );
        let users = c
            .table("users")
            .ok_or_else(|| DrimError::Checkpoint("missing user table".into()))?
            .to_vec();
        if items.len() != c.n_items as usize {
            return Err(DrimError::Checkpoint("item table size mismatch".into()));
        }

        let d = c.d as usize;
        let slot = |name: &str, shape: (usize, usize)| -> Result<ParamSlot> {
            let get = |n: &str| {
                c.matrix(n)
                    .cloned()
                    .ok_or_else(|| DrimError::Checkpoint(format!("missing matrix {n}")))
            };
            let value = get(name)?;
            if value.shape() != shape {
                return Err(DrimError::Checkpoint(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    value.shape()
                )));
            }
            let mut s = ParamSlot::new(name, value);
            s.first_moment = get(&format!("adam.m.{name}"))?;
            s.second_moment = get(&format!("adam.v.{name}"))?;
            if s.first_moment.shape() != shape || s.second_moment.shape() != shape {
                return Err(DrimError::Checkpoint(format!("optimizer state of {name} misshaped")));
            }
            s.step = step;
            Ok(s)
        };
        let n_profile = c.n_profile as usize;
        let (profile_embeddings, fusion) = if n_profile > 0 {
            (
                Some(slot("profile_embeddings", (n_profile, d))?),
                Some(FusionMlp {
                    w1: slot("fusion.w1", (4 * d, 2 * d))?,
                    b1: slot("fusion.b1", (1, 4 * d))?,
                    w2: slot("fusion.w2", (d, 4 * d))?,
                    b2: slot("fusion.b2", (1, d))?,
                }),
            )
        } else {
            (None, None)
        };
        let params = ExtractorParams {
            item_embeddings: slot("item_embeddings", (items.len() + 1, d))?,
            bilinear: slot("bilinear", (d, d))?,
            profile_embeddings,
            fusion,
            routing_seed,
        };
        Ok(Self {
            config,
            params,
            items,
            users,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(profile: bool) -> Model {
        let cfg = TrainConfig {
            dim: 4,
            k: 2,
            user_profile: profile,
            ..TrainConfig::default()
        };
        Model::init(cfg, Vocab::from_ids(["a", "b", "c"]), vec!["u0".into(), "u1".into()]).unwrap()
    }

    #[test]
    fn container_round_trip_preserves_forward() {
        for profile in [false, true] {
            let m = model(profile);
            let back = Model::from_container(&Container::from_bytes(&m.to_container().to_bytes()).unwrap())
                .unwrap();
            assert_eq!(back, m);
            let a = m.user_vectors(&[1, 3, 2], &m.profile_for(1)).unwrap();
            let b = back.user_vectors(&[1, 3, 2], &back.profile_for(1)).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-12);
        }
    }

    #[test]
    fn ids_and_indices_agree() {
        let m = model(true);
        let by_id = m.user_vectors_for_ids(&["a", "zzz", "c"], Some("u1")).unwrap();
        let by_index = m.user_vectors(&[1, 3], &[1]).unwrap();
        assert_eq!(by_id, by_index);
        assert!(m.user_vectors_for_ids(&["zzz"], None).is_err());
        assert!(m.user_vectors_for_ids(&["a"], Some("nobody")).is_err());
    }

    #[test]
    fn appending_an_action_changes_vectors() {
        let m = model(false);
        let before = m.user_vectors(&[1, 2], &[]).unwrap();
        let after = m.user_vectors(&[1, 2, 3], &[]).unwrap();
        assert_ne!(before, after);
        assert_eq!(before, m.user_vectors(&[1, 2], &[]).unwrap());
    }

    #[test]
    fn missing_matrix_is_reported() {
        let mut c = model(false).to_container();
        c.matrices.retain(|(n, _)| n != "bilinear");
        let err = Model::from_container(&c).unwrap_err();
        assert!(err.to_string().contains("bilinear"));
    }
}
