//! Sampled-softmax matching loss, joint objectives, the training loop and
//! model checkpoints.

pub mod check;
pub mod config;
pub mod loss;
pub mod model;
pub mod train;

pub use check::{check_joint_gradients, joint_check_grid, JointCheck};
pub use config::TrainConfig;
pub use loss::{joint_loss, sampled_softmax_loss, Freeze, LossParts};
pub use model::Model;
pub use train::{samples_for, train, EpochStats, TrainReport};
