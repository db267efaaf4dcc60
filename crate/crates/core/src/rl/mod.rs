//! PPO on top of frozen-to-RL embeddings: advantage estimation, policy and
//! value heads, rollout collection and the clipped update.

pub mod gae;
pub mod heads;
pub mod ppo;
pub mod rollout;

pub use gae::{compute_gae, normalize_advantages, ADVANTAGE_STD_FLOOR};
pub use heads::{evaluate_heads, greedy_action, heads, init_heads, log_softmax, sample_action};
pub use ppo::{ppo_loss_graph, ppo_update, PpoNodes, PpoSamples, PpoSettings, PpoStats};
pub use rollout::{Collector, RolloutBatch};
