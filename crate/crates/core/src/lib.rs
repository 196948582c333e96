//! Contrastive agent modeling for multi-agent reinforcement learning.
//!
//! An ego agent embeds its own observation trajectory with a transformer
//! encoder and attention pooling; the embedding conditions a PPO policy. The
//! encoder is trained with an InfoNCE objective on cropped and masked views of
//! stored episodes.

pub mod contrastive;
pub mod envs;
pub mod error;
pub mod eval;
pub mod model;
pub mod orchestrator;
pub mod ppo;
pub mod rng;

pub use error::{ClamError, Result};
