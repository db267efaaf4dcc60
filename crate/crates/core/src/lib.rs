pub mod analysis;
pub mod clustering;
pub mod encoder;
pub mod envs;
pub mod error;
pub mod mining;
pub mod nets;
pub mod objective;
pub mod rl;
pub mod runner;
pub mod verify;

pub use diffcore;
pub use error::{Error, Result};
