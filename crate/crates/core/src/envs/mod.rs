//! Episodic task families: the composite Ising matching domain and a
//! seed-indexed procedural gridworld.

mod composite;
mod grid;
mod ising;
mod seeds;

pub use composite::{CompositeIsingConfig, CompositeIsingTask, NUM_MODELS};
pub use grid::{
    bfs_distance, generate_level, Cell, GridEnv, GridLevel, DEFAULT_MAX_STEPS, GOAL_REWARD,
    GRID_CHANNELS, GRID_SIZE, HAZARD_REWARD, NUM_COLORS, NUM_GRID_ACTIONS,
};
pub use ising::{Dynamics, IsingModel};
pub use seeds::{SeedRange, SeedSplit, EVAL_LEVELS, TRAIN_LEVELS};

use diffcore::Tensor;

use crate::error::Result;

/// Result of one environment step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub observation: Tensor,
    pub reward: f64,
    pub done: bool,
}

/// One collected step: the observation the agent acted on, its action and
/// what came back, plus the policy's value and log-probability at that step.
#[derive(Clone, Debug)]
pub struct Transition {
    pub observation: Tensor,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    pub value_estimate: f64,
    pub log_prob: f64,
}

pub trait Environment: Send {
    /// `[channels, height, width]` of every observation.
    fn observation_shape(&self) -> [usize; 3];

    fn num_actions(&self) -> usize;

    /// Starts a new episode, sampling a fresh task where the family has one.
    fn reset(&mut self) -> Tensor;

    fn step(&mut self, action: usize) -> Result<StepOutcome>;
}
