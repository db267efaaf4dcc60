use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};

/// Number of training levels; train seeds are `0..TRAIN_LEVELS`.
pub const TRAIN_LEVELS: u64 = 200;
/// Held-out seeds are `TRAIN_LEVELS..TRAIN_LEVELS + EVAL_LEVELS`.
pub const EVAL_LEVELS: u64 = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedSplit {
    Train,
    Eval,
}

/// Contiguous level-seed range tagged with its split.
///
/// Eval ranges can only be built through [`SeedRange::eval`], which rejects any
/// seed that belongs to the training set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedRange {
    split: SeedSplit,
    seeds: Range<u64>,
}

impl SeedRange {
    pub fn train() -> Self {
        Self {
            split: SeedSplit::Train,
            seeds: 0..TRAIN_LEVELS,
        }
    }

    pub fn default_eval() -> Self {
        Self {
            split: SeedSplit::Eval,
            seeds: TRAIN_LEVELS..TRAIN_LEVELS + EVAL_LEVELS,
        }
    }

    pub fn eval(seeds: Range<u64>) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::Empty("eval seed range"));
        }
        if seeds.start < TRAIN_LEVELS {
            return Err(Error::TrainSeedRequested { seed: seeds.start });
        }
        Ok(Self {
            split: SeedSplit::Eval,
            seeds,
        })
    }

    pub fn split(&self) -> SeedSplit {
        self.split
    }

    pub fn seeds(&self) -> Range<u64> {
        self.seeds.clone()
    }

    pub fn len(&self) -> usize {
        (self.seeds.end - self.seeds.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn contains(&self, seed: u64) -> bool {
        self.seeds.contains(&seed)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        rng.gen_range(self.seeds.clone())
    }

    pub fn is_disjoint(&self, other: &SeedRange) -> bool {
        self.seeds.end <= other.seeds.start || other.seeds.end <= self.seeds.start
    }
}
