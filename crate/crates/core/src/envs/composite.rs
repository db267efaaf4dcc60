use diffcore::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ising::{hamming, Dynamics, IsingModel};
use super::{Environment, StepOutcome};
use crate::error::{Error, Result};

pub const NUM_MODELS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeIsingConfig {
    pub lattice_size: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub warmup_min: usize,
    pub warmup_max: usize,
    pub episode_length: usize,
}

impl Default for CompositeIsingConfig {
    fn default() -> Self {
        Self {
            lattice_size: 32,
            beta_min: 0.01,
            beta_max: 0.3,
            warmup_min: 50,
            warmup_max: 200,
            episode_length: 100,
        }
    }
}

impl CompositeIsingConfig {
    /// The five model temperatures, evenly spaced over `[beta_min, beta_max]`.
    pub fn betas(&self) -> [f64; NUM_MODELS] {
        let step = (self.beta_max - self.beta_min) / (NUM_MODELS - 1) as f64;
        std::array::from_fn(|k| self.beta_min + step * k as f64)
    }
}

/// Five Ising chains the agent picks between, plus a hidden goal chain.
///
/// All six chains use heat-bath updates driven by one shared uniform per site
/// per sweep. Under shared noise, chains with close temperatures stay close, so
/// the model whose β is nearest the goal's β* tracks the goal best. The goal
/// chain keeps evolving with the others and rewards compare against its current
/// configuration.
#[derive(Clone, Debug)]
pub struct CompositeIsingTask {
    config: CompositeIsingConfig,
    goal_beta: f64,
    rng: ChaCha8Rng,
    models: Vec<IsingModel>,
    goal: IsingModel,
    t: usize,
    done: bool,
}

impl CompositeIsingTask {
    /// `instance_seed` fixes β* (one problem instance); `stream` separates
    /// parallel copies of the same instance.
    pub fn new(config: CompositeIsingConfig, instance_seed: u64, stream: u64) -> Self {
        assert!(config.warmup_min <= config.warmup_max);
        assert!(config.beta_min > 0.0 && config.beta_min <= config.beta_max);
        let mut instance_rng = ChaCha8Rng::seed_from_u64(instance_seed);
        let goal_beta = instance_rng.gen_range(config.beta_min..=config.beta_max);
        let mut rng = ChaCha8Rng::seed_from_u64(instance_seed);
        rng.set_stream(stream.wrapping_add(1));
        let mut task = Self {
            models: Vec::new(),
            goal: IsingModel::from_spins(1, vec![0], goal_beta, Dynamics::HeatBath, 0),
            config,
            goal_beta,
            rng,
            t: 0,
            done: true,
        };
        task.reset();
        task
    }

    pub fn config(&self) -> &CompositeIsingConfig {
        &self.config
    }

    /// Hidden from the agent; exposed for evaluation baselines.
    pub fn goal_beta(&self) -> f64 {
        self.goal_beta
    }

    /// Constant action whose model temperature is nearest β*; lowest index on ties.
    pub fn oracle_action(&self) -> usize {
        nearest_model(&self.config.betas(), self.goal_beta)
    }

    pub fn models(&self) -> &[IsingModel] {
        &self.models
    }

    pub fn goal(&self) -> &IsingModel {
        &self.goal
    }

    fn shared_sweep(&mut self) {
        let sites = self.config.lattice_size * self.config.lattice_size;
        let uniforms: Vec<f64> = (0..sites).map(|_| self.rng.gen()).collect();
        for m in &mut self.models {
            m.sweep_with(&uniforms);
        }
        self.goal.sweep_with(&uniforms);
    }

    fn lattice(&self, model: usize) -> Tensor {
        let n = self.config.lattice_size;
        Tensor::new(vec![1, n, n], self.models[model].as_f64()).expect("lattice shape")
    }
}

pub(crate) fn nearest_model(betas: &[f64], target: f64) -> usize {
    let mut best = 0;
    for (k, b) in betas.iter().enumerate() {
        if (b - target).abs() < (betas[best] - target).abs() {
            best = k;
        }
    }
    best
}

impl Environment for CompositeIsingTask {
    fn observation_shape(&self) -> [usize; 3] {
        [1, self.config.lattice_size, self.config.lattice_size]
    }

    fn num_actions(&self) -> usize {
        NUM_MODELS
    }

    fn reset(&mut self) -> Tensor {
        let n = self.config.lattice_size;
        let fresh = |rng: &mut ChaCha8Rng| {
            (0..n * n)
                .map(|_| rng.gen_range(0..2u8))
                .collect::<Vec<_>>()
        };
        self.models = self
            .config
            .betas()
            .iter()
            .map(|&b| IsingModel::from_spins(n, fresh(&mut self.rng), b, Dynamics::HeatBath, 0))
            .collect();
        self.goal = IsingModel::from_spins(
            n,
            fresh(&mut self.rng),
            self.goal_beta,
            Dynamics::HeatBath,
            0,
        );
        let warmup = self
            .rng
            .gen_range(self.config.warmup_min..=self.config.warmup_max);
        for _ in 0..warmup {
            self.shared_sweep();
        }
        self.t = 0;
        self.done = false;
        self.lattice(0)
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if action >= NUM_MODELS {
            return Err(Error::ActionOutOfRange {
                action,
                num_actions: NUM_MODELS,
            });
        }
        if self.done {
            return Err(Error::EpisodeDone);
        }
        self.shared_sweep();
        self.t += 1;
        self.done = self.t >= self.config.episode_length;
        let d = hamming(self.models[action].spins(), self.goal.spins());
        Ok(StepOutcome {
            observation: self.lattice(action),
            reward: -(d as f64),
            done: self.done,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CompositeIsingConfig {
        CompositeIsingConfig {
            lattice_size: 8,
            warmup_min: 2,
            warmup_max: 4,
            episode_length: 5,
            ..Default::default()
        }
    }

    #[test]
    fn betas_form_a_uniform_grid() {
        let b = CompositeIsingConfig::default().betas();
        assert_eq!(b[0], 0.01);
        assert!((b[4] - 0.3).abs() < 1e-15);
        for w in b.windows(2) {
            assert!((w[1] - w[0] - 0.0725).abs() < 1e-12);
        }
    }

    #[test]
    fn reward_is_minus_hamming_to_goal() {
        let mut task = CompositeIsingTask::new(small(), 3, 0);
        for a in 0..NUM_MODELS {
            let out = task.step(a).unwrap();
            let d = task.models()[a].hamming(task.goal());
            assert_eq!(out.reward, -(d as f64));
        }
    }

    #[test]
    fn identical_lattice_gives_zero_reward() {
        let mut task = CompositeIsingTask::new(small(), 3, 0);
        // Same spins and same β under shared noise stay identical through the sweep.
        task.models[2] = IsingModel::from_spins(
            8,
            task.goal.spins().to_vec(),
            task.goal_beta,
            Dynamics::HeatBath,
            0,
        );
        let out = task.step(2).unwrap();
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn observation_is_the_chosen_model() {
        let mut task = CompositeIsingTask::new(small(), 5, 1);
        let out = task.step(3).unwrap();
        assert_eq!(out.observation.data(), task.models()[3].as_f64().as_slice());
        assert_eq!(out.observation.shape(), &[1, 8, 8]);
    }

    #[test]
    fn bad_action_and_step_after_done_fail() {
        let mut task = CompositeIsingTask::new(small(), 0, 0);
        assert!(matches!(task.step(5), Err(Error::ActionOutOfRange { .. })));
        for _ in 0..5 {
            task.step(0).unwrap();
        }
        assert!(matches!(task.step(0), Err(Error::EpisodeDone)));
        task.reset();
        assert!(task.step(0).is_ok());
    }

    #[test]
    fn trace_is_a_function_of_seed_and_actions() {
        let run = || {
            let mut task = CompositeIsingTask::new(small(), 11, 2);
            let mut trace = vec![task.reset().into_data()];
            for a in [0, 4, 2, 2, 1] {
                let out = task.step(a).unwrap();
                trace.push(out.observation.into_data());
                trace.push(vec![out.reward]);
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn copies_of_an_instance_share_the_goal_temperature() {
        let a = CompositeIsingTask::new(small(), 9, 0);
        let b = CompositeIsingTask::new(small(), 9, 7);
        assert_eq!(a.goal_beta(), b.goal_beta());
        assert_ne!(a.goal().spins(), b.goal().spins());
    }

    #[test]
    fn nearest_model_tracks_the_goal_best() {
        let cfg = CompositeIsingConfig::default();
        let mut task = CompositeIsingTask::new(cfg, 21, 0);
        let mut totals = [0.0; NUM_MODELS];
        for _ in 0..3 {
            task.reset();
            for _ in 0..20 {
                task.step(0).unwrap();
                for (k, t) in totals.iter_mut().enumerate() {
                    *t += task.models()[k].hamming(task.goal()) as f64;
                }
            }
        }
        let best = totals
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(
            best,
            task.oracle_action(),
            "{totals:?} beta* {}",
            task.goal_beta()
        );
    }
}
