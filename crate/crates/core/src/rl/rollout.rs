use diffcore::{ParamSet, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::heads::{evaluate_heads, sample_action};
use crate::encoder::EncoderSpec;
use crate::envs::{Environment, StepOutcome, Transition};
use crate::error::Result;

/// Steps collected from every environment under one parameter snapshot.
#[derive(Clone, Debug, Default)]
pub struct RolloutBatch {
    /// `steps[e]` holds environment `e`'s transitions in time order.
    pub steps: Vec<Vec<Transition>>,
    /// Value estimate of the observation following each environment's last step.
    pub bootstrap: Vec<f64>,
    /// Undiscounted returns of episodes that finished during collection.
    pub finished_returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Maximal runs of steps within one episode, split at `done` and at the
    /// rollout boundary.
    pub fn segments(&self) -> Vec<&[Transition]> {
        let mut out = Vec::new();
        for env in &self.steps {
            let mut start = 0;
            for (i, tr) in env.iter().enumerate() {
                if tr.done {
                    out.push(&env[start..=i]);
                    start = i + 1;
                }
            }
            if start < env.len() {
                out.push(&env[start..]);
            }
        }
        out
    }

    /// All transitions, environment-major.
    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.steps.iter().flatten()
    }
}

/// A set of environments advanced in lockstep by the current policy.
pub struct Collector {
    envs: Vec<Box<dyn Environment>>,
    obs: Vec<Tensor>,
    rngs: Vec<ChaCha8Rng>,
    running: Vec<f64>,
    parallel: bool,
}

impl Collector {
    /// Resets every environment. Each gets its own action-sampling stream.
    pub fn new(mut envs: Vec<Box<dyn Environment>>, seed: u64, parallel: bool) -> Self {
        let obs = envs.iter_mut().map(|e| e.reset()).collect();
        let rngs = (0..envs.len())
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(i as u64 + 1);
                r
            })
            .collect();
        let running = vec![0.0; envs.len()];
        Self {
            envs,
            obs,
            rngs,
            running,
            parallel,
        }
    }

    pub fn num_envs(&self) -> usize {
        self.envs.len()
    }

    fn policy(&self, spec: &EncoderSpec, params: &ParamSet) -> Result<(Tensor, Vec<f64>)> {
        let refs: Vec<&Tensor> = self.obs.iter().collect();
        let emb = spec.embed(params, &refs)?;
        evaluate_heads(params, &emb, spec.num_actions)
    }

    /// `steps` transitions per environment. Parameters are only read.
    pub fn collect(
        &mut self,
        spec: &EncoderSpec,
        params: &ParamSet,
        steps: usize,
    ) -> Result<RolloutBatch> {
        let n = self.envs.len();
        let mut batch = RolloutBatch {
            steps: (0..n).map(|_| Vec::with_capacity(steps)).collect(),
            ..Default::default()
        };
        for _ in 0..steps {
            let (logits, values) = self.policy(spec, params)?;
            let picks: Vec<(usize, f64)> = self
                .rngs
                .iter_mut()
                .enumerate()
                .map(|(i, rng)| sample_action(logits.row(i), rng))
                .collect();
            let step = |(env, &(a, _)): (&mut Box<dyn Environment>, &(usize, f64))| -> Result<(StepOutcome, Tensor)> {
                let out = env.step(a)?;
                let next = if out.done { env.reset() } else { out.observation.clone() };
                Ok((out, next))
            };
            let results: Vec<Result<(StepOutcome, Tensor)>> = if self.parallel {
                self.envs
                    .par_iter_mut()
                    .zip(picks.par_iter())
                    .map(step)
                    .collect()
            } else {
                self.envs.iter_mut().zip(picks.iter()).map(step).collect()
            };
            for (i, r) in results.into_iter().enumerate() {
                let (out, next) = r?;
                let obs = std::mem::replace(&mut self.obs[i], next);
                self.running[i] += out.reward;
                if out.done {
                    batch.finished_returns.push(self.running[i]);
                    self.running[i] = 0.0;
                }
                batch.steps[i].push(Transition {
                    observation: obs,
                    action: picks[i].0,
                    reward: out.reward,
                    done: out.done,
                    value_estimate: values[i],
                    log_prob: picks[i].1,
                });
            }
        }
        batch.bootstrap = self.policy(spec, params)?.1;
        Ok(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{CompositeIsingConfig, CompositeIsingTask, GridEnv, SeedRange};
    use crate::rl::heads::init_heads;

    fn ising_envs(n: usize) -> Vec<Box<dyn Environment>> {
        let cfg = CompositeIsingConfig {
            lattice_size: 8,
            warmup_min: 1,
            warmup_max: 2,
            episode_length: 6,
            ..Default::default()
        };
        (0..n)
            .map(|i| {
                Box::new(CompositeIsingTask::new(cfg.clone(), 7, i as u64)) as Box<dyn Environment>
            })
            .collect()
    }

    fn params(spec: &EncoderSpec) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = spec.init(&mut rng);
        init_heads(&mut p, spec.num_actions, &mut rng);
        p
    }

    #[test]
    fn batch_shape_and_segments() {
        let spec = EncoderSpec::new([1, 8, 8], 5);
        let p = params(&spec);
        let mut c = Collector::new(ising_envs(3), 1, false);
        let b = c.collect(&spec, &p, 10).unwrap();
        assert_eq!(b.len(), 30);
        assert_eq!(b.bootstrap.len(), 3);
        // Episodes of 6 steps: each env yields one full episode and a 4-step tail.
        assert_eq!(b.finished_returns.len(), 3);
        let seg_lens: Vec<usize> = b.segments().iter().map(|s| s.len()).collect();
        assert_eq!(seg_lens, vec![6, 4, 6, 4, 6, 4]);
    }

    #[test]
    fn serial_and_parallel_collection_agree() {
        let spec = EncoderSpec::new([1, 8, 8], 5);
        let p = params(&spec);
        let run = |parallel| {
            let mut c = Collector::new(ising_envs(4), 3, parallel);
            let b = c.collect(&spec, &p, 8).unwrap();
            b.transitions()
                .map(|t| {
                    (
                        t.action,
                        t.reward.to_bits(),
                        t.log_prob.to_bits(),
                        t.observation.data().to_vec(),
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(false), run(false));
        assert_eq!(run(false), run(true));
    }

    #[test]
    fn reset_after_done_draws_a_new_training_level() {
        let spec = EncoderSpec::new([5, 13, 13], 4);
        let p = params(&spec);
        let envs: Vec<Box<dyn Environment>> = (0..2)
            .map(|i| Box::new(GridEnv::sampled(SeedRange::train(), i)) as Box<dyn Environment>)
            .collect();
        let mut c = Collector::new(envs, 0, false);
        let b = c.collect(&spec, &p, 300).unwrap();
        // The time limit alone forces at least one episode boundary per env.
        for env in &b.steps {
            let first_done = env.iter().position(|t| t.done).unwrap();
            assert!(first_done < 256);
        }
    }
}
