//! The training loop: rollouts, one CTRL step on the encoder, one PPO pass on
//! the heads, per epoch.

use diffcore::{Adam, ParamSet, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{EnvKind, ExperimentConfig};
use super::metrics::MetricsRow;
use crate::analysis::silhouette;
use crate::clustering::{init_cluster_branch, renormalize_centroids};
use crate::encoder::EncoderSpec;
use crate::envs::{
    CompositeIsingTask, Environment, GridEnv, SeedRange, Transition, GRID_CHANNELS, GRID_SIZE,
    NUM_GRID_ACTIONS, NUM_MODELS,
};
use crate::error::Result;
use crate::mining::init_pred_branch;
use crate::objective::{ctrl_step, CtrlOutcome, CtrlSettings, ViewBatch};
use crate::rl::{
    compute_gae, init_heads, normalize_advantages, ppo_update, Collector, PpoSamples, PpoSettings,
    RolloutBatch,
};

pub fn encoder_spec(config: &ExperimentConfig) -> EncoderSpec {
    match config.env {
        EnvKind::Ising => {
            let n = config.ising.lattice_size;
            EncoderSpec::new([1, n, n], NUM_MODELS)
        }
        EnvKind::Gridworld => {
            EncoderSpec::new([GRID_CHANNELS, GRID_SIZE, GRID_SIZE], NUM_GRID_ACTIONS)
        }
    }
}

/// Training environments. Ising copies share one problem instance (the run
/// seed); gridworld copies sample training levels independently.
pub fn training_envs(config: &ExperimentConfig) -> Vec<Box<dyn Environment>> {
    (0..config.num_envs as u64)
        .map(|i| -> Box<dyn Environment> {
            match config.env {
                EnvKind::Ising => Box::new(CompositeIsingTask::new(
                    config.ising.clone(),
                    config.seed,
                    i,
                )),
                EnvKind::Gridworld => Box::new(GridEnv::sampled(
                    SeedRange::train(),
                    (config.seed << 16) | i,
                )),
            }
        })
        .collect()
}

/// Fresh parameters for every network, drawn from the run seed.
pub fn init_params(config: &ExperimentConfig) -> ParamSet {
    let spec = encoder_spec(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = spec.init(&mut rng);
    let view_dim = config.ctrl_settings().view_dim();
    init_cluster_branch(&mut params, view_dim, config.clusters, &mut rng);
    init_pred_branch(&mut params, view_dim, &mut rng);
    init_heads(&mut params, spec.num_actions, &mut rng);
    params
}

/// Names of parameters that only the CTRL objective trains.
pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("phi.") || name.starts_with("film.")
}

pub struct Trainer {
    config: ExperimentConfig,
    spec: EncoderSpec,
    settings: CtrlSettings,
    ppo: PpoSettings,
    params: ParamSet,
    ctrl_adam: Adam,
    rl_adam: Adam,
    collector: Collector,
    rng: ChaCha8Rng,
    epoch: usize,
    env_steps: u64,
    last_batch: Option<RolloutBatch>,
    last_ctrl: Option<CtrlOutcome>,
}

impl Trainer {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config);
        Ok(Self::with_params(config, params))
    }

    /// Starts from existing parameters, e.g. a loaded checkpoint.
    pub fn with_params(config: ExperimentConfig, params: ParamSet) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1 << 32);
        Self {
            spec: encoder_spec(&config),
            settings: config.ctrl_settings(),
            ppo: config.ppo_settings(),
            ctrl_adam: Adam::new(config.lr),
            rl_adam: Adam::new(config.lr),
            collector: Collector::new(training_envs(&config), config.seed, !config.serial),
            params,
            rng,
            epoch: 0,
            env_steps: 0,
            last_batch: None,
            last_ctrl: None,
            config,
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn settings(&self) -> &CtrlSettings {
        &self.settings
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn epochs(&self) -> usize {
        self.epoch
    }

    pub fn last_batch(&self) -> Option<&RolloutBatch> {
        self.last_batch.as_ref()
    }

    pub fn last_ctrl(&self) -> Option<&CtrlOutcome> {
        self.last_ctrl.as_ref()
    }

    pub fn finished(&self) -> bool {
        self.env_steps >= self.config.total_env_steps
    }

    /// Segments long enough for a view, capped at `max_views`.
    fn view_batch(&mut self, batch: &RolloutBatch) -> Result<Option<ViewBatch>> {
        let t = self.settings.keypoints;
        let mut segs: Vec<&[Transition]> = batch
            .segments()
            .into_iter()
            .filter(|s| s.len() >= t)
            .collect();
        if segs.len() < 2 {
            return Ok(None);
        }
        if segs.len() > self.config.max_views {
            segs.partial_shuffle(&mut self.rng, self.config.max_views);
            segs.truncate(self.config.max_views);
        }
        ViewBatch::sample(&self.spec, &segs, t, self.settings.mode, &mut self.rng).map(Some)
    }

    pub fn epoch(&mut self) -> Result<MetricsRow> {
        let batch = self
            .collector
            .collect(&self.spec, &self.params, self.config.n_timesteps)?;
        self.env_steps += batch.len() as u64;

        let ctrl = match self.view_batch(&batch)? {
            Some(views) => {
                let out = ctrl_step(
                    &self.spec,
                    &self.settings,
                    &self.params,
                    &views,
                    &mut self.rng,
                )?;
                if !self.settings.is_inert() {
                    self.ctrl_adam.step(&mut self.params, &out.grads);
                    renormalize_centroids(&mut self.params);
                }
                Some(out)
            }
            None => None,
        };

        // The heads see embeddings from the encoder as it is after the CTRL step.
        let obs: Vec<&Tensor> = batch.transitions().map(|t| &t.observation).collect();
        let embeddings = self.spec.embed(&self.params, &obs)?;
        let mut advantages = Vec::with_capacity(obs.len());
        let mut returns = Vec::with_capacity(obs.len());
        for (steps, &bootstrap) in batch.steps.iter().zip(&batch.bootstrap) {
            let rewards: Vec<f64> = steps.iter().map(|t| t.reward).collect();
            let values: Vec<f64> = steps.iter().map(|t| t.value_estimate).collect();
            let dones: Vec<bool> = steps.iter().map(|t| t.done).collect();
            let (adv, ret) = compute_gae(
                &rewards,
                &values,
                &dones,
                bootstrap,
                self.config.gamma,
                self.config.lambda,
            )?;
            advantages.extend(adv);
            returns.extend(ret);
        }
        let samples = PpoSamples {
            embeddings,
            actions: batch.transitions().map(|t| t.action).collect(),
            old_log_probs: batch.transitions().map(|t| t.log_prob).collect(),
            advantages: normalize_advantages(&advantages),
            returns,
        };
        let mut stats = Default::default();
        for _ in 0..self.config.n_epochs {
            stats = ppo_update(
                &mut self.params,
                &mut self.rl_adam,
                &samples,
                self.spec.num_actions,
                &self.ppo,
                &mut self.rng,
            )?;
        }

        let occupied = ctrl
            .as_ref()
            .map_or(0, |c| c.occupancy.iter().filter(|&&n| n > 0).count());
        let sil = match &ctrl {
            Some(c) if occupied >= 2 => silhouette(&c.projections, &c.labels).ok(),
            _ => None,
        };
        let fin = &batch.finished_returns;
        let row = MetricsRow {
            epoch: self.epoch,
            env_steps: self.env_steps,
            mean_train_return: (!fin.is_empty())
                .then(|| fin.iter().sum::<f64>() / fin.len() as f64),
            l_clust: ctrl.as_ref().map_or(0.0, |c| c.l_clust),
            l_pred: ctrl.as_ref().map_or(0.0, |c| c.l_pred),
            l_rl: stats.loss,
            entropy: stats.entropy,
            silhouette: sil,
            occupied_clusters: occupied,
            anchors: ctrl.as_ref().map_or(0, |c| c.anchors),
            mined_pairs: ctrl.as_ref().map_or(0, |c| c.mined_pairs),
        };
        self.epoch += 1;
        self.last_batch = Some(batch);
        self.last_ctrl = ctrl;
        Ok(row)
    }
}
