//! Experiment configuration: a flat `key = value` file split into sections.
//!
//! ```text
//! # comment
//! [ppo]
//! gamma = 0.999
//! ```
//!
//! Keys are addressed as `section.key`. Every key has a default, so an empty
//! file is a valid config. `render` produces the canonical form, which parses
//! back to the same value.

use std::fmt::Write;
use std::path::PathBuf;
use std::str::FromStr;

use crate::encoder::ViewMode;
use crate::envs::{CompositeIsingConfig, TRAIN_LEVELS};
use crate::error::{Error, Result};
use crate::objective::CtrlSettings;
use crate::rl::PpoSettings;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    Ising,
    Gridworld,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Ising => "ising",
            EnvKind::Gridworld => "gridworld",
        }
    }
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ising" => Ok(EnvKind::Ising),
            "gridworld" => Ok(EnvKind::Gridworld),
            other => Err(format!(
                "unknown environment `{other}` (expected ising or gridworld)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub seed: u64,
    pub total_env_steps: u64,
    pub output_dir: PathBuf,
    pub serial: bool,
    pub checkpoint_every: usize,

    pub gamma: f64,
    pub lambda: f64,
    pub n_timesteps: usize,
    pub n_epochs: usize,
    pub n_samples: usize,
    pub entropy_coef: f64,
    pub clip: f64,
    pub lr: f64,
    pub num_envs: usize,
    pub value_coef: f64,
    pub minibatches: usize,

    pub clusters: usize,
    pub neighbors: usize,
    pub keypoints: usize,
    pub temperature: f64,
    pub sinkhorn_iters: usize,
    pub anchors: Option<usize>,
    pub max_views: usize,
    pub consecutive_t: bool,
    pub no_action: bool,
    pub no_cluster: bool,
    pub no_pred: bool,

    pub ising: CompositeIsingConfig,

    pub eval_start: u64,
    pub eval_end: u64,
    pub eval_episodes_per_level: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Gridworld,
            seed: 0,
            total_env_steps: 500_000,
            output_dir: PathBuf::from("runs/default"),
            serial: false,
            checkpoint_every: 10,

            gamma: 0.999,
            lambda: 0.95,
            n_timesteps: 256,
            n_epochs: 1,
            n_samples: 8192,
            entropy_coef: 0.01,
            clip: 0.2,
            lr: 5e-4,
            num_envs: 32,
            value_coef: 0.5,
            minibatches: 8,

            clusters: 200,
            neighbors: 3,
            keypoints: 2,
            temperature: 0.3,
            sinkhorn_iters: 3,
            anchors: None,
            max_views: 256,
            consecutive_t: false,
            no_action: false,
            no_cluster: false,
            no_pred: false,

            ising: CompositeIsingConfig::default(),

            eval_start: TRAIN_LEVELS,
            eval_end: 2 * TRAIN_LEVELS,
            eval_episodes_per_level: 1,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::Config {
        key: key.to_string(),
        reason: format!("cannot parse `{value}`: {e}"),
    })
}

fn bad(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    /// Parses a config file on top of the defaults. Keys may appear once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut section = String::new();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |reason: String| bad(&format!("line {}", n + 1), reason);
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| at(format!("unterminated section header `{line}`")))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, found `{line}`")))?;
            let key = format!("{section}.{}", k.trim());
            if !seen.insert(key.clone()) {
                return Err(bad(&key, "duplicate key"));
            }
            config.set(&key, v.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one `section.key`. Does not re-validate.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "experiment.env" => self.env = v.parse().map_err(|e: String| bad(key, e))?,
            "experiment.seed" => self.seed = parse_value(key, v)?,
            "experiment.total_env_steps" => self.total_env_steps = parse_value(key, v)?,
            "experiment.output_dir" => self.output_dir = PathBuf::from(v),
            "experiment.serial" => self.serial = parse_value(key, v)?,
            "experiment.checkpoint_every" => self.checkpoint_every = parse_value(key, v)?,
            "ppo.gamma" => self.gamma = parse_value(key, v)?,
            "ppo.lambda" => self.lambda = parse_value(key, v)?,
            "ppo.n_timesteps" => self.n_timesteps = parse_value(key, v)?,
            "ppo.n_epochs" => self.n_epochs = parse_value(key, v)?,
            "ppo.n_samples" => self.n_samples = parse_value(key, v)?,
            "ppo.entropy_coef" => self.entropy_coef = parse_value(key, v)?,
            "ppo.clip" => self.clip = parse_value(key, v)?,
            "ppo.lr" => self.lr = parse_value(key, v)?,
            "ppo.num_envs" => self.num_envs = parse_value(key, v)?,
            "ppo.value_coef" => self.value_coef = parse_value(key, v)?,
            "ppo.minibatches" => self.minibatches = parse_value(key, v)?,
            "ctrl.clusters" => self.clusters = parse_value(key, v)?,
            "ctrl.neighbors" => self.neighbors = parse_value(key, v)?,
            "ctrl.keypoints" => self.keypoints = parse_value(key, v)?,
            "ctrl.temperature" => self.temperature = parse_value(key, v)?,
            "ctrl.sinkhorn_iters" => self.sinkhorn_iters = parse_value(key, v)?,
            "ctrl.anchors" => {
                self.anchors = if v == "auto" {
                    None
                } else {
                    Some(parse_value(key, v)?)
                }
            }
            "ctrl.max_views" => self.max_views = parse_value(key, v)?,
            "ctrl.consecutive_t" => self.consecutive_t = parse_value(key, v)?,
            "ctrl.no_action" => self.no_action = parse_value(key, v)?,
            "ctrl.no_cluster" => self.no_cluster = parse_value(key, v)?,
            "ctrl.no_pred" => self.no_pred = parse_value(key, v)?,
            "ising.lattice_size" => self.ising.lattice_size = parse_value(key, v)?,
            "ising.beta_min" => self.ising.beta_min = parse_value(key, v)?,
            "ising.beta_max" => self.ising.beta_max = parse_value(key, v)?,
            "ising.warmup_min" => self.ising.warmup_min = parse_value(key, v)?,
            "ising.warmup_max" => self.ising.warmup_max = parse_value(key, v)?,
            "ising.episode_length" => self.ising.episode_length = parse_value(key, v)?,
            "gridworld.eval_start" => self.eval_start = parse_value(key, v)?,
            "gridworld.eval_end" => self.eval_end = parse_value(key, v)?,
            "gridworld.eval_episodes_per_level" => {
                self.eval_episodes_per_level = parse_value(key, v)?
            }
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies `section.key=value` overrides, then validates.
    pub fn with_overrides<'a>(
        mut self,
        overrides: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| bad(o, "override must look like section.key=value"))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let check =
            |ok: bool, key: &str, reason: &str| if ok { Ok(()) } else { Err(bad(key, reason)) };
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        check(
            self.total_env_steps > 0,
            "experiment.total_env_steps",
            "must be positive",
        )?;
        check(
            self.checkpoint_every > 0,
            "experiment.checkpoint_every",
            "must be positive",
        )?;
        check(
            self.gamma > 0.0 && self.gamma <= 1.0,
            "ppo.gamma",
            "must lie in (0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.lambda),
            "ppo.lambda",
            "must lie in [0, 1]",
        )?;
        check(self.n_timesteps > 0, "ppo.n_timesteps", "must be positive")?;
        check(self.n_epochs > 0, "ppo.n_epochs", "must be positive")?;
        check(self.num_envs > 0, "ppo.num_envs", "must be positive")?;
        check(
            self.n_samples == self.num_envs * self.n_timesteps,
            "ppo.n_samples",
            "must equal num_envs * n_timesteps",
        )?;
        check(
            self.entropy_coef.is_finite() && self.entropy_coef >= 0.0,
            "ppo.entropy_coef",
            "must be non-negative",
        )?;
        check(finite_pos(self.clip), "ppo.clip", "must be positive")?;
        check(finite_pos(self.lr), "ppo.lr", "must be positive")?;
        check(
            self.value_coef.is_finite() && self.value_coef >= 0.0,
            "ppo.value_coef",
            "must be non-negative",
        )?;
        check(self.minibatches > 0, "ppo.minibatches", "must be positive")?;
        check(
            self.clusters >= 2,
            "ctrl.clusters",
            "need at least two clusters",
        )?;
        check(
            self.neighbors >= 1 && self.neighbors < self.clusters,
            "ctrl.neighbors",
            "must lie in [1, clusters)",
        )?;
        check(self.keypoints > 0, "ctrl.keypoints", "must be positive")?;
        check(
            finite_pos(self.temperature),
            "ctrl.temperature",
            "must be positive",
        )?;
        check(
            self.anchors != Some(0),
            "ctrl.anchors",
            "must be positive or auto",
        )?;
        check(
            self.max_views >= 2,
            "ctrl.max_views",
            "need at least two views",
        )?;
        check(
            self.ising.lattice_size >= 2,
            "ising.lattice_size",
            "must be at least 2",
        )?;
        check(
            self.ising.beta_min >= 0.0 && self.ising.beta_min <= self.ising.beta_max,
            "ising.beta_min",
            "need 0 <= beta_min <= beta_max",
        )?;
        check(
            self.ising.beta_max.is_finite(),
            "ising.beta_max",
            "must be finite",
        )?;
        check(
            self.ising.warmup_min <= self.ising.warmup_max,
            "ising.warmup_min",
            "must not exceed warmup_max",
        )?;
        check(
            self.ising.episode_length > 0,
            "ising.episode_length",
            "must be positive",
        )?;
        check(
            self.eval_start >= TRAIN_LEVELS,
            "gridworld.eval_start",
            "overlaps the training levels",
        )?;
        check(
            self.eval_end > self.eval_start,
            "gridworld.eval_end",
            "must exceed eval_start",
        )?;
        check(
            self.eval_episodes_per_level > 0,
            "gridworld.eval_episodes_per_level",
            "must be positive",
        )?;
        Ok(())
    }

    /// Canonical text form. `parse(render(c)) == c`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let anchors = self.anchors.map_or("auto".to_string(), |n| n.to_string());
        let i = &self.ising;
        // Writing to a String cannot fail.
        let _ = write!(
            s,
            "[experiment]\nenv = {}\nseed = {}\ntotal_env_steps = {}\noutput_dir = {}\nserial = {}\ncheckpoint_every = {}\n\n",
            self.env.name(),
            self.seed,
            self.total_env_steps,
            self.output_dir.display(),
            self.serial,
            self.checkpoint_every
        );
        let _ = write!(
            s,
            "[ppo]\ngamma = {}\nlambda = {}\nn_timesteps = {}\nn_epochs = {}\nn_samples = {}\nentropy_coef = {}\nclip = {}\nlr = {}\nnum_envs = {}\nvalue_coef = {}\nminibatches = {}\n\n",
            self.gamma,
            self.lambda,
            self.n_timesteps,
            self.n_epochs,
            self.n_samples,
            self.entropy_coef,
            self.clip,
            self.lr,
            self.num_envs,
            self.value_coef,
            self.minibatches
        );
        let _ = write!(
            s,
            "[ctrl]\nclusters = {}\nneighbors = {}\nkeypoints = {}\ntemperature = {}\nsinkhorn_iters = {}\nanchors = {}\nmax_views = {}\nconsecutive_t = {}\nno_action = {}\nno_cluster = {}\nno_pred = {}\n\n",
            self.clusters,
            self.neighbors,
            self.keypoints,
            self.temperature,
            self.sinkhorn_iters,
            anchors,
            self.max_views,
            self.consecutive_t,
            self.no_action,
            self.no_cluster,
            self.no_pred
        );
        let _ = write!(
            s,
            "[ising]\nlattice_size = {}\nbeta_min = {}\nbeta_max = {}\nwarmup_min = {}\nwarmup_max = {}\nepisode_length = {}\n\n",
            i.lattice_size, i.beta_min, i.beta_max, i.warmup_min, i.warmup_max, i.episode_length
        );
        let _ = write!(
            s,
            "[gridworld]\neval_start = {}\neval_end = {}\neval_episodes_per_level = {}\n",
            self.eval_start, self.eval_end, self.eval_episodes_per_level
        );
        s
    }

    pub fn ctrl_settings(&self) -> CtrlSettings {
        CtrlSettings {
            keypoints: self.keypoints,
            mode: if self.consecutive_t {
                ViewMode::Consecutive
            } else {
                ViewMode::Sampled
            },
            no_action: self.no_action,
            no_cluster: self.no_cluster,
            no_pred: self.no_pred,
            clusters: self.clusters,
            temperature: self.temperature,
            sinkhorn_iters: self.sinkhorn_iters,
            neighbors: self.neighbors,
            anchors: self.anchors,
        }
    }

    pub fn ppo_settings(&self) -> PpoSettings {
        PpoSettings {
            clip: self.clip,
            entropy_coef: self.entropy_coef,
            value_coef: self.value_coef,
            minibatches: self.minibatches,
        }
    }

    /// Keeps `n_samples` consistent after changing either factor.
    pub fn resize_rollout(&mut self, num_envs: usize, n_timesteps: usize) {
        self.num_envs = num_envs;
        self.n_timesteps = n_timesteps;
        self.n_samples = num_envs * n_timesteps;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(
            ExperimentConfig::parse("").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn render_round_trips_byte_for_byte() {
        let c = ExperimentConfig {
            env: EnvKind::Ising,
            anchors: Some(7),
            lr: 1e-3,
            no_pred: true,
            ..Default::default()
        };
        let text = c.render();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.render(), text);
    }

    #[test]
    fn comments_and_sections_parse() {
        let c =
            ExperimentConfig::parse("# x\n[ctrl]\n  clusters = 12 \n\n[experiment]\nenv=ising\n")
                .unwrap();
        assert_eq!(c.clusters, 12);
        assert_eq!(c.env, EnvKind::Ising);
    }

    #[test]
    fn errors_name_the_offending_key() {
        let err = |t: &str| match ExperimentConfig::parse(t) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("{other:?}"),
        };
        assert_eq!(err("[ppo]\nclip = -1\n"), "ppo.clip");
        assert_eq!(err("[ppo]\nwarp = 1\n"), "ppo.warp");
        assert_eq!(err("[ppo]\nnum_envs = 4\n"), "ppo.n_samples");
        assert_eq!(err("[ctrl]\nclusters = many\n"), "ctrl.clusters");
        assert_eq!(
            err("[gridworld]\neval_start = 10\n"),
            "gridworld.eval_start"
        );
        assert_eq!(err("[ppo]\nclip = 0.1\nclip = 0.3\n"), "ppo.clip");
        assert_eq!(err("[ppo\n"), "line 1");
        assert_eq!(err("\njunk\n"), "line 2");
    }

    #[test]
    fn overrides_apply_after_the_file() {
        let c = ExperimentConfig::parse("[ctrl]\nclusters = 12\n")
            .unwrap()
            .with_overrides(["ctrl.clusters=5", "ctrl.no_action=true"])
            .unwrap();
        assert_eq!(c.clusters, 5);
        assert!(c.no_action);
        assert!(ExperimentConfig::default()
            .with_overrides(["ctrl.clusters"])
            .is_err());
    }

    #[test]
    fn every_flag_subset_is_valid() {
        for mask in 0..16u8 {
            let c = ExperimentConfig {
                consecutive_t: mask & 1 != 0,
                no_action: mask & 2 != 0,
                no_cluster: mask & 4 != 0,
                no_pred: mask & 8 != 0,
                ..Default::default()
            };
            c.validate().unwrap();
            assert_eq!(ExperimentConfig::parse(&c.render()).unwrap(), c);
        }
    }
}
