//! Cluster-count sweep on the composite Ising task.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EnvKind, ExperimentConfig};
use super::train::Trainer;
use crate::envs::{CompositeIsingTask, Environment, NUM_MODELS};
use crate::error::{Error, Result};

pub const SWEEP_CLUSTERS: [usize; 6] = [2, 4, 5, 6, 10, 50];

/// Mean episode return of the nearest-model policy and of uniform random
/// actions on the run's problem instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsingBaselines {
    pub oracle: f64,
    pub random: f64,
}

impl IsingBaselines {
    /// 0 for the oracle, -1 for random play.
    pub fn normalize(&self, ret: f64) -> f64 {
        let span = self.oracle - self.random;
        if span.abs() < f64::EPSILON {
            0.0
        } else {
            (ret - self.oracle) / span
        }
    }
}

pub fn ising_baselines(config: &ExperimentConfig, episodes: usize) -> Result<IsingBaselines> {
    let run = |oracle: bool| -> Result<f64> {
        let mut total = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
        for k in 0..episodes {
            // Streams far from the training copies.
            let mut env =
                CompositeIsingTask::new(config.ising.clone(), config.seed, 1_000_000 + k as u64);
            env.reset();
            loop {
                let a = if oracle {
                    env.oracle_action()
                } else {
                    rng.gen_range(0..NUM_MODELS)
                };
                let out = env.step(a)?;
                total += out.reward;
                if out.done {
                    break;
                }
            }
        }
        Ok(total / episodes.max(1) as f64)
    };
    Ok(IsingBaselines {
        oracle: run(true)?,
        random: run(false)?,
    })
}

/// Final numbers of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub clusters: usize,
    pub seed: u64,
    /// Mean return over the final epochs, normalized against the baselines.
    pub normalized_return: f64,
    pub raw_return: f64,
    pub silhouette: f64,
    pub baselines: IsingBaselines,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub clusters: usize,
    pub mean_return: f64,
    pub mean_silhouette: f64,
    /// Silhouette change from the previous row, per unit of cluster count.
    pub silhouette_change: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub runs: Vec<SweepRun>,
    pub rows: Vec<SweepRow>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// `|s_k - s_{k-1}| / (E_k - E_{k-1})` along the sorted cluster counts.
pub fn silhouette_changes(clusters: &[usize], silhouettes: &[f64]) -> Vec<Option<f64>> {
    (0..clusters.len())
        .map(|k| {
            (k > 0).then(|| {
                (silhouettes[k] - silhouettes[k - 1]).abs() / (clusters[k] - clusters[k - 1]) as f64
            })
        })
        .collect()
}

/// Index of the largest change, if any transition exists.
pub fn largest_change(changes: &[Option<f64>]) -> Option<usize> {
    changes
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| (i, c)))
        .fold(None, |best: Option<(usize, f64)>, (i, c)| match best {
            Some((_, b)) if b >= c => best,
            _ => Some((i, c)),
        })
        .map(|(i, _)| i)
}

/// Trains one run to its step budget and summarizes the final `tail`
/// fraction of epochs (at least one).
pub fn run_sweep_point(
    config: &ExperimentConfig,
    tail: f64,
    baseline_episodes: usize,
) -> Result<SweepRun> {
    let mut trainer = Trainer::new(config.clone())?;
    let mut rows = Vec::new();
    while !trainer.finished() {
        rows.push(trainer.epoch()?);
    }
    let keep = ((rows.len() as f64 * tail).ceil() as usize).clamp(1, rows.len());
    let last = &rows[rows.len() - keep..];
    let raw_return = mean(last.iter().filter_map(|r| r.mean_train_return));
    let silhouette = mean(last.iter().filter_map(|r| r.silhouette));
    let baselines = ising_baselines(config, baseline_episodes)?;
    Ok(SweepRun {
        clusters: config.clusters,
        seed: config.seed,
        normalized_return: baselines.normalize(raw_return),
        raw_return,
        silhouette,
        baselines,
    })
}

/// Trains one run per (cluster count, seed) and tabulates the means.
pub fn ising_cluster_sweep(
    base: &ExperimentConfig,
    clusters: &[usize],
    seeds: &[u64],
    tail: f64,
    baseline_episodes: usize,
    mut progress: impl FnMut(&SweepRun),
) -> Result<SweepTable> {
    if clusters.is_empty() || seeds.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    let mut sorted = clusters.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut runs = Vec::new();
    for &c in &sorted {
        for &seed in seeds {
            let mut config = base.clone();
            config.env = EnvKind::Ising;
            config.clusters = c;
            config.neighbors = base.neighbors.min(c - 1);
            config.seed = seed;
            let run = run_sweep_point(&config, tail, baseline_episodes)?;
            progress(&run);
            runs.push(run);
        }
    }
    let per = |c: usize| runs.iter().filter(move |r| r.clusters == c);
    let sil: Vec<f64> = sorted
        .iter()
        .map(|&c| mean(per(c).map(|r| r.silhouette)))
        .collect();
    let changes = silhouette_changes(&sorted, &sil);
    let rows = sorted
        .iter()
        .zip(sil)
        .zip(changes)
        .map(|((&c, s), ch)| SweepRow {
            clusters: c,
            mean_return: mean(per(c).map(|r| r.normalized_return)),
            mean_silhouette: s,
            silhouette_change: ch,
        })
        .collect();
    Ok(SweepTable { runs, rows })
}

impl SweepTable {
    /// Per-seed silhouette changes along the sorted cluster counts.
    pub fn seed_changes(&self, seed: u64) -> (Vec<usize>, Vec<Option<f64>>) {
        let mut runs: Vec<&SweepRun> = self.runs.iter().filter(|r| r.seed == seed).collect();
        runs.sort_by_key(|r| r.clusters);
        let clusters: Vec<usize> = runs.iter().map(|r| r.clusters).collect();
        let sil: Vec<f64> = runs.iter().map(|r| r.silhouette).collect();
        let changes = silhouette_changes(&clusters, &sil);
        (clusters, changes)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("clusters,mean_return,silhouette,silhouette_change\n");
        for r in &self.rows {
            let ch = r
                .silhouette_change
                .map_or(String::new(), |c| format!("{c:.6}"));
            s.push_str(&format!(
                "{},{:.6},{:.6},{}\n",
                r.clusters, r.mean_return, r.mean_silhouette, ch
            ));
        }
        s
    }
}
