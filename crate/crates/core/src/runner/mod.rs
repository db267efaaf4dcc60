//! Experiment orchestration: configuration, training runs and their
//! artifacts, evaluation, the Ising sweep and plots.

pub mod config;
pub mod eval;
pub mod metrics;
pub mod plots;
pub mod sweep;
pub mod train;

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

pub use config::{EnvKind, ExperimentConfig};
pub use eval::{eval_checkpoint, eval_zero_shot, EvalPolicy, EvalReport};
pub use metrics::{metrics_to_csv, parse_metrics, MetricsRow, MetricsWriter, METRICS_HEADER};
pub use plots::{emit_plots, emit_plots_from_csv, Plot};
pub use sweep::{
    ising_baselines, ising_cluster_sweep, IsingBaselines, SweepRow, SweepRun, SweepTable,
    SWEEP_CLUSTERS,
};
pub use train::{encoder_spec, init_params, is_encoder_param, Trainer};

use crate::analysis::{
    bisim_consistency_probe, silhouette, temporal_cluster_similarity, BisimReport,
};
use crate::envs::Transition;
use crate::error::Result;
use crate::objective::assign_windows;

/// Segments used by the end-of-run analysis.
const PROBE_SEGMENTS: usize = 8;

/// Diagnostics computed from the final rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisReport {
    pub silhouette: Option<f64>,
    /// Mean cosine similarity of centroids assigned to adjacent windows.
    pub temporal_similarity: Option<f64>,
    pub temporal_pairs: usize,
    pub bisim: Option<BisimReport>,
}

impl AnalysisReport {
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "silhouette,{}", opt(self.silhouette));
        let _ = writeln!(s, "temporal_similarity,{}", opt(self.temporal_similarity));
        let _ = writeln!(s, "temporal_pairs,{}", self.temporal_pairs);
        if let Some(b) = &self.bisim {
            let _ = writeln!(s, "w1_same_cluster,{}", b.same_cluster_mean);
            let _ = writeln!(s, "w1_cross_cluster,{}", b.cross_cluster_mean);
            let _ = writeln!(s, "w1_same_pairs,{}", b.same_pairs);
            let _ = writeln!(s, "w1_cross_pairs,{}", b.cross_pairs);
            let _ = writeln!(s, "w1_consistent,{}", b.consistent());
        }
        s
    }
}

/// Silhouette of the last CTRL batch, temporal similarity along sliding
/// consecutive windows, and the W1 probe on one consecutive window per segment.
pub fn analyze(trainer: &Trainer) -> Result<AnalysisReport> {
    let settings = trainer.settings();
    let t = settings.keypoints;
    let sil = trainer
        .last_ctrl()
        .and_then(|c| silhouette(&c.projections, &c.labels).ok());
    let mut report = AnalysisReport {
        silhouette: sil,
        temporal_similarity: None,
        temporal_pairs: 0,
        bisim: None,
    };
    let Some(batch) = trainer.last_batch() else {
        return Ok(report);
    };
    let e = trainer.params().get("clust.E").cloned();
    let segs: Vec<&[Transition]> = batch
        .segments()
        .into_iter()
        .filter(|s| s.len() > t)
        .collect();
    let mut sims = Vec::new();
    for seg in segs.iter().take(PROBE_SEGMENTS) {
        let windows: Vec<&[Transition]> = seg.windows(t).collect();
        let assigned = assign_windows(trainer.spec(), settings, trainer.params(), &windows)?;
        if let Some(e) = &e {
            sims.extend(temporal_cluster_similarity(&assigned.labels, e)?);
        }
    }
    report.temporal_pairs = sims.len();
    if !sims.is_empty() {
        report.temporal_similarity = Some(sims.iter().sum::<f64>() / sims.len() as f64);
    }
    let firsts: Vec<&[Transition]> = segs
        .iter()
        .take(4 * PROBE_SEGMENTS)
        .map(|s| &s[..t])
        .collect();
    if firsts.len() >= 2 {
        let assigned = assign_windows(trainer.spec(), settings, trainer.params(), &firsts)?;
        report.bisim = Some(bisim_consistency_probe(&assigned.views, &assigned.labels)?);
    }
    Ok(report)
}

/// Files written by `run_train`.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub config_snapshot: PathBuf,
    pub metrics: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub summary: PathBuf,
    pub analysis: PathBuf,
    pub plots: Vec<PathBuf>,
    pub rows: Vec<MetricsRow>,
}

/// Trains until the step budget is spent, writing everything under
/// `config.output_dir`.
pub fn run_train(
    config: &ExperimentConfig,
    mut on_epoch: impl FnMut(&MetricsRow),
) -> Result<RunArtifacts> {
    config.validate()?;
    let dir = config.output_dir.clone();
    fs::create_dir_all(dir.join("checkpoints"))?;
    fs::create_dir_all(dir.join("plots"))?;
    let config_snapshot = dir.join("config.txt");
    fs::write(&config_snapshot, config.render())?;

    let metrics = dir.join("metrics.csv");
    let mut writer = MetricsWriter::new(fs::File::create(&metrics)?)?;
    let mut trainer = Trainer::new(config.clone())?;
    let mut rows = Vec::new();
    let mut checkpoints = Vec::new();
    while !trainer.finished() {
        let row = trainer.epoch()?;
        writer.push(&row)?;
        on_epoch(&row);
        rows.push(row);
        if trainer.epochs() % config.checkpoint_every == 0 {
            let path = dir
                .join("checkpoints")
                .join(format!("epoch_{:05}.ckpt", trainer.epochs()));
            diffcore::checkpoint::save(&path, trainer.params())?;
            checkpoints.push(path);
        }
    }
    drop(writer);
    let last = dir.join("checkpoints").join("final.ckpt");
    diffcore::checkpoint::save(&last, trainer.params())?;
    checkpoints.push(last);

    let report = analyze(&trainer)?;
    let analysis = dir.join("analysis.csv");
    fs::write(&analysis, report.to_csv())?;

    let mut plots = Vec::new();
    for plot in emit_plots(&rows) {
        let path = dir.join("plots").join(format!("{}.svg", plot.name));
        fs::write(&path, plot.svg)?;
        plots.push(path);
    }

    let summary = dir.join("summary.txt");
    fs::write(&summary, summary_text(config, &rows, &report))?;
    Ok(RunArtifacts {
        dir,
        config_snapshot,
        metrics,
        checkpoints,
        summary,
        analysis,
        plots,
        rows,
    })
}

fn summary_text(config: &ExperimentConfig, rows: &[MetricsRow], report: &AnalysisReport) -> String {
    let mut s = String::new();
    let flags: Vec<&str> = [
        (config.consecutive_t, "consecutive-t"),
        (config.no_action, "no-action"),
        (config.no_cluster, "no-cluster"),
        (config.no_pred, "no-pred"),
    ]
    .iter()
    .filter(|(on, _)| *on)
    .map(|(_, name)| *name)
    .collect();
    let _ = writeln!(s, "environment      {}", config.env.name());
    let _ = writeln!(s, "seed             {}", config.seed);
    let _ = writeln!(
        s,
        "ablations        {}",
        if flags.is_empty() {
            "none".to_string()
        } else {
            flags.join(", ")
        }
    );
    let _ = writeln!(s, "epochs           {}", rows.len());
    let _ = writeln!(
        s,
        "env steps        {}",
        rows.last().map_or(0, |r| r.env_steps)
    );
    let returns: Vec<f64> = rows
        .iter()
        .rev()
        .take(10)
        .filter_map(|r| r.mean_train_return)
        .collect();
    if !returns.is_empty() {
        let m = returns.iter().sum::<f64>() / returns.len() as f64;
        let _ = writeln!(
            s,
            "train return     {m:.4} (mean of last {} epochs with episodes)",
            returns.len()
        );
    }
    if let Some(r) = rows.last() {
        let _ = writeln!(s, "final L_clust    {:.6}", r.l_clust);
        let _ = writeln!(s, "final L_pred     {:.6}", r.l_pred);
        let _ = writeln!(s, "final L_RL       {:.6}", r.l_rl);
        let _ = writeln!(s, "final entropy    {:.6}", r.entropy);
        let _ = writeln!(
            s,
            "occupied         {} of {} clusters",
            r.occupied_clusters, config.clusters
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "analysis");
    match report.silhouette {
        Some(v) => writeln!(s, "  silhouette           {v:.4}"),
        None => writeln!(s, "  silhouette           n/a (fewer than two clusters)"),
    }
    .ok();
    if let Some(v) = report.temporal_similarity {
        let _ = writeln!(
            s,
            "  temporal similarity  {v:.4} over {} adjacent windows",
            report.temporal_pairs
        );
    }
    if let Some(b) = &report.bisim {
        let _ = writeln!(
            s,
            "  W1 same cluster      {:.4} ({} pairs)\n  W1 cross cluster     {:.4} ({} pairs)\n  same <= cross        {}",
            b.same_cluster_mean,
            b.same_pairs,
            b.cross_cluster_mean,
            b.cross_pairs,
            b.consistent()
        );
    }
    s
}
