use std::ops::Range;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use ctrl::runner::{
    emit_plots_from_csv, encoder_spec, eval_zero_shot, ising_cluster_sweep, run_train, EnvKind,
    EvalPolicy, ExperimentConfig, SWEEP_CLUSTERS,
};
use ctrl::verify::{check_all_losses, verify_theorem, GRAD_TOLERANCE};

#[derive(Parser)]
#[command(
    name = "ctrl",
    version,
    about = "Cross-trajectory representation learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train PPO with the CTRL encoder objective.
    Train(TrainArgs),
    /// Greedy zero-shot evaluation of a checkpoint on held-out gridworld levels.
    Eval(EvalArgs),
    /// Train one run per cluster count and seed on the composite Ising task.
    SweepIsing(SweepArgs),
    /// Render SVG charts from a metrics.csv.
    Plot(PlotArgs),
    /// Finite-difference checks of every loss on random small networks.
    GradCheck(GradCheckArgs),
    /// Randomized check of the directional perturbation theorem.
    VerifyTheorem(TheoremArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any key, e.g. `--set ctrl.clusters=50`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["ising", "gridworld"])]
    env: Option<String>,
    /// Total environment steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Step environments on one thread for bit-exact reproducibility.
    #[arg(long)]
    serial: bool,
    /// Sample view keypoints as one consecutive block.
    #[arg(long)]
    consecutive_t: bool,
    /// Skip FiLM action conditioning in views.
    #[arg(long)]
    no_action: bool,
    /// Drop the clustering loss.
    #[arg(long)]
    no_cluster: bool,
    /// Drop the cross-cluster prediction loss.
    #[arg(long)]
    no_pred: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        let mut sets: Vec<String> = self.overrides.clone();
        if let Some(seed) = self.seed {
            sets.push(format!("experiment.seed={seed}"));
        }
        if let Some(out) = &self.out {
            sets.push(format!("experiment.output_dir={}", out.display()));
        }
        if let Some(env) = &self.env {
            sets.push(format!("experiment.env={env}"));
        }
        if let Some(steps) = self.steps {
            sets.push(format!("experiment.total_env_steps={steps}"));
        }
        for (on, key) in [
            (self.serial, "experiment.serial"),
            (self.consecutive_t, "ctrl.consecutive_t"),
            (self.no_action, "ctrl.no_action"),
            (self.no_cluster, "ctrl.no_cluster"),
            (self.no_pred, "ctrl.no_pred"),
        ] {
            if on {
                sets.push(format!("{key}=true"));
            }
        }
        Ok(base.with_overrides(sets.iter().map(String::as_str))?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Level seeds as `start..end`; defaults to the config's eval range.
    #[arg(long, value_parser = parse_range)]
    seeds: Option<Range<u64>>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Also report a uniform random policy on the same levels.
    #[arg(long)]
    random_baseline: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = vec![0u64, 1, 2, 3, 4])]
    seeds: Vec<u64>,
    #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = SWEEP_CLUSTERS.to_vec())]
    clusters: Vec<usize>,
    /// Fraction of final epochs averaged into each run's result.
    #[arg(long, default_value_t = 0.2)]
    tail: f64,
    #[arg(long, default_value_t = 8)]
    baseline_episodes: usize,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    metrics: PathBuf,
    /// Directory for the SVG files; defaults to `plots/` next to the csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TheoremArgs {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_range(s: &str) -> std::result::Result<Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or("expected start..end")?;
    let a: u64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok(a..b)
}

fn train(args: TrainArgs) -> Result<()> {
    let config = args.config.resolve()?;
    info!(
        "training on {} into {}",
        config.env.name(),
        config.output_dir.display()
    );
    let art = run_train(&config, |row| {
        info!(
            "epoch {:>4} steps {:>8} return {:>12} L_clust {:.4} L_pred {:.4} entropy {:.4}",
            row.epoch,
            row.env_steps,
            row.mean_train_return
                .map_or("-".into(), |r| format!("{r:.3}")),
            row.l_clust,
            row.l_pred,
            row.entropy
        )
    })?;
    print!("{}", std::fs::read_to_string(&art.summary)?);
    if config.env == EnvKind::Gridworld {
        let spec = encoder_spec(&config);
        let params = art.checkpoints.last().context("no checkpoint written")?;
        let report = eval_zero_shot(
            &spec,
            &ctrl::diffcore::checkpoint::load(params)?,
            config.eval_start..config.eval_end,
            config.eval_episodes_per_level,
            EvalPolicy::Greedy,
        )?;
        println!("held-out return   {:.4} ± {:.4}", report.mean, report.std);
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let config = args.config.resolve()?;
    if config.env != EnvKind::Gridworld {
        bail!("zero-shot evaluation is defined for the gridworld only");
    }
    let seeds = args.seeds.unwrap_or(config.eval_start..config.eval_end);
    let episodes = args.episodes.unwrap_or(config.eval_episodes_per_level);
    let spec = encoder_spec(&config);
    let params = ctrl::diffcore::checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let report = eval_zero_shot(&spec, &params, seeds.clone(), episodes, EvalPolicy::Greedy)?;
    println!(
        "greedy  mean {:.4} std {:.4} over {} episodes",
        report.mean,
        report.std,
        report.returns.len()
    );
    if args.random_baseline {
        let r = eval_zero_shot(
            &spec,
            &params,
            seeds,
            episodes,
            EvalPolicy::Random { seed: config.seed },
        )?;
        println!(
            "random  mean {:.4} std {:.4} over {} episodes",
            r.mean,
            r.std,
            r.returns.len()
        );
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut config = args.config.resolve()?;
    config.env = EnvKind::Ising;
    let table = ising_cluster_sweep(
        &config,
        &args.clusters,
        &args.seeds,
        args.tail,
        args.baseline_episodes,
        |run| {
            info!(
                "E={:<3} seed {} return {:.4} (raw {:.1}) silhouette {:.4}",
                run.clusters, run.seed, run.normalized_return, run.raw_return, run.silhouette
            )
        },
    )?;
    std::fs::create_dir_all(&config.output_dir)?;
    let path = config.output_dir.join("ising_sweep.csv");
    std::fs::write(&path, table.to_csv())?;
    print!("{}", table.to_csv());
    info!("wrote {}", path.display());
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.metrics)
        .with_context(|| format!("reading {}", args.metrics.display()))?;
    let plots = emit_plots_from_csv(&text)
        .with_context(|| format!("parsing {}", args.metrics.display()))?;
    let dir = args.out.unwrap_or_else(|| {
        args.metrics
            .parent()
            .map_or_else(|| PathBuf::from("plots"), |p| p.join("plots"))
    });
    std::fs::create_dir_all(&dir)?;
    for p in plots {
        let path = dir.join(format!("{}.svg", p.name));
        std::fs::write(&path, p.svg)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn grad_check(args: GradCheckArgs) -> Result<bool> {
    let mut ok = true;
    for s in check_all_losses(args.instances, args.seed)? {
        println!(
            "{:<14} instances {:>4} redrawn {:>4} max rel err {:.3e} {}",
            s.loss.name(),
            s.instances,
            s.redraws,
            s.max_relative_error,
            if s.passed() { "PASS" } else { "FAIL" }
        );
        ok &= s.passed();
    }
    println!("tolerance {GRAD_TOLERANCE:.0e}");
    Ok(ok)
}

fn theorem(args: TheoremArgs) -> Result<bool> {
    let s = verify_theorem(args.trials, args.seed)?;
    println!(
        "argmax preserved in {}/{} constructed cases ({} draws rejected by the half-plane condition)",
        s.same_argmax, s.trials, s.redraws
    );
    Ok(s.same_argmax == s.trials)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::SweepIsing(a) => sweep(a).map(|_| true),
        Command::Plot(a) => plot(a).map(|_| true),
        Command::GradCheck(a) => grad_check(a),
        Command::VerifyTheorem(a) => theorem(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
