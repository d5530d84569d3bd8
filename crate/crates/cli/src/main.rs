use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use newsloop::config::{load_config, ExperimentConfig, Preset};
use newsloop::io::{self, Manifest};
use newsloop::report;
use newsloop::simulation::{aggregate_epoch_rows, run_repeats, RunResult, World};
use newsloop::ARTIFACT_VERSION;

#[derive(Parser)]
#[command(name = "newsloop", version, about = "Simulate a news recommender interacting with drifting users")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the article corpus and user population.
    Generate(Common),
    /// Run every repeat and write per-run outputs plus the aggregate.
    Run(Common),
    /// Aggregate existing run directories into aggregate.csv.
    Aggregate {
        #[command(flatten)]
        common: Common,
        /// Run directories, or output directories containing `runs/`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Turn one aggregate (or a baseline and a calibrated one) into plot-ready tables.
    Report {
        #[command(flatten)]
        common: Common,
        /// aggregate.csv files; a second one is treated as the calibrated variant.
        #[arg(required = true, num_args = 1..=2)]
        aggregates: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config laid over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the corpus seed for `generate` and the base run seed otherwise.
    #[arg(long)]
    seed: Option<u64>,
    /// Baseline parameter set: paper or desk.
    #[arg(long)]
    preset: Option<Preset>,
    /// Validate and print the plan without writing anything.
    #[arg(long)]
    dry_run: bool,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        Ok(load_config(self.config.as_deref(), self.preset)?)
    }
}

fn manifest(command: &str, cfg: &ExperimentConfig, run_seeds: Vec<u64>, inputs: Vec<PathBuf>) -> Manifest {
    Manifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        command: command.to_string(),
        config_hash: cfg.hash(),
        corpus_seed: cfg.corpus.seed,
        run_seeds,
        inputs,
    }
}

fn generate(c: &Common) -> Result<()> {
    let mut cfg = c.config()?;
    if let Some(seed) = c.seed {
        cfg.corpus.seed = seed;
    }
    if c.dry_run {
        println!(
            "generate: {} articles, {} users, corpus seed {} -> {}",
            cfg.corpus.n_articles,
            cfg.n_users(),
            cfg.corpus.seed,
            c.out.display()
        );
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let world = World::generate(&cfg)?;
    io::write_articles(&c.out.join("articles.csv"), &world.articles)?;
    io::write_users(&c.out.join("users.csv"), &world.users)?;
    io::write_manifest(&c.out, &manifest("generate", &cfg, Vec::new(), Vec::new()))?;
    info!("wrote {} articles and {} users to {}", world.articles.len(), world.users.len(), c.out.display());
    Ok(())
}

fn write_run(dir: &Path, cfg: &ExperimentConfig, run: &RunResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    if cfg.output.write_interactions {
        io::write_interactions(&dir.join("interactions.csv"), &run.log)?;
    }
    io::write_metrics_epoch(&dir.join("metrics_epoch.csv"), &run.epoch_rows)?;
    io::write_users(&dir.join("users_final.csv"), &run.final_users)?;
    io::write_bootstrap_reference(&dir.join("bootstrap_reference.csv"), run.seed, &run.bootstrap_reference)?;
    for (epoch, model) in &run.models {
        io::write_model(&dir.join(format!("model_epoch{epoch}.csv")), model)?;
    }
    io::write_manifest(dir, &manifest("run", cfg, vec![run.seed], Vec::new()))?;
    Ok(())
}

fn run(c: &Common) -> Result<()> {
    let mut cfg = c.config()?;
    if let Some(seed) = c.seed {
        cfg.simulation.base_seed = seed;
    }
    let seeds: Vec<u64> = (0..cfg.simulation.repeats as u64)
        .map(|i| cfg.simulation.base_seed + i)
        .collect();
    if c.dry_run {
        println!(
            "run: {} repeats (seeds {}..={}), {} epochs of {} iterations, {} users, {} articles -> {}",
            seeds.len(),
            seeds[0],
            seeds[seeds.len() - 1],
            cfg.epochs(),
            cfg.simulation.retrain_every,
            cfg.n_users(),
            cfg.corpus.n_articles,
            c.out.display()
        );
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    // A stale aggregate must not survive a failed run.
    let aggregate_path = c.out.join("aggregate.csv");
    if aggregate_path.exists() {
        fs::remove_file(&aggregate_path).with_context(|| format!("removing {}", aggregate_path.display()))?;
    }
    let world = World::load_or_generate(&cfg)?;
    info!("running {} repeats", seeds.len());
    let repeats = run_repeats(&cfg, &world)?;
    io::write_users(&c.out.join("users.csv"), &world.users)?;
    for r in &repeats.runs {
        write_run(&c.out.join("runs").join(r.seed.to_string()), &cfg, r)?;
    }
    io::write_aggregate(&aggregate_path, &repeats.aggregate.rows)?;
    io::write_manifest(&c.out, &manifest("run", &cfg, seeds, Vec::new()))?;
    info!("wrote {}", aggregate_path.display());
    Ok(())
}

/// Expands output directories into their run directories.
fn run_dirs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for p in inputs {
        if p.join("metrics_epoch.csv").is_file() {
            dirs.push(p.clone());
            continue;
        }
        let runs = p.join("runs");
        if !runs.is_dir() {
            bail!("{} is neither a run directory nor contains runs/", p.display());
        }
        let mut found: Vec<PathBuf> = fs::read_dir(&runs)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        found.retain(|d| d.join("metrics_epoch.csv").is_file());
        found.sort();
        if found.is_empty() {
            bail!("no run directories under {}", runs.display());
        }
        dirs.extend(found);
    }
    Ok(dirs)
}

fn aggregate(c: &Common, inputs: &[PathBuf]) -> Result<()> {
    let dirs = run_dirs(inputs)?;
    if c.dry_run {
        println!("aggregate: {} run directories -> {}", dirs.len(), c.out.join("aggregate.csv").display());
        for d in &dirs {
            println!("  {}", d.display());
        }
        return Ok(());
    }
    let mut rows = Vec::new();
    let mut hashes = Vec::new();
    for d in &dirs {
        rows.extend(io::read_metrics_epoch(&d.join("metrics_epoch.csv"))?);
        if let Ok(m) = io::read_manifest(d) {
            hashes.push(m.config_hash);
        }
    }
    hashes.sort();
    hashes.dedup();
    if hashes.len() > 1 {
        log::warn!("aggregating runs produced by {} different configs", hashes.len());
    }
    let result = aggregate_epoch_rows(&rows);
    io::write_aggregate(&c.out.join("aggregate.csv"), &result.rows)?;
    let cfg = c.config()?;
    let mut m = manifest("aggregate", &cfg, result.seeds, dirs);
    if let [only] = hashes.as_slice() {
        m.config_hash = only.clone();
    }
    io::write_manifest(&c.out, &m)?;
    Ok(())
}

fn report_cmd(c: &Common, paths: &[PathBuf]) -> Result<()> {
    if c.dry_run {
        let mut outputs = vec!["fig_mps.csv", "fig_umps.csv"];
        if paths.len() == 2 {
            outputs.push("fig_calibration.csv");
        }
        println!("report: {} aggregate(s) -> {} in {}", paths.len(), outputs.join(", "), c.out.display());
        return Ok(());
    }
    let aggregates = paths
        .iter()
        .map(|p| io::read_aggregate(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    report::check_epoch_ranges(&aggregates)?;
    io::write_table(&c.out.join("fig_mps.csv"), &report::figure_mps(&aggregates[0]))?;
    io::write_table(&c.out.join("fig_umps.csv"), &report::figure_umps(&aggregates[0]))?;
    if let [baseline, calibrated] = aggregates.as_slice() {
        io::write_table(&c.out.join("fig_calibration.csv"), &report::figure_calibration(baseline, calibrated)?)?;
    }
    let cfg = c.config()?;
    io::write_manifest(&c.out, &manifest("report", &cfg, Vec::new(), paths.to_vec()))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(c) => generate(c),
        Command::Run(c) => run(c),
        Command::Aggregate { common, inputs } => aggregate(common, inputs),
        Command::Report { common, aggregates } => report_cmd(common, aggregates),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
