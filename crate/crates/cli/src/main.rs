use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::bail;
use clap::{Args, Parser, Subcommand};
use mgmae::error::StageExt;
use mgmae::harness::{self, ExperimentConfig, SeedResult};

#[derive(Parser)]
#[command(
    name = "mgmae",
    version,
    about = "Multi-filter Gaussian mixture autoencoder experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file; defaults apply to missing keys.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set num_filters=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory for reports and checkpoints.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train autoencoder, mixture and filters, then evaluate on the dev set.
    Run(ConfigArgs),
    /// Train and evaluate the plain encoder-decoder.
    Baseline(ConfigArgs),
    /// Evaluate every filter count in `k_range` on one autoencoder per seed.
    SweepFilters(ConfigArgs),
    /// Write a 2-D PCA scatter (CSV and SVG) of checkpointed representations.
    PlotLatent {
        checkpoint: PathBuf,
        /// Output path without extension.
        #[arg(short, long, default_value = "latent")]
        out: PathBuf,
    },
    /// Re-evaluate a checkpoint on its configured dev set.
    Eval {
        checkpoint: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn split_overrides(raw: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    raw.iter()
        .map(|kv| match kv.split_once('=') {
            Some((k, v)) => Ok((k.trim().to_owned(), v.trim().to_owned())),
            None => bail!("override {kv:?} is not KEY=VALUE"),
        })
        .collect()
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_file(p).stage("config")?,
        None => ExperimentConfig::default(),
    };
    for (k, v) in split_overrides(&args.overrides)? {
        cfg.set(&k, &v).stage("config")?;
    }
    Ok(cfg)
}

fn print_seed(r: &SeedResult) {
    println!("seed {}", r.seed);
    println!(
        "  token accuracy (%)           {:.2}",
        r.metrics.token_accuracy
    );
    println!(
        "  denotation match, proxy (%)  {:.2}",
        r.metrics.denotation_proxy
    );
    println!("  BLEU                         {:.2}", r.metrics.bleu);
    if let Some(s) = r.silhouette {
        println!("  silhouette                   {s:.4}");
    }
    if !r.cluster_sizes.is_empty() {
        println!("  cluster sizes                {:?}", r.cluster_sizes);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load_config(&args)?;
            print!("{}", harness::cmd_run(&cfg, &args.out)?.to_text());
        }
        Command::Baseline(args) => {
            let cfg = load_config(&args)?;
            print!("{}", harness::cmd_baseline(&cfg, &args.out)?.to_text());
        }
        Command::SweepFilters(args) => {
            let cfg = load_config(&args)?;
            let table = harness::cmd_sweep_filters(&cfg, &args.out)?;
            print!("{}", table.to_text());
            if table
                .silhouette_accuracy_spearman()
                .is_some_and(|r| r <= 0.0)
            {
                log::warn!("silhouette is not positively rank-correlated with token accuracy");
            }
        }
        Command::PlotLatent { checkpoint, out } => {
            let p = harness::export_latent_scatter(&checkpoint, &out)?;
            println!(
                "wrote {} and {} (axis variances {:.4}, {:.4})",
                out.with_extension("csv").display(),
                out.with_extension("svg").display(),
                p.explained_variance[0],
                p.explained_variance[1]
            );
        }
        Command::Eval {
            checkpoint,
            overrides,
        } => {
            print_seed(&harness::cmd_eval(
                &checkpoint,
                &split_overrides(&overrides)?,
            )?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // mgmae errors already spell out their causes
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
