//! `repmarket` — reproducible experiments with the synthetic replication
//! market: train a population, score claims, cross-validate, and render
//! trade-ledger explanations.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "repmarket", version, about = "Synthetic prediction market for replication scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; any flag overrides the matching key
/// of the `--config` file.
#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Flat key-value config file (flags win over file entries)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV (or JSON mirror)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Feature schema JSON (array of names); default is 41 generic names
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed for all derived random streams
    #[arg(long)]
    seed: Option<u64>,
    /// Training generations
    #[arg(long)]
    generations: Option<u32>,
    /// Population size
    #[arg(long)]
    population: Option<usize>,
    /// Cash per agent per market
    #[arg(long)]
    cash: Option<f64>,
    /// LMSR liquidity parameter b
    #[arg(long)]
    liquidity: Option<f64>,
    /// Opening price of the will-replicate asset
    #[arg(long)]
    initial_price: Option<f64>,
    /// Cross-validation fold count
    #[arg(long)]
    folds: Option<usize>,
    /// Worker threads (0 = one per core)
    #[arg(long)]
    jobs: Option<usize>,
    /// Cap on trading rounds per market
    #[arg(long)]
    max_rounds: Option<u32>,
    /// Shares per affirmative decision
    #[arg(long)]
    unit_shares: Option<f64>,
    /// Smallest partial purchase
    #[arg(long)]
    min_buy_shares: Option<f64>,
    /// Required edge of belief over price
    #[arg(long)]
    margin: Option<f64>,
    /// Mutation sigma for genome centers
    #[arg(long)]
    mutation_sigma_center: Option<f64>,
    /// Mutation log-sigma for radius and steepness
    #[arg(long)]
    mutation_log_sigma: Option<f64>,
    /// Probability an offspring flips its asset class
    #[arg(long)]
    asset_flip_probability: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent population on a labeled dataset
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score claims with a trained model
    Score {
        /// Trained model JSON
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// K-fold cross-validation with per-fold and pooled reports
    Cv {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Re-render explanations from stored ledgers
    Explain {
        /// Trained model JSON
        #[arg(long)]
        model: Option<PathBuf>,
        /// Directory of per-claim ledger files from a previous run
        #[arg(long)]
        ledgers: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a single market verbosely for debugging
    Simulate {
        /// Trained model JSON
        #[arg(long)]
        model: Option<PathBuf>,
        /// Claim id to simulate (default: first in the dataset)
        #[arg(long)]
        claim: Option<String>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Defaults, then the config file, then explicit flags.
fn resolve(common: &CommonArgs, model: Option<&PathBuf>) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &common.config {
        config.apply_file(path)?;
    }
    macro_rules! merge_path {
        ($($field:ident),*) => {
            $(if let Some(v) = &common.$field { config.$field = Some(v.clone()); })*
        };
    }
    merge_path!(data, schema, out);
    macro_rules! merge_value {
        ($($field:ident),*) => {
            $(if let Some(v) = common.$field { config.$field = v; })*
        };
    }
    merge_value!(
        seed, generations, population, cash, liquidity, initial_price, folds, jobs,
        max_rounds, unit_shares, min_buy_shares, margin, mutation_sigma_center,
        mutation_log_sigma, asset_flip_probability
    );
    if let Some(m) = model {
        config.model = Some(m.clone());
    }
    Ok(config)
}

fn set_thread_pool(jobs: usize) -> Result<()> {
    if jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Train { common } => {
            let config = resolve(common, None)?;
            set_thread_pool(config.jobs)?;
            commands::cmd_train(&config)
        }
        Command::Score { model, common } => {
            let config = resolve(common, model.as_ref())?;
            set_thread_pool(config.jobs)?;
            commands::cmd_score(&config)
        }
        Command::Cv { common } => {
            let config = resolve(common, None)?;
            set_thread_pool(config.jobs)?;
            commands::cmd_cv(&config)
        }
        Command::Explain { model, ledgers, common } => {
            let config = resolve(common, model.as_ref())?;
            set_thread_pool(config.jobs)?;
            commands::cmd_explain(&config, ledgers)
        }
        Command::Simulate { model, claim, common } => {
            let config = resolve(common, model.as_ref())?;
            set_thread_pool(config.jobs)?;
            commands::cmd_simulate(&config, claim.as_deref())
        }
    }
}
