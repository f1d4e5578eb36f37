//! `frcr`: fetch datasets, run continual-learning experiments, report and
//! analyze results.

mod analyze;
mod config;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use frcr::datasets::{fetch_dataset, DatasetKind, FetchOutcome};
use frcr::Error;

use analyze::{cmd_analyze, Analysis, AnalyzeOptions};
use config::{ExperimentConfig, StrategySpec};
use run::{cmd_run, Summary};

#[derive(Parser)]
#[command(name = "frcr", version, about = "Continual learning with fixed random classifier rearrangement")]
struct Cli {
    /// Dataset root; each dataset lives in a subdirectory.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Where runs, summary.json and analyses are written.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download a dataset into the data directory.
    Fetch {
        /// mnist, fashion or cifar10.
        #[arg(long)]
        dataset: DatasetKind,
        /// Base URL replacing the default download location.
        #[arg(long)]
        mirror: Option<String>,
    },
    /// Train every strategy for every seed and write summary.json.
    Run {
        /// JSON experiment configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// mnist, fashion or cifar10; overrides the config.
        #[arg(long)]
        dataset: Option<DatasetKind>,
        /// Run only this strategy.
        #[arg(long)]
        strategy: Option<String>,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Maximum number of runs executing at once.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print ACC and AMF (mean ± std over seeds) per strategy and dataset.
    Report,
    /// Compute a diagnostic from saved checkpoints.
    Analyze {
        which: Analysis,
        /// Experiment configuration; defaults to the one saved by `run`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Needed when the output directory holds several datasets.
        #[arg(long)]
        dataset: Option<DatasetKind>,
        /// Restrict to one strategy (drift defaults to frcr).
        #[arg(long)]
        strategy: Option<String>,
        /// Original class id for `corr`.
        #[arg(long)]
        category: Option<u8>,
        /// 1-based task for `snapshots`.
        #[arg(long)]
        task: Option<usize>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Pairing(_) | Error::InvalidArchitecture(_) => 2,
        _ => 1,
    }
}

/// Config file (if any) with command-line overrides applied.
fn experiment(
    cli: &Cli,
    path: Option<&PathBuf>,
    dataset: Option<DatasetKind>,
) -> frcr::Result<ExperimentConfig> {
    let mut config = match (path, dataset) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(d)) => ExperimentConfig::new(d),
        (None, None) => return Err(Error::Config("either --config or --dataset is required".into())),
    };
    if let Some(d) = dataset {
        config.dataset = d;
    }
    if let Some(d) = &cli.data_dir {
        config.data_dir = d.clone();
    }
    if let Some(o) = &cli.out_dir {
        config.out_dir = o.clone();
    }
    Ok(config)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn execute(cli: &Cli) -> frcr::Result<bool> {
    match &cli.command {
        Command::Fetch { dataset, mirror } => {
            let data_dir = cli.data_dir.clone().unwrap_or_else(|| PathBuf::from("data"));
            for outcome in fetch_dataset(*dataset, &data_dir, mirror.as_deref())? {
                match outcome {
                    FetchOutcome::AlreadyPresent(p) => println!("already present: {}", p.display()),
                    FetchOutcome::Downloaded(p) => println!("downloaded: {}", p.display()),
                }
            }
            Ok(true)
        }
        Command::Run {
            config,
            dataset,
            strategy,
            seed,
            workers,
        } => {
            let mut exp = experiment(cli, config.as_ref(), *dataset)?;
            if let Some(s) = strategy {
                s.parse::<frcr::harness::StrategyConfig>()?;
                exp.strategies = vec![StrategySpec::Name(s.clone())];
            }
            if let Some(s) = seed {
                exp.seeds = vec![*s];
            }
            if workers.is_some() {
                exp.workers = *workers;
            }
            let (summary, failed) = cmd_run(&exp)?;
            print!("{}", report::render(&summary));
            Ok(!failed)
        }
        Command::Report => {
            print!("{}", report::render(&Summary::load(&out_dir(cli))?));
            Ok(true)
        }
        Command::Analyze {
            which,
            config,
            dataset,
            strategy,
            category,
            task,
        } => {
            let out = out_dir(cli);
            let dataset = match dataset {
                Some(d) => Some(*d),
                None if config.is_none() => {
                    let summary = Summary::load(&out)?;
                    let mut names = summary.datasets.keys();
                    match (names.next(), names.next()) {
                        (Some(only), None) => Some(only.parse()?),
                        _ => return Err(Error::Config("several datasets in the output; pass --dataset".into())),
                    }
                }
                None => None,
            };
            // Reuse the configuration recorded by `run` unless one is given.
            let saved = dataset.map(|d| out.join(d.name()).join("experiment.json"));
            let path = config.clone().or(saved.filter(|p| p.is_file()));
            let mut exp = experiment(cli, path.as_ref(), dataset)?;
            exp.out_dir = out;
            let written = cmd_analyze(
                &exp,
                *which,
                &AnalyzeOptions {
                    strategy: strategy.clone(),
                    category: *category,
                    task: *task,
                },
            )?;
            println!("wrote {}", written.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
