//! `tgopt`: staged task-grouping experiments from one JSON config.
//!
//! Exit codes: 0 success, 2 config error, 3 missing prerequisite stage,
//! 4 numerical failure, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use tgopt_core::pipeline::{self, RunConfig, Stage};
use tgopt_core::Error;

#[derive(Parser)]
#[command(
    name = "tgopt",
    about = "Task grouping for multi-task learning: affinity features, gain predictor, predictor-guided partition search",
    version
)]
struct Cli {
    /// Stage to run: ingest, stl, pairs, sample, predictor, search,
    /// baselines, report, or `all` for the whole pipeline.
    stage: String,

    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Worker threads for parallel trainings (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,

    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides the search stage's fresh-training budget.
    #[arg(long)]
    budget: Option<usize>,

    /// Start the search from the best (1), second (2), or third (3) best
    /// sampled partition.
    #[arg(long, value_parser = clap::value_parser!(usize))]
    start_rank: Option<usize>,
}

fn run(cli: &Cli) -> Result<(), Error> {
    if let Some(jobs) = cli.jobs {
        // a global pool can only be installed once; later calls are no-ops
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }

    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(budget) = cli.budget {
        cfg.search.budget_mtl = Some(budget);
    }
    if let Some(rank) = cli.start_rank {
        if !(1..=3).contains(&rank) {
            return Err(Error::ConfigInvalid("--start-rank must be 1, 2, or 3".into()));
        }
        cfg.search.start_rank = rank;
    }

    if cli.stage == "all" {
        for stage in Stage::ALL {
            eprintln!("[tgopt] running stage {stage}");
            pipeline::run_stage(stage, &cfg)?;
        }
        return Ok(());
    }
    let stage: Stage = cli.stage.parse()?;
    pipeline::run_stage(stage, &cfg)?;
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::ConfigInvalid(_) | Error::InvalidSpec(_) => 2,
        Error::MissingPrerequisiteStage { .. } | Error::MissingPrerequisite(_) => 3,
        Error::NumericalDivergence { .. } | Error::DomainError(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("tgopt: error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
