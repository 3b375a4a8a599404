use clap::{Parser, Subcommand};
use leakcheck::campaign::{diff_report, replay, run_campaign, write_outputs, CampaignConfig, Preset, ViolationReport};
use leakcheck::uarch::CacheConfig;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: leakcheck::Error },
    #[error(transparent)]
    Core(#[from] leakcheck::Error),
}

type Result<T> = std::result::Result<T, CliError>;

fn at(path: &Path) -> impl FnOnce(leakcheck::Error) -> CliError + '_ {
    move |source| CliError::File { path: path.to_path_buf(), source }
}

#[derive(Parser)]
#[command(name = "leakcheck", version, about = "Relational leakage testing on a simulated out-of-order core")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fuzzing campaign.
    Fuzz {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-run a violation report and check it still validates.
    Replay {
        #[arg(long)]
        violation: PathBuf,
    },
    /// Print the side-by-side debug log comparison of a violation report.
    Diff {
        #[arg(long)]
        violation: PathBuf,
    },
    /// Amplification presets.
    Presets {
        #[command(subcommand)]
        action: PresetsAction,
    },
}

#[derive(Subcommand)]
enum PresetsAction {
    List,
}

const EXIT_VIOLATIONS: u8 = 2;

fn fuzz(config: PathBuf, output: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = CampaignConfig::load(&config).map_err(at(&config))?;
    let outcome = run_campaign(&cfg)?;
    if let Some(dir) = output.or_else(|| cfg.output_dir.clone()) {
        let paths = write_outputs(&dir, &cfg, &outcome).map_err(at(&dir))?;
        eprintln!("wrote {} files to {}", paths.len(), dir.display());
    }
    let s = &outcome.stats;
    println!(
        "programs {} test cases {} candidates {} confirmed {} invalidated {} throughput {:.0}/s",
        s.programs_run, s.test_cases_run, s.candidates, s.confirmed_violations, s.invalidated_candidates, s.throughput
    );
    for (tag, n) in &s.tags {
        println!("  {tag}: {n}");
    }
    Ok(if s.confirmed_violations > 0 { ExitCode::from(EXIT_VIOLATIONS) } else { ExitCode::SUCCESS })
}

fn replay_cmd(path: PathBuf) -> Result<ExitCode> {
    let report = ViolationReport::load(&path).map_err(at(&path))?;
    let outcome = replay(&report)?;
    println!("reproduced {} validated {}", outcome.reproduced, outcome.validated);
    Ok(if outcome.holds() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn diff_cmd(path: PathBuf) -> Result<ExitCode> {
    let report = ViolationReport::load(&path).map_err(at(&path))?;
    print!("{}", diff_report(&report)?.render());
    Ok(ExitCode::SUCCESS)
}

fn presets_list() -> ExitCode {
    let base = CacheConfig::default();
    println!("{:<12} {:>7} {:>6}", "NAME", "L1_WAYS", "MSHRS");
    for p in Preset::ALL {
        let c = p.overlay().apply(&base);
        println!("{:<12} {:>7} {:>6}", p.name(), c.l1_ways, c.mshr_count);
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fuzz { config, output } => fuzz(config, output),
        Command::Replay { violation } => replay_cmd(violation),
        Command::Diff { violation } => diff_cmd(violation),
        Command::Presets { action: PresetsAction::List } => Ok(presets_list()),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}
