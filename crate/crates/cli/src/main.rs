use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use beliefroute::beliefs::load_beliefs;
use beliefroute::events::read_events;
use beliefroute::experiment::run_experiment;
use beliefroute::{replay, Error, ExperimentConfig};

/// Thompson-sampling agent router: experiments, replay and belief inspection.
#[derive(Parser)]
#[command(name = "beliefroute", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Number of seeded replications.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Added to every seed in the config.
        #[arg(long)]
        seed_offset: Option<u64>,
    },
    /// Recompute beliefs and spend from an event log and compare.
    Replay { log: PathBuf },
    /// Inspect a persisted belief table.
    Beliefs {
        #[command(subcommand)]
        command: BeliefsCommand,
    },
}

#[derive(Subcommand)]
enum BeliefsCommand {
    Show { path: PathBuf },
}

const SHOW_EPISODES: usize = 20;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_MISMATCH: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidParameter(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seeds,
            output_dir,
            seed_offset,
        } => run(&config, seeds, output_dir, seed_offset),
        Command::Replay { log } => replay_log(&log),
        Command::Beliefs {
            command: BeliefsCommand::Show { path },
        } => show_beliefs(&path),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(
    config: &Path,
    seeds: Option<usize>,
    output_dir: Option<PathBuf>,
    offset: Option<u64>,
) -> Result<u8, Error> {
    let text = fs::read_to_string(config).map_err(|e| Error::Config {
        field: "config".into(),
        message: format!("cannot read {}: {e}", config.display()),
    })?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    if let Some(o) = offset {
        cfg.offset_seeds(o);
    }
    cfg.validate()?;
    let out = run_experiment(&cfg)?;
    out.write_to(&cfg.output_dir)?;
    print!("{}", out.report);
    println!("artifacts written to {}", cfg.output_dir.display());
    Ok(0)
}

fn replay_log(log: &Path) -> Result<u8, Error> {
    let events = read_events(BufReader::new(fs::File::open(log)?))?;
    let report = replay(&events)?;
    for ep in report.episodes.iter().take(SHOW_EPISODES) {
        println!(
            "episode {}: {:?}, {} rounds, {} calls, spent {}",
            ep.episode, ep.status, ep.rounds_used, ep.agent_calls, ep.spent
        );
    }
    if report.episodes.len() > SHOW_EPISODES {
        println!("... {} more", report.episodes.len() - SHOW_EPISODES);
    }
    if report.is_clean() {
        println!("replay matches: {} episode(s)", report.episodes.len());
        return Ok(0);
    }
    for m in &report.mismatches {
        println!(
            "mismatch: episode {} round {} field {}: logged {}, recomputed {}",
            m.episode, m.round, m.field, m.logged, m.recomputed
        );
    }
    Ok(EXIT_MISMATCH)
}

fn show_beliefs(path: &Path) -> Result<u8, Error> {
    let table = load_beliefs(path)?;
    println!(
        "{:<16} {:>10} {:>10} {:>8} {:>10}",
        "agent", "alpha", "beta", "mean", "updated_at"
    );
    for (id, b) in &table {
        println!(
            "{:<16} {:>10.4} {:>10.4} {:>8.4} {:>10}",
            id.as_str(),
            b.alpha,
            b.beta,
            b.posterior_mean(),
            b.updated_at
        );
    }
    Ok(0)
}
