use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fracrank_cli::{output_root, resolve, run_and_write, ExperimentConfig, SCENARIOS};

#[derive(Parser)]
#[command(name = "fracrank", version, about = "Experiments for multilinear forms of fractional rank")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write report.json, CSV tables and timings.json.
    Run {
        scenario: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    ListScenarios,
    ValidateConfig { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListScenarios => {
            for (id, about) in SCENARIOS {
                println!("{id:<28} {about}");
            }
            ExitCode::SUCCESS
        }
        Command::ValidateConfig { path } => match ExperimentConfig::load(&path).and_then(|c| c.validate().map(|_| c)) {
            Ok(c) => {
                if let Some(s) = c.scenario.as_deref().filter(|s| resolve(s).is_none()) {
                    eprintln!("error: config field `scenario`: unknown scenario `{s}`");
                    return ExitCode::from(2);
                }
                println!("ok");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Run { scenario, config, seed, out } => {
            let mut cfg = match &config {
                Some(p) => match ExperimentConfig::load(p) {
                    Ok(c) => c,
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(2);
                    }
                },
                None => ExperimentConfig::default(),
            };
            if seed.is_some() {
                cfg.seed = seed;
                cfg.seeds = None;
            }
            let root = output_root(out.as_deref(), &cfg);
            match run_and_write(&scenario, &cfg, &root) {
                Ok((report, path)) => {
                    for line in report.lines() {
                        println!("{line}");
                    }
                    println!("report: {}", path.display());
                    if report.pass() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
