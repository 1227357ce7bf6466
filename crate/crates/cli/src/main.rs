use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mvlift_cli::{config, load, resolved_toml, run, RunOptions};

#[derive(Parser)]
#[command(name = "mvlift", version, about = "Runs measure-valued diffusion experiments from a TOML configuration")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory (overrides MVLIFT_OUT and `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a configuration and print it with all defaults filled in.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn }).init();
    let code = match cli.command {
        Command::Run { config, out, seed } => match run(&config, &RunOptions { out, seed }) {
            Ok(report) => {
                for v in &report.violations {
                    eprintln!("violation: {v}");
                }
                println!("{}", report.dir.display());
                report.exit_code()
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::Validate { config } => match load(&config).and_then(|c: config::ExperimentConfig| resolved_toml(&c)) {
            Ok(text) => {
                print!("{text}");
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
    };
    ExitCode::from(code as u8)
}
