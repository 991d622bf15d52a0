use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wpan_sim::scenario;

#[derive(Parser)]
#[command(name = "wpan-sim", about = "IEEE 802.15.4 beacon-enabled network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the parameter sweep described by a scenario config file.
    Run {
        /// Path to the flat key=value scenario config.
        config: PathBuf,
        /// Write CSV results here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write one trace file per run into this directory (implies tracing).
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        /// Override the config's seed list, e.g. --seeds 1,2,3.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Suppress progress output on stderr.
        #[arg(long)]
        quiet: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            trace_dir,
            seeds,
            quiet,
        } => match run(config, out, trace_dir, seeds, quiet) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}

fn run(
    config: PathBuf,
    out: Option<PathBuf>,
    trace_dir: Option<PathBuf>,
    seeds: Option<Vec<u64>>,
    quiet: bool,
) -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = scenario::load_config(&config)?;
    if let Some(seeds) = seeds {
        if seeds.is_empty() {
            return Err("--seeds list is empty".into());
        }
        cfg.seeds = seeds;
    }
    if trace_dir.is_some() {
        cfg.trace = true;
    }
    let n_runs = cfg.matrix().len();
    if !quiet {
        eprintln!("running {n_runs} simulations ...");
    }
    let output = scenario::run_matrix(&cfg);
    if let Some(dir) = &trace_dir {
        std::fs::create_dir_all(dir)?;
        for (name, text) in &output.traces {
            std::fs::write(dir.join(name), text)?;
        }
        if !quiet {
            eprintln!("wrote {} trace files to {}", output.traces.len(), dir.display());
        }
    }
    match &out {
        Some(path) => {
            std::fs::write(path, &output.csv)?;
            if !quiet {
                eprintln!("wrote {}", path.display());
            }
        }
        None => print!("{}", output.csv),
    }
    Ok(())
}
