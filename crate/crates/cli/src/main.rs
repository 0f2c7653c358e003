mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Parser)]
#[command(name = "stablab", version, about = "Forward maps and empirical stability experiments")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output file, overriding the configured path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the mesh file and print counts.
    Mesh(Common),
    /// Write the data operator matrix of one class sample.
    Forward(Common),
    /// Compare directional derivatives with central differences.
    Derivcheck(Common),
    /// Write stability records for random pairs and near-diagonal rays.
    Sweep(Common),
    /// Fit a Hölder envelope to a records file.
    Fit {
        records: PathBuf,
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fit against `delta_finite` instead of `delta_F`.
        #[arg(long)]
        finite: bool,
        #[arg(long)]
        n_bins: Option<usize>,
        #[arg(long)]
        slack: Option<f64>,
    },
    /// Greedily select scalar measurements on the sweep pairs.
    Select {
        #[command(flatten)]
        common: Common,
        /// Also write the sweep records with `delta_finite` filled in.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Tabulate the flat map and the cubic control.
    Counterexample(Common),
    /// Print the normalized effective configuration.
    Validate {
        #[arg(long, short)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config(config::ConfigError::new("--threads", "must be positive")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(config::ConfigError::new("--threads", e.to_string())))?;
    }
    match cli.command {
        Command::Mesh(c) => commands::mesh(&c.config, c.out),
        Command::Forward(c) => commands::forward(&c.config, c.out),
        Command::Derivcheck(c) => commands::derivcheck(&c.config, c.out),
        Command::Sweep(c) => commands::sweep(&c.config, c.out),
        Command::Fit {
            records,
            config,
            out,
            finite,
            n_bins,
            slack,
        } => commands::fit(&records, config.as_deref(), out, finite, n_bins, slack),
        Command::Select { common, records } => commands::select(&common.config, common.out, records),
        Command::Counterexample(c) => commands::counterexample(&c.config, c.out),
        Command::Validate { config } => commands::validate(&config),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
