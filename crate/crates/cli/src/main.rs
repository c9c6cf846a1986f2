use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(
    name = "twinbeam",
    version,
    about = "Twin-beam sub-shot-noise simulation and analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Flags override the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// Key = value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Root seed of the campaign
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub shots: Option<usize>,
    /// Bin factor (the config decides hardware or software)
    #[arg(long)]
    pub bin: Option<usize>,
    /// Displacement window half-width
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum SweepVariable {
    BinFactor,
    PhotonFlux,
    Eta,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate twin-beam shots into TBF frames and truth.csv
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Analyze frame pairs into report.csv and map.csv
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Directory holding signal_NNNN.tbf / idler_NNNN.tbf (default: --out)
        #[arg(long)]
        input: Option<PathBuf>,
        /// Single signal frame; requires --idler
        #[arg(long, requires = "idler")]
        signal: Option<PathBuf>,
        #[arg(long, requires = "signal")]
        idler: Option<PathBuf>,
    },
    /// Simulate and analyze one ensemble per value of a parameter
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        variable: SweepVariable,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Reconstruct an absorbing object and compare with coherent light
    Imaging {
        #[command(flatten)]
        common: Common,
        /// TBF transmittance mask matching the grid
        #[arg(long)]
        mask: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { common } => commands::simulate(&common),
        Command::Analyze {
            common,
            input,
            signal,
            idler,
        } => commands::analyze(&common, input, signal.zip(idler)),
        Command::Sweep {
            common,
            variable,
            values,
        } => commands::sweep(&common, variable, &values),
        Command::Imaging { common, mask } => commands::imaging(&common, mask),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
