//! `txpack`: compute packaging equilibria, sample blocks, derive base-fee
//! bounds, verify equilibria and run latency simulations.
//!
//! Exit status: 0 on success, 1 on invalid input, 2 on usage errors, 3 when
//! an internal invariant is violated.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

#[derive(Parser, Debug)]
#[command(
    name = "txpack",
    version,
    about = "Equilibrium transaction packaging under network latency"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Fixed,
    Variable,
}

impl From<ModeArg> for txpack::SizeMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Fixed => Self::Fixed,
            ModeArg::Variable => Self::Variable,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FeeModeArg {
    Paper,
    Xhat,
}

impl From<FeeModeArg> for txpack::FeeMode {
    fn from(mode: FeeModeArg) -> Self {
        match mode {
            FeeModeArg::Paper => Self::PaperClosedForm,
            FeeModeArg::Xhat => Self::XhatAware,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct GameArgs {
    /// Mempool JSON file (`-` for stdin)
    #[arg(long)]
    mempool: PathBuf,

    /// Block capacity
    #[arg(long)]
    k: f64,

    /// Expected number of competing blocks per latency window
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,

    /// Unit-size benchmark model or heterogeneous sizes
    #[arg(long, value_enum, default_value = "fixed")]
    mode: ModeArg,
}

#[derive(Args, Debug, Clone)]
struct OutArg {
    /// Write output here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Equilibrium marginals, clamp shift and threshold
    Equilibrium {
        #[command(flatten)]
        game: GameArgs,

        /// Also emit the explicit mixed strategy (fixed mode only)
        #[arg(long)]
        with_strategy: bool,

        #[command(flatten)]
        out: OutArg,
    },

    /// Sample one block from the equilibrium strategy
    Sample {
        #[command(flatten)]
        game: GameArgs,

        /// Deterministic probe offset in [0, 1) (fixed mode)
        #[arg(long, conflicts_with = "seed")]
        r: Option<f64>,

        /// Seed for the block draw
        #[arg(long, env = "TXPACK_SEED")]
        seed: Option<u64>,

        /// Target capacity for variable mode (default 0.95·k)
        #[arg(long)]
        kprime: Option<f64>,

        #[command(flatten)]
        out: OutArg,
    },

    /// Base-fee bounds v_low and v_high
    Basefee {
        #[command(flatten)]
        game: GameArgs,

        #[arg(long, value_enum, default_value = "xhat")]
        fee_mode: FeeModeArg,

        #[command(flatten)]
        out: OutArg,
    },

    /// Check that a profile is a symmetric equilibrium
    Verify {
        #[command(flatten)]
        game: GameArgs,

        /// Profile to check (equilibrium output format); defaults to the
        /// solver's own output
        #[arg(long)]
        profile: Option<PathBuf>,

        /// Enumerate every k-subset deviation instead of the threshold test
        #[arg(long)]
        brute_force: bool,

        #[arg(long, default_value_t = 1e-9)]
        tol: f64,

        #[command(flatten)]
        out: OutArg,
    },

    /// Monte-Carlo comparison of packing strategies
    Simulate {
        /// Experiment config JSON, used instead of the individual flags
        #[arg(long, conflicts_with_all = ["mempool", "k", "lambda", "trials", "strategies"])]
        config: Option<PathBuf>,

        #[arg(long, required_unless_present = "config")]
        mempool: Option<PathBuf>,

        #[arg(long, required_unless_present = "config")]
        k: Option<f64>,

        #[arg(long, required_unless_present = "config")]
        lambda: Option<f64>,

        #[arg(long, value_enum, default_value = "fixed")]
        mode: ModeArg,

        #[arg(long)]
        kprime: Option<f64>,

        #[arg(long, required_unless_present = "config")]
        trials: Option<u64>,

        #[arg(long, env = "TXPACK_SEED")]
        seed: Option<u64>,

        /// Comma-separated: equilibrium, greedy, uniform-random-k
        #[arg(long, value_delimiter = ',', default_value = "equilibrium,greedy")]
        strategies: Vec<String>,

        /// Worker threads
        #[arg(long, default_value_t = 1)]
        jobs: usize,

        #[command(flatten)]
        out: OutArg,
    },
}

fn exit_code(err: &txpack::Error) -> u8 {
    match err {
        txpack::Error::InvariantViolation(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("txpack: error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
