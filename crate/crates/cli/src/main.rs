use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use turnpike_cli::{
    cmd_bond, cmd_collective, cmd_portfolio, cmd_riccati, cmd_turnpike, cmd_validate, GlobalOpts,
    EXIT_CONFIG, EXIT_FAIL,
};

/// Numerical laboratory for optimal feedback portfolios in quadratic
/// term structure markets.
#[derive(Parser)]
#[command(name = "turnpike", version, about)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, default_value = "configs/scalar.toml")]
    config: PathBuf,

    /// Override the RNG seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the Monte Carlo path count.
    #[arg(long, global = true)]
    paths: Option<usize>,

    /// Override the simulation steps per unit horizon.
    #[arg(long, global = true)]
    steps_per_unit: Option<usize>,

    /// Worker thread cap (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory (default: $TURNPIKE_OUT or ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the market model against its standing assumptions.
    Validate,
    /// Solve the Riccati coefficient family and export it as CSV.
    Riccati {
        /// Moment exponent in [0, 1] (1 = bond family).
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Horizon in years.
        #[arg(long, default_value_t = 10.0)]
        horizon: f64,
    },
    /// Zero-coupon bond prices, with a Monte Carlo cross-check when
    /// --paths is given.
    Bond {
        /// Comma-separated list of horizons.
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        horizons: Vec<f64>,
    },
    /// Myopic/hedging/total feedback for one utility at one horizon.
    Portfolio {
        /// general | reference | log | power:<p>
        #[arg(long, default_value = "general")]
        utility: String,
        #[arg(long, default_value_t = 5.0)]
        horizon: f64,
        /// Initial wealth override.
        #[arg(long)]
        x: Option<f64>,
    },
    /// Horizon sweep of strategy gaps with rate fits.
    Turnpike,
    /// Pareto vs linear sharing rate comparison.
    Collective,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let opts = GlobalOpts {
        config: cli.config,
        seed: cli.seed,
        paths: cli.paths,
        steps_per_unit: cli.steps_per_unit,
        threads: cli.threads,
        out: cli.out,
    };
    let result = match cli.command {
        Command::Validate => cmd_validate(&opts),
        Command::Riccati { gamma, horizon } => cmd_riccati(&opts, gamma, horizon),
        Command::Bond { horizons } => cmd_bond(&opts, &horizons, opts.paths.is_some()),
        Command::Portfolio {
            utility,
            horizon,
            x,
        } => cmd_portfolio(&opts, &utility, horizon, x),
        Command::Turnpike => cmd_turnpike(&opts),
        Command::Collective => cmd_collective(&opts),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = if err
                .downcast_ref::<turnpike_core::Error>()
                .is_some_and(|e| matches!(e, turnpike_core::Error::Config(_)))
            {
                EXIT_CONFIG
            } else {
                EXIT_FAIL
            };
            ExitCode::from(code as u8)
        }
    }
}
