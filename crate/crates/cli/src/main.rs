//! Command-line entry point. Exit codes: 0 success, 2 configuration
//! error, 3 solver failure, 4 adaptivity abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tempered_dg::estimate::Scheme;
use tempered_dg_cli::config::Config;
use tempered_dg_cli::experiments::{
    run_adapt_evolution, run_adapt_stationary, run_converge, CliError,
};
use tempered_dg_cli::{log, validate};

#[derive(Parser)]
#[command(name = "tempered-dg", about = "Tempered fractional DG experiment harness")]
struct Cli {
    /// output directory for CSV tables, dumps and plots
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,

    /// worker count; levels are independent but run sequentially here
    #[arg(long, default_value_t = 1, global = true)]
    jobs: usize,

    /// seed for the randomized property checks
    #[arg(long, default_value_t = 0, global = true)]
    seed: u64,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// fixed-mesh convergence study over uniformly halved meshes
    Converge { config: PathBuf },
    /// adaptive stationary run with a uniform reference curve
    AdaptStationary {
        config: PathBuf,
        /// marking indicator
        #[arg(long, value_parser = parse_scheme, default_value = "energy")]
        scheme: Scheme,
    },
    /// space-time adaptive evolution run
    AdaptEvolution { config: PathBuf },
    /// run the operator / assembly property suites
    Validate,
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    match s {
        "energy" => Ok(Scheme::Energy),
        "dwr" => Ok(Scheme::Dwr),
        other => Err(format!("'{other}' is not energy|dwr")),
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.jobs > 1 {
        log!("--jobs {} requested; running sequentially", cli.jobs);
    }
    match &cli.cmd {
        Cmd::Converge { config } => {
            let cfg = Config::load(config)?;
            let rep = run_converge(&cfg, &cli.out)?;
            println!("fitted order: {:.3}", rep.fitted_order);
            for (i, o) in rep.orders.iter().enumerate() {
                println!("order level {} -> {}: {o:.3}", i, i + 1);
            }
        }
        Cmd::AdaptStationary { config, scheme } => {
            let cfg = Config::load(config)?;
            let rep = run_adapt_stationary(&cfg, &cli.out, *scheme)?;
            for it in &rep.iterations {
                println!(
                    "iteration {}: K = {} eta = {:.4e}",
                    it.iter, it.k, it.eta
                );
            }
        }
        Cmd::AdaptEvolution { config } => {
            let cfg = Config::load(config)?;
            let rep = run_adapt_evolution(&cfg, &cli.out)?;
            println!(
                "completed {} steps, {} tau halvings, {} snapshots",
                rep.rows.len(),
                rep.total_halvings,
                rep.snapshots.len()
            );
        }
        Cmd::Validate => {
            let results = validate::run_all(cli.seed);
            let mut ok = true;
            for r in &results {
                println!("{}", r.line());
                ok &= r.pass;
            }
            if !ok {
                return Err(CliError::Solver("property suite failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
