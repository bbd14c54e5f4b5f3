//! `sbc` — certify upper bounds on the probability that a polynomial
//! stochastic system ever reaches an unsafe set, or Monte-Carlo check
//! such a bound.

use clap::{Args, Parser, Subcommand};
use sbc_cli::commands::{self, CliError, Overrides};
use sbc_cli::problem_file::load_problem;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sbc",
    version,
    about = "Stochastic barrier certificates for polynomial SDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify an unbounded-horizon failure-probability bound
    Verify(RunArgs),
    /// Monte-Carlo estimate of the failure rate (sanity oracle)
    Simulate(RunArgs),
    /// Bounded + tail curve over a grid of cut times
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Problem file (TOML)
    path: PathBuf,
    /// Fixed cut time between the bounded and tail regimes
    #[arg(long = "T")]
    t: Option<f64>,
    /// Cut-time grid `a:b:step`, both endpoints inclusive
    #[arg(long = "T-grid")]
    t_grid: Option<String>,
    /// Tail budget used to choose the cut time automatically
    #[arg(long)]
    epsilon: Option<f64>,
    /// Exponential certificate degree
    #[arg(long = "deg-exp")]
    deg_exp: Option<u32>,
    /// Bounded-horizon certificate degree
    #[arg(long = "deg-timedep")]
    deg_timedep: Option<u32>,
    /// Decay-rate matrix, rows separated by `;`, entries by `,`
    #[arg(long)]
    lambda: Option<String>,
    /// Tail decay matrix override (defaults to half the decay rate)
    #[arg(long = "M")]
    m_matrix: Option<String>,
    /// Simulation seed
    #[arg(long)]
    seed: Option<u64>,
    /// Simulation trial count
    #[arg(long)]
    trials: Option<i64>,
    /// Directory for report/CSV outputs
    #[arg(long = "out-dir", default_value = ".")]
    out_dir: PathBuf,
    /// SDP duality-gap and feasibility tolerance
    #[arg(long = "solver-tol")]
    solver_tol: Option<f64>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            t: self.t,
            t_grid: self.t_grid.clone(),
            epsilon: self.epsilon,
            deg_exp: self.deg_exp,
            deg_timedep: self.deg_timedep,
            lambda: self.lambda.clone(),
            m_matrix: self.m_matrix.clone(),
            seed: self.seed,
            trials: self.trials,
            solver_tol: self.solver_tol,
        }
    }
}

fn run(cli: Cli) -> Result<(i32, String), CliError> {
    let (args, cmd): (
        &RunArgs,
        fn(&sbc_cli::problem_file::LoadedProblem, &std::path::Path) -> Result<(i32, String), CliError>,
    ) = match &cli.command {
        Command::Verify(args) => (args, commands::cmd_verify),
        Command::Simulate(args) => (args, commands::cmd_simulate),
        Command::Sweep(args) => (args, commands::cmd_sweep),
    };
    let mut loaded = load_problem(&args.path)?;
    commands::apply_overrides(&mut loaded, &args.overrides())?;
    cmd(&loaded, &args.out_dir)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // `--help`/`--version` land here as non-error exits; real
            // usage mistakes take the exit-1 path of the error contract.
            let _ = e.print();
            return ExitCode::from(u8::from(e.use_stderr()) * commands::EXIT_ERROR as u8);
        }
    };
    match run(cli) {
        Ok((code, stdout)) => {
            print!("{stdout}");
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::EXIT_ERROR as u8)
        }
    }
}
