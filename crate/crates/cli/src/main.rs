use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sdlh_cli::{cmd_gen, cmd_oracle, cmd_probe, cmd_solve, cmd_verify, RunConfig};

/// Nash equilibria of two-player semidefinite games by homotopy path
/// tracing, with classical bimatrix oracles for cross-checking.
#[derive(Parser)]
#[command(name = "sdlh", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct CommonArgs {
    /// Game file (JSON)
    input: PathBuf,
    /// Bonus strategy index of player 1 (1-based)
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Verification tolerance
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Maximum accepted path steps
    #[arg(long, default_value_t = 100_000)]
    max_steps: usize,
    /// Abort when t exceeds this multiple of the starting bonus
    #[arg(long, default_value_t = 4.0)]
    tmax_mult: f64,
    /// Seed for any randomized component
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the result document here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the full trace (JSON lines) here
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

impl CommonArgs {
    fn config(&self) -> RunConfig {
        let mut c = RunConfig::new(self.input.clone());
        c.k = self.k;
        c.tol = self.tol;
        c.max_steps = self.max_steps;
        c.tmax_mult = self.tmax_mult;
        c.seed = self.seed;
        c.out = self.out.clone();
        c.trace_out = self.trace_out.clone();
        c
    }
}

#[derive(Subcommand)]
enum Command {
    /// Trace the homotopy path to a Nash equilibrium
    Solve {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Check a strategy pair against the complementarity conditions
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Strategy file with fields x and y (nested arrays)
        strategies: PathBuf,
    },
    /// Compare the tracer against the classical oracles
    Oracle {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate a random game file
    Gen {
        /// Rows / first-player dimension
        #[arg(long, default_value_t = 2)]
        m: usize,
        /// Columns / second-player dimension
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Emit a bimatrix game instead of a semidefinite one
        #[arg(long)]
        bimatrix: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample-based non-degeneracy probe
    Probe {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Solve { common } => cmd_solve(&common.config()),
        Command::Verify { common, strategies } => cmd_verify(&common.config(), &strategies),
        Command::Oracle { common } => cmd_oracle(&common.config()),
        Command::Gen {
            m,
            n,
            seed,
            bimatrix,
            out,
        } => cmd_gen(m, n, seed, bimatrix, out.as_deref()),
        Command::Probe { common, samples } => cmd_probe(&common.config(), samples),
    };
    match code {
        Ok(c) => ExitCode::from(c as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
