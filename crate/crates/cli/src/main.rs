use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use switchopt_cli::{cmd_report, cmd_simulate, cmd_solve, cmd_validate, Engine, Overrides};

#[derive(Parser)]
#[command(name = "switchopt", version, about = "Optimal switching solver suite")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the switching-cost assumptions on the grid points.
    Validate(Common),
    /// Validate, then compute value fields with the configured engines.
    Solve(Common),
    /// Simulate the policy read off a solved value field.
    Simulate(Common),
    /// Summarize the runs in a directory into summary.json.
    Report {
        /// Run directory (defaults to the current directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides [output] directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_engine)]
    engine: Option<Engine>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    /// Solve even when validation fails.
    #[arg(long)]
    force: bool,
    /// Explicit strategy to compare against, or `random:K`.
    #[arg(long)]
    strategy: Option<String>,
    /// Value field to simulate (defaults to the one in the output directory).
    #[arg(long)]
    field: Option<PathBuf>,
}

fn parse_engine(s: &str) -> Result<Engine, String> {
    s.parse()
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            engine: self.engine,
            paths: self.paths,
            seed: self.seed,
            tol: self.tol,
            force: self.force,
            strategy: self.strategy.clone(),
            field: self.field.clone(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate(c) => cmd_validate(&c.config, &c.overrides()),
        Command::Solve(c) => cmd_solve(&c.config, &c.overrides()),
        Command::Simulate(c) => cmd_simulate(&c.config, &c.overrides()),
        Command::Report { out } => cmd_report(out.as_deref().unwrap_or(std::path::Path::new("."))),
    };
    match result {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
