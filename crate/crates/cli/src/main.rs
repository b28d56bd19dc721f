use std::path::PathBuf;
use std::process::ExitCode;

use cdee::model::Variant;
use cdee_cli::commands::parse_budget_grid;
use cdee_cli::{parse_config, run, CliError, Command, Context, PipelineConfig};
use clap::{Parser, Subcommand};
use log::info;

#[derive(Parser)]
#[command(name = "cdee", version, about = "Incentive response modeling, allocation and offline evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Restricts model stages to one variant.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Comma-delimited budgets for the sweep.
    #[arg(long, global = true)]
    budget_grid: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Simulate a randomized trial and its ground truth.
    Generate,
    /// Fit a model per variant on the full trial.
    Train,
    /// Score every customer under every incentive.
    Predict,
    /// Choose one incentive per customer within the budget.
    Allocate,
    /// Estimate the value of each plan from the trial.
    Evaluate,
    /// Cross-validated lift over the budget grid, with a random baseline.
    Sweep,
    /// Metric and lift tables plus the lift-vs-cost chart.
    Report,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Generate => Command::Generate,
            Cmd::Train => Command::Train,
            Cmd::Predict => Command::Predict,
            Cmd::Allocate => Command::Allocate,
            Cmd::Evaluate => Command::Evaluate,
            Cmd::Sweep => Command::Sweep,
            Cmd::Report => Command::Report,
        }
    }
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let mut config = match &cli.config {
        Some(path) => parse_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    let mut ctx = Context::new(config, cli.out.clone());
    if let Some(name) = &cli.variant {
        let v: Variant = name.parse()?;
        ctx.variants = vec![v];
    }
    if let Some(grid) = &cli.budget_grid {
        ctx.budget_grid = Some(parse_budget_grid(grid)?);
    }
    Ok(ctx)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CDEE_LOG", "cdee=error,cdee_cli=warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = context(&cli).and_then(|ctx| run(cli.command.into(), &ctx));
    match result {
        Ok(paths) => {
            for p in paths {
                info!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
