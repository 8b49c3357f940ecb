use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use seqihr::{Error, ErrorClass};

mod commands;
mod config;
mod manifest;
mod plot;

use config::RunConfig;
use manifest::Run;

/// SEQIHR epidemic simulation, calibration and lockdown-policy analysis.
#[derive(Debug, Parser)]
#[command(name = "seqihr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// `key = value` run configuration; keys not given keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Also write SVG plots.
    #[arg(long, global = true)]
    plot: bool,

    /// Threads for policy sweeps.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Seed for calibration restarts.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Use the recovered equation without the inflow from quarantine.
    #[arg(long, global = true)]
    strict_paper_eq6: bool,

    /// Discount with e^{+rt} instead of e^{-rt}.
    #[arg(long, global = true)]
    strict_paper_discount: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Integrate the single-population model.
    Simulate,
    /// Disease-free and pandemic equilibria with residuals.
    Equilibrium,
    /// R_0, R_C and the seed-growth check.
    Reproduction,
    /// Fit piecewise contact rates and E(0) to a daily-death series.
    Fit,
    /// Uniform and targeted lockdown frontiers.
    Frontier,
    /// Social-cost-minimizing targeted lockdown.
    Policy,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Equilibrium => "equilibrium",
            Command::Reproduction => "reproduction",
            Command::Fit => "fit",
            Command::Frontier => "frontier",
            Command::Policy => "policy",
        }
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
        ErrorClass::NonConvergence => 4,
    }
}

fn resolve(cli: &Cli) -> seqihr::Result<RunConfig> {
    let mut c = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        c.out = out.clone();
    }
    if let Some(w) = cli.workers {
        c.workers = w;
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    c.plot |= cli.plot;
    c.params.strict_paper_eq6 |= cli.strict_paper_eq6;
    c.strict_paper_discount |= cli.strict_paper_discount;
    c.validate()?;
    Ok(c)
}

fn run(cli: &Cli) -> seqihr::Result<bool> {
    let config = resolve(cli)?;
    let name = cli.command.name();
    let mut out = Run::new(&config.out, name)?;
    let converged = commands::dispatch(name, &config, &mut out)?;
    let manifest = out.finish(&config)?;
    eprintln!("wrote {}", manifest.display());
    Ok(converged)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(exit_code(ErrorClass::Config))
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: {}", Error::NonConvergence(format!("`{}` finished without meeting its tolerance", cli.command.name())));
            ExitCode::from(exit_code(ErrorClass::NonConvergence))
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
