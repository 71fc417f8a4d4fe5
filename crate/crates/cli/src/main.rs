use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use twoprice::fluid::solve_fluid;
use twoprice::harness::{
    parse_number, parse_seed_range, run_experiment, run_tradeoff, validate_config, write_experiment,
    write_tradeoff, ExperimentConfig,
};
use twoprice::policies::PolicyKind;

/// Pricing and matching experiments on two-sided queueing networks.
#[derive(Parser, Debug)]
#[command(name = "twoprice", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the fluid program and print the solution as one JSON line.
    FluidSolve(Common),
    /// Run the configured policies and write summary.csv.
    Simulate(RunArgs),
    /// Run the configured policies and write summary.csv and compare.csv.
    Compare(RunArgs),
    /// Sweep gamma with the probabilistic two-price policy and write
    /// tradeoff.csv and tradeoff_fit.csv.
    Tradeoff {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated gamma values; fractions such as 1/12 are accepted.
        #[arg(long, default_value = "1/12,1/9,1/6")]
        gammas: String,
    },
    /// Check model assumptions and cross-check the solver against oracles.
    /// Exits with status 1 if any check fails.
    Validate(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config file. The built-in single-link setup is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the schedule exponent gamma.
    #[arg(long)]
    gamma: Option<String>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Inclusive seed range, e.g. 0..9.
    #[arg(long)]
    seeds: Option<String>,
    /// Run only this policy: prob2p, threshold, genie2p or eto.
    #[arg(long)]
    policy: Option<PolicyKind>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write a per-slot trace file for every run.
    #[arg(long)]
    trace: bool,
}

fn load(common: &Common) -> twoprice::Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(g) = &common.gamma {
        config.schedule.gamma = parse_number(g)?;
    }
    Ok(config)
}

fn load_run(args: &RunArgs) -> twoprice::Result<ExperimentConfig> {
    let mut config = load(&args.common)?;
    if let Some(s) = args.seed {
        config.seeds = (s, s);
    }
    if let Some(s) = &args.seeds {
        config.seeds = parse_seed_range(s)?;
    }
    if let Some(p) = args.policy {
        config.policies = vec![p];
    }
    config.trace |= args.trace;
    Ok(config)
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> twoprice::Result<bool> {
    match cli.command {
        Command::FluidSolve(common) => {
            let config = load(&common)?;
            let instance = config.instance()?;
            let solution = solve_fluid(&instance, config.schedule.a_min)?;
            let line = serde_json::to_string(&solution)
                .map_err(|e| twoprice::Error::Config(format!("cannot serialize the solution: {e}")))?;
            println!("{line}");
        }
        Command::Simulate(args) => {
            let config = load_run(&args)?;
            let runs = run_experiment(&config)?;
            report_written(&write_experiment(&args.out, &runs, &config.weights, false)?);
        }
        Command::Compare(args) => {
            let config = load_run(&args)?;
            let runs = run_experiment(&config)?;
            report_written(&write_experiment(&args.out, &runs, &config.weights, true)?);
        }
        Command::Tradeoff { run, gammas } => {
            let config = load_run(&run)?;
            let gammas = gammas
                .split(',')
                .map(|g| parse_number(g.trim()))
                .collect::<twoprice::Result<Vec<_>>>()?;
            let tradeoff = run_tradeoff(&config, &gammas)?;
            report_written(&write_tradeoff(&run.out, &tradeoff)?);
            eprintln!("slope ratio {}", tradeoff.slope_ratio());
        }
        Command::Validate(common) => {
            let config = load(&common)?;
            let checks = validate_config(&config);
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
