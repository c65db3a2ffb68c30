mod commands;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Synthesize stochastic control Lyapunov functions by SOS bounds on the
/// HJB desirability, then simulate and verify them.
#[derive(Parser, Debug)]
#[command(name = "sclf", version)]
struct Cli {
    /// Worker threads for degree sweeps and Monte Carlo runs [default: all cores].
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sweep the degree hierarchy and archive the best solution.
    Solve(SolveArgs),
    /// Monte Carlo rollouts of the archived controller.
    Simulate(SimulateArgs),
    /// Check an archived solution against a finite-difference oracle.
    Verify(VerifyArgs),
    /// solve, simulate and verify in one go.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Stabilization,
    PathPlanning,
    DeterministicClf,
}

#[derive(Args, Debug, Clone)]
pub struct SolveArgs {
    /// Problem JSON.
    pub problem: PathBuf,
    /// Even degree range MIN..MAX [default: the problem's hierarchy block].
    #[arg(long, value_parser = parse_range)]
    pub degrees: Option<(u32, u32)>,
    /// Override the problem's mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    /// Solution archive written by `solve`.
    pub archive: PathBuf,
    #[command(flatten)]
    pub sim: SimOptions,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SimOptions {
    /// Initial state, comma separated [default: the problem's simulation block].
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub runs: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Integrate without Brownian increments.
    #[arg(long)]
    pub noiseless: bool,
    /// True values of the uncertain parameters [default: nominal].
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub params: Option<Vec<f64>>,
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    /// Solution archive written by `solve`.
    pub archive: PathBuf,
    #[command(flatten)]
    pub verify: VerifyOptions,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct VerifyOptions {
    /// Oracle nodes per axis [default: 2001 for one state, 201 for two].
    #[arg(long)]
    pub resolution: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    pub problem: PathBuf,
    #[arg(long, value_parser = parse_range)]
    pub degrees: Option<(u32, u32)>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[command(flatten)]
    pub sim: SimOptions,
    #[command(flatten)]
    pub verify: VerifyOptions,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn parse_range(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected MIN..MAX, got '{s}'"))?;
    let lo: u32 = a.trim().parse().map_err(|e| format!("'{a}': {e}"))?;
    let hi: u32 = b.trim().trim_start_matches('=').parse().map_err(|e| format!("'{b}': {e}"))?;
    if lo > hi || lo % 2 == 1 || hi % 2 == 1 {
        return Err(format!("degrees {lo}..{hi} must be even with MIN <= MAX"));
    }
    Ok((lo, hi))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Solve(a) => commands::solve(a).map(|_| ()),
        Command::Simulate(a) => commands::simulate(a),
        Command::Verify(a) => commands::verify(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
