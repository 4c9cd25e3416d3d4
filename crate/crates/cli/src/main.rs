//! `mzimesh`: generate virtual-chip data, fit the three weight models,
//! evaluate them, and run the XOR noise study.
//!
//! Exit codes: 0 success, 2 bad input or configuration, 3 numerical failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "mzimesh", version, about = "MZI mesh weight-model experiments")]
struct Cli {
    /// Global seed; every stage seed is derived from it.
    #[arg(long, global = true, default_value_t = 2021)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a chip and write sweep and random datasets.
    Generate(GenerateArgs),
    /// Fit models on generated data.
    Fit(FitArgs),
    /// Score fitted models on a test set.
    Eval(EvalArgs),
    /// Train the XOR classifier and measure accuracy under model-sized noise.
    Xor(XorArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Chip configuration (JSON); built from the seed when absent.
    #[arg(long)]
    pub chip: Option<PathBuf>,
    /// Mesh topology (JSON); the built-in 3x3 mesh when absent. Ignored with
    /// --chip, which carries its own topology.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    #[arg(long, default_value_t = 5100)]
    pub samples: usize,
    #[arg(long, default_value_t = 51)]
    pub sweep_points: usize,
    /// Multiplies the chip's thermal crosstalk.
    #[arg(long)]
    pub xt_scale: Option<f64>,
    /// Fraction of the half-period phase swing produced by the quartic term.
    #[arg(long)]
    pub quartic_share: Option<f64>,
    #[arg(long)]
    pub noise_sigma_db: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    M1,
    M2,
    M3,
    All,
}

#[derive(Args)]
pub struct FitArgs {
    /// Directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelChoice::All)]
    pub model: ModelChoice,
    #[arg(long, default_value_t = 4400)]
    pub n_train: usize,
    #[arg(long, default_value_t = 700)]
    pub n_val: usize,
    #[arg(long, default_value_t = 700)]
    pub n_test: usize,
    #[arg(long, default_value_t = 2000)]
    pub max_iterations: usize,
    /// Phase starts per fit for Models 1 and 2.
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
    /// Model 3 hidden widths, comma separated; repeat for several candidates
    /// (e.g. `--arch 64 --arch 32,32`). Defaults to 1-2 layers of
    /// 16/32/64/128.
    #[arg(long = "arch", value_parser = parse_arch)]
    pub archs: Vec<Vec<usize>>,
}

fn parse_arch(s: &str) -> Result<Vec<usize>, String> {
    let widths: Result<Vec<usize>, _> = s.split(',').map(|w| w.trim().parse::<usize>()).collect();
    match widths {
        Ok(w) if !w.is_empty() && w.iter().all(|&x| x > 0) => Ok(w),
        _ => Err(format!("invalid architecture `{s}`")),
    }
}

#[derive(Args)]
pub struct EvalArgs {
    /// Model files written by `fit`; repeatable.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct XorArgs {
    /// Directory holding `report_m{1,2,3}.json` from `fit`.
    #[arg(long, required_unless_present = "reports")]
    pub fit_dir: Option<PathBuf>,
    /// Individual fit reports; repeatable.
    #[arg(long = "report")]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub realizations: usize,
    /// Use this noise level (dB) for every row instead of the test RMSEs.
    #[arg(long)]
    pub sigma: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(cli.seed, a),
        Command::Fit(a) => commands::fit(cli.seed, a),
        Command::Eval(a) => commands::eval(cli.seed, a),
        Command::Xor(a) => commands::xor(cli.seed, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e.chain().any(|c| c.downcast_ref::<mzimesh::Error>().is_some_and(|m| m.is_numerical()));
            ExitCode::from(if numerical { 3 } else { 2 })
        }
    }
}
