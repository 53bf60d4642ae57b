//! `tradeoff`: the pipeline as file-connected stages.
//!
//! generate -> sweep -> optimize -> hetero -> report

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use tradeoff_core::io::RunManifest;

#[derive(Debug, Parser)]
#[command(
    name = "tradeoff",
    version,
    about = "Privacy-utility trade-off optimization for additive-noise masking"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "TRADEOFF_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic smart-meter dataset.
    Generate(GenerateArgs),
    /// Evaluate every setting of a grid on user subsets of a dataset.
    Sweep(SweepArgs),
    /// Select the best setting per privacy bin.
    Optimize(OptimizeArgs),
    /// Simulate mixed setting adoption across users.
    Hetero(HeteroArgs),
    /// Turn result tables into plot-ready CSV.
    Report(ReportArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Sweep(_) => "sweep",
            Command::Optimize(_) => "optimize",
            Command::Hetero(_) => "hetero",
            Command::Report(_) => "report",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub users: u64,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    pub days: u64,
    /// Readings per day.
    #[arg(long, default_value_t = 48, value_parser = clap::value_parser!(u64).range(1..))]
    pub slots: u64,
    #[arg(long, default_value_t = 0.1)]
    pub missing_rate: f64,
    #[arg(long, default_value_t = 0.005)]
    pub zero_rate: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "data.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value = "data.csv")]
    pub data: PathBuf,
    /// Readings per aggregation period of the dataset.
    #[arg(long, default_value_t = 48)]
    pub slots_per_period: usize,
    /// Comma-separated grid sources: laplace, sine, nomask, custom:<file>.
    #[arg(long, default_value = "laplace,sine")]
    pub grid: String,
    #[arg(long, default_value_t = 0.001)]
    pub b_start: f64,
    #[arg(long, default_value_t = 0.001)]
    pub b_step: f64,
    /// Last Laplace scale (default 0.2, or 10 with --full).
    #[arg(long)]
    pub b_end: Option<f64>,
    /// Sine coefficient values (default 0,0.3,0.6,0.9, or the full set with --full).
    #[arg(long, value_delimiter = ',')]
    pub sine_values: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    pub coeffs: usize,
    /// multiset or product.
    #[arg(long, default_value = "multiset")]
    pub combination: String,
    /// Use the complete Laplace and sine grids.
    #[arg(long)]
    pub full: bool,
    /// Masking repetitions per subset.
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Independent user subsets drawn per size.
    #[arg(long, default_value_t = 1)]
    pub subsets_per_size: usize,
    /// default, or sizes:<a,b,...>.
    #[arg(long, default_value = "default")]
    pub schedule: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "records.csv")]
    pub out: PathBuf,
    /// Continue an existing output, skipping records already present.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long, default_value = "records.csv")]
    pub records: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.4")]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.2,0.2")]
    pub gamma: Vec<f64>,
    #[arg(long, default_value_t = 0.2)]
    pub bin_width: f64,
    #[arg(long, default_value_t = 0.1)]
    pub omega: f64,
    #[arg(long, default_value_t = 0.1)]
    pub max_mean_e: f64,
    #[arg(long, default_value_t = 0.1)]
    pub max_std_e: f64,
    /// per-record or aggregate.
    #[arg(long, default_value = "per-record")]
    pub constraint_mode: String,
    /// Points of the trajectory privacy axis.
    #[arg(long, default_value_t = 101)]
    pub resolution: usize,
    #[arg(long, default_value = "bins.csv")]
    pub out_bins: PathBuf,
    #[arg(long, default_value = "trajectory.csv")]
    pub out_trajectory: PathBuf,
    #[arg(long, default_value = "norm.csv")]
    pub out_norm: PathBuf,
}

#[derive(Debug, Args)]
pub struct HeteroArgs {
    #[arg(long, default_value = "data.csv")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 48)]
    pub slots_per_period: usize,
    /// A CSV with a setting_id column (e.g. bin results) or comma-separated ids.
    #[arg(long, default_value = "bins.csv")]
    pub palette: String,
    /// Grid CSV used to resolve palette ids.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value_t = 0.125)]
    pub step: f64,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Normalization constants CSV (default: maxima of homogeneous palette runs).
    #[arg(long)]
    pub norm: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.4")]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.2,0.2")]
    pub gamma: Vec<f64>,
    /// Draw a new user assignment every repetition.
    #[arg(long)]
    pub resample_assignment: bool,
    #[arg(long, default_value = "heatmaps.csv")]
    pub out_heatmaps: PathBuf,
    #[arg(long, default_value = "hetero_log.csv")]
    pub out_log: PathBuf,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ReportInput {
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    #[arg(long)]
    pub heatmaps: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub input: ReportInput,
    #[arg(long, default_value = "report")]
    pub out_dir: PathBuf,
    /// Points per CDF curve.
    #[arg(long, default_value_t = 101)]
    pub points: usize,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Extra arguments appended to the recorded ones (later flags win).
    #[arg(last = true)]
    pub overrides: Vec<String>,
}

/// Raw arguments of the command without run-local flags, as recorded in
/// manifests.
fn recorded_args(raw: &[String], command: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip_next = false;
    let mut seen_command = false;
    for a in raw {
        if skip_next {
            skip_next = false;
            continue;
        }
        if a == "--threads" {
            skip_next = true;
            continue;
        }
        if a.starts_with("--threads=") || a == "--resume" {
            continue;
        }
        if !seen_command && a == command {
            seen_command = true;
            continue;
        }
        out.push(a.clone());
    }
    out
}

fn dispatch(command: Command, args: Vec<String>) -> anyhow::Result<()> {
    let name = command.name();
    let mut manifest = RunManifest::new(name);
    manifest.args = args;
    match command {
        Command::Generate(a) => commands::generate(&a, manifest),
        Command::Sweep(a) => commands::sweep(&a, manifest),
        Command::Optimize(a) => commands::optimize(&a, manifest),
        Command::Hetero(a) => commands::hetero(&a, manifest),
        Command::Report(a) => report::report(&a, manifest),
        Command::Replay(a) => {
            let recorded =
                RunManifest::load(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
            let mut argv = vec!["tradeoff".to_string(), recorded.command.clone()];
            argv.extend(recorded.args.iter().cloned());
            argv.extend(a.overrides.iter().cloned());
            let cli =
                Cli::try_parse_from(&argv).map_err(|e| anyhow::anyhow!("manifest arguments: {}", first_line(&e)))?;
            if matches!(cli.command, Command::Replay(_)) {
                anyhow::bail!("a manifest cannot replay another replay");
            }
            log::info!("replaying {} {}", recorded.command, argv[2..].join(" "));
            let args = recorded_args(&argv[1..], &recorded.command);
            dispatch(cli.command, args)
        }
    }
}

fn first_line(e: &clap::Error) -> String {
    let s = e.to_string();
    s.lines().next().unwrap_or("").trim_start_matches("error: ").to_string()
}

fn is_usage_error(e: &anyhow::Error) -> bool {
    matches!(
        e.downcast_ref::<tradeoff_core::Error>(),
        Some(tradeoff_core::Error::InvalidArgument(_) | tradeoff_core::Error::InvalidSetting(_))
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let raw: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&raw) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                e.exit();
            }
            eprintln!("error: usage: {}", first_line(&e));
            return ExitCode::from(2);
        }
    };
    let threads = cli.threads.unwrap_or(0);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(1);
    }
    let args = recorded_args(&raw[1..], cli.command.name());
    match dispatch(cli.command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            if is_usage_error(&e) {
                eprintln!("error: usage: {msg}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {msg}");
                ExitCode::from(1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn recorded_args_drop_run_local_flags() {
        let raw = v(&[
            "--threads",
            "4",
            "sweep",
            "--seed",
            "3",
            "--resume",
            "--threads=2",
            "--out",
            "r.csv",
        ]);
        assert_eq!(recorded_args(&raw, "sweep"), v(&["--seed", "3", "--out", "r.csv"]));
    }

    #[test]
    fn later_flags_override_earlier_ones() {
        let cli = Cli::try_parse_from(v(&["tradeoff", "sweep", "--out", "a.csv", "--out", "b.csv"])).unwrap();
        match cli.command {
            Command::Sweep(a) => assert_eq!(a.out, PathBuf::from("b.csv")),
            _ => unreachable!(),
        }
    }

    #[test]
    fn zero_users_is_a_usage_error() {
        assert!(Cli::try_parse_from(v(&["tradeoff", "generate", "--users", "0"])).is_err());
    }

    #[test]
    fn report_needs_exactly_one_input() {
        assert!(Cli::try_parse_from(v(&["tradeoff", "report"])).is_err());
        assert!(Cli::try_parse_from(v(&["tradeoff", "report", "--records", "a", "--heatmaps", "b"])).is_err());
    }
}
