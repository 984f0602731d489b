//! Command-line front end for the link-level simulator and path-loss
//! estimator: one-off scenarios, the two standard sweeps, and diagnostic
//! dumps of the observation density and the likelihood surface.

mod config;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use pilot_selflearn::estimator::evaluate_surface;
use pilot_selflearn::experiments::{
    results_to_csv, run_scenario, simulate_drop, sweep_fig1, sweep_fig2_left, sweep_fig2_right,
};
use pilot_selflearn::likelihood::{marginal_pdf, LikelihoodParams, QuadratureRule};
use pilot_selflearn::pilot::Scheme;

use config::{load_config, parse_scheme, ResolvedConfig};
use manifest::RunManifest;

pub const THREADS_ENV: &str = "PILOT_SELFLEARN_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("reading {path}: {source}")]
    ReadConfig {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    ParseConfig { path: PathBuf, message: String },
    #[error("{key}: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("writing {path}: {source}")]
    WriteOutput {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    Threads(String),
    #[error(transparent)]
    Core(#[from] pilot_selflearn::Error),
}

#[derive(Parser, Debug)]
#[command(
    name = "pilot-selflearn",
    version,
    about = "Monte Carlo link simulator and maximum-likelihood path-loss estimator \
             for two users sharing an uplink pilot"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one Monte Carlo scenario and write scenario.csv.
    Scenario(ScenarioArgs),
    /// Sweep the path-loss gap at 20 dB reference SNR for all schemes
    /// and write fig1.csv.
    Fig1(Fig1Args),
    /// Sweep block count (left) and equal SNR (right) for all schemes
    /// and write fig2_left.csv / fig2_right.csv.
    Fig2(Fig2Args),
    /// Evaluate the squared-magnitude observation density on a t-grid
    /// and write pdf.csv.
    PdfDump(PdfDumpArgs),
    /// Simulate one drop and write its coarse log-likelihood surface
    /// to surface.csv.
    SurfaceDump(SurfaceDumpArgs),
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
struct Common {
    /// Master seed; per-drop streams are derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo drops per scenario point.
    #[arg(long)]
    drops: Option<usize>,
    /// Output directory for CSV files and the run manifest.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Flat TOML configuration file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker thread count; 0 (or leaving it unset) picks the machine
    /// default. The PILOT_SELFLEARN_THREADS variable is honored when the
    /// flag is absent.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Phase schedule: structured, pseudo-random, or canonical.
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    /// First user's SNR in dB.
    #[arg(long)]
    snr1: Option<f64>,
    /// Second user's SNR in dB.
    #[arg(long)]
    snr2: Option<f64>,
    /// Coherence blocks per drop.
    #[arg(long)]
    blocks: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Fig1Args {
    #[command(flatten)]
    common: Common,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Side {
    Left,
    Right,
    Both,
}

impl Side {
    fn label(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Both => "both",
        }
    }
}

#[derive(Args, Debug)]
struct Fig2Args {
    /// Which half of the figure to compute.
    #[arg(long, value_enum, default_value_t = Side::Both)]
    side: Side,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct PdfDumpArgs {
    /// First user's path loss (linear).
    #[arg(long, default_value_t = 100.0)]
    beta1: f64,
    /// Second user's path loss (linear).
    #[arg(long, default_value_t = 100.0)]
    beta2: f64,
    /// Upper end of the t-grid; rows cover (0, tmax).
    #[arg(long, default_value_t = 500.0)]
    tmax: f64,
    /// Number of grid rows.
    #[arg(long, default_value_t = 1000)]
    points: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SurfaceDumpArgs {
    /// Phase schedule: structured, pseudo-random, or canonical.
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    /// First user's SNR in dB.
    #[arg(long)]
    snr1: Option<f64>,
    /// Second user's SNR in dB.
    #[arg(long)]
    snr2: Option<f64>,
    /// Coherence blocks per drop.
    #[arg(long)]
    blocks: Option<usize>,
    #[command(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Scenario(args) => cmd_scenario(args),
        Command::Fig1(args) => cmd_fig1(args),
        Command::Fig2(args) => cmd_fig2(args),
        Command::PdfDump(args) => cmd_pdf_dump(args),
        Command::SurfaceDump(args) => cmd_surface_dump(args),
    }
}

/// Defaults, then the file, then the common flags.
fn resolve_common(common: &Common) -> Result<ResolvedConfig, CliError> {
    let mut resolved = ResolvedConfig::default();
    if let Some(path) = &common.config {
        let file = load_config(path)?;
        resolved.apply_file(&file)?;
    }
    if let Some(seed) = common.seed {
        resolved.seed = seed;
    }
    if let Some(drops) = common.drops {
        resolved.drops = drops;
    }
    init_threads(thread_request(common.threads)?)?;
    Ok(resolved)
}

/// Explicit flag beats the environment variable; 0 means "machine default".
fn thread_request(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return Ok((n > 0).then_some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(raw) => {
            let n: usize = raw.trim().parse().map_err(|_| CliError::InvalidValue {
                key: THREADS_ENV.to_string(),
                reason: format!("not a thread count: {raw:?}"),
            })?;
            Ok((n > 0).then_some(n))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => Err(CliError::InvalidValue {
            key: THREADS_ENV.to_string(),
            reason: "not valid unicode".to_string(),
        }),
    }
}

#[cfg(feature = "parallel")]
fn init_threads(request: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = request {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|err| CliError::Threads(err.to_string()))?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn init_threads(_request: Option<usize>) -> Result<(), CliError> {
    Ok(())
}

fn write_output(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::WriteOutput {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::WriteOutput { path, source })?;
    Ok(())
}

fn cmd_scenario(args: ScenarioArgs) -> Result<(), CliError> {
    let mut resolved = resolve_common(&args.common)?;
    if let Some(scheme) = args.scheme {
        resolved.scheme = scheme;
    }
    if let Some(snr1) = args.snr1 {
        resolved.snr1_db = snr1;
    }
    if let Some(snr2) = args.snr2 {
        resolved.snr2_db = snr2;
    }
    if let Some(blocks) = args.blocks {
        resolved.blocks = blocks;
    }
    let scenario = resolved.to_scenario()?;
    let mut manifest = RunManifest::new("scenario", resolved.seed, resolved.to_json());
    let result = run_scenario(&scenario)?;
    write_output(&args.common.out, "scenario.csv", &results_to_csv(&[result]))?;
    manifest.outputs.push("scenario.csv".to_string());
    manifest.finish(&args.common.out)
}

fn cmd_fig1(args: Fig1Args) -> Result<(), CliError> {
    let resolved = resolve_common(&args.common)?;
    let base = resolved.to_scenario()?;
    let mut manifest = RunManifest::new("fig1", resolved.seed, resolved.to_json());
    let results = sweep_fig1(&base)?;
    write_output(&args.common.out, "fig1.csv", &results_to_csv(&results))?;
    manifest.outputs.push("fig1.csv".to_string());
    manifest.finish(&args.common.out)
}

fn cmd_fig2(args: Fig2Args) -> Result<(), CliError> {
    let resolved = resolve_common(&args.common)?;
    let base = resolved.to_scenario()?;
    let mut config = resolved.to_json();
    config["side"] = serde_json::json!(args.side.label());
    let mut manifest = RunManifest::new("fig2", resolved.seed, config);
    if matches!(args.side, Side::Left | Side::Both) {
        let results = sweep_fig2_left(&base)?;
        write_output(&args.common.out, "fig2_left.csv", &results_to_csv(&results))?;
        manifest.outputs.push("fig2_left.csv".to_string());
    }
    if matches!(args.side, Side::Right | Side::Both) {
        let results = sweep_fig2_right(&base)?;
        write_output(
            &args.common.out,
            "fig2_right.csv",
            &results_to_csv(&results),
        )?;
        manifest.outputs.push("fig2_right.csv".to_string());
    }
    manifest.finish(&args.common.out)
}

fn cmd_pdf_dump(args: PdfDumpArgs) -> Result<(), CliError> {
    let resolved = resolve_common(&args.common)?;
    if !(args.tmax > 0.0) || !args.tmax.is_finite() {
        return Err(CliError::InvalidValue {
            key: "tmax".to_string(),
            reason: "must be positive and finite".to_string(),
        });
    }
    if args.points == 0 {
        return Err(CliError::InvalidValue {
            key: "points".to_string(),
            reason: "must be at least 1".to_string(),
        });
    }
    let noise_variance = 1.0 / (resolved.rho_p * resolved.tau_p as f64);
    let params = LikelihoodParams::new(args.beta1, args.beta2)?
        .with_noise_variance(noise_variance)?;
    let rule = QuadratureRule::for_params(&params, resolved.quad_nodes)?;
    let mut csv = String::from("t,pdf\n");
    for k in 0..args.points {
        let t = args.tmax * (k as f64 + 0.5) / args.points as f64;
        let pdf = marginal_pdf(t, &params, &rule);
        csv.push_str(&format!("{t},{pdf}\n"));
    }
    write_output(&args.common.out, "pdf.csv", &csv)?;
    let mut config = resolved.to_json();
    config["beta1"] = serde_json::json!(args.beta1);
    config["beta2"] = serde_json::json!(args.beta2);
    config["tmax"] = serde_json::json!(args.tmax);
    config["points"] = serde_json::json!(args.points);
    let mut manifest = RunManifest::new("pdf-dump", resolved.seed, config);
    manifest.outputs.push("pdf.csv".to_string());
    manifest.finish(&args.common.out)
}

fn cmd_surface_dump(args: SurfaceDumpArgs) -> Result<(), CliError> {
    let mut resolved = resolve_common(&args.common)?;
    if let Some(scheme) = args.scheme {
        resolved.scheme = scheme;
    }
    if let Some(snr1) = args.snr1 {
        resolved.snr1_db = snr1;
    }
    if let Some(snr2) = args.snr2 {
        resolved.snr2_db = snr2;
    }
    if let Some(blocks) = args.blocks {
        resolved.blocks = blocks;
    }
    let scenario = resolved.to_scenario()?;
    let outcome = simulate_drop(&scenario, 0)?;
    let surface = evaluate_surface(
        &outcome.observation,
        scenario.grid.values_db(),
        scenario.quad_nodes,
    )?;
    let mut csv = String::from("beta1_db,beta2_db,loglik\n");
    for (i, &b1) in surface.beta1_db().iter().enumerate() {
        for (j, &b2) in surface.beta2_db().iter().enumerate() {
            csv.push_str(&format!("{b1},{b2},{}\n", surface.value(i, j)));
        }
    }
    write_output(&args.common.out, "surface.csv", &csv)?;
    let mut config = resolved.to_json();
    config["drop"] = serde_json::json!(0);
    let mut manifest = RunManifest::new("surface-dump", resolved.seed, config);
    manifest.outputs.push("surface.csv".to_string());
    manifest.finish(&args.common.out)
}
