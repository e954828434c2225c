//! `mtcs`: replica predictions and Monte Carlo validation runs from a config file.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mtcs_core::harness::{self, ExperimentConfig, Format, Mode, Outcome};
use mtcs_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_FAILED: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "mtcs", version, about = "Replica-symmetric distortion predictions for multi-terminal sparse recovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Replica prediction at one problem point.
    Predict(Args),
    /// Finite-size Monte Carlo recovery trials.
    Simulate(Args),
    /// Tuned distortion over a grid of compression-rate pairs.
    SweepRegion(Args),
    /// Optimal regularizer parameters, optionally over an SNR grid.
    Tune(Args),
    /// Empirical eigenvalue distribution against the asymptotic law.
    Spectrum(Args),
}

#[derive(clap::Args, Debug)]
struct Args {
    /// Experiment config (flat TOML key paths).
    #[arg(long)]
    config: PathBuf,
    /// Output file; defaults to `output.path` from the config, else stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; affects wall time only.
    #[arg(long)]
    threads: Option<usize>,
    /// Treat partial failures as total failure (exit 3 instead of 4).
    #[arg(long)]
    strict: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Predict(a) => (Mode::Predict, a),
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::SweepRegion(a) => (Mode::SweepRegion, a),
        Command::Tune(a) => (Mode::Tune, a),
        Command::Spectrum(a) => (Mode::Spectrum, a),
    };
    match execute(mode, &args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("mtcs: {e}");
            ExitCode::from(if matches!(e, Error::Config { .. }) { EXIT_CONFIG } else { EXIT_ALL_FAILED })
        }
    }
}

fn load(mode: Mode, args: &Args) -> Result<ExperimentConfig, Error> {
    let mut cfg = harness::read_config(&args.config)?;
    if cfg.mode != mode {
        return Err(Error::Config {
            path: "mode".into(),
            message: format!("config is for `{}` but the `{}` subcommand was used", cfg.mode.name(), mode.name()),
        });
    }
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(f) = args.format {
        cfg.output.format = match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        };
    }
    if let Some(out) = &args.out {
        cfg.output.path = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(mode: Mode, args: &Args) -> Result<u8, Error> {
    let cfg = load(mode, args)?;
    for w in cfg.warnings() {
        eprintln!("mtcs: warning: {w}");
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = args.threads {
        pool = pool.num_threads(k.max(1));
    }
    let pool = pool.build().map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let out = pool.install(|| harness::run(&cfg))?;

    match &cfg.output.path {
        Some(path) => harness::write_records(&out.records, path, cfg.output.format)?,
        None => std::io::stdout().write_all(&harness::render_records(&out.records, cfg.output.format)?)?,
    }
    if out.failed > 0 {
        eprintln!("mtcs: {} of {} points failed", out.failed, out.points);
    }
    Ok(match out.outcome() {
        Outcome::Success => 0,
        Outcome::AllFailed => EXIT_ALL_FAILED,
        Outcome::Partial if args.strict => EXIT_ALL_FAILED,
        Outcome::Partial => EXIT_PARTIAL,
    })
}
