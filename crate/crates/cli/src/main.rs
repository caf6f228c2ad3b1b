use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rssfield_cli::commands::{self, DataArgs};
use rssfield_cli::config::EstimatorKind;
use rssfield_cli::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "rssfield", version, about = "RSS field estimation from crowdsourced reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config; defaults reproduce the reference simulation.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Forgetting factor in (0, 1].
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct Data {
    /// Measurement CSV (`t,sensor_id,x_hat_m,y_hat_m,rss_dbm`).
    #[arg(long)]
    measurements: Option<PathBuf>,
    /// Truth or field CSV whose nodes form the grid.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Truth CSV (`node_id,x_m,y_m,rss_dbm`) to score against.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic measurement and truth files.
    Synth(#[command(flatten)] Common),
    /// Static GP field.
    FitStatic {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
    },
    /// Recursive GP over time steps.
    FitRecursive {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
    },
    /// Static field with the per-node MSE bound.
    Bound {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
    },
    /// Ordinary kriging of detrended reports.
    BaselineOkd {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
    },
    /// True, modeled and ignored location errors over the σ_v² sweep.
    Cases(#[command(flatten)] Common),
    /// MSE of a field file against a truth file.
    Eval {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split a measurement file into training reports and test truth.
    IngestReal {
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Split seed; overrides the config's.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(l) = common.lambda {
        cfg.estimator.lambda = l;
    }
    if let Some(s) = common.steps {
        cfg.steps = s;
    }
    if let Some(r) = common.replicates {
        cfg.replicates = r;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    let out = cfg.out.clone();
    Ok((cfg, out))
}

fn data(d: &Data) -> DataArgs {
    DataArgs { measurements: d.measurements.clone(), grid: d.grid.clone(), truth: d.truth.clone() }
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Synth(common) => {
            let replicates = common.replicates.unwrap_or(1);
            let (cfg, out) = load(&common)?;
            commands::synth(&cfg, replicates, &out)
        }
        Command::FitStatic { common, data: d } => {
            let (cfg, out) = load(&common)?;
            commands::fit_single(&cfg, EstimatorKind::Sgp, &data(&d), &out)
        }
        Command::BaselineOkd { common, data: d } => {
            let (cfg, out) = load(&common)?;
            commands::fit_single(&cfg, EstimatorKind::Okd, &data(&d), &out)
        }
        Command::FitRecursive { common, data: d } => {
            let (cfg, out) = load(&common)?;
            commands::fit_recursive(&cfg, &data(&d), &out)
        }
        Command::Bound { common, data: d } => {
            let (cfg, out) = load(&common)?;
            commands::bound(&cfg, &data(&d), &out)
        }
        Command::Cases(common) => {
            let (cfg, out) = load(&common)?;
            commands::cases(&cfg, &out)
        }
        Command::Eval { field, truth, out } => commands::eval(&field, &truth, out.as_deref()),
        Command::IngestReal { measurements, config, seed, out } => {
            let cfg = match &config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            let split_seed = seed.or(cfg.real.as_ref().map(|r| r.split_seed)).unwrap_or(0);
            commands::ingest(&measurements, split_seed, &out.unwrap_or(cfg.out))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
