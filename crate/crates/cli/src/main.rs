use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use xbar_cli::{run, Experiment, ModeSelection, RunConfig};
use xbar_core::Rule;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExperimentArg {
    LogicMap,
    LogicTrain,
    Mnist,
    Defects,
    Hist,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Voltage,
    Current,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RuleArg {
    Standard,
    CurrentExact,
    CurrentSimplified,
}

/// Memristor crossbar experiments. Results are written as CSV together with
/// a JSON record of the resolved configuration.
#[derive(Debug, Parser)]
#[command(name = "xbar", version)]
struct Args {
    #[arg(long, value_enum)]
    experiment: Option<ExperimentArg>,

    /// Which crossbar configurations to run [default: both]
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,

    /// Training rule for current-mode networks [default: current-simplified]
    #[arg(long, value_enum)]
    rule: Option<RuleArg>,

    /// Learning rate applied to every selected mode
    #[arg(long)]
    alpha: Option<f64>,

    #[arg(long)]
    epochs: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    /// Comma-separated defect rates, e.g. 0,0.25,0.5
    #[arg(long, value_delimiter = ',')]
    defect_rates: Option<Vec<f64>>,

    /// Runs per defect rate
    #[arg(long)]
    runs: Option<usize>,

    /// Directory holding the four MNIST IDX files
    #[arg(long, env = "XBAR_DATA_DIR")]
    data_dir: Option<PathBuf>,

    #[arg(long)]
    train_limit: Option<usize>,

    #[arg(long)]
    test_limit: Option<usize>,

    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,

    /// JSON configuration; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
}

fn resolve(args: Args) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_json_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(e) = args.experiment {
        cfg.experiment = match e {
            ExperimentArg::LogicMap => Experiment::LogicMap,
            ExperimentArg::LogicTrain => Experiment::LogicTrain,
            ExperimentArg::Mnist => Experiment::Mnist,
            ExperimentArg::Defects => Experiment::Defects,
            ExperimentArg::Hist => Experiment::Hist,
        };
    } else if args.config.is_none() {
        anyhow::bail!("pass --experiment or --config");
    }
    if let Some(m) = args.mode {
        cfg.mode = match m {
            ModeArg::Voltage => ModeSelection::Voltage,
            ModeArg::Current => ModeSelection::Current,
            ModeArg::Both => ModeSelection::Both,
        };
    }
    if let Some(r) = args.rule {
        cfg.rule = match r {
            RuleArg::Standard => Rule::Standard,
            RuleArg::CurrentExact => Rule::CurrentExact,
            RuleArg::CurrentSimplified => Rule::CurrentSimplified,
        };
    }
    cfg.alpha = args.alpha.or(cfg.alpha);
    cfg.epochs = args.epochs.or(cfg.epochs);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.defect_rates = args.defect_rates.unwrap_or(cfg.defect_rates);
    cfg.runs = args.runs.unwrap_or(cfg.runs);
    cfg.data_dir = args.data_dir.or(cfg.data_dir);
    cfg.train_limit = args.train_limit.unwrap_or(cfg.train_limit);
    cfg.test_limit = args.test_limit.unwrap_or(cfg.test_limit);
    cfg.out = args.out.unwrap_or(cfg.out);
    Ok(cfg)
}

fn main() -> ExitCode {
    let result = resolve(Args::parse()).and_then(|cfg| run(&cfg));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
