use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use gam_core::model::Variant;
use gam_core::train::Split;

use crate::commands;
use crate::{CliError, Overrides, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Gam,
    GamTa,
    Lstm,
    GruGlucoseOnly,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Gam => Variant::Gam,
            VariantArg::GamTa => Variant::GamTa,
            VariantArg::Lstm => Variant::Lstm,
            VariantArg::GruGlucoseOnly => Variant::GruGlucoseOnly,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gam", version, about = "Graph attentive memory glucose forecasting")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory of the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub variant: Option<VariantArg>,
    /// Prediction horizon W in 5-minute steps (6 or 12).
    #[arg(long, global = true, value_parser = ["6", "12"])]
    pub horizon: Option<String>,
    /// History length T in 5-minute steps.
    #[arg(long, global = true)]
    pub history: Option<usize>,
    /// Worker threads for evaluation and federated clients.
    #[arg(long, global = true, env = "GAM_NUM_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic participant event files.
    Synth,
    /// Turn event files into a windowed, normalized dataset.
    Preprocess {
        /// Directory of `<pid>-training.csv` and `<pid>-testing.csv` files.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Pooled training followed by personalized fine-tuning.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Federated training followed by personalized fine-tuning.
    TrainFl {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Run clients one after another.
        #[arg(long)]
        serial: bool,
    },
    /// Score a checkpoint file or run directory.
    Evaluate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Write attention weights as JSON lines.
    ExportAttention {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        participant: Option<String>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Number of windows to export.
        #[arg(long, default_value_t = 1)]
        samples: usize,
    },
    /// Write prediction-versus-truth curves as CSV.
    PlotData {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Print the resolved configuration as TOML.
    PrintConfig,
}

fn configure_workers(n: usize) {
    if n > 0 {
        // A second call in the same process fails harmlessly.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn train_lines(cfg: &RunConfig, path: PathBuf, dir: PathBuf, fl: bool, lines: &mut Vec<String>) -> Result<(), CliError> {
    let summary = if fl {
        commands::train_fl(cfg, &path, &dir)?
    } else {
        commands::train(cfg, &path, &dir)?
    };
    let unit = if fl { "round" } else { "step" };
    lines.push(format!(
        "best global validation RMSE {:.3} mg/dL at {unit} {}",
        summary.best_rmse, summary.best_step
    ));
    for (name, r) in &summary.reports {
        lines.push(format!(
            "{name}: RMSE {:.3}  MARD {:.3}%  MAE {:.3}",
            r.mean_rmse, r.mean_mard, r.mean_mae
        ));
    }
    lines.push(format!("wrote {}", dir.display()));
    Ok(())
}

/// Runs one parsed invocation and returns the lines to print.
pub fn run(cli: Cli) -> Result<Vec<String>, CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        variant: cli.variant.map(Variant::from),
        horizon: cli.horizon.as_deref().map(|h| h.parse().expect("validated by clap")),
        history: cli.history,
        workers: cli.workers,
    };
    let mut cfg = RunConfig::load(cli.config.as_deref())?.resolve(&overrides)?;
    configure_workers(cfg.workers);
    let out = cli.out;
    let dataset = |d: Option<PathBuf>, cfg: &RunConfig| d.unwrap_or_else(|| cfg.paths.dataset.clone());
    let mut lines = Vec::new();
    let fl = matches!(cli.command, Command::TrainFl { .. });
    match cli.command {
        Command::Synth => {
            let dir = out.unwrap_or_else(|| cfg.paths.events.clone());
            let files = commands::synth(&cfg, &dir)?;
            lines.push(format!("wrote {} event files to {}", files.len(), dir.display()));
        }
        Command::Preprocess { events } => {
            let events = events.unwrap_or_else(|| cfg.paths.events.clone());
            let path = out.unwrap_or_else(|| cfg.paths.dataset.clone());
            let ds = commands::preprocess(&cfg, &events, &path)?;
            for p in &ds.participants {
                lines.push(format!(
                    "{}: {} train, {} valid, {} test windows",
                    p.id,
                    p.train.len(),
                    p.valid.len(),
                    p.test.len()
                ));
            }
            lines.push(format!("wrote {} (config fingerprint {})", path.display(), ds.fingerprint));
        }
        Command::Train { dataset: d } | Command::TrainFl { dataset: d, serial: false } => {
            train_lines(&cfg, dataset(d, &cfg), out.unwrap_or_else(|| cfg.paths.run.clone()), fl, &mut lines)?;
        }
        Command::TrainFl { dataset: d, serial: true } => {
            cfg.scheduler = crate::SchedulerKind::Serial;
            train_lines(&cfg, dataset(d, &cfg), out.unwrap_or_else(|| cfg.paths.run.clone()), true, &mut lines)?;
        }
        Command::Evaluate { dataset: d, checkpoint, split } => {
            let path = dataset(d, &cfg);
            let split = Split::from(split);
            let file = out.unwrap_or_else(|| cfg.paths.run.join(format!("evaluate_{}.json", split.as_str())));
            let r = commands::evaluate_cmd(&cfg, &path, &checkpoint, split, &file)?;
            for p in &r.participants {
                lines.push(format!("{}: RMSE {:.3}  MARD {:.3}%  MAE {:.3}", p.participant, p.rmse, p.mard, p.mae));
            }
            lines.push(format!(
                "mean: RMSE {:.3}  MARD {:.3}%  MAE {:.3}",
                r.mean_rmse, r.mean_mard, r.mean_mae
            ));
            lines.push(format!("wrote {}", file.display()));
        }
        Command::ExportAttention {
            dataset: d,
            checkpoint,
            participant,
            split,
            samples,
        } => {
            let path = dataset(d, &cfg);
            let file = out.unwrap_or_else(|| cfg.paths.run.join("attention.jsonl"));
            let n = commands::export_attention(&cfg, &path, &checkpoint, participant.as_deref(), split.into(), samples, &file)?;
            lines.push(format!("wrote {n} attention records to {}", file.display()));
        }
        Command::PlotData { dataset: d, checkpoint, split } => {
            let path = dataset(d, &cfg);
            let dir = out.unwrap_or_else(|| cfg.paths.run.join("plots"));
            let files = commands::plot_data(&cfg, &path, &checkpoint, split.into(), &dir)?;
            lines.push(format!("wrote {} curves to {}", files.len(), dir.display()));
        }
        Command::PrintConfig => lines.push(cfg.to_toml()?),
    }
    Ok(lines)
}
