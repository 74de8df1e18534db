mod ablate;
mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use dstc_core::data::{generate_synthetic, load_dataset, save_dataset, SyntheticSpec};
use dstc_core::eval::evaluate;
use dstc_core::gradcheck::{self, GradCheckConfig, Objective};
use dstc_core::train::{train, train_stage2};
use dstc_core::{Direction, DstcModel, Metric, PairedDataset, Split};
use log::info;

use config::{manifest_path, parse_metric, parse_weights, Overrides, PresetChoice, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

/// A problem with the user's configuration or flags.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A numeric check failed without an underlying library error.
#[derive(Debug)]
struct NumericFailure(String);

impl fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

#[derive(Parser)]
#[command(name = "dstc", version, about = "Cross-modal retrieval training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset
    Synth(SynthArgs),
    /// Run both training stages and save the model
    Train(TrainArgs),
    /// Evaluate cross-modal retrieval
    Eval(EvalArgs),
    /// Train and evaluate loss-combination rows
    Ablate(AblateArgs),
    /// Compare backprop gradients with finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    n_per_class: usize,
    #[arg(long, default_value_t = 64)]
    dx: usize,
    #[arg(long, default_value_t = 48)]
    dy: usize,
    #[arg(long, default_value_t = 0.15)]
    spread: f64,
    /// Fraction of pairs re-paired within their class
    #[arg(long, default_value_t = 0.0)]
    pair_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest or directory holding manifest.txt
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetChoice>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stage1_epochs: Option<usize>,
    #[arg(long)]
    stage2_epochs: Option<usize>,
    #[arg(long)]
    stage2_lr: Option<f64>,
    /// Batch size for both stages
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    no_early_stop: bool,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset,
            data: self.data.clone(),
            out: self.out.clone(),
            seed: self.seed,
            stage1_epochs: self.stage1_epochs,
            stage2_epochs: self.stage2_epochs,
            stage2_lr: self.stage2_lr,
            batch_size: self.batch_size,
            no_early_stop: self.no_early_stop,
            ..Overrides::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Stage-2 weights alpha,beta,gamma,delta
    #[arg(long, value_parser = parse_weights)]
    stage2_weights: Option<[f64; 4]>,
    /// Distance used by the pointwise loss terms
    #[arg(long, value_parser = parse_metric)]
    train_metric: Option<Metric>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    X2y,
    Y2x,
    Both,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    direction: DirectionArg,
    /// Comma-separated scoring metrics
    #[arg(long, value_delimiter = ',', value_parser = parse_metric, default_value = "cos")]
    metric: Vec<Metric>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Directory for per-query report CSVs
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated loss-combination rows (1-10)
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    rows: Vec<usize>,
    /// Comma-separated metrics used by the pointwise losses during training
    #[arg(long, value_delimiter = ',', value_parser = parse_metric, default_value = "euc,cos")]
    train_metrics: Vec<Metric>,
    /// Skip classifier training and start stage 2 from initialization
    #[arg(long)]
    no_stage1: bool,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Largest dimension of the random models
    #[arg(long, default_value_t = 16)]
    dims: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, hide = true)]
    perturb_bug: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => ablate::run(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<NumericFailure>().is_some() {
        return EXIT_NUMERIC;
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return EXIT_IO;
    }
    match e.downcast_ref::<dstc_core::Error>() {
        Some(err) if err.is_numeric() => EXIT_NUMERIC,
        Some(err) if err.is_io() => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    let spec = SyntheticSpec {
        classes: a.classes,
        n_per_class: a.n_per_class,
        x_dim: a.dx,
        y_dim: a.dy,
        cluster_spread: a.spread,
        pair_noise: a.pair_noise,
        seed: a.seed,
    };
    let data = generate_synthetic(&spec)?;
    let manifest = save_dataset(&a.out, &data)?;
    println!("wrote {} samples to {}", data.len(), manifest.display());
    Ok(())
}

fn load_data(path: &Path) -> anyhow::Result<PairedDataset> {
    Ok(load_dataset(&manifest_path(path))?)
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let ov = Overrides {
        stage2_weights: a.stage2_weights,
        train_metric: a.train_metric,
        ..a.run.overrides()
    };
    let cfg = RunConfig::load(a.run.config.as_deref(), &ov)?;
    let data = load_data(&cfg.data_path()?)?;
    let out = cfg.out_dir()?;
    let arch = cfg.preset.arch(data.x_dim(), data.y_dim(), data.num_classes());
    arch.check(data.num_classes(), data.x_dim(), data.y_dim())?;
    create_dir(&out)?;
    write_file(&out.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;

    let (model, history) = train(&cfg.train, &data, &arch)?;
    model.save(&out.join("model.bin"))?;
    write_file(&out.join("history.csv"), history.to_csv())?;
    let report = evaluate(&model, &data, Split::Val, Direction::Both, Metric::Cosine)?;
    write_file(&out.join("val_report.csv"), report.to_csv())?;
    info!("outputs written to {}", out.display());
    print!("{}", report.summary());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let data = load_data(&a.data)?;
    let model = DstcModel::load_for(&a.model, data.num_classes(), data.x_dim(), data.y_dim())?;
    let directions: &[Direction] = match a.direction {
        DirectionArg::X2y => &[Direction::XToY],
        DirectionArg::Y2x => &[Direction::YToX],
        DirectionArg::Both => &[Direction::XToY, Direction::YToX, Direction::Both],
    };
    if let Some(dir) = &a.out {
        create_dir(dir)?;
    }
    for &metric in &a.metric {
        for &direction in directions {
            let report = evaluate(&model, &data, a.split.into(), direction, metric)?;
            println!(
                "{} {}: mAP {:.6}, class-averaged mAP {:.6}",
                metric.short_name(),
                direction.short_name(),
                report.map,
                report.class_avg_map
            );
            if let Some(dir) = &a.out {
                let name = format!("report_{}_{}.csv", metric.short_name(), direction.short_name());
                write_file(&dir.join(name), report.to_csv())?;
            }
        }
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> anyhow::Result<()> {
    let cfg = GradCheckConfig {
        max_dim: a.dims,
        batch: a.batch,
        trials: a.trials,
        seed: a.seed,
        corrupt: a.perturb_bug,
        ..GradCheckConfig::default()
    };
    let report = gradcheck::run(&cfg, &Objective::suite())?;
    print!("{}", report.summary());
    if report.passed() {
        Ok(())
    } else {
        Err(NumericFailure("gradient check failed".into()).into())
    }
}

/// Stage 2 only, from a freshly initialized model.
fn train_without_stage1(cfg: &RunConfig, data: &PairedDataset) -> anyhow::Result<(DstcModel, dstc_core::TrainHistory)> {
    let arch = cfg.preset.arch(data.x_dim(), data.y_dim(), data.num_classes());
    let mut model = DstcModel::build(&arch, data.num_classes(), data.x_dim(), data.y_dim(), cfg.train.seed)?;
    let history = train_stage2(&mut model, data, &cfg.train)?;
    Ok((model, history))
}
