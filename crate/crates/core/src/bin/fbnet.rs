use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fbnet::checkpoint::Checkpoint;
use fbnet::data::{gen_dataset, DatasetManifest, GenConfig, Split};
use fbnet::metrics::{write_reports, write_reports_file, DEFAULT_TAU};
use fbnet::model::{InitStrategy, Profile};
use fbnet::nn::PoolingKind;
use fbnet::tensor::Precision;
use fbnet::train::{self, Suite, TrainConfig};
use fbnet::{Error, Result};

#[derive(Parser)]
#[command(name = "fbnet", version, about = "Point cloud completion: data, training, evaluation and inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on the train split of a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        cfg: TrainArgs,
    },
    /// Report metrics for every time step of a trained model.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Unroll this many time steps instead of the trained number.
        #[arg(long)]
        time_steps: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        /// CSV destination; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train and compare the variants of an ablation suite.
    Ablate {
        /// feedback, init_strategy or pooling.
        #[arg(long)]
        suite: String,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        cfg: TrainArgs,
    },
    /// Complete a single partial cloud.
    Complete {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a synthetic dataset and its manifest.
    GenData {
        #[arg(long)]
        out_dir: PathBuf,
        /// TOML file with the keys below; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        val: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        complete_points: Option<usize>,
        #[arg(long)]
        partial_points: Option<usize>,
        #[arg(long)]
        keep_ratio: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the number of learnable parameters.
    ReportParams {
        #[arg(long, conflicts_with = "profile")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        profile: Option<Profile>,
        #[arg(long, requires = "profile")]
        time_steps: Option<usize>,
    },
}

/// Training flags. Each one overrides the same key of `--config`.
#[derive(Args)]
struct TrainArgs {
    /// TOML file with training keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    decay_every: Option<usize>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    precision: Option<Precision>,
    #[arg(long)]
    profile: Option<Profile>,
    #[arg(long)]
    time_steps: Option<usize>,
    #[arg(long)]
    feedback: Option<bool>,
    #[arg(long)]
    init_strategy: Option<InitStrategy>,
    #[arg(long, value_parser = parse_pooling)]
    pooling: Option<PoolingKind>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
}

fn parse_pooling(s: &str) -> std::result::Result<PoolingKind, String> {
    match s {
        "adaptive" => Ok(PoolingKind::Adaptive),
        "point" => Ok(PoolingKind::Point),
        _ => Err(format!("unknown pooling '{s}' (expected adaptive or point)")),
    }
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($field:ident),* $(,)?) => {
        $(if let Some(v) = $src.$field.clone() { $dst.$field = v; })*
    };
}

impl TrainArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::from_toml_file(p)?,
            None => TrainConfig::default(),
        };
        overlay!(
            cfg, self, lr, lr_decay, decay_every, beta1, beta2, batch_size, epochs, seed, precision, profile,
            feedback, init_strategy, pooling, tau, out_dir, run_id,
        );
        if self.time_steps.is_some() {
            cfg.time_steps = self.time_steps;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { manifest, cfg } => {
            let cfg = cfg.resolve()?;
            let outcome = train::train(&cfg, &load_manifest(&manifest)?)?;
            println!(
                "best epoch {} ({}), metrics in {}",
                outcome.best_epoch,
                outcome.best_checkpoint.display(),
                outcome.metrics_csv.display()
            );
        }
        Command::Eval { checkpoint, manifest, split, time_steps, tau, output } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let eval = train::evaluate(&ckpt, &load_manifest(&manifest)?, split, time_steps, tau)?;
            match output {
                Some(p) => write_reports_file(&p, &eval.rows)?,
                None => write_reports(std::io::stdout().lock(), &eval.rows)?,
            }
        }
        Command::Ablate { suite, manifest, cfg } => {
            let suite: Suite = suite.parse()?;
            let cfg = cfg.resolve()?;
            let rows = train::ablate(suite, &cfg, &load_manifest(&manifest)?)?;
            write_reports(std::io::stdout().lock(), &rows)?;
        }
        Command::Complete { checkpoint, input, output } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cloud = train::complete(&ckpt, &input, &output)?;
            println!("wrote {} points to {}", cloud.len(), output.display());
        }
        Command::GenData { out_dir, config, train, val, test, complete_points, partial_points, keep_ratio, seed } => {
            let base: GenConfig = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => GenConfig::default(),
            };
            let cfg = GenConfig {
                train: train.unwrap_or(base.train),
                val: val.unwrap_or(base.val),
                test: test.unwrap_or(base.test),
                complete_points: complete_points.unwrap_or(base.complete_points),
                partial_points: partial_points.unwrap_or(base.partial_points),
                keep_ratio: keep_ratio.unwrap_or(base.keep_ratio),
                seed: seed.unwrap_or(base.seed),
            };
            let manifest = gen_dataset(&cfg, &out_dir)?;
            println!("wrote {} shapes to {}", manifest.entries.len(), out_dir.join("manifest.json").display());
        }
        Command::ReportParams { checkpoint, profile, time_steps } => {
            let count = match (checkpoint, profile) {
                (Some(p), _) => train::report_params(&Checkpoint::load(&p)?),
                (None, Some(profile)) => {
                    let mut cfg = profile.config();
                    if let Some(t) = time_steps {
                        cfg.time_steps = t;
                    }
                    train::count_params(&cfg)?
                }
                (None, None) => return Err(Error::Config("pass --checkpoint or --profile".into())),
            };
            println!("{count}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
