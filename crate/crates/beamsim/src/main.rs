use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use beamsim::error::{AppError, Result};
use beamsim::evaluate::{run_policy, EvalOptions, EvalReport, Policy};
use beamsim::experiment::{cross_scenario_eval, train_model, Arch, CrossConfig, DatasetParams, TrainSpec, TrainedModel};
use beamsim::report::{average_tasks, load_reports, write_csv, write_json, write_plotdata, ReportFormat};
use beamsim::sha256_hex;
use beamsim_core::baseline::write_traces_jsonl;
use beamsim_core::codebook::Resolution;
use beamsim_core::measurement::{build_dataset, load_dataset, save_dataset, Split, SplitFractions};
use beamsim_core::scenario::{generate_scenario, load_scenario, save_scenario, ScenarioConfig};
use beamsim_learn::checkpoint::{decode_checkpoint, save_checkpoint, Model};
use beamsim_learn::layers::BackboneKind;
use beamsim_learn::model::{FusionKind, LossWeights, ModelConfig};
use beamsim_learn::train::TrainConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

#[derive(Parser)]
#[command(name = "beamsim", version, about = "Beam-prediction simulator, trainer and evaluator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scenario generation.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Dataset construction.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train a model on a dataset's train split.
    Train(TrainCmd),
    /// Evaluate a policy on a dataset split.
    Eval(EvalCmd),
    /// Train on one scenario, evaluate on others.
    Xeval(XevalCmd),
    /// Convert, merge or plot saved reports.
    Report(ReportCmd),
}

#[derive(Subcommand)]
enum ScenarioCmd {
    Gen {
        /// JSON scenario config; omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    Build {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long, default_value = "4x4")]
    coarse: Resolution,
    #[arg(long, default_value = "16x16")]
    fine: Resolution,
    /// Feature SNR in dB; `inf` for noiseless.
    #[arg(long, default_value_t = 0.0)]
    snr: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
}

impl DataArgs {
    fn params(&self) -> DatasetParams {
        DatasetParams {
            coarse: self.coarse,
            fine: self.fine,
            snr_db: self.snr,
            fractions: SplitFractions {
                train: self.train_frac,
                val: self.val_frac,
                test: 1.0 - self.train_frac - self.val_frac,
            },
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Fusion,
    SoftmaxRef,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Auto,
    Gan,
    #[value(alias = "concat-only")]
    Concat,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackboneArg {
    Mlp,
    ConvLite,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "fusion")]
    arch: ArchArg,
    #[arg(long, value_enum, default_value = "auto")]
    fusion: FusionArg,
    #[arg(long, value_enum, default_value = "mlp")]
    backbone: BackboneArg,
    #[arg(long, default_value_t = 64)]
    feature_dim: usize,
    /// Skip normalization inside the discriminator.
    #[arg(long)]
    no_discriminator_norm: bool,
    /// Weight of the fusion reconstruction loss.
    #[arg(long, default_value_t = LossWeights::default().auto)]
    lambda_auto: f64,
    /// Weight of the adversarial loss (gan fusion).
    #[arg(long, default_value_t = LossWeights::default().adv)]
    lambda_adv: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    warmup_epochs: usize,
}

impl TrainArgs {
    fn spec(&self) -> TrainSpec {
        let arch = match self.arch {
            ArchArg::SoftmaxRef => Arch::SoftmaxRef,
            ArchArg::Fusion => Arch::Fusion(ModelConfig {
                backbone: match self.backbone {
                    BackboneArg::Mlp => BackboneKind::Mlp,
                    BackboneArg::ConvLite => BackboneKind::ConvLite,
                },
                feature_dim: self.feature_dim,
                fusion: match self.fusion {
                    FusionArg::Auto => FusionKind::Auto,
                    FusionArg::Gan => FusionKind::Gan,
                    FusionArg::Concat => FusionKind::Concat,
                },
                discriminator_norm: !self.no_discriminator_norm,
                weights: LossWeights {
                    auto: self.lambda_auto,
                    adv: self.lambda_adv,
                    ..LossWeights::default()
                },
                ..ModelConfig::default()
            }),
        };
        TrainSpec {
            arch,
            train: TrainConfig {
                epochs: self.epochs,
                batch_size: self.batch_size,
                peak_lr: self.lr,
                warmup_epochs: self.warmup_epochs,
                seed: self.seed,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Args)]
struct TrainCmd {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Model,
    Hc,
    Exhaustive,
    SoftmaxRef,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long, value_enum)]
    policy: PolicyArg,
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint for `model` and `softmax-ref`.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Seeds measurement noise of the codebook baselines.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Record median per-sample inference time (makes the report nondeterministic).
    #[arg(long)]
    timing: bool,
    /// JSON-lines search traces of the codebook baselines.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Report path (`.json` or CSV); stdout CSV when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct XevalCmd {
    #[arg(long)]
    train_scenario: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    test_scenarios: Vec<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, default_value_t = 42)]
    eval_seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportCmd {
    /// Saved `.csv` or `.json` reports.
    #[arg(long, num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Output file, or directory for plot data. CSV/JSON go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Average reports across tasks with equal weight per task.
    #[arg(long)]
    average_tasks: bool,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
}

fn emit(reports: &[EvalReport], format: ReportFormat, out: Option<&Path>) -> Result<()> {
    match (format, out) {
        (ReportFormat::Plotdata, Some(dir)) => {
            for p in write_plotdata(reports, dir)? {
                info!("wrote {}", p.display());
            }
            Ok(())
        }
        (ReportFormat::Plotdata, None) => Err(AppError::Config("plotdata needs --out <dir>".into())),
        (f, Some(path)) => {
            let file = fs::File::create(path).map_err(|e| AppError::io(path, e))?;
            let w = std::io::BufWriter::new(file);
            if f == ReportFormat::Json {
                write_json(reports, w)
            } else {
                write_csv(reports, w)
            }
        }
        (ReportFormat::Json, None) => write_json(reports, std::io::stdout().lock()),
        (_, None) => write_csv(reports, std::io::stdout().lock()),
    }
}

fn format_for(path: Option<&Path>) -> ReportFormat {
    match path.and_then(|p| p.extension()) {
        Some(e) if e == "json" => ReportFormat::Json,
        _ => ReportFormat::Csv,
    }
}

fn save_trained(t: &TrainedModel, out: &Path, history: Option<&Path>) -> Result<()> {
    save_checkpoint(&t.model, &t.info, out)?;
    if let Some(path) = history {
        let file = fs::File::create(path).map_err(|e| AppError::io(path, e))?;
        t.history.write_csv(std::io::BufWriter::new(file))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Scenario(ScenarioCmd::Gen { config, seed, out }) => {
            let mut cfg: ScenarioConfig = match config {
                Some(path) => read_json(&path)?,
                None => ScenarioConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let scenario = generate_scenario(&cfg)?;
            save_scenario(&scenario, &out)?;
            info!(
                "{} UEs, LOS fraction {:.3}, hash {}",
                scenario.ues.len(),
                scenario.los_fraction(),
                scenario.content_hash()?
            );
        }
        Command::Dataset(DatasetCmd::Build { scenario, data, out }) => {
            let scenario = load_scenario(&scenario)?;
            let p = data.params();
            let ds = build_dataset(&scenario, p.coarse, p.fine, p.snr_db, p.fractions, p.seed)?;
            save_dataset(&ds, &out)?;
            let c = ds.counts();
            info!("{} samples ({}/{}/{})", ds.len(), c.train, c.val, c.test);
        }
        Command::Train(cmd) => {
            let ds = load_dataset(&cmd.dataset)?;
            match train_model(&ds, &cmd.train.spec()) {
                Ok(t) => {
                    save_trained(&t, &cmd.out, cmd.history.as_deref())?;
                    info!(
                        "best epoch {:?}, val top-1 {:?}",
                        t.info.epoch, t.info.val_top1
                    );
                }
                Err(f) => {
                    if let Some(t) = &f.last_good {
                        save_trained(t, &cmd.out, cmd.history.as_deref())?;
                        warn!("saved the last finite model to {}", cmd.out.display());
                    }
                    return Err(f.error);
                }
            }
        }
        Command::Eval(cmd) => {
            let ds = load_dataset(&cmd.dataset)?;
            let loaded = match (cmd.policy, &cmd.ckpt) {
                (PolicyArg::Model | PolicyArg::SoftmaxRef, Some(path)) => {
                    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
                    let (model, _) = decode_checkpoint(&bytes)?;
                    Some((model, sha256_hex(&bytes)))
                }
                (PolicyArg::Model | PolicyArg::SoftmaxRef, None) => {
                    return Err(AppError::Config("this policy needs --ckpt".into()))
                }
                _ => None,
            };
            let policy = match (cmd.policy, &loaded) {
                (PolicyArg::Hc, _) => Policy::Hierarchical,
                (PolicyArg::Exhaustive, _) => Policy::Exhaustive,
                (PolicyArg::SoftmaxRef, Some((m @ Model::SoftmaxRef(_), _))) => Policy::Model(m),
                (PolicyArg::SoftmaxRef, _) => {
                    return Err(AppError::Config("checkpoint is not a softmax-ref model".into()))
                }
                (PolicyArg::Model, Some((m, _))) => Policy::Model(m),
                (PolicyArg::Model, None) => unreachable!("checked above"),
            };
            let opts = EvalOptions {
                split: match cmd.split {
                    SplitArg::Train => Some(Split::Train),
                    SplitArg::Val => Some(Split::Val),
                    SplitArg::Test => Some(Split::Test),
                    SplitArg::All => None,
                },
                seed: cmd.seed,
                timing: cmd.timing,
                model_hash: loaded.as_ref().map(|(_, h)| h.clone()),
            };
            let outcome = run_policy(policy, &ds, &opts)?;
            if let Some(path) = &cmd.traces {
                let file = fs::File::create(path).map_err(|e| AppError::io(path, e))?;
                write_traces_jsonl(&outcome.traces, std::io::BufWriter::new(file))?;
            }
            info!("{}: top-1 {:.4}", outcome.report.policy, outcome.report.top1);
            emit(&[outcome.report], format_for(cmd.out.as_deref()), cmd.out.as_deref())?;
        }
        Command::Xeval(cmd) => {
            let name = |p: &Path| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            let train = load_scenario(&cmd.train_scenario)?;
            let tests = cmd
                .test_scenarios
                .iter()
                .map(|p| Ok((name(p), load_scenario(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<(&str, &_)> = tests.iter().map(|(n, s)| (n.as_str(), s)).collect();
            let cfg = CrossConfig {
                data: cmd.data.params(),
                spec: cmd.train.spec(),
                eval_seed: cmd.eval_seed,
            };
            let train_name = name(&cmd.train_scenario);
            let reports = cross_scenario_eval((&train_name, &train), &refs, &cfg)?;
            emit(&reports, format_for(cmd.out.as_deref()), cmd.out.as_deref())?;
        }
        Command::Report(cmd) => {
            let mut reports = Vec::new();
            for path in &cmd.input {
                reports.extend(load_reports(path)?);
            }
            if cmd.average_tasks {
                reports = average_tasks(&reports);
            }
            emit(&reports, cmd.format, cmd.out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
