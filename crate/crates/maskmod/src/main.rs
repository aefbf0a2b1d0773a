//! Thin command-line shell over the library: every subcommand is a direct
//! composition of library operations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;

use maskmod::config::{env_seed_override, RunConfig};
use maskmod::data::Split;
use maskmod::error::Result;
use maskmod::eval::{
    decathlon_score, evaluate, mask_density, render_density_bars, DecathlonConfig, ResultsFile,
    TaskResult,
};
use maskmod::mask::{SurrogateKind, Variant};
use maskmod::registry::{add_task, overhead, BaselineParams, TaskParams};
use maskmod::train::{pretrain, TaskTrainConfig, TrainOptions};

#[derive(Parser)]
#[command(
    name = "maskmod",
    version,
    about = "Task-incremental learning with binary weight masks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the baseline network on the pretraining task.
    Pretrain(PretrainArgs),
    /// Learn a new task as masks + coefficients on a frozen baseline.
    AddTask(AddTaskArgs),
    /// Evaluate a stored task and append to a results file.
    Eval(EvalArgs),
    /// Compute the decathlon-style score from a results file.
    Score(ScoreArgs),
    /// Report per-layer mask densities and k values of a task artifact.
    Analyze(AnalyzeArgs),
    /// Report the parameter overhead of task artifacts over a baseline.
    Overhead(OverheadArgs),
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Force the byte-reproducible mode (synchronous data path).
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct AddTaskArgs {
    #[arg(long)]
    theta: PathBuf,
    #[arg(long)]
    task: String,
    #[arg(long)]
    variant: String,
    #[arg(long, default_value = "identity")]
    surrogate: String,
    #[arg(long)]
    channel_wise: bool,
    /// Comma-separated k indices to learn, e.g. `1,2,3`.
    #[arg(long)]
    learn_k: Option<String>,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    theta: PathBuf,
    #[arg(long)]
    omega: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    results: PathBuf,
    /// JSON map task -> maximum error (the doubled fine-tune reference).
    #[arg(long)]
    baseline_errors: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    omega: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct OverheadArgs {
    #[arg(long)]
    theta: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    omegas: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", serde_json::json!({ "error": err.to_string() }));
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: &Path) -> Result<(RunConfig, PathBuf)> {
    let (mut cfg, dir) = RunConfig::load(path)?;
    if let Some(seed) = env_seed_override()? {
        cfg.seed = seed;
    }
    Ok((cfg, dir))
}

fn metrics_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".metrics.jsonl");
    out.with_file_name(name)
}

fn parse_learn_k(raw: &Option<String>) -> Result<Option<Vec<usize>>> {
    match raw {
        None => Ok(None),
        Some(s) => {
            let mut out = Vec::new();
            for part in s.split(',').filter(|p| !p.trim().is_empty()) {
                out.push(
                    part.trim()
                        .parse::<usize>()
                        .map_err(|_| maskmod::Error::BadConfig {
                            msg: format!("--learn-k expects integers, got `{part}`"),
                        })?,
                );
            }
            Ok(Some(out))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Pretrain(args) => {
            let (cfg, dir) = load_config(&args.config)?;
            let first_task = cfg.task_names()?[0].clone();
            let data = cfg.dataset(&dir, &first_task, Split::Train)?;
            let options = TrainOptions {
                seed: cfg.seed,
                augment_mirror: cfg.augment_mirror,
                parallel_data: cfg.parallel_data && !args.deterministic,
            };
            let (theta, metrics) = pretrain(
                &cfg.arch,
                data.classes,
                &data,
                &cfg.pretrain,
                &options,
                Some(&metrics_path_for(&args.out)),
            )?;
            theta.save(&args.out)?;
            let last = metrics.last().expect("at least one epoch");
            println!(
                "{}",
                serde_json::json!({
                    "theta": args.out,
                    "task": first_task,
                    "epochs": metrics.len(),
                    "final_train_loss": last.loss,
                    "final_train_accuracy": last.accuracy,
                })
            );
            Ok(())
        }
        Command::AddTask(args) => {
            let (cfg, dir) = load_config(&args.config)?;
            let theta_bytes_before = std::fs::read(&args.theta)?;
            let theta = BaselineParams::from_bytes(&theta_bytes_before)?;
            let data = cfg.dataset(&dir, &args.task, Split::Train)?;

            let mut setup = cfg.task_setup();
            setup.variant = args.variant.parse::<Variant>()?;
            setup.surrogate = args.surrogate.parse::<SurrogateKind>()?;
            if args.channel_wise {
                setup.channel_wise = true;
            }
            if let Some(learn) = parse_learn_k(&args.learn_k)? {
                setup.learn_override = Some(learn);
            }

            let task_cfg = TaskTrainConfig {
                setup,
                schedule: cfg.schedule.clone(),
                options: TrainOptions {
                    seed: cfg.seed,
                    augment_mirror: cfg.augment_mirror,
                    parallel_data: cfg.parallel_data && !args.deterministic,
                },
            };
            let (omega, metrics) = add_task(
                &theta,
                &args.task,
                &data,
                &task_cfg,
                Some(&metrics_path_for(&args.out)),
            )?;
            omega.save(&theta.arch, &args.out)?;

            // The baseline file must be byte-identical after task training.
            let theta_bytes_after = std::fs::read(&args.theta)?;
            if theta_bytes_before != theta_bytes_after {
                return Err(maskmod::Error::BaselineModified {
                    msg: format!("{} changed on disk during add-task", args.theta.display()),
                });
            }
            let last = metrics.last().expect("at least one epoch");
            println!(
                "{}",
                serde_json::json!({
                    "omega": args.out,
                    "task": args.task,
                    "variant": omega.variant.to_string(),
                    "epochs": metrics.len(),
                    "final_train_loss": last.loss,
                    "final_train_accuracy": last.accuracy,
                })
            );
            Ok(())
        }
        Command::Eval(args) => {
            let (cfg, dir) = load_config(&args.config)?;
            let theta = BaselineParams::load(&args.theta)?;
            let (omega, _) = TaskParams::load(&args.omega)?;
            let split = match args.split.as_str() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(maskmod::Error::BadConfig {
                        msg: format!("unknown split `{other}` (expected train|test)"),
                    })
                }
            };
            let data = cfg.dataset(&dir, &omega.task, split)?;
            let result = evaluate(&theta, Some(&omega), &data)?;

            let mut report: ResultsFile = match std::fs::read_to_string(&args.report) {
                Ok(text) => serde_json::from_str(&text)?,
                Err(_) => IndexMap::new(),
            };
            report.insert(
                omega.task.clone(),
                TaskResult {
                    error: result.error,
                    accuracy: result.accuracy,
                    score: None,
                },
            );
            std::fs::write(&args.report, serde_json::to_string_pretty(&report)?)?;
            println!(
                "{}",
                serde_json::json!({
                    "task": omega.task,
                    "split": args.split,
                    "error": result.error,
                    "accuracy": result.accuracy,
                    "samples": result.samples,
                })
            );
            Ok(())
        }
        Command::Score(args) => {
            let mut results: ResultsFile =
                serde_json::from_str(&std::fs::read_to_string(&args.results)?)?;
            let e_max: IndexMap<String, f64> =
                serde_json::from_str(&std::fs::read_to_string(&args.baseline_errors)?)?;
            let cfg = DecathlonConfig::new(e_max)?;
            let errors: IndexMap<String, f64> =
                results.iter().map(|(k, v)| (k.clone(), v.error)).collect();
            let score = decathlon_score(&errors, &cfg)?;
            for (task, entry) in results.iter_mut() {
                entry.score = score.per_task.get(task).copied();
            }
            std::fs::write(&args.results, serde_json::to_string_pretty(&results)?)?;
            println!("{}", serde_json::to_string_pretty(&score)?);
            Ok(())
        }
        Command::Analyze(args) => {
            let (omega, arch) = TaskParams::load(&args.omega)?;
            let report = mask_density(&omega, &arch)?;
            std::fs::write(&args.report, serde_json::to_string_pretty(&report.layers)?)?;
            print!("{}", render_density_bars(&report));
            Ok(())
        }
        Command::Overhead(args) => {
            let theta = BaselineParams::load(&args.theta)?;
            let mut omegas = Vec::new();
            for path in &args.omegas {
                omegas.push(TaskParams::load(path)?.0);
            }
            let refs: Vec<&TaskParams> = omegas.iter().collect();
            let report = overhead(&theta, &refs)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}
