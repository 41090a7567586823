//! Command-line driver: data generation, teacher training, distillation,
//! evaluation, comparison reports, ablations, the scripted desk-scale suite
//! and manifest replay.
//!
//! [`run`] parses arguments and returns the process exit code, so the whole
//! tool can be driven in-process by tests.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod report;
pub mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{execute, replay, Command};
pub use error::{CliError, CliResult, EXIT_DIVERGENCE, EXIT_IO, EXIT_OK, EXIT_USAGE};
pub use manifest::RunManifest;
pub use settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "perceptkd", version, about = "Perception-logit knowledge distillation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

/// Options shared by every command that takes settings.
#[derive(Debug, Args)]
struct Layered {
    /// Flat key=value settings file, applied over the defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Extra setting, applied last; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    classes: Option<String>,
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    per_class: Option<String>,
    #[arg(long)]
    center_scale: Option<String>,
    #[arg(long)]
    within_variance: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Dataset file to write; the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    layered: Layered,
}

#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long)]
    data: Option<String>,
    /// Train,val,test fractions.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    split_seed: Option<String>,
    /// Hidden layer widths, comma separated.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Permit batches smaller than 4.
    #[arg(long)]
    allow_small_batch: bool,
}

impl TrainFlags {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("data", self.data.clone()),
            ("split", self.split.clone()),
            ("split_seed", self.split_seed.clone()),
            ("hidden", self.hidden.clone()),
            ("epochs", self.epochs.clone()),
            ("batch_size", self.batch_size.clone()),
            ("lr", self.lr.clone()),
            ("momentum", self.momentum.clone()),
            ("weight_decay", self.weight_decay.clone()),
            ("seed", self.seed.clone()),
            ("allow_small_batch", self.allow_small_batch.then(|| "true".into())),
        ]
    }
}

#[derive(Debug, Args)]
struct DistillFlags {
    /// Teacher run directory or checkpoint file.
    #[arg(long)]
    teacher: Option<String>,
    /// none, kd or luminet.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    /// stop-gradient or full.
    #[arg(long)]
    grad_mode: Option<String>,
    /// local or global.
    #[arg(long)]
    stats_scope: Option<String>,
    /// Multiply the distillation term by tau squared.
    #[arg(long)]
    tau_squared_scaling: bool,
}

impl DistillFlags {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("teacher", self.teacher.clone()),
            ("mode", self.mode.clone()),
            ("tau", self.tau.clone()),
            ("lambda", self.lambda.clone()),
            ("epsilon", self.epsilon.clone()),
            ("grad_mode", self.grad_mode.clone()),
            ("stats_scope", self.stats_scope.clone()),
            ("tau_squared_scaling", self.tau_squared_scaling.then(|| "true".into())),
        ]
    }
}

#[derive(Debug, Args)]
struct TrainTeacherArgs {
    #[command(flatten)]
    train: TrainFlags,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    layered: Layered,
}

#[derive(Debug, Args)]
struct DistillArgs {
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    distill: DistillFlags,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    layered: Layered,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Run directory produced by train-teacher or distill.
    #[arg(long)]
    run: Option<String>,
    /// Prediction dump (probabilities plus label per row) instead of a run.
    #[arg(long)]
    predictions: Option<String>,
    /// Dataset to use instead of the one recorded by the run.
    #[arg(long)]
    data: Option<String>,
    /// train, val or test.
    #[arg(long)]
    part: Option<String>,
    #[arg(long)]
    bins: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    layered: Layered,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Evaluation directories to aggregate.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    distill: DistillFlags,
    /// Setting to sweep.
    #[arg(long)]
    param: Option<String>,
    /// Comma-separated values for the swept setting.
    #[arg(long)]
    values: Option<String>,
    #[arg(long)]
    bins: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    layered: Layered,
}

#[derive(Debug, Args)]
struct ReproArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    kappas: Option<String>,
    #[command(flatten)]
    layered: Layered,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Manifest to re-run.
    #[arg(long)]
    manifest: PathBuf,
    /// Fresh output location; defaults to the original with a `.replay` suffix.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Sample a Gaussian-mixture dataset.
    GenData(GenDataArgs),
    /// Train a teacher with cross-entropy.
    TrainTeacher(TrainTeacherArgs),
    /// Train a student against a frozen teacher.
    Distill(DistillArgs),
    /// Calibration and information metrics for a run or prediction dump.
    Evaluate(EvaluateArgs),
    /// Aggregate evaluations into a comparison table.
    Report(ReportArgs),
    /// Sweep one distillation setting.
    Ablate(AblateArgs),
    /// Full desk-scale suite: data, teacher, students, evaluations, reports.
    Repro(ReproArgs),
    /// Re-run a manifest and check outputs match byte for byte.
    Replay(ReplayArgs),
}

fn layered(command: Command, layers: &Layered, flags: &[(&str, Option<String>)]) -> CliResult<Settings> {
    let mut s = command.defaults();
    if let Some(path) = &layers.config {
        s.merge_file(path)?;
    }
    s.merge_flags(flags)?;
    s.merge_assignments(&layers.set)?;
    Ok(s)
}

fn replay_target(manifest: &std::path::Path) -> CliResult<PathBuf> {
    let recorded = RunManifest::read(manifest)?;
    let name = manifest
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut target = if name == manifest::MANIFEST_FILE {
        manifest.parent().unwrap_or(std::path::Path::new(".")).as_os_str().to_owned()
    } else if let Some(stem) = name.strip_suffix(manifest::SIDECAR_SUFFIX) {
        manifest.with_file_name(stem).into_os_string()
    } else {
        return Err(CliError::Usage(format!("{} is not a manifest file", manifest.display())));
    };
    if recorded.command.is_empty() {
        return Err(CliError::Usage("manifest has no command".into()));
    }
    target.push(".replay");
    Ok(PathBuf::from(target))
}

fn dispatch(cli: Cli) -> CliResult<String> {
    let (command, settings, out) = match cli.command {
        Cmd::GenData(a) => {
            let flags = [
                ("classes", a.classes),
                ("dims", a.dims),
                ("per_class", a.per_class),
                ("center_scale", a.center_scale),
                ("within_variance", a.within_variance),
                ("kappa", a.kappa),
                ("seed", a.seed),
            ];
            (Command::GenData, layered(Command::GenData, &a.layered, &flags)?, a.out)
        }
        Cmd::TrainTeacher(a) => {
            let s = layered(Command::TrainTeacher, &a.layered, &a.train.pairs())?;
            (Command::TrainTeacher, s, a.out)
        }
        Cmd::Distill(a) => {
            let mut flags = a.train.pairs();
            flags.extend(a.distill.pairs());
            (Command::Distill, layered(Command::Distill, &a.layered, &flags)?, a.out)
        }
        Cmd::Evaluate(a) => {
            let flags = [
                ("run", a.run),
                ("predictions", a.predictions),
                ("data", a.data),
                ("part", a.part),
                ("bins", a.bins),
            ];
            (Command::Evaluate, layered(Command::Evaluate, &a.layered, &flags)?, a.out)
        }
        Cmd::Report(a) => {
            let mut s = Command::Report.defaults();
            s.set("runs", commands::join_runs(&a.runs)?)?;
            (Command::Report, s, a.out)
        }
        Cmd::Ablate(a) => {
            let mut flags = a.train.pairs();
            flags.extend(a.distill.pairs());
            flags.extend([("param", a.param), ("values", a.values), ("bins", a.bins)]);
            (Command::Ablate, layered(Command::Ablate, &a.layered, &flags)?, a.out)
        }
        Cmd::Repro(a) => {
            let flags = [("epochs", a.epochs), ("seeds", a.seeds), ("kappas", a.kappas)];
            (Command::Repro, layered(Command::Repro, &a.layered, &flags)?, a.out)
        }
        Cmd::Replay(a) => {
            let out = match a.out {
                Some(o) => o,
                None => replay_target(&a.manifest)?,
            };
            let r = replay(&a.manifest, &out)?;
            return Ok(format!(
                "replayed into {}: {} artifacts identical",
                r.out.display(),
                r.compared
            ));
        }
    };
    execute(command, settings, &out)?;
    Ok(format!(
        "{} finished; manifest at {}",
        command.name(),
        commands::manifest_path(command, &out).display()
    ))
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(message) => {
            println!("{message}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
