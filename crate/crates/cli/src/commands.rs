//! Command bodies. Each takes fully resolved settings and an output path,
//! writes its outputs plus one manifest, and returns that manifest. Replay
//! calls the same functions with the settings recorded in a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use perceptkd_core::calibration::{load_predictions, stability_score, write_predictions, DEFAULT_BINS};
use perceptkd_core::data::{generate_mixture, load_delimited, split, to_delimited, Schema, Standardizer};
use perceptkd_core::model::predict;
use perceptkd_core::trainer::{read_records, write_records, write_timings};
use perceptkd_core::{checkpoint, trainer, CalibrationReport, Dataset, DistillMode, MixtureSpec, MlpSpec, PredictionSet, TrainConfig};

use crate::error::{CliError, CliResult};
use crate::manifest::{claim_output_dir, digest_tree, sha256_bytes, sha256_file, RunManifest, MANIFEST_FILE, SIDECAR_SUFFIX};
use crate::report::{
    grad_variance_check, method_label, ordering_checks, ComparisonReport, DirectionalCheck, EvaluationReport, Score,
};
use crate::settings::{absolute, parse_kv_text, Settings};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const FINAL_CHECKPOINT_FILE: &str = "final.bin";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const CONFIG_FILE: &str = "config.txt";
pub const REPORT_JSON: &str = "report.json";
pub const COMPARISON_JSON: &str = "comparison.json";

/// Settings consumed by distillation only; teacher training does not accept them.
const DISTILL_ONLY: [&str; 7] = [
    "mode",
    "tau",
    "lambda",
    "epsilon",
    "grad_mode",
    "stats_scope",
    "tau_squared_scaling",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    TrainTeacher,
    Distill,
    Evaluate,
    Report,
    Ablate,
    Repro,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainTeacher => "train-teacher",
            Command::Distill => "distill",
            Command::Evaluate => "evaluate",
            Command::Report => "report",
            Command::Ablate => "ablate",
            Command::Repro => "repro",
        }
    }

    pub fn from_name(name: &str) -> CliResult<Self> {
        [
            Command::GenData,
            Command::TrainTeacher,
            Command::Distill,
            Command::Evaluate,
            Command::Report,
            Command::Ablate,
            Command::Repro,
        ]
        .into_iter()
        .find(|c| c.name() == name)
        .ok_or_else(|| CliError::Usage(format!("unknown command '{name}'")))
    }

    /// Every key the command accepts, with its default.
    pub fn defaults(self) -> Settings {
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut add = |k: &str, v: &str| kv.push((k.to_string(), v.to_string()));
        match self {
            Command::GenData => {
                let m = MixtureSpec::default();
                add("classes", &m.classes.to_string());
                add("dims", &m.dims.to_string());
                add("per_class", &m.samples_per_class.to_string());
                add("center_scale", &format!("{:?}", m.center_scale));
                add("within_variance", &format!("{:?}", m.within_variance));
                add("kappa", &format!("{:?}", m.kappa));
                add("seed", &m.seed.to_string());
            }
            Command::TrainTeacher | Command::Distill | Command::Ablate => {
                add("data", "");
                add("split", "0.7,0.15,0.15");
                add("split_seed", "0");
                add("standardize", "true");
                for (k, v) in TrainConfig::default().to_kv() {
                    if self == Command::TrainTeacher && DISTILL_ONLY.contains(&k.as_str()) {
                        continue;
                    }
                    add(&k, if k == "lr_decay_epochs" { "auto" } else { &v });
                }
                if self == Command::TrainTeacher {
                    add("hidden", "128,64");
                } else {
                    add("hidden", "32");
                    add("teacher", "");
                }
                if self == Command::Ablate {
                    add("param", "batch_size");
                    add("values", "16,32,64,128");
                    add("bins", &DEFAULT_BINS.to_string());
                }
            }
            Command::Evaluate => {
                add("run", "");
                add("predictions", "");
                add("data", "");
                add("part", "test");
                add("bins", &DEFAULT_BINS.to_string());
            }
            Command::Report => add("runs", ""),
            Command::Repro => {
                add("kappas", "10,100");
                add("classes", "10");
                add("dims", "16");
                add("per_class", "500");
                add("center_scale", "1.75");
                add("within_variance", "1.0");
                add("data_seed", "7");
                add("split", "0.7,0.15,0.15");
                add("split_seed", "7");
                add("teacher_hidden", "128,64");
                add("teacher_seed", "0");
                add("student_hidden", "32");
                add("modes", "none,kd,luminet");
                add("seeds", "1,2,3,4,5");
                add("epochs", "120");
                add("batch_size", "64");
                add("grad_mode", "stop-gradient");
                add("bins", &DEFAULT_BINS.to_string());
            }
        }
        Settings::with_defaults(kv)
    }
}

/// Runs a command with resolved settings.
pub fn execute(command: Command, settings: Settings, out: &Path) -> CliResult<RunManifest> {
    match command {
        Command::GenData => gen_data(settings, out),
        Command::TrainTeacher => train_run(settings, out, false),
        Command::Distill => train_run(settings, out, true),
        Command::Evaluate => evaluate(settings, out),
        Command::Report => report(settings, out),
        Command::Ablate => ablate(settings, out),
        Command::Repro => repro(settings, out),
    }
}

/// Where a command's manifest lives for a given output path.
pub fn manifest_path(command: Command, out: &Path) -> PathBuf {
    match command {
        Command::GenData => sidecar_path(out),
        _ => out.join(MANIFEST_FILE),
    }
}

fn sidecar_path(file: &Path) -> PathBuf {
    let mut name = file.as_os_str().to_owned();
    name.push(SIDECAR_SUFFIX);
    PathBuf::from(name)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable report");
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Replaces a relative path setting with its absolute form.
fn absolutize(settings: &mut Settings, key: &str) -> CliResult<()> {
    let raw = settings.raw(key)?.to_string();
    if !raw.is_empty() {
        settings.force(key, absolute(Path::new(&raw))?.display().to_string());
    }
    Ok(())
}

fn finish(mut manifest: RunManifest, out: &Path, manifest_at: &Path) -> CliResult<RunManifest> {
    manifest.artifacts = digest_tree(out)?;
    manifest.write(manifest_at)?;
    Ok(manifest)
}

fn gen_data(settings: Settings, out: &Path) -> CliResult<RunManifest> {
    let spec = MixtureSpec {
        classes: settings.get("classes")?,
        dims: settings.get("dims")?,
        samples_per_class: settings.get("per_class")?,
        center_scale: settings.get("center_scale")?,
        within_variance: settings.get("within_variance")?,
        kappa: settings.get("kappa")?,
        seed: settings.get("seed")?,
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let manifest_at = sidecar_path(out);
    if manifest_at.exists() {
        return Err(CliError::Usage(format!("{} already exists", manifest_at.display())));
    }
    let data = generate_mixture(&spec)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let text = to_delimited(&data);
    write_text(out, &text)?;
    info!("wrote {} rows to {}", data.len(), out.display());
    let mut manifest = RunManifest::new(Command::GenData.name(), settings.map().clone());
    manifest.seeds.insert("seed".into(), spec.seed);
    manifest.artifacts.insert("dataset".into(), sha256_bytes(text.as_bytes()));
    manifest.write(&manifest_at)?;
    Ok(manifest)
}

/// Train/validation/test splits after the configured preprocessing.
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn part(&self, name: &str) -> CliResult<&Dataset> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(CliError::Usage(format!("unknown split part '{other}' (train, val, test)"))),
        }
    }
}

/// Loads the dataset named in `settings` and splits it; standardization is
/// fit on the training part only.
pub fn prepare_splits(settings: &Settings) -> CliResult<Splits> {
    let path = settings.path("data")?;
    let fractions: Vec<f64> = settings.list("split")?;
    let fractions: [f64; 3] = fractions
        .try_into()
        .map_err(|_| CliError::Usage("split needs three fractions: train,val,test".into()))?;
    let data = load_delimited(&path, Schema::default())?;
    let (train, val, test) = split(&data, fractions, settings.get("split_seed")?)?;
    if settings.get::<bool>("standardize")? {
        let z = Standardizer::fit(&train)?;
        Ok(Splits {
            train: z.apply(&train)?,
            val: z.apply(&val)?,
            test: z.apply(&test)?,
        })
    } else {
        Ok(Splits { train, val, test })
    }
}

/// Builds the trainer config and writes the derived values (such as the
/// decay epochs) back into `settings`.
fn resolve_train_config(settings: &mut Settings, teacher: bool) -> CliResult<TrainConfig> {
    let mut config = TrainConfig::default();
    if teacher {
        config.mode = DistillMode::None;
    }
    for (k, v) in settings.map() {
        if k == "lr_decay_epochs" && v == "auto" {
            continue;
        }
        config.apply_kv(k, v)?;
    }
    config.validate()?;
    for (k, v) in config.to_kv() {
        if settings.map().contains_key(&k) {
            settings.force(&k, v);
        }
    }
    Ok(config)
}

fn teacher_checkpoint(raw: &Path) -> PathBuf {
    if raw.is_dir() {
        raw.join(CHECKPOINT_FILE)
    } else {
        raw.to_path_buf()
    }
}

/// Small summary written next to the checkpoints.
#[derive(Debug, Serialize, Deserialize)]
struct RunSummary {
    best_epoch: usize,
    epochs_run: usize,
    parameters: usize,
    widths: Vec<usize>,
}

fn train_run(mut settings: Settings, out: &Path, distill: bool) -> CliResult<RunManifest> {
    let command = if distill { Command::Distill } else { Command::TrainTeacher };
    absolutize(&mut settings, "data")?;
    if distill {
        absolutize(&mut settings, "teacher")?;
    }
    let config = resolve_train_config(&mut settings, !distill)?;
    let splits = prepare_splits(&settings)?;
    let mut widths = vec![splits.train.dims()];
    widths.extend(settings.list::<usize>("hidden")?);
    widths.push(splits.train.classes);
    let spec = MlpSpec::new(widths)?;

    let mut manifest = RunManifest::new(command.name(), settings.map().clone());
    manifest.add_input("data", &settings.path("data")?)?;
    manifest.seeds.insert("seed".into(), config.seed);
    manifest.seeds.insert("split_seed".into(), settings.get("split_seed")?);

    let teacher_raw = settings.raw("teacher").unwrap_or("").to_string();
    let teacher = if distill && !(teacher_raw.is_empty() && config.mode == DistillMode::None) {
        let path = teacher_checkpoint(Path::new(&teacher_raw));
        if teacher_raw.is_empty() {
            return Err(CliError::Usage(format!("distill --mode {} needs --teacher", config.mode)));
        }
        manifest.add_input("teacher", &path)?;
        Some(checkpoint::load(&path)?)
    } else {
        None
    };
    claim_output_dir(out)?;
    write_text(&out.join(CONFIG_FILE), &settings.to_text())?;

    info!("{} {:?} on {} training rows", command.name(), spec.widths(), splits.train.len());
    let outcome = match &teacher {
        Some(t) => trainer::distill(t, &spec, &splits.train, &splits.val, &config)?,
        None => trainer::train_teacher(&spec, &splits.train, &splits.val, &config)?,
    };
    checkpoint::save(&outcome.best, out.join(CHECKPOINT_FILE))?;
    checkpoint::save(&outcome.last, out.join(FINAL_CHECKPOINT_FILE))?;
    write_records(&outcome.records, out.join(RECORDS_FILE))?;
    write_timings(&outcome.records, out.join("timings.jsonl"))?;
    write_json(
        &out.join("run.json"),
        &RunSummary {
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.records.len(),
            parameters: spec.param_count(),
            widths: spec.widths().to_vec(),
        },
    )?;
    finish(manifest, out, &out.join(MANIFEST_FILE))
}

fn evaluate(mut settings: Settings, out: &Path) -> CliResult<RunManifest> {
    let bins: usize = settings.get("bins")?;
    if bins == 0 {
        return Err(CliError::Usage("bins must be at least 1".into()));
    }
    absolutize(&mut settings, "run")?;
    absolutize(&mut settings, "predictions")?;
    absolutize(&mut settings, "data")?;
    let run = settings.raw("run")?.to_string();
    let dump = settings.raw("predictions")?.to_string();
    let mut manifest = RunManifest::new(Command::Evaluate.name(), settings.map().clone());

    let (preds, report) = match (run.is_empty(), dump.is_empty()) {
        (false, true) => {
            let run_dir = PathBuf::from(&run);
            let run_manifest = RunManifest::read(&run_dir.join(MANIFEST_FILE))?;
            let config_path = run_dir.join(CONFIG_FILE);
            let text = std::fs::read_to_string(&config_path).map_err(|e| CliError::io(&config_path, e))?;
            let mut run_settings = Settings::from_map(
                parse_kv_text(&text, &config_path.display().to_string())?.into_iter().collect(),
            );
            let data_override = settings.raw("data")?;
            if !data_override.is_empty() {
                run_settings.force("data", data_override);
            }
            let splits = prepare_splits(&run_settings)?;
            let part_name = settings.raw("part")?.to_string();
            let part = splits.part(&part_name)?;
            let ckpt = run_dir.join(CHECKPOINT_FILE);
            let params = checkpoint::load(&ckpt)?;
            let checkpoint_sha = sha256_file(&ckpt)?;
            manifest.add_input("run_checkpoint", &ckpt)?;
            manifest.add_input("data", &run_settings.path("data")?)?;
            let preds = PredictionSet::from_logits(&predict(&params, &part.features)?, part.labels.clone())?;
            let records = read_records(run_dir.join(RECORDS_FILE))?;
            let losses: Vec<f64> = records.iter().map(|r| r.total_loss).collect();
            let (method, teacher_sha) = if run_manifest.command == Command::TrainTeacher.name() {
                ("teacher".to_string(), Some(checkpoint_sha.clone()))
            } else {
                let mode = run_settings.raw("mode")?;
                let teacher = run_manifest.inputs.iter().find(|i| i.role == "teacher").map(|i| i.sha256.clone());
                (method_label(mode).to_string(), teacher)
            };
            let seed: u64 = run_settings.get("seed")?;
            manifest.seeds.insert("seed".into(), seed);
            let report = EvaluationReport {
                method,
                seed: Some(seed),
                split_part: part_name,
                split_sha256: sha256_bytes(to_delimited(part).as_bytes()),
                teacher_sha256: teacher_sha,
                checkpoint_sha256: Some(checkpoint_sha),
                epochs: records.len(),
                grad_variance: (!records.is_empty())
                    .then(|| records.iter().map(|r| r.grad_variance).sum::<f64>() / records.len() as f64),
                stability_score: (losses.len() >= 3)
                    .then(|| stability_score(&losses).map(Score))
                    .transpose()?,
                calibration: CalibrationReport::evaluate(&preds, bins)?,
            };
            (preds, report)
        }
        (true, false) => {
            let path = PathBuf::from(&dump);
            manifest.add_input("predictions", &path)?;
            let preds = load_predictions(&path)?;
            let labels: String = preds.labels().iter().map(|l| format!("{l}\n")).collect();
            let report = EvaluationReport {
                method: "external".into(),
                seed: None,
                split_part: "external".into(),
                split_sha256: format!("labels:{}", sha256_bytes(labels.as_bytes())),
                teacher_sha256: None,
                checkpoint_sha256: None,
                epochs: 0,
                grad_variance: None,
                stability_score: None,
                calibration: CalibrationReport::evaluate(&preds, bins)?,
            };
            (preds, report)
        }
        _ => return Err(CliError::Usage("evaluate needs exactly one of --run or --predictions".into())),
    };
    claim_output_dir(out)?;
    write_text(&out.join(CONFIG_FILE), &settings.to_text())?;
    write_predictions(&preds, out.join("predictions.csv"))?;
    write_json(&out.join(REPORT_JSON), &report)?;
    write_text(&out.join("report.txt"), &report.render())?;
    finish(manifest, out, &out.join(MANIFEST_FILE))
}

/// Joins run directories into the single `runs` setting.
pub fn join_runs(runs: &[PathBuf]) -> CliResult<String> {
    let abs: Vec<PathBuf> = runs.iter().map(|r| absolute(r)).collect::<CliResult<_>>()?;
    let joined = std::env::join_paths(abs).map_err(|e| CliError::Usage(format!("run path: {e}")))?;
    Ok(joined.to_string_lossy().into_owned())
}

fn report(settings: Settings, out: &Path) -> CliResult<RunManifest> {
    let raw = settings.raw("runs")?;
    let runs: Vec<PathBuf> = std::env::split_paths(raw).filter(|p| !p.as_os_str().is_empty()).collect();
    if runs.is_empty() {
        return Err(CliError::Usage("report needs at least one evaluation directory".into()));
    }
    let mut manifest = RunManifest::new(Command::Report.name(), settings.map().clone());
    let mut evaluations = Vec::with_capacity(runs.len());
    for dir in &runs {
        let path = dir.join(REPORT_JSON);
        evaluations.push(read_json::<EvaluationReport>(&path)?);
    }
    let comparison = ComparisonReport::build(&evaluations)?;
    // inputs in a canonical order so shuffled run lists give identical manifests
    let mut sorted = runs.clone();
    sorted.sort();
    for dir in &sorted {
        manifest.add_input("evaluation", &dir.join(REPORT_JSON))?;
    }
    claim_output_dir(out)?;
    write_json(&out.join(COMPARISON_JSON), &comparison)?;
    write_text(&out.join("comparison.txt"), &comparison.render())?;
    finish(manifest, out, &out.join(MANIFEST_FILE))
}

fn settings_for(command: Command, pairs: &[(&str, String)]) -> CliResult<Settings> {
    let mut s = command.defaults();
    for (k, v) in pairs {
        s.set(k, v.clone())?;
    }
    Ok(s)
}

#[derive(Debug, Serialize, Deserialize)]
struct AblationRow {
    value: String,
    accuracy: f64,
    ece: f64,
    grad_variance: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Ablation {
    param: String,
    rows: Vec<AblationRow>,
}

fn ablate(mut settings: Settings, out: &Path) -> CliResult<RunManifest> {
    absolutize(&mut settings, "data")?;
    absolutize(&mut settings, "teacher")?;
    let param = settings.raw("param")?.to_string();
    let values: Vec<String> = settings.list("values")?;
    let base = Command::Distill.defaults();
    if !base.map().contains_key(&param) || param == "data" || param == "teacher" {
        return Err(CliError::Usage(format!("cannot sweep '{param}'")));
    }
    if values.is_empty() {
        return Err(CliError::Usage("values must list at least one setting".into()));
    }
    let bins = settings.raw("bins")?.to_string();
    let mut distill_settings = base;
    for (k, v) in settings.map() {
        if distill_settings.map().contains_key(k) {
            distill_settings.set(k, v.clone())?;
        }
    }
    claim_output_dir(out)?;
    let mut manifest = RunManifest::new(Command::Ablate.name(), settings.map().clone());
    let mut rows = Vec::new();
    for value in &values {
        let mut s = distill_settings.clone();
        s.set(&param, value.clone())?;
        let dir = out.join(format!("{param}-{value}"));
        let run_dir = dir.join("run");
        let eval_dir = dir.join("eval");
        let run = train_run(s, &run_dir, true)?;
        if manifest.inputs.is_empty() {
            manifest.inputs = run.inputs.clone();
        }
        manifest.seeds = run.seeds.clone();
        let e = settings_for(
            Command::Evaluate,
            &[("run", run_dir.display().to_string()), ("bins", bins.clone())],
        )?;
        evaluate(e, &eval_dir)?;
        let r: EvaluationReport = read_json(&eval_dir.join(REPORT_JSON))?;
        info!("{param}={value}: accuracy {:.4}", r.calibration.top1);
        rows.push(AblationRow {
            value: value.clone(),
            accuracy: r.calibration.top1,
            ece: r.calibration.ece,
            grad_variance: r.grad_variance,
        });
    }
    let mut text = format!("{:<12} {:>8} {:>8} {:>12}\n", param, "acc", "ece", "grad_var");
    for r in &rows {
        text.push_str(&format!(
            "{:<12} {:>8.4} {:>8.4} {:>12}\n",
            r.value,
            r.accuracy,
            r.ece,
            r.grad_variance.map(|g| format!("{g:.4e}")).unwrap_or_else(|| "-".into())
        ));
    }
    write_json(&out.join("ablation.json"), &Ablation { param, rows })?;
    write_text(&out.join("ablation.txt"), &text)?;
    finish(manifest, out, &out.join(MANIFEST_FILE))
}

/// Outcome of the scripted desk-scale suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReproSummary {
    /// Per task (keyed `kappa-<k>`): directional checks over its comparison.
    pub tasks: BTreeMap<String, Vec<DirectionalCheck>>,
}

fn repro(settings: Settings, out: &Path) -> CliResult<RunManifest> {
    let kappas: Vec<String> = settings.list("kappas")?;
    let modes: Vec<String> = settings.list("modes")?;
    let seeds: Vec<u64> = settings.list("seeds")?;
    if kappas.is_empty() || modes.is_empty() || seeds.is_empty() {
        return Err(CliError::Usage("kappas, modes and seeds must be non-empty".into()));
    }
    for m in &modes {
        m.parse::<DistillMode>().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    claim_output_dir(out)?;
    let mut manifest = RunManifest::new(Command::Repro.name(), settings.map().clone());
    manifest.seeds.insert("data_seed".into(), settings.get("data_seed")?);
    manifest.seeds.insert("split_seed".into(), settings.get("split_seed")?);
    manifest.seeds.insert("teacher_seed".into(), settings.get("teacher_seed")?);
    for s in &seeds {
        manifest.seeds.insert(format!("student_seed_{s}"), *s);
    }
    let r = |k: &str| -> CliResult<String> { Ok(settings.raw(k)?.to_string()) };
    let mut summary = ReproSummary { tasks: BTreeMap::new() };

    for kappa in &kappas {
        let task = out.join(format!("kappa-{kappa}"));
        let data = task.join("data.csv");
        gen_data(
            settings_for(
                Command::GenData,
                &[
                    ("classes", r("classes")?),
                    ("dims", r("dims")?),
                    ("per_class", r("per_class")?),
                    ("center_scale", r("center_scale")?),
                    ("within_variance", r("within_variance")?),
                    ("kappa", kappa.clone()),
                    ("seed", r("data_seed")?),
                ],
            )?,
            &data,
        )?;
        let common = |cmd: Command, hidden: &str, seed: String| {
            settings_for(
                cmd,
                &[
                    ("data", data.display().to_string()),
                    ("split", r("split")?),
                    ("split_seed", r("split_seed")?),
                    ("hidden", r(hidden)?),
                    ("epochs", r("epochs")?),
                    ("batch_size", r("batch_size")?),
                    ("seed", seed),
                ],
            )
        };
        let teacher_dir = task.join("teacher");
        info!("kappa {kappa}: training teacher");
        train_run(common(Command::TrainTeacher, "teacher_hidden", r("teacher_seed")?)?, &teacher_dir, false)?;

        let mut eval_dirs = Vec::new();
        let teacher_eval = task.join("eval").join("teacher");
        evaluate(
            settings_for(
                Command::Evaluate,
                &[("run", teacher_dir.display().to_string()), ("bins", r("bins")?)],
            )?,
            &teacher_eval,
        )?;
        eval_dirs.push(teacher_eval);
        for mode in &modes {
            for seed in &seeds {
                let name = format!("{mode}-s{seed}");
                let run_dir = task.join("runs").join(&name);
                let mut s = common(Command::Distill, "student_hidden", seed.to_string())?;
                s.set("mode", mode.clone())?;
                s.set("grad_mode", r("grad_mode")?)?;
                s.set("teacher", teacher_dir.display().to_string())?;
                info!("kappa {kappa}: {name}");
                train_run(s, &run_dir, true)?;
                let eval_dir = task.join("eval").join(&name);
                evaluate(
                    settings_for(
                        Command::Evaluate,
                        &[("run", run_dir.display().to_string()), ("bins", r("bins")?)],
                    )?,
                    &eval_dir,
                )?;
                eval_dirs.push(eval_dir);
            }
        }
        let report_dir = task.join("report");
        report(settings_for(Command::Report, &[("runs", join_runs(&eval_dirs)?)])?, &report_dir)?;
        let comparison: ComparisonReport = read_json(&report_dir.join(COMPARISON_JSON))?;
        let mut checks = ordering_checks(&comparison, 0.005);
        checks.push(grad_variance_check(&comparison, seeds.len().saturating_sub(1).max(1)));
        summary.tasks.insert(format!("kappa-{kappa}"), checks);
    }

    let mut text = String::new();
    for (task, checks) in &summary.tasks {
        text.push_str(&format!("{task}\n"));
        for c in checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            text.push_str(&format!("  {verdict}  {:<50} {}\n", c.name, c.detail));
        }
    }
    write_json(&out.join("summary.json"), &summary)?;
    write_text(&out.join("summary.txt"), &text)?;
    finish(manifest, out, &out.join(MANIFEST_FILE))
}

/// Result of re-running a manifest.
#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub out: PathBuf,
    pub compared: usize,
}

/// Re-executes the command recorded in `manifest_path` into `out` and
/// requires every numeric artifact to match byte for byte.
pub fn replay(manifest_path: &Path, out: &Path) -> CliResult<ReplayOutcome> {
    let recorded = RunManifest::read(manifest_path)?;
    let command = Command::from_name(&recorded.command)?;
    for input in &recorded.inputs {
        if sha256_file(Path::new(&input.path))? != input.sha256 {
            return Err(CliError::Consistency(format!("input {} changed since the run", input.path)));
        }
    }
    let settings = Settings::from_map(recorded.config.clone());
    let fresh = execute(command, settings, out)?;
    let mut differing = Vec::new();
    for (k, v) in &recorded.artifacts {
        if fresh.artifacts.get(k) != Some(v) {
            differing.push(k.clone());
        }
    }
    for k in fresh.artifacts.keys() {
        if !recorded.artifacts.contains_key(k) {
            differing.push(k.clone());
        }
    }
    if !differing.is_empty() {
        return Err(CliError::Mismatch(differing.join(", ")));
    }
    Ok(ReplayOutcome {
        out: out.to_path_buf(),
        compared: recorded.artifacts.len(),
    })
}
