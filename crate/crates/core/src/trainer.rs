//! SGD training loop for teachers and distilled students.
//!
//! One run is strictly sequential: its batches, parameter updates and
//! records are fully determined by the config, the seed and the data.
//! Independent runs share nothing and can execute in parallel.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{
    classic_kd_loss, cross_entropy, perception_kl, total_loss, DistillMode, LossValue,
    PerceptionKlOptions, DEFAULT_LAMBDA, DEFAULT_TAU,
};
use crate::model::{backward, forward, init_params, predict, MlpParams, MlpSpec};
use crate::perception::{compute_class_stats, ClassStats, GradMode, DEFAULT_EPSILON};
use crate::rng::RngState;
use crate::tensor::Matrix;

/// Smallest batch the trainer accepts unless explicitly overridden.
pub const MIN_BATCH_SIZE: usize = 4;
/// Decay points as fractions of the total epoch count.
const DECAY_FRACTIONS: [f64; 3] = [0.625, 0.75, 0.875];

/// Where the teacher's perception statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsScope {
    /// Recomputed on every training batch.
    #[default]
    Local,
    /// Computed once over the teacher's logits on the whole training set.
    Global,
}

impl std::str::FromStr for StatsScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(StatsScope::Local),
            "global" => Ok(StatsScope::Global),
            other => Err(Error::Parameter(format!("unknown stats scope '{other}'"))),
        }
    }
}

impl std::fmt::Display for StatsScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StatsScope::Local => "local",
            StatsScope::Global => "global",
        })
    }
}

/// Every hyperparameter of a training or distillation run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_decay_factor: f64,
    /// Epochs after which the learning rate decays. `None` places them at
    /// 62.5%, 75% and 87.5% of `epochs`.
    pub lr_decay_epochs: Option<Vec<usize>>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub mode: DistillMode,
    pub grad_mode: GradMode,
    pub stats_scope: StatsScope,
    /// Multiply the distillation term and its gradient by `tau^2`.
    pub tau_squared_scaling: bool,
    pub allow_small_batch: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 120,
            lr_initial: 0.05,
            lr_decay_factor: 0.1,
            lr_decay_epochs: None,
            momentum: 0.9,
            weight_decay: 5e-4,
            tau: DEFAULT_TAU,
            lambda: DEFAULT_LAMBDA,
            epsilon: DEFAULT_EPSILON,
            mode: DistillMode::Luminet,
            grad_mode: GradMode::StopGradient,
            stats_scope: StatsScope::Local,
            tau_squared_scaling: false,
            allow_small_batch: false,
            seed: 0,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

pub(crate) fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v)).collect()
}

impl TrainConfig {
    /// The decay epochs in effect.
    pub fn decay_epochs(&self) -> Vec<usize> {
        match &self.lr_decay_epochs {
            Some(e) => e.clone(),
            None => {
                let mut out: Vec<usize> = DECAY_FRACTIONS
                    .iter()
                    .map(|f| (f * self.epochs as f64).round() as usize)
                    .filter(|&e| e > 0 && e < self.epochs)
                    .collect();
                out.dedup();
                out
            }
        }
    }

    /// Learning rate used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = self.decay_epochs().iter().filter(|&&d| epoch > d).count();
        self.lr_initial * self.lr_decay_factor.powi(k as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || (self.batch_size < MIN_BATCH_SIZE && !self.allow_small_batch) {
            return bad(format!(
                "batch_size {} is below {MIN_BATCH_SIZE}; set allow_small_batch to override",
                self.batch_size
            ));
        }
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr_initial));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return bad(format!("lr_decay_factor must lie in (0, 1), got {}", self.lr_decay_factor));
        }
        let decay = self.decay_epochs();
        if decay.windows(2).any(|w| w[0] >= w[1]) || decay.iter().any(|&e| e >= self.epochs) {
            return bad(format!(
                "lr_decay_epochs {decay:?} must be strictly increasing and below epochs ({})",
                self.epochs
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        Ok(())
    }

    /// Resolved config as flat `key=value` pairs, in a fixed order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| v.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",");
        [
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", format!("{:?}", self.lr_initial)),
            ("lr_decay_factor", format!("{:?}", self.lr_decay_factor)),
            ("lr_decay_epochs", list(&self.decay_epochs())),
            ("momentum", format!("{:?}", self.momentum)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("tau", format!("{:?}", self.tau)),
            ("lambda", format!("{:?}", self.lambda)),
            ("epsilon", format!("{:?}", self.epsilon)),
            ("mode", self.mode.to_string()),
            ("grad_mode", self.grad_mode.to_string()),
            ("stats_scope", self.stats_scope.to_string()),
            ("tau_squared_scaling", self.tau_squared_scaling.to_string()),
            ("allow_small_batch", self.allow_small_batch.to_string()),
            ("loss_reduction", "batch-mean".to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Applies one `key=value` setting. Returns `false` for keys this
    /// config does not own.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "lr" => self.lr_initial = parse_value(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = parse_value(key, value)?,
            "lr_decay_epochs" => self.lr_decay_epochs = Some(parse_usize_list(key, value)?),
            "momentum" => self.momentum = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "mode" => self.mode = value.trim().parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "grad_mode" => {
                self.grad_mode = value.trim().parse().map_err(|e: Error| Error::Config(e.to_string()))?
            }
            "stats_scope" => {
                self.stats_scope = value.trim().parse().map_err(|e: Error| Error::Config(e.to_string()))?
            }
            "tau_squared_scaling" => self.tau_squared_scaling = parse_value(key, value)?,
            "allow_small_batch" => self.allow_small_batch = parse_value(key, value)?,
            "loss_reduction" => {
                if value.trim() != "batch-mean" {
                    return Err(Error::Config(format!(
                        "only batch-mean loss reduction is supported, got '{value}'"
                    )));
                }
            }
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Parameters plus optimizer state for one run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: MlpParams,
    pub velocity: MlpParams,
    /// Current epoch, 1-based once training starts.
    pub epoch: usize,
    /// Batch index within the current epoch.
    pub batch: usize,
}

impl TrainState {
    pub fn new(params: MlpParams) -> Self {
        let velocity = MlpParams::zeros(params.spec());
        Self {
            params,
            velocity,
            epoch: 0,
            batch: 0,
        }
    }
}

/// One SGD update with momentum and decoupled-into-gradient weight decay:
/// `g' = g + wd * theta; v = momentum * v + g'; theta -= lr * v`.
pub fn sgd_step(state: &mut TrainState, grads: &MlpParams, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if grads.spec() != state.params.spec() {
        return Err(Error::Parameter("gradient shapes do not match parameters".into()));
    }
    if !grads.is_finite() {
        return Err(Error::Divergence {
            epoch: state.epoch,
            batch: state.batch,
            detail: "non-finite gradient".into(),
        });
    }
    for ((theta, v), g) in state
        .params
        .values_mut()
        .zip(state.velocity.values_mut())
        .zip(grads.values())
    {
        let g = g + weight_decay * *theta;
        *v = momentum * *v + g;
        *theta -= lr * *v;
    }
    if !state.params.is_finite() {
        return Err(Error::Divergence {
            epoch: state.epoch,
            batch: state.batch,
            detail: "parameters became non-finite".into(),
        });
    }
    Ok(())
}

/// Shuffles `0..n` and cuts it into full batches; the short tail is dropped
/// so every batch yields full-size class statistics.
pub fn make_batches(n: usize, batch_size: usize, rng: &mut RngState) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || n < batch_size {
        return Err(Error::Config(format!(
            "cannot form a batch of {batch_size} from {n} samples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    Ok(order
        .chunks_exact(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Per-parameter variance of the gradient across the batches of an epoch,
/// accumulated with Welford's method.
#[derive(Debug, Clone)]
pub struct GradientMoments {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    norm_sum: f64,
}

impl GradientMoments {
    pub fn new(params: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; params],
            m2: vec![0.0; params],
            norm_sum: 0.0,
        }
    }

    pub fn push(&mut self, grads: &MlpParams) {
        self.count += 1;
        let k = self.count as f64;
        let mut sq = 0.0;
        for ((g, mean), m2) in grads.values().zip(&mut self.mean).zip(&mut self.m2) {
            let delta = g - *mean;
            *mean += delta / k;
            *m2 += delta * (g - *mean);
            sq += g * g;
        }
        self.norm_sum += sq.sqrt();
    }

    /// Mean over parameters of the (population) variance across batches.
    pub fn mean_variance(&self) -> f64 {
        if self.count == 0 || self.m2.is_empty() {
            return 0.0;
        }
        self.m2.iter().sum::<f64>() / (self.m2.len() as f64 * self.count as f64)
    }

    pub fn mean_norm(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.norm_sum / self.count as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub ce_loss: f64,
    pub distill_loss: f64,
    pub total_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    /// Mean L2 norm of the total-loss parameter gradient over the epoch.
    pub grad_norm: f64,
    /// Mean per-parameter gradient variance across the epoch's batches.
    pub grad_variance: f64,
    /// Kept out of the record stream so records stay reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Highest validation accuracy, earliest epoch on ties; the
    /// initialization when no epoch ran.
    pub best: MlpParams,
    pub best_epoch: usize,
    pub last: MlpParams,
    pub records: Vec<EpochRecord>,
}

fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    hits as f64 / labels.len() as f64
}

struct TeacherSignal {
    train_logits: Matrix,
    global_stats: Option<ClassStats>,
}

fn distill_term(
    config: &TrainConfig,
    teacher: &TeacherSignal,
    batch: &[usize],
    student_logits: &Matrix,
) -> Result<LossValue> {
    let teacher_logits = teacher.train_logits.select_rows(batch);
    match config.mode {
        DistillMode::None => unreachable!("no distillation term without a teacher"),
        DistillMode::ClassicKd => classic_kd_loss(&teacher_logits, student_logits, config.tau, config.tau_squared_scaling),
        DistillMode::Luminet => {
            let teacher_stats = match &teacher.global_stats {
                Some(s) => s.clone(),
                None => compute_class_stats(&teacher_logits, config.epsilon)?,
            };
            let student_stats = compute_class_stats(student_logits, config.epsilon)?;
            perception_kl(
                &teacher_logits,
                &teacher_stats,
                student_logits,
                &student_stats,
                PerceptionKlOptions {
                    tau: config.tau,
                    grad_mode: config.grad_mode,
                    tau_squared_scaling: config.tau_squared_scaling,
                },
            )
        }
    }
}

fn run(
    spec: &MlpSpec,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    teacher: Option<&TeacherSignal>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.dims() != spec.input_dim() || train.classes != spec.classes() {
        return Err(Error::Config(format!(
            "model widths {:?} do not fit data with {} dims and {} classes",
            spec.widths(),
            train.dims(),
            train.classes
        )));
    }
    let root = RngState::new(config.seed);
    let mut shuffle_rng = root.fork(1);
    let init = init_params(spec, &mut root.fork(0));
    let mut state = TrainState::new(init.clone());
    let mut best = init;
    let mut best_epoch = 0;
    let mut best_acc = f64::NEG_INFINITY;
    let mut records = Vec::with_capacity(config.epochs);
    // lambda = 0 switches the distillation term off entirely
    let teacher = teacher.filter(|_| config.mode != DistillMode::None && config.lambda > 0.0);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        state.epoch = epoch;
        let lr = config.lr_at(epoch);
        let batches = make_batches(train.len(), config.batch_size, &mut shuffle_rng)?;
        let mut moments = GradientMoments::new(spec.param_count());
        let (mut ce_sum, mut distill_sum, mut total_sum) = (0.0, 0.0, 0.0);
        let mut hits = 0usize;
        for (b, batch) in batches.iter().enumerate() {
            state.batch = b;
            let x = train.features.select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let (logits, trace) = forward(&state.params, &x)?;
            hits += logits.argmax_rows().iter().zip(&y).filter(|(p, t)| p == t).count();
            let ce = cross_entropy(&logits, &y)?;
            let (distill_value, total) = match teacher {
                Some(t) => {
                    let d = distill_term(config, t, batch, &logits)?;
                    (d.value, total_loss(&ce, &d, config.lambda)?)
                }
                None => (0.0, ce.clone()),
            };
            if !total.value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    detail: format!("loss became {}", total.value),
                });
            }
            ce_sum += ce.value;
            distill_sum += distill_value;
            total_sum += total.value;
            let grads = backward(&state.params, &trace, &total.grad)?;
            moments.push(&grads);
            sgd_step(&mut state, &grads, lr, config.momentum, config.weight_decay)?;
        }
        let nb = batches.len() as f64;
        let seen = batches.len() * config.batch_size;
        let val_accuracy = accuracy(&predict(&state.params, &val.features)?, &val.labels);
        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best = state.params.clone();
            best_epoch = epoch;
        }
        let record = EpochRecord {
            epoch,
            lr,
            ce_loss: ce_sum / nb,
            distill_loss: distill_sum / nb,
            total_loss: total_sum / nb,
            train_accuracy: hits as f64 / seen as f64,
            val_accuracy,
            grad_norm: moments.mean_norm(),
            grad_variance: moments.mean_variance(),
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: loss {:.5} train acc {:.4} val acc {:.4}",
            record.total_loss,
            record.train_accuracy,
            record.val_accuracy
        );
        records.push(record);
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: state.params,
        records,
    })
}

/// Cross-entropy training from a fresh initialization.
pub fn train_teacher(spec: &MlpSpec, train: &Dataset, val: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    run(spec, train, val, config, None)
}

/// Trains a student against a frozen teacher with the configured objective.
pub fn distill(
    teacher: &MlpParams,
    student_spec: &MlpSpec,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if teacher.spec().classes() != student_spec.classes() {
        return Err(Error::Config(format!(
            "teacher predicts {} classes, student {}",
            teacher.spec().classes(),
            student_spec.classes()
        )));
    }
    if teacher.spec().input_dim() != train.dims() {
        return Err(Error::Config(format!(
            "teacher expects {} input dims, data has {}",
            teacher.spec().input_dim(),
            train.dims()
        )));
    }
    config.validate()?;
    if config.mode == DistillMode::None {
        return run(student_spec, train, val, config, None);
    }
    // the teacher is frozen and the data fixed, so its logits are computed once
    let train_logits = predict(teacher, &train.features)?;
    let global_stats = match config.stats_scope {
        StatsScope::Global => Some(compute_class_stats(&train_logits, config.epsilon)?),
        StatsScope::Local => None,
    };
    let signal = TeacherSignal {
        train_logits,
        global_stats,
    };
    run(student_spec, train, val, config, Some(&signal))
}

pub fn write_records(records: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Wall-clock time per epoch, one `{"epoch":..,"wall_time_secs":..}` per line.
pub fn write_timings(records: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        writeln!(
            file,
            "{}",
            serde_json::json!({ "epoch": r.epoch, "wall_time_secs": r.wall_time_secs })
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
