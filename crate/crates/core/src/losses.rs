//! Training objectives with analytic gradients with respect to the student's
//! raw logits. Every loss is a batch mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perception::{compute_class_stats, perceive, perceive_backward, ClassStats, GradMode};
use crate::tensor::Matrix;

pub const DEFAULT_TAU: f64 = 4.0;
/// `2 tau^2` at the default temperature, keeping the balancing weight above `tau^2`.
pub const DEFAULT_LAMBDA: f64 = 32.0;

/// Probabilities below this contribute nothing to a KL sum.
const KL_FLOOR: f64 = 1e-300;

/// A scalar loss and its gradient with respect to the student logits.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: Matrix,
}

/// Which distillation term accompanies cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistillMode {
    /// Cross-entropy only.
    None,
    /// KL between temperature-softened raw logits.
    ClassicKd,
    /// KL between temperature-softened perception logits.
    #[default]
    Luminet,
}

impl std::str::FromStr for DistillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DistillMode::None),
            "kd" | "classic-kd" | "classic_kd" => Ok(DistillMode::ClassicKd),
            "luminet" => Ok(DistillMode::Luminet),
            other => Err(Error::Parameter(format!("unknown distillation mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for DistillMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistillMode::None => "none",
            DistillMode::ClassicKd => "kd",
            DistillMode::Luminet => "luminet",
        })
    }
}

fn check_labels(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() {
        return Err(Error::Shape {
            op: "labels",
            left: logits.shape(),
            right: (labels.len(), 1),
        });
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= logits.cols()) {
        return Err(Error::Label {
            row,
            label,
            classes: logits.cols(),
        });
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<LossValue> {
    check_labels(logits, labels)?;
    if logits.rows() == 0 {
        return Err(Error::EmptyBatch("cross_entropy"));
    }
    let n = logits.rows() as f64;
    let log_probs = logits.log_softmax_rows();
    let value = -labels
        .iter()
        .enumerate()
        .map(|(i, &y)| log_probs.get(i, y))
        .sum::<f64>()
        / n;
    let mut grad = log_probs.map(f64::exp);
    for (i, &y) in labels.iter().enumerate() {
        let v = grad.get(i, y);
        grad.set(i, y, v - 1.0);
    }
    Ok(LossValue {
        value,
        grad: grad.scale(1.0 / n),
    })
}

/// Batch-mean `KL(softmax(t / tau) || softmax(s / tau))` and its gradient
/// with respect to `s`. The reference distribution comes from `t`.
fn softened_kl(target: &Matrix, source: &Matrix, tau: f64, tau_squared_scaling: bool) -> Result<LossValue> {
    if target.shape() != source.shape() {
        return Err(Error::Shape {
            op: "softened_kl",
            left: target.shape(),
            right: source.shape(),
        });
    }
    check_tau(tau)?;
    if source.rows() == 0 {
        return Err(Error::EmptyBatch("softened_kl"));
    }
    let b = source.rows() as f64;
    let log_p = target.scale(1.0 / tau).log_softmax_rows();
    let log_q = source.scale(1.0 / tau).log_softmax_rows();
    let mut total = 0.0;
    for (lp_row, lq_row) in log_p.row_iter().zip(log_q.row_iter()) {
        for (&lp, &lq) in lp_row.iter().zip(lq_row) {
            let p = lp.exp();
            if p >= KL_FLOOR {
                total += p * (lp - lq);
            }
        }
    }
    let scale = if tau_squared_scaling { tau * tau } else { 1.0 };
    let value = (total / b * scale).max(0.0);
    let grad_factor = scale / (tau * b);
    let grad = log_q.zip_map(&log_p, |lq, lp| (lq.exp() - lp.exp()) * grad_factor)?;
    Ok(LossValue { value, grad })
}

/// Classic temperature-softened KD on raw logits.
pub fn classic_kd_loss(
    teacher_logits: &Matrix,
    student_logits: &Matrix,
    tau: f64,
    tau_squared_scaling: bool,
) -> Result<LossValue> {
    softened_kl(teacher_logits, student_logits, tau, tau_squared_scaling)
}

/// Options for the perception-logit KL term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptionKlOptions {
    pub tau: f64,
    pub grad_mode: GradMode,
    pub tau_squared_scaling: bool,
}

/// KL between perception logits with caller-supplied statistics.
///
/// `teacher_stats` may come from the batch or from the whole training set.
/// `student_stats` must come from the student batch itself for `Full` mode;
/// in `StopGradient` mode any statistics are treated as constants, which is
/// also how a frozen-statistics surrogate is evaluated.
pub fn perception_kl(
    teacher_logits: &Matrix,
    teacher_stats: &ClassStats,
    student_logits: &Matrix,
    student_stats: &ClassStats,
    opts: PerceptionKlOptions,
) -> Result<LossValue> {
    if teacher_logits.shape() != student_logits.shape() {
        return Err(Error::Shape {
            op: "perception_kl",
            left: teacher_logits.shape(),
            right: student_logits.shape(),
        });
    }
    let teacher_h = perceive(teacher_logits, teacher_stats)?;
    let student_h = perceive(student_logits, student_stats)?;
    let kl = softened_kl(&teacher_h.h, &student_h.h, opts.tau, opts.tau_squared_scaling)?;
    let grad = perceive_backward(&kl.grad, &student_h, opts.grad_mode)?;
    Ok(LossValue { value: kl.value, grad })
}

/// KL between softened perception logits, each side normalized with its own
/// batch statistics.
pub fn luminet_loss(
    teacher_logits: &Matrix,
    student_logits: &Matrix,
    tau: f64,
    epsilon: f64,
    grad_mode: GradMode,
) -> Result<LossValue> {
    if teacher_logits.shape() != student_logits.shape() {
        return Err(Error::Shape {
            op: "luminet_loss",
            left: teacher_logits.shape(),
            right: student_logits.shape(),
        });
    }
    let teacher_stats = compute_class_stats(teacher_logits, epsilon)?;
    let student_stats = compute_class_stats(student_logits, epsilon)?;
    perception_kl(
        teacher_logits,
        &teacher_stats,
        student_logits,
        &student_stats,
        PerceptionKlOptions {
            tau,
            grad_mode,
            tau_squared_scaling: false,
        },
    )
}

/// `ce + lambda * distill`, values and gradients alike.
pub fn total_loss(ce: &LossValue, distill: &LossValue, lambda: f64) -> Result<LossValue> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!("lambda must be non-negative, got {lambda}")));
    }
    let mut grad = ce.grad.clone();
    grad.add_scaled_in_place(&distill.grad, lambda)?;
    Ok(LossValue {
        value: ce.value + lambda * distill.value,
        grad,
    })
}
