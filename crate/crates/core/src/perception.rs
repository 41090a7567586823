//! Perception logits: raw logits re-expressed per class against the batch.
//!
//! For a batch of logits `z` (rows = samples, columns = classes) with
//! per-class batch mean `U_j` and biased variance `V_j`,
//!
//! ```text
//! h_ij = (z_ij - U_j) / sqrt(V_j + eps)
//! ```
//!
//! Teacher and student are always normalized with their own statistics.
//! The transform only exists inside the distillation loss; evaluation uses
//! raw logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Per-class batch statistics used to build perception logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
    pub epsilon: f64,
    pub batch_size: usize,
}

impl ClassStats {
    /// `sqrt(V_j + eps)` for every class.
    pub fn std_devs(&self) -> Vec<f64> {
        self.vars.iter().map(|v| (v + self.epsilon).sqrt()).collect()
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    /// A one-row batch has zero variance everywhere and maps every logit to 0.
    pub fn is_degenerate(&self) -> bool {
        self.batch_size < 2
    }
}

/// Gradient treatment of the batch statistics in the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradMode {
    /// Mean and variance are constants: `dh_ij/dz_ij = 1/sigma_j`, no cross terms.
    #[default]
    StopGradient,
    /// Differentiates through the batch mean and variance (batch-norm backward).
    Full,
}

impl std::str::FromStr for GradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stop-gradient" | "stop" => Ok(GradMode::StopGradient),
            "full" => Ok(GradMode::Full),
            other => Err(Error::Parameter(format!("unknown gradient mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for GradMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GradMode::StopGradient => "stop-gradient",
            GradMode::Full => "full",
        })
    }
}

/// Perception logits together with the statistics that produced them.
#[derive(Debug, Clone)]
pub struct PerceptionBatch {
    pub h: Matrix,
    pub source_stats: ClassStats,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

/// Biased per-class mean and variance of a batch of logits.
pub fn compute_class_stats(logits: &Matrix, epsilon: f64) -> Result<ClassStats> {
    check_epsilon(epsilon)?;
    if logits.rows() == 0 {
        return Err(Error::EmptyBatch("compute_class_stats"));
    }
    if logits.rows() == 1 {
        log::warn!("class statistics from a single-row batch: every perception logit will be 0");
    }
    let (means, vars) = logits.column_mean_var()?;
    Ok(ClassStats {
        means,
        vars,
        epsilon,
        batch_size: logits.rows(),
    })
}

/// Applies `h_ij = (z_ij - U_j) / sqrt(V_j + eps)`.
pub fn perceive(logits: &Matrix, stats: &ClassStats) -> Result<PerceptionBatch> {
    if logits.cols() != stats.classes() {
        return Err(Error::Shape {
            op: "perceive",
            left: logits.shape(),
            right: (1, stats.classes()),
        });
    }
    let sigma = stats.std_devs();
    let mut h = logits.clone();
    for i in 0..h.rows() {
        for ((v, &u), &s) in h.row_mut(i).iter_mut().zip(&stats.means).zip(&sigma) {
            *v = (*v - u) / s;
        }
    }
    Ok(PerceptionBatch {
        h,
        source_stats: stats.clone(),
    })
}

/// Pulls a gradient with respect to perception logits back to raw logits.
///
/// `Full` mode requires that `batch` was produced from its own statistics
/// (same rows); it applies
/// `dz_i = (g_i - mean(g) - h_i * mean(g * h)) / sigma` per column.
pub fn perceive_backward(upstream: &Matrix, batch: &PerceptionBatch, mode: GradMode) -> Result<Matrix> {
    if upstream.shape() != batch.h.shape() {
        return Err(Error::Shape {
            op: "perceive_backward",
            left: upstream.shape(),
            right: batch.h.shape(),
        });
    }
    let stats = &batch.source_stats;
    let sigma = stats.std_devs();
    match mode {
        GradMode::StopGradient => {
            let mut out = upstream.clone();
            for i in 0..out.rows() {
                for (g, &s) in out.row_mut(i).iter_mut().zip(&sigma) {
                    *g /= s;
                }
            }
            Ok(out)
        }
        GradMode::Full => {
            if stats.batch_size != upstream.rows() {
                return Err(Error::Parameter(format!(
                    "full-mode backward needs statistics from the same batch ({} rows vs batch size {})",
                    upstream.rows(),
                    stats.batch_size
                )));
            }
            let m = upstream.rows() as f64;
            let (rows, cols) = upstream.shape();
            let mut mean_g = vec![0.0; cols];
            let mut mean_gh = vec![0.0; cols];
            for i in 0..rows {
                for j in 0..cols {
                    let g = upstream.get(i, j);
                    mean_g[j] += g;
                    mean_gh[j] += g * batch.h.get(i, j);
                }
            }
            for j in 0..cols {
                mean_g[j] /= m;
                mean_gh[j] /= m;
            }
            Ok(Matrix::from_fn(rows, cols, |i, j| {
                (upstream.get(i, j) - mean_g[j] - batch.h.get(i, j) * mean_gh[j]) / sigma[j]
            }))
        }
    }
}
