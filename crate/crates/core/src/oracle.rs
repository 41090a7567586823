//! Slow, obvious reference implementations for tests.
//!
//! Nothing here calls into the production numeric code: agreement between
//! the two is evidence, not tautology. Only the plain data types
//! ([`Matrix`], [`PredictionSet`], [`MlpParams`]) are shared. Sizes are
//! expected to stay small (a few hundred samples or parameters).

use crate::calibration::PredictionSet;
use crate::error::{Error, Result};
use crate::model::MlpParams;
use crate::tensor::Matrix;

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Oracle(format!("finite-difference step must be positive, got {step}")));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let original = x[i];
        x[i] = original + step;
        let up = f(&x);
        x[i] = original - step;
        let down = f(&x);
        x[i] = original;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Oracle(format!(
                "non-finite evaluation at coordinate {i}: f(+h) = {up}, f(-h) = {down}"
            )));
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// `sum_j p_j ln(p_j / q_j)`; infinite when `q_j = 0` for some `p_j > 0`.
pub fn naive_kl(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions of different length");
    let mut terms = Vec::with_capacity(p.len());
    for j in 0..p.len() {
        if p[j] == 0.0 {
            continue;
        }
        if q[j] == 0.0 {
            return f64::INFINITY;
        }
        terms.push(p[j] * (p[j] / q[j]).ln());
    }
    compensated_sum(terms)
}

/// Softmax of one row as `1 / sum_k exp(z_k - z_j)`.
pub fn naive_softmax_row(z: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len());
    for j in 0..z.len() {
        let mut terms = Vec::with_capacity(z.len());
        for k in 0..z.len() {
            terms.push((z[k] - z[j]).exp());
        }
        out.push(1.0 / compensated_sum(terms));
    }
    out
}

pub fn naive_softmax(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let p = naive_softmax_row(logits.row(i));
        for j in 0..logits.cols() {
            out.set(i, j, p[j]);
        }
    }
    out
}

pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.rows(), "inner dimensions differ");
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0.0;
            for k in 0..a.cols() {
                acc += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, acc);
        }
    }
    out
}

/// Two-pass column means and biased variances.
pub fn naive_column_stats(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows() as f64;
    let mut means = Vec::with_capacity(m.cols());
    let mut vars = Vec::with_capacity(m.cols());
    for j in 0..m.cols() {
        let mean = compensated_sum((0..m.rows()).map(|i| m.get(i, j))) / n;
        let var = compensated_sum((0..m.rows()).map(|i| (m.get(i, j) - mean).powi(2))) / n;
        means.push(mean);
        vars.push(var);
    }
    (means, vars)
}

/// First index of the row maximum.
pub fn naive_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    let mut i = 1;
    while i < row.len() {
        if row[i] > row[best] {
            best = i;
        }
        i += 1;
    }
    best
}

/// `(z_ij - mean_j) / sqrt(var_j + eps)` with the batch's own statistics.
pub fn naive_perceive(logits: &Matrix, epsilon: f64) -> Matrix {
    let (means, vars) = naive_column_stats(logits);
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        for j in 0..logits.cols() {
            out.set(i, j, (logits.get(i, j) - means[j]) / (vars[j] + epsilon).sqrt());
        }
    }
    out
}

/// Batch mean of `KL(softmax(t / tau) || softmax(s / tau))`.
pub fn naive_softened_kl(teacher: &Matrix, student: &Matrix, tau: f64) -> f64 {
    let mut per_row = Vec::with_capacity(teacher.rows());
    for i in 0..teacher.rows() {
        let t: Vec<f64> = teacher.row(i).iter().map(|v| v / tau).collect();
        let s: Vec<f64> = student.row(i).iter().map(|v| v / tau).collect();
        per_row.push(naive_kl(&naive_softmax_row(&t), &naive_softmax_row(&s)));
    }
    compensated_sum(per_row) / teacher.rows() as f64
}

/// Mean of `-ln softmax(z)_y`.
pub fn naive_cross_entropy(logits: &Matrix, labels: &[usize]) -> f64 {
    let mut terms = Vec::with_capacity(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        let z = logits.row(i);
        let log_norm = compensated_sum(z.iter().map(|v| (v - z[y]).exp())).ln();
        terms.push(log_norm);
    }
    compensated_sum(terms) / labels.len() as f64
}

/// Sample-by-sample forward pass of a ReLU MLP.
pub fn naive_mlp_forward(params: &MlpParams, inputs: &Matrix) -> Matrix {
    let last = params.layers.len() - 1;
    let classes = params.layers[last].bias.len();
    let mut out = Matrix::zeros(inputs.rows(), classes);
    for i in 0..inputs.rows() {
        let mut activation: Vec<f64> = inputs.row(i).to_vec();
        for (l, layer) in params.layers.iter().enumerate() {
            let fan_out = layer.bias.len();
            let mut next = vec![0.0; fan_out];
            for o in 0..fan_out {
                let mut acc = layer.bias[o];
                for (k, a) in activation.iter().enumerate() {
                    acc += a * layer.weights.get(k, o);
                }
                next[o] = if l < last && acc < 0.0 { 0.0 } else { acc };
            }
            activation = next;
        }
        for (j, v) in activation.into_iter().enumerate() {
            out.set(i, j, v);
        }
    }
    out
}

/// Reference ECE, MCE and FPR95 with per-bin detail.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveMetrics {
    pub ece: f64,
    pub mce: f64,
    pub fpr95: f64,
    pub fpr95_per_class: Vec<Option<f64>>,
    /// `(count, mean confidence, accuracy)` per bin.
    pub bins: Vec<(usize, f64, f64)>,
}

/// Per-bin loops for calibration error, exhaustive threshold enumeration
/// for FPR at 95% TPR.
pub fn naive_metrics(preds: &PredictionSet, n_bins: usize) -> Result<NaiveMetrics> {
    if n_bins == 0 {
        return Err(Error::Parameter("n_bins must be at least 1".into()));
    }
    let n = preds.len();
    if n == 0 {
        return Err(Error::UndefinedMetric("empty prediction set".into()));
    }
    let probs = preds.probs();
    let labels = preds.labels();

    let mut bins = Vec::with_capacity(n_bins);
    let mut ece = 0.0;
    let mut mce: Option<f64> = None;
    for b in 0..n_bins {
        let lower = b as f64 / n_bins as f64;
        let upper = (b + 1) as f64 / n_bins as f64;
        let (mut count, mut correct, mut conf_sum) = (0usize, 0usize, 0.0);
        for i in 0..n {
            let row = probs.row(i);
            let pred = naive_argmax(row);
            let conf = row[pred];
            let inside = conf >= lower && (conf < upper || b == n_bins - 1);
            if inside {
                count += 1;
                conf_sum += conf;
                if pred == labels[i] {
                    correct += 1;
                }
            }
        }
        if count == 0 {
            bins.push((0, 0.0, 0.0));
            continue;
        }
        let mean_conf = conf_sum / count as f64;
        let acc = correct as f64 / count as f64;
        let gap = (acc - mean_conf).abs();
        ece += (count as f64 / n as f64) * gap;
        mce = Some(match mce {
            Some(m) if m >= gap => m,
            _ => gap,
        });
        bins.push((count, mean_conf, acc));
    }

    let mut per_class = Vec::with_capacity(probs.cols());
    for c in 0..probs.cols() {
        let positives = labels.iter().filter(|&&l| l == c).count();
        let negatives = n - positives;
        if positives == 0 || negatives == 0 {
            per_class.push(None);
            continue;
        }
        let mut thresholds: Vec<f64> = (0..n).map(|i| probs.get(i, c)).collect();
        thresholds.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
        thresholds.dedup();
        let mut found = None;
        for &t in &thresholds {
            let tp = (0..n).filter(|&i| labels[i] == c && probs.get(i, c) >= t).count();
            let fp = (0..n).filter(|&i| labels[i] != c && probs.get(i, c) >= t).count();
            if tp as f64 / positives as f64 >= 0.95 && 20 * tp >= 19 * positives {
                found = Some(fp as f64 / negatives as f64);
                break;
            }
        }
        per_class.push(Some(found.expect("the lowest threshold admits every positive")));
    }
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::UndefinedMetric("no class with positives and negatives".into()));
    }
    let mut fpr_sum = 0.0;
    for v in &valid {
        fpr_sum += v;
    }
    Ok(NaiveMetrics {
        ece,
        mce: mce.expect("some bin is non-empty"),
        fpr95: fpr_sum / valid.len() as f64,
        fpr95_per_class: per_class,
        bins,
    })
}

fn naive_entropy_row(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &v in p {
        if v > 0.0 {
            h -= v * v.ln();
        }
    }
    h
}

/// Mean row entropy in nats.
pub fn naive_mean_entropy(probs: &Matrix) -> f64 {
    compensated_sum((0..probs.rows()).map(|i| naive_entropy_row(probs.row(i)))) / probs.rows() as f64
}

/// `H(mean p) - sum_y pi_y H(mean p | y)`, clamped at zero.
pub fn naive_mutual_info(probs: &Matrix, labels: &[usize]) -> f64 {
    let n = labels.len();
    let c = probs.cols();
    let mut overall = vec![0.0; c];
    for (j, o) in overall.iter_mut().enumerate() {
        *o = compensated_sum((0..n).map(|i| probs.get(i, j))) / n as f64;
    }
    let mut conditional = Vec::new();
    for y in 0..c {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == y).collect();
        if members.is_empty() {
            continue;
        }
        let mean: Vec<f64> = (0..c)
            .map(|j| compensated_sum(members.iter().map(|&i| probs.get(i, j))) / members.len() as f64)
            .collect();
        conditional.push(members.len() as f64 / n as f64 * naive_entropy_row(&mean));
    }
    (naive_entropy_row(&overall) - compensated_sum(conditional)).max(0.0)
}
