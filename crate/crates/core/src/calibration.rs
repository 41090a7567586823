//! Calibration and information metrics over softmax predictions.
//!
//! Binning uses `n_bins` equal-width bins on `[0, 1]`; bin `b` holds
//! confidences in `[b/n, (b+1)/n)` and the last bin is closed on the right.
//! Confidence is the maximum class probability, the prediction its argmax
//! (ties to the lowest class). Entropies use the natural logarithm.
//!
//! # Prediction dump format
//!
//! UTF-8, comma-delimited. Header line `n,classes`, then `n` lines of
//! `classes` probabilities followed by the integer label.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const DEFAULT_BINS: usize = 15;
/// Target true-positive rate for the FPR metric.
const TPR_NUMERATOR: usize = 19;
const TPR_DENOMINATOR: usize = 20;

/// Softmax outputs with their ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    probs: Matrix,
    labels: Vec<usize>,
}

impl PredictionSet {
    pub fn new(probs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != probs.rows() {
            return Err(Error::Shape {
                op: "PredictionSet::new",
                left: probs.shape(),
                right: (labels.len(), 1),
            });
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= probs.cols()) {
            return Err(Error::Label {
                row,
                label,
                classes: probs.cols(),
            });
        }
        for (i, row) in probs.row_iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
                return Err(Error::Parameter(format!(
                    "row {i} is not a probability distribution (sum {sum})"
                )));
            }
        }
        Ok(Self { probs, labels })
    }

    /// Softmax of raw logits.
    pub fn from_logits(logits: &Matrix, labels: Vec<usize>) -> Result<Self> {
        Self::new(logits.softmax_rows(), labels)
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.probs.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean confidence of the bin's samples; 0 for an empty bin.
    pub mean_confidence: f64,
    /// Fraction of correct predictions; 0 for an empty bin.
    pub accuracy: f64,
}

fn confidence_and_prediction(row: &[f64]) -> (f64, usize) {
    let mut best = 0;
    for (j, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = j;
        }
    }
    (row[best], best)
}

/// Expected calibration error and the per-bin statistics behind it.
pub fn ece(preds: &PredictionSet, n_bins: usize) -> Result<(f64, Vec<BinStat>)> {
    if n_bins < 1 {
        return Err(Error::Parameter("n_bins must be at least 1".into()));
    }
    if preds.is_empty() {
        return Err(Error::UndefinedMetric("ECE of an empty prediction set".into()));
    }
    let edges: Vec<f64> = (1..n_bins).map(|k| k as f64 / n_bins as f64).collect();
    let mut counts = vec![0usize; n_bins];
    let mut correct = vec![0usize; n_bins];
    let mut conf_sums = vec![0.0; n_bins];
    for (row, &label) in preds.probs.row_iter().zip(&preds.labels) {
        let (conf, pred) = confidence_and_prediction(row);
        let b = edges.partition_point(|&e| e <= conf);
        counts[b] += 1;
        conf_sums[b] += conf;
        if pred == label {
            correct[b] += 1;
        }
    }
    let n = preds.len() as f64;
    let mut total = 0.0;
    let mut bins = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let (mean_confidence, accuracy) = if counts[b] > 0 {
            let c = counts[b] as f64;
            (conf_sums[b] / c, correct[b] as f64 / c)
        } else {
            (0.0, 0.0)
        };
        if counts[b] > 0 {
            total += (counts[b] as f64 / n) * (accuracy - mean_confidence).abs();
        }
        bins.push(BinStat {
            lower: b as f64 / n_bins as f64,
            upper: (b + 1) as f64 / n_bins as f64,
            count: counts[b],
            mean_confidence,
            accuracy,
        });
    }
    Ok((total, bins))
}

/// Largest `|accuracy - confidence|` over non-empty bins.
pub fn mce(bins: &[BinStat]) -> Result<f64> {
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| (b.accuracy - b.mean_confidence).abs())
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .ok_or_else(|| Error::UndefinedMetric("MCE with every bin empty".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fpr95 {
    /// Mean over classes with at least one positive and one negative.
    pub value: f64,
    /// Per-class FPR; `None` for classes that were skipped.
    pub per_class: Vec<Option<f64>>,
    /// Classes with no positives or no negatives among the labels.
    pub skipped: Vec<usize>,
}

/// One-vs-rest false-positive rate at the operating point where the true
/// positive rate first reaches 95% when sweeping the threshold downward,
/// averaged over classes.
pub fn fpr95(preds: &PredictionSet) -> Result<Fpr95> {
    let n = preds.len();
    let mut per_class = Vec::with_capacity(preds.classes());
    let mut skipped = Vec::new();
    let mut scored: Vec<(f64, bool)> = Vec::with_capacity(n);
    for c in 0..preds.classes() {
        scored.clear();
        scored.extend(
            preds
                .probs
                .row_iter()
                .zip(&preds.labels)
                .map(|(row, &l)| (row[c], l == c)),
        );
        let positives = scored.iter().filter(|(_, p)| *p).count();
        let negatives = n - positives;
        if positives == 0 || negatives == 0 {
            skipped.push(c);
            per_class.push(None);
            continue;
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut rate = 1.0;
        let mut i = 0;
        while i < scored.len() {
            let threshold = scored[i].0;
            while i < scored.len() && scored[i].0 == threshold {
                if scored[i].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            if TPR_DENOMINATOR * tp >= TPR_NUMERATOR * positives {
                rate = fp as f64 / negatives as f64;
                break;
            }
        }
        per_class.push(Some(rate));
    }
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::UndefinedMetric(
            "FPR95 needs a class with both positives and negatives".into(),
        ));
    }
    if !skipped.is_empty() {
        log::info!("FPR95 skipped degenerate classes {skipped:?}");
    }
    Ok(Fpr95 {
        value: valid.iter().sum::<f64>() / valid.len() as f64,
        per_class,
        skipped,
    })
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Mean Shannon entropy (nats) of the rows.
pub fn mean_entropy(probs: &Matrix) -> f64 {
    if probs.rows() == 0 {
        return 0.0;
    }
    probs.row_iter().map(entropy).sum::<f64>() / probs.rows() as f64
}

/// Plug-in estimate `H(mean p) - sum_y pi_y H(mean p | y)`.
pub fn mutual_info_plugin(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != probs.rows() {
        return Err(Error::Shape {
            op: "mutual_info_plugin",
            left: probs.shape(),
            right: (labels.len(), 1),
        });
    }
    let c = probs.cols();
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
        return Err(Error::Label { row, label, classes: c });
    }
    let mut class_sums = vec![vec![0.0; c]; c];
    let mut class_counts = vec![0usize; c];
    let mut overall = vec![0.0; c];
    for (row, &y) in probs.row_iter().zip(labels) {
        class_counts[y] += 1;
        for j in 0..c {
            class_sums[y][j] += row[j];
            overall[j] += row[j];
        }
    }
    if class_counts.iter().filter(|&&k| k > 0).count() < 2 {
        return Err(Error::UndefinedMetric(
            "mutual information needs at least two distinct labels".into(),
        ));
    }
    let n = labels.len() as f64;
    for v in &mut overall {
        *v /= n;
    }
    let mut conditional = 0.0;
    for (sums, &k) in class_sums.iter().zip(&class_counts) {
        if k == 0 {
            continue;
        }
        let mean: Vec<f64> = sums.iter().map(|s| s / k as f64).collect();
        conditional += (k as f64 / n) * entropy(&mean);
    }
    Ok((entropy(&overall) - conditional).max(0.0))
}

/// Mean over rows of the variance of each row's probabilities.
pub fn instance_variance(probs: &Matrix) -> f64 {
    if probs.rows() == 0 || probs.cols() == 0 {
        return 0.0;
    }
    let c = probs.cols() as f64;
    probs
        .row_iter()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / c;
            row.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / c
        })
        .sum::<f64>()
        / probs.rows() as f64
}

/// Inverse population standard deviation of the first differences of a loss
/// series. Returns `f64::INFINITY` when the differences are constant.
pub fn stability_score(loss_series: &[f64]) -> Result<f64> {
    if loss_series.len() < 3 {
        return Err(Error::Parameter(format!(
            "stability score needs at least 3 points, got {}",
            loss_series.len()
        )));
    }
    let diffs: Vec<f64> = loss_series.windows(2).map(|w| w[1] - w[0]).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let std = (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt();
    let scale = diffs.iter().fold(0.0f64, |a, d| a.max(d.abs()));
    // rounding in a linear series leaves std at a few ulps of the step size
    if std <= 64.0 * f64::EPSILON * scale || std == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / std)
}

/// Fraction of rows whose label is among the `k` most probable classes
/// (ties ranked toward lower class indices).
pub fn top_k_accuracy(preds: &PredictionSet, k: usize) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds
        .probs
        .row_iter()
        .zip(&preds.labels)
        .filter(|(row, &y)| {
            let rank = row
                .iter()
                .enumerate()
                .filter(|&(j, &p)| p > row[y] || (p == row[y] && j < y))
                .count();
            rank < k
        })
        .count();
    hits as f64 / preds.len() as f64
}

/// Every calibration and information metric for one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub samples: usize,
    pub classes: usize,
    pub n_bins: usize,
    pub top1: f64,
    pub top5: f64,
    pub ece: f64,
    pub mce: f64,
    pub fpr95: f64,
    pub fpr95_skipped_classes: Vec<usize>,
    pub mean_entropy: f64,
    pub mutual_info: f64,
    /// Mean per-row variance of the predicted probabilities.
    pub instance_variance: f64,
    pub bins: Vec<BinStat>,
}

impl CalibrationReport {
    pub fn evaluate(preds: &PredictionSet, n_bins: usize) -> Result<Self> {
        let (ece_value, bins) = ece(preds, n_bins)?;
        let mce_value = mce(&bins)?;
        let fpr = fpr95(preds)?;
        Ok(Self {
            samples: preds.len(),
            classes: preds.classes(),
            n_bins,
            top1: top_k_accuracy(preds, 1),
            top5: top_k_accuracy(preds, 5),
            ece: ece_value,
            mce: mce_value,
            fpr95: fpr.value,
            fpr95_skipped_classes: fpr.skipped,
            mean_entropy: mean_entropy(&preds.probs),
            mutual_info: mutual_info_plugin(&preds.probs, &preds.labels)?,
            instance_variance: instance_variance(&preds.probs),
            bins,
        })
    }
}

pub fn predictions_to_delimited(preds: &PredictionSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{},{}", preds.len(), preds.classes());
    for (row, &label) in preds.probs.row_iter().zip(&preds.labels) {
        for p in row {
            let _ = write!(out, "{p:?},");
        }
        let _ = writeln!(out, "{label}");
    }
    out
}

pub fn write_predictions(preds: &PredictionSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, predictions_to_delimited(preds)).map_err(|e| Error::io(path, e))
}

pub fn parse_predictions(text: &str, path_label: &str) -> Result<PredictionSet> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path_label.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Header {
        path: path_label.to_string(),
        message: "file is empty".into(),
    })?;
    let parsed: Option<Vec<usize>> = header.split(',').map(|f| f.trim().parse().ok()).collect();
    let (n, classes) = match parsed.as_deref() {
        Some(&[n, c]) if c > 0 => (n, c),
        _ => {
            return Err(Error::Header {
                path: path_label.to_string(),
                message: format!("expected 'n,classes', found '{header}'"),
            })
        }
    };
    let mut data = Vec::with_capacity(n * classes);
    let mut labels = Vec::with_capacity(n);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != classes + 1 {
            return Err(parse_err(
                lineno,
                format!("expected {} fields, found {}", classes + 1, fields.len()),
            ));
        }
        for f in &fields[..classes] {
            data.push(
                f.parse::<f64>()
                    .map_err(|_| parse_err(lineno, format!("'{f}' is not a number")))?,
            );
        }
        let label: usize = fields[classes]
            .parse()
            .map_err(|_| parse_err(lineno, format!("'{}' is not a class label", fields[classes])))?;
        if label >= classes {
            return Err(Error::LabelRange {
                path: path_label.to_string(),
                line: lineno,
                label,
                classes,
            });
        }
        labels.push(label);
    }
    if labels.len() != n {
        return Err(Error::Header {
            path: path_label.to_string(),
            message: format!("header declares {n} rows, found {}", labels.len()),
        });
    }
    PredictionSet::new(Matrix::new(n, classes, data)?, labels)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds(rows: &[&[f64]], labels: &[usize]) -> PredictionSet {
        PredictionSet::new(Matrix::from_rows(rows).unwrap(), labels.to_vec()).unwrap()
    }

    #[test]
    fn perfect_calibration() {
        let p = preds(&[&[1.0, 0.0], &[0.0, 1.0]], &[0, 1]);
        let (e, bins) = ece(&p, DEFAULT_BINS).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(mce(&bins).unwrap(), 0.0);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 2);
        assert_eq!(bins[14].count, 2);
    }

    #[test]
    fn half_right_at_point_nine() {
        let p = preds(&[&[0.9, 0.1], &[0.9, 0.1]], &[0, 1]);
        let (e, bins) = ece(&p, DEFAULT_BINS).unwrap();
        assert!((e - 0.4).abs() < 1e-15);
        assert!((mce(&bins).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(bins.iter().filter(|b| b.count > 0).count(), 1);
    }

    #[test]
    fn ece_parameter_errors() {
        let p = preds(&[&[1.0, 0.0]], &[0]);
        assert!(matches!(ece(&p, 0), Err(Error::Parameter(_))));
        let empty = vec![BinStat {
            lower: 0.0,
            upper: 1.0,
            count: 0,
            mean_confidence: 0.0,
            accuracy: 0.0,
        }];
        assert!(matches!(mce(&empty), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn fpr95_separable_and_uninformative() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| if i % 2 == 0 { vec![0.9, 0.1] } else { vec![0.1, 0.9] })
            .collect();
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let p = PredictionSet::new(Matrix::from_rows(&rows).unwrap(), labels.clone()).unwrap();
        assert_eq!(fpr95(&p).unwrap().value, 0.0);

        let flat = Matrix::from_fn(20, 2, |_, _| 0.5);
        let p = PredictionSet::new(flat, labels).unwrap();
        assert_eq!(fpr95(&p).unwrap().value, 1.0);
    }

    #[test]
    fn fpr95_skips_absent_classes() {
        let p = preds(&[&[0.8, 0.1, 0.1], &[0.2, 0.7, 0.1]], &[0, 1]);
        let f = fpr95(&p).unwrap();
        assert_eq!(f.skipped, vec![2]);
        assert_eq!(f.per_class[2], None);
        let single = preds(&[&[0.8, 0.2], &[0.6, 0.4]], &[0, 0]);
        assert!(matches!(fpr95(&single), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn entropy_extremes() {
        let onehot = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(mean_entropy(&onehot), 0.0);
        let uniform = Matrix::from_fn(3, 4, |_, _| 0.25);
        assert!((mean_entropy(&uniform) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn mutual_info_closed_forms() {
        let same = Matrix::from_fn(6, 3, |_, j| [0.2, 0.3, 0.5][j]);
        let mi = mutual_info_plugin(&same, &[0, 1, 2, 0, 1, 2]).unwrap();
        assert!(mi.abs() < 1e-12);
        let onehot = Matrix::from_fn(8, 4, |i, j| if i % 4 == j { 1.0 } else { 0.0 });
        let mi = mutual_info_plugin(&onehot, &[0, 1, 2, 3, 0, 1, 2, 3]).unwrap();
        assert!((mi - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(
            mutual_info_plugin(&same, &[1; 6]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn prediction_rows_must_be_finite_distributions() {
        // non-finite probabilities never reach a PredictionSet
        assert!(Matrix::from_rows(&[[f64::NAN, 1.0]]).is_err());
        let short = Matrix::from_rows(&[[0.5, 0.4]]).unwrap();
        assert!(PredictionSet::new(short, vec![0]).is_err());
    }

    #[test]
    fn stability_score_cases() {
        let linear: Vec<f64> = (0..20).map(|i| 2.0 - 0.1 * i as f64).collect();
        assert_eq!(stability_score(&linear).unwrap(), f64::INFINITY);
        let alternating: Vec<f64> = (0..9).map(|i| (i % 2) as f64).collect();
        assert!((stability_score(&alternating).unwrap() - 1.0).abs() < 1e-15);
        assert!(stability_score(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn top_k_with_ties() {
        let p = preds(&[&[0.5, 0.5, 0.0], &[0.2, 0.3, 0.5]], &[1, 0]);
        assert_eq!(top_k_accuracy(&p, 1), 0.0);
        assert_eq!(top_k_accuracy(&p, 2), 0.5);
        assert_eq!(top_k_accuracy(&p, 3), 1.0);
    }

    #[test]
    fn prediction_set_validation() {
        assert!(PredictionSet::new(Matrix::from_rows(&[[0.5, 0.6]]).unwrap(), vec![0]).is_err());
        assert!(matches!(
            PredictionSet::new(Matrix::from_rows(&[[0.5, 0.5]]).unwrap(), vec![2]),
            Err(Error::Label { .. })
        ));
    }

    #[test]
    fn dump_parse_errors() {
        assert!(matches!(parse_predictions("2,2\n0.5,0.5,0\n", "p"), Err(Error::Header { .. })));
        assert!(matches!(parse_predictions("1,2\n0.5,0\n", "p"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            parse_predictions("1,2\n0.5,0.5,2\n", "p"),
            Err(Error::LabelRange { .. })
        ));
    }
}
