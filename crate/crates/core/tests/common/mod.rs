//! Helpers shared by the integration tests.
#![allow(dead_code)]

use perceptkd_core::{Matrix, PredictionSet, RngState};

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut RngState) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.normal())
}

/// `||a - b|| / max(||a||, ||b||)`, 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Random prediction set with at least two distinct labels; small integer
/// logits make tied scores and duplicated confidences common.
pub fn random_predictions(rng: &mut RngState) -> PredictionSet {
    let n = 2 + rng.below(199);
    let classes = 2 + rng.below(9);
    let logits = if rng.below(3) == 0 {
        Matrix::from_fn(n, classes, |_, _| rng.below(3) as f64)
    } else {
        let scale = [0.3, 1.0, 3.0, 10.0][rng.below(4)];
        random_matrix(n, classes, scale, rng)
    };
    let mut labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
    labels[0] = 0;
    labels[1] = 1;
    PredictionSet::from_logits(&logits, labels).unwrap()
}
