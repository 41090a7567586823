//! Production kernels and metrics against the independent reference code.

mod common;

use common::{random_matrix, random_predictions, rel_err};
use perceptkd_core::calibration::{ece, fpr95, mce, mean_entropy, mutual_info_plugin, DEFAULT_BINS};
use perceptkd_core::losses::{classic_kd_loss, luminet_loss};
use perceptkd_core::model::{init_params, predict};
use perceptkd_core::oracle::*;
use perceptkd_core::perception::{compute_class_stats, perceive};
use perceptkd_core::{GradMode, Matrix, MlpSpec, RngState};

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = RngState::new(1);
    for _ in 0..20 {
        let a = random_matrix(5, 7, 1.0, &mut rng);
        let b = random_matrix(7, 3, 1.0, &mut rng);
        let fast = a.matmul(&b).unwrap();
        assert_eq!(fast.shape(), (5, 3));
        assert!(rel_err(fast.as_slice(), naive_matmul(&a, &b).as_slice()) < 1e-12);
    }
}

#[test]
fn softmax_matches_direct_formula() {
    let z = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
    let fast = z.softmax_rows();
    let slow = naive_softmax(&z);
    for j in 0..3 {
        assert!((fast.get(0, j) - slow.get(0, j)).abs() < 1e-15);
    }
    let mut rng = RngState::new(2);
    for _ in 0..50 {
        let z = random_matrix(4, 6, 5.0, &mut rng);
        assert!(rel_err(z.softmax_rows().as_slice(), naive_softmax(&z).as_slice()) < 1e-13);
        let lse = z.log_softmax_rows();
        for row in lse.row_iter() {
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn column_stats_match_two_pass() {
    let mut rng = RngState::new(3);
    for _ in 0..20 {
        let m = random_matrix(8, 3, 2.0, &mut rng);
        let (means, vars) = m.column_mean_var().unwrap();
        let (om, ov) = naive_column_stats(&m);
        for j in 0..3 {
            assert!((means[j] - om[j]).abs() < 1e-12);
            assert!((vars[j] - ov[j]).abs() < 1e-12);
        }
    }
}

#[test]
fn argmax_matches_linear_scan() {
    let mut rng = RngState::new(4);
    for _ in 0..20 {
        // integer entries force frequent ties
        let m = Matrix::from_fn(10, 5, |_, _| rng.below(3) as f64);
        let fast = m.argmax_rows();
        for (i, row) in m.row_iter().enumerate() {
            assert_eq!(fast[i], naive_argmax(row));
        }
    }
}

#[test]
fn perceive_matches_direct_formula() {
    let z = Matrix::from_rows(&[[1.0, 3.0], [-1.0, 1.0]]).unwrap();
    let stats = compute_class_stats(&z, 1e-5).unwrap();
    assert_eq!(stats.means, vec![0.0, 2.0]);
    assert_eq!(stats.vars, vec![1.0, 1.0]);
    let h = perceive(&z, &stats).unwrap().h;
    let expect = [[1.0, 1.0], [-1.0, -1.0]];
    let oracle = naive_perceive(&z, 1e-5);
    for i in 0..2 {
        for j in 0..2 {
            assert!((h.get(i, j) - expect[i][j]).abs() < 5e-6);
            assert!((h.get(i, j) - oracle.get(i, j)).abs() < 1e-15);
        }
    }
    let mut rng = RngState::new(5);
    for _ in 0..20 {
        let z = random_matrix(16, 7, 3.0, &mut rng);
        let h = perceive(&z, &compute_class_stats(&z, 1e-5).unwrap()).unwrap().h;
        assert!(rel_err(h.as_slice(), naive_perceive(&z, 1e-5).as_slice()) < 1e-13);
    }
}

#[test]
fn mlp_forward_matches_straight_line_version() {
    let mut rng = RngState::new(6);
    for widths in [vec![3, 4, 3], vec![8, 16, 10], vec![8, 64, 32, 10], vec![5, 2]] {
        let spec = MlpSpec::new(widths).unwrap();
        let params = init_params(&spec, &mut rng);
        let x = random_matrix(9, spec.input_dim(), 1.0, &mut rng);
        let fast = predict(&params, &x).unwrap();
        let slow = naive_mlp_forward(&params, &x);
        assert!(rel_err(fast.as_slice(), slow.as_slice()) < 1e-12);
        // identical inputs give bit-identical logits
        assert_eq!(fast, predict(&params, &x).unwrap());
    }
}

#[test]
fn kd_value_matches_direct_kl() {
    let mut rng = RngState::new(7);
    for tau in [1.0, 2.0, 4.0] {
        for _ in 0..20 {
            let t = random_matrix(5, 6, 3.0, &mut rng);
            let s = random_matrix(5, 6, 3.0, &mut rng);
            let fast = classic_kd_loss(&t, &s, tau, false).unwrap().value;
            let slow = naive_softened_kl(&t, &s, tau);
            assert!((fast - slow).abs() < 1e-12 * slow.max(1.0), "{fast} vs {slow}");
        }
    }
}

#[test]
fn luminet_value_matches_direct_composition() {
    let mut rng = RngState::new(8);
    for _ in 0..20 {
        let t = random_matrix(12, 5, 4.0, &mut rng);
        let s = random_matrix(12, 5, 0.5, &mut rng);
        let fast = luminet_loss(&t, &s, 4.0, 1e-5, GradMode::StopGradient).unwrap().value;
        let slow = naive_softened_kl(&naive_perceive(&t, 1e-5), &naive_perceive(&s, 1e-5), 4.0);
        assert!((fast - slow).abs() < 1e-12 * slow.max(1.0));
    }
}

#[test]
fn naive_kl_is_non_negative() {
    let mut rng = RngState::new(9);
    for _ in 0..1000 {
        let c = 2 + rng.below(8);
        let p = naive_softmax_row(&(0..c).map(|_| 3.0 * rng.normal()).collect::<Vec<_>>());
        let q = naive_softmax_row(&(0..c).map(|_| 3.0 * rng.normal()).collect::<Vec<_>>());
        assert!(naive_kl(&p, &q) >= 0.0);
    }
}

#[test]
fn fd_matches_cross_entropy_gradient() {
    let mut rng = RngState::new(10);
    let z = random_matrix(4, 5, 1.0, &mut rng);
    let labels = vec![0, 3, 4, 1];
    let analytic = perceptkd_core::losses::cross_entropy(&z, &labels).unwrap().grad;
    let fd = fd_gradient(
        |v| naive_cross_entropy(&Matrix::new(4, 5, v.to_vec()).unwrap(), &labels),
        z.as_slice(),
        1e-5,
    )
    .unwrap();
    assert!(rel_err(analytic.as_slice(), &fd) < 1e-6);
}

#[test]
fn calibration_metrics_equal_exhaustive_oracle() {
    let mut rng = RngState::new(11);
    for _ in 0..150 {
        let preds = random_predictions(&mut rng);
        let (e, bins) = ece(&preds, DEFAULT_BINS).unwrap();
        let m = mce(&bins).unwrap();
        let oracle = naive_metrics(&preds, DEFAULT_BINS).unwrap();
        assert_eq!(e, oracle.ece);
        assert_eq!(m, oracle.mce);
        let got: Vec<(usize, f64, f64)> = bins.iter().map(|b| (b.count, b.mean_confidence, b.accuracy)).collect();
        assert_eq!(got, oracle.bins);
        let f = fpr95(&preds).unwrap();
        assert_eq!(f.value, oracle.fpr95);
        assert_eq!(f.per_class, oracle.fpr95_per_class);
        let probs = preds.probs();
        assert!((mean_entropy(probs) - naive_mean_entropy(probs)).abs() < 1e-12);
        if let Ok(mi) = mutual_info_plugin(probs, preds.labels()) {
            assert!((mi - naive_mutual_info(probs, preds.labels())).abs() < 1e-12);
        }
    }
}

#[test]
fn oracle_mirrors_single_label_errors() {
    let preds = perceptkd_core::PredictionSet::from_logits(
        &Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.5]]).unwrap(),
        vec![0, 0],
    )
    .unwrap();
    assert!(fpr95(&preds).is_err());
    assert!(naive_metrics(&preds, DEFAULT_BINS).is_err());
    assert!(mutual_info_plugin(preds.probs(), preds.labels()).is_err());
}
