//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1-7 and 10 are hard requirements and fail the target. Criteria 8
//! and 9 are directional experiment outcomes: their verdict is printed as
//! measured, and what is enforced is that the experiment artifacts are
//! complete and consistent enough to audit the verdict.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use perceptkd_cli::manifest::RunManifest;
use perceptkd_cli::report::{grad_variance_check, ordering_checks, ComparisonReport, DirectionalCheck};
use perceptkd_cli::{run, EXIT_OK};
use perceptkd_core::calibration::{ece, fpr95, mce, mean_entropy, mutual_info_plugin, DEFAULT_BINS};
use perceptkd_core::data::generate_mixture;
use perceptkd_core::losses::{classic_kd_loss, cross_entropy, luminet_loss, perception_kl, total_loss, PerceptionKlOptions};
use perceptkd_core::model::{backward, forward, init_params, predict};
use perceptkd_core::oracle::{fd_gradient, naive_mean_entropy, naive_metrics, naive_mutual_info};
use perceptkd_core::perception::{compute_class_stats, perceive, ClassStats};
use perceptkd_core::trainer::read_records;
use perceptkd_core::{DistillMode, GradMode, Matrix, MixtureSpec, MlpParams, MlpSpec, PredictionSet, RngState};

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut RngState) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.normal())
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn as_matrix(like: &Matrix, v: &[f64]) -> Matrix {
    Matrix::new(like.rows(), like.cols(), v.to_vec()).unwrap()
}

fn perception_invariants() -> Verdict {
    let mut rng = RngState::new(1);
    let eps = 1e-5;
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let b = [8, 64, 256][i % 3];
        let c = [5, 10, 50][(i / 3) % 3];
        let scales: Vec<f64> = (0..c).map(|_| 10f64.powf(4.0 * rng.uniform() - 2.0)).collect();
        let offsets: Vec<f64> = (0..c).map(|_| 200.0 * rng.uniform() - 100.0).collect();
        let z = Matrix::from_fn(b, c, |_, j| offsets[j] + scales[j] * rng.normal());
        let stats = compute_class_stats(&z, eps).map_err(|e| e.to_string())?;
        let h = perceive(&z, &stats).map_err(|e| e.to_string())?.h;
        let (means, vars) = h.column_mean_var().map_err(|e| e.to_string())?;
        for j in 0..c {
            worst_mean = worst_mean.max(means[j].abs());
            let expected = stats.vars[j] / (stats.vars[j] + eps);
            worst_var = worst_var.max((vars[j] - expected).abs());
        }
    }
    ensure(worst_mean < 1e-9 && worst_var < 1e-6, || {
        format!("max |mean| {worst_mean:.2e}, max variance gap {worst_var:.2e}")
    })?;
    Ok(format!("100 batches; max |mean| {worst_mean:.2e}, max variance gap {worst_var:.2e}"))
}

fn affine_invariance() -> Verdict {
    let mut rng = RngState::new(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (b, c) = (32, 10);
        let t = random_matrix(b, c, 3.0, &mut rng);
        let s = random_matrix(b, c, 1.0, &mut rng);
        let a: Vec<f64> = (0..c).map(|_| 10f64.powf(2.0 * rng.uniform() - 1.0)).collect();
        let shift: Vec<f64> = (0..c).map(|_| 10.0 * rng.uniform() - 5.0).collect();
        let moved = Matrix::from_fn(b, c, |i, j| a[j] * t.get(i, j) + shift[j]);
        let base = luminet_loss(&t, &s, 4.0, 1e-12, GradMode::StopGradient).map_err(|e| e.to_string())?;
        let after = luminet_loss(&moved, &s, 4.0, 1e-12, GradMode::StopGradient).map_err(|e| e.to_string())?;
        worst = worst.max((base.value - after.value).abs());
    }
    ensure(worst < 1e-8, || format!("max loss change {worst:.2e}"))?;
    Ok(format!("20 instances; max loss change {worst:.2e}"))
}

struct Objective<'a> {
    mode: DistillMode,
    grad_mode: GradMode,
    teacher_logits: &'a Matrix,
    labels: &'a [usize],
}

impl Objective<'_> {
    /// Loss and logit gradient; `frozen` pins the student statistics, which
    /// is the function whose gradient stop-gradient mode computes.
    fn evaluate(&self, logits: &Matrix, frozen: Option<&ClassStats>) -> perceptkd_core::LossValue {
        let ce = cross_entropy(logits, self.labels).unwrap();
        let distill = match self.mode {
            DistillMode::None => return ce,
            DistillMode::ClassicKd => classic_kd_loss(self.teacher_logits, logits, 4.0, false).unwrap(),
            DistillMode::Luminet => {
                let ts = compute_class_stats(self.teacher_logits, 1e-5).unwrap();
                let own = compute_class_stats(logits, 1e-5).unwrap();
                let opts = PerceptionKlOptions {
                    tau: 4.0,
                    grad_mode: self.grad_mode,
                    tau_squared_scaling: false,
                };
                perception_kl(self.teacher_logits, &ts, logits, frozen.unwrap_or(&own), opts).unwrap()
            }
        };
        total_loss(&ce, &distill, 2.0).unwrap()
    }
}

fn smooth_instance(spec: &MlpSpec, batch: usize, rng: &mut RngState) -> (MlpParams, Matrix) {
    loop {
        let params = init_params(spec, rng);
        let x = random_matrix(batch, spec.input_dim(), 1.0, rng);
        let (_, trace) = forward(&params, &x).unwrap();
        let hidden = &trace.pre_activations()[..trace.layer_count() - 1];
        let margin = hidden
            .iter()
            .flat_map(|m| m.as_slice().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min);
        if margin > 1e-3 {
            return (params, x);
        }
    }
}

fn gradient_correctness() -> Verdict {
    const STEP: f64 = 1e-5;
    let mut rng = RngState::new(3);
    let mut worst_loss = 0.0f64;
    let labels_for = |n: usize, c: usize, rng: &mut RngState| (0..n).map(|_| rng.below(c)).collect::<Vec<_>>();
    for _ in 0..20 {
        let t = random_matrix(8, 5, 3.0, &mut rng);
        let s = random_matrix(8, 5, 1.0, &mut rng);
        let y = labels_for(8, 5, &mut rng);
        let ce = cross_entropy(&s, &y).unwrap().grad;
        let fd = fd_gradient(|v| cross_entropy(&as_matrix(&s, v), &y).unwrap().value, s.as_slice(), STEP).unwrap();
        worst_loss = worst_loss.max(rel_err(ce.as_slice(), &fd));

        let kd = classic_kd_loss(&t, &s, 4.0, false).unwrap().grad;
        let fd = fd_gradient(
            |v| classic_kd_loss(&t, &as_matrix(&s, v), 4.0, false).unwrap().value,
            s.as_slice(),
            STEP,
        )
        .unwrap();
        worst_loss = worst_loss.max(rel_err(kd.as_slice(), &fd));

        let full = luminet_loss(&t, &s, 4.0, 1e-5, GradMode::Full).unwrap().grad;
        let fd = fd_gradient(
            |v| luminet_loss(&t, &as_matrix(&s, v), 4.0, 1e-5, GradMode::Full).unwrap().value,
            s.as_slice(),
            STEP,
        )
        .unwrap();
        worst_loss = worst_loss.max(rel_err(full.as_slice(), &fd));

        let stop = luminet_loss(&t, &s, 4.0, 1e-5, GradMode::StopGradient).unwrap().grad;
        let ts = compute_class_stats(&t, 1e-5).unwrap();
        let frozen = compute_class_stats(&s, 1e-5).unwrap();
        let opts = PerceptionKlOptions {
            tau: 4.0,
            grad_mode: GradMode::StopGradient,
            tau_squared_scaling: false,
        };
        let fd = fd_gradient(
            |v| perception_kl(&t, &ts, &as_matrix(&s, v), &frozen, opts).unwrap().value,
            s.as_slice(),
            STEP,
        )
        .unwrap();
        worst_loss = worst_loss.max(rel_err(stop.as_slice(), &fd));
    }

    let student = MlpSpec::new(vec![8, 16, 10]).unwrap();
    let teacher = MlpSpec::new(vec![8, 32, 10]).unwrap();
    let mut worst_model = 0.0f64;
    let modes = [
        (DistillMode::None, GradMode::StopGradient),
        (DistillMode::ClassicKd, GradMode::StopGradient),
        (DistillMode::Luminet, GradMode::StopGradient),
        (DistillMode::Luminet, GradMode::Full),
    ];
    for (mode, grad_mode) in modes {
        for _ in 0..20 {
            let (params, x) = smooth_instance(&student, 16, &mut rng);
            let teacher_logits = predict(&init_params(&teacher, &mut rng), &x).unwrap();
            let labels = labels_for(16, 10, &mut rng);
            let objective = Objective {
                mode,
                grad_mode,
                teacher_logits: &teacher_logits,
                labels: &labels,
            };
            let (logits, trace) = forward(&params, &x).unwrap();
            let stats = compute_class_stats(&logits, 1e-5).unwrap();
            let frozen = (mode == DistillMode::Luminet && grad_mode == GradMode::StopGradient).then_some(&stats);
            let analytic = backward(&params, &trace, &objective.evaluate(&logits, frozen).grad)
                .unwrap()
                .flatten();
            let fd = fd_gradient(
                |v| {
                    let p = MlpParams::from_flat(&student, v).unwrap();
                    objective.evaluate(&predict(&p, &x).unwrap(), frozen).value
                },
                &params.flatten(),
                STEP,
            )
            .unwrap();
            worst_model = worst_model.max(rel_err(&analytic, &fd));
        }
    }
    ensure(worst_loss < 1e-5 && worst_model < 1e-4, || {
        format!("loss-only {worst_loss:.2e}, model {worst_model:.2e}")
    })?;
    Ok(format!(
        "20 instances per check; worst relative error loss-only {worst_loss:.2e}, full model {worst_model:.2e}"
    ))
}

fn random_predictions(rng: &mut RngState) -> PredictionSet {
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

fn metric_oracle_equality() -> Verdict {
    let mut rng = RngState::new(4);
    let mut worst_info = 0.0f64;
    for k in 0..100 {
        let preds = random_predictions(&mut rng);
        let oracle = naive_metrics(&preds, DEFAULT_BINS).map_err(|e| e.to_string())?;
        let (e, bins) = ece(&preds, DEFAULT_BINS).map_err(|e| e.to_string())?;
        let m = mce(&bins).map_err(|e| e.to_string())?;
        let f = fpr95(&preds).map_err(|e| e.to_string())?;
        let got: Vec<(usize, f64, f64)> = bins.iter().map(|b| (b.count, b.mean_confidence, b.accuracy)).collect();
        ensure(e == oracle.ece && m == oracle.mce, || format!("set {k}: ECE/MCE differ"))?;
        ensure(got == oracle.bins, || format!("set {k}: bins differ"))?;
        ensure(f.value == oracle.fpr95 && f.per_class == oracle.fpr95_per_class, || {
            format!("set {k}: FPR95 {} vs {}", f.value, oracle.fpr95)
        })?;
        let probs = preds.probs();
        worst_info = worst_info.max((mean_entropy(probs) - naive_mean_entropy(probs)).abs());
        let mi = mutual_info_plugin(probs, preds.labels()).map_err(|e| e.to_string())?;
        worst_info = worst_info.max((mi - naive_mutual_info(probs, preds.labels())).abs());
    }
    ensure(worst_info < 1e-12, || format!("entropy/MI gap {worst_info:.2e}"))?;
    Ok(format!("100 sets; ECE, MCE, bins, FPR95 exact; entropy/MI gap {worst_info:.2e}"))
}

fn entropy_direction() -> Verdict {
    let mut rng = RngState::new(5);
    let (b, c, tau) = (32, 10, 4.0);
    let t = Matrix::from_fn(b, c, |i, j| if j == i % c { 8.0 } else { 0.0 } + 0.1 * rng.normal());
    let raw = mean_entropy(&t.scale(1.0 / tau).softmax_rows());
    let h = perceive(&t, &compute_class_stats(&t, 1e-5).unwrap()).unwrap().h;
    let perceived = mean_entropy(&h.scale(1.0 / tau).softmax_rows());
    ensure(perceived > raw, || format!("perception {perceived:.4} <= raw {raw:.4}"))?;
    Ok(format!("mean entropy at tau=4: perception {perceived:.4} > raw {raw:.4}"))
}

fn preconditioning_identity() -> Verdict {
    let mut rng = RngState::new(6);
    let (b, c, eps) = (64, 10, 1e-5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        // per-class standard deviations spread so variances span a factor of 100
        let std = |j: usize| 10f64.powf(j as f64 / (c - 1) as f64);
        let t = Matrix::from_fn(b, c, |_, j| 3.0 * std(j) * rng.normal());
        let s = Matrix::from_fn(b, c, |_, j| std(j) * rng.normal() + 0.5);
        let lumi = luminet_loss(&t, &s, 4.0, eps, GradMode::StopGradient).unwrap().grad;
        let ts = compute_class_stats(&t, eps).unwrap();
        let ss = compute_class_stats(&s, eps).unwrap();
        let kd = classic_kd_loss(&perceive(&t, &ts).unwrap().h, &perceive(&s, &ss).unwrap().h, 4.0, false)
            .unwrap()
            .grad;
        let sigma = ss.std_devs();
        for i in 0..b {
            for j in 0..c {
                let expected = kd.get(i, j) / sigma[j];
                let gap = (lumi.get(i, j) - expected).abs() / expected.abs().max(1e-300);
                worst = worst.max(gap);
            }
        }
    }
    ensure(worst <= 1e-9, || format!("max relative gap {worst:.2e}"))?;
    Ok(format!("20 batches with variance ratio 100; max relative gap {worst:.2e}"))
}

fn batch_size_robustness() -> Verdict {
    let data = generate_mixture(&MixtureSpec {
        kappa: 10.0,
        seed: 8,
        ..MixtureSpec::default()
    })
    .unwrap();
    let mut rng = RngState::new(7);
    let teacher = init_params(&MlpSpec::new(vec![16, 64, 10]).unwrap(), &mut rng);
    let student = init_params(&MlpSpec::new(vec![16, 16, 10]).unwrap(), &mut rng);
    let t_all = predict(&teacher, &data.features).unwrap();
    let s_all = predict(&student, &data.features).unwrap();
    let mut pool: Vec<usize> = (0..data.len()).collect();
    let mut sample = |m: usize, batches: usize| -> Vec<f64> {
        (0..batches)
            .map(|_| {
                rng.shuffle(&mut pool);
                let idx = &pool[..m];
                luminet_loss(&t_all.select_rows(idx), &s_all.select_rows(idx), 4.0, 1e-5, GradMode::StopGradient)
                    .unwrap()
                    .value
            })
            .collect()
    };
    let small = sample(64, 400);
    let large = sample(256, 400);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m64, m256) = (mean(&small), mean(&large));
    let std64 = (small.iter().map(|v| (v - m64).powi(2)).sum::<f64>() / (small.len() - 1) as f64).sqrt();
    let bound = 5.0 * std64 / 64f64.sqrt();
    let gap = (m64 - m256).abs();
    ensure(gap < bound, || format!("|{m64:.5} - {m256:.5}| = {gap:.2e} >= {bound:.2e}"))?;
    Ok(format!("400 batches each; mean KL m=64 {m64:.5}, m=256 {m256:.5}, gap {gap:.2e} < {bound:.2e}"))
}

fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["perceptkd"];
    full.extend_from_slice(args);
    run(full)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_comparison(path: &Path) -> ComparisonReport {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const MODES: [&str; 3] = ["none", "kd", "luminet"];

/// Every run and evaluation of one task left complete artifacts, and the
/// stored summary agrees with a recomputation from the comparison.
fn audit_task(task: &Path, stored: &[DirectionalCheck]) -> Result<(), String> {
    let epochs = 120;
    let mut dirs = vec![task.join("teacher")];
    for mode in MODES {
        for seed in SEEDS {
            dirs.push(task.join("runs").join(format!("{mode}-s{seed}")));
        }
    }
    for dir in &dirs {
        let m = RunManifest::read(&dir.join("manifest.json")).map_err(|e| e.to_string())?;
        ensure(!m.artifacts.is_empty() && m.config.contains_key("seed"), || {
            format!("{}: incomplete manifest", dir.display())
        })?;
        let records = read_records(dir.join("records.jsonl")).map_err(|e| e.to_string())?;
        ensure(records.len() == epochs, || format!("{}: {} records", dir.display(), records.len()))?;
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let eval = task.join("eval").join(&name);
        ensure(eval.join("report.json").exists() && eval.join("manifest.json").exists(), || {
            format!("{}: missing evaluation", eval.display())
        })?;
    }
    let comparison = read_comparison(&task.join("report/comparison.json"));
    ensure(comparison.runs.len() == 1 + MODES.len() * SEEDS.len(), || {
        format!("comparison has {} runs", comparison.runs.len())
    })?;
    let mut recomputed = ordering_checks(&comparison, 0.005);
    recomputed.push(grad_variance_check(&comparison, 4));
    ensure(recomputed == stored, || format!("{}: summary disagrees with comparison", task.display()))
}

struct DeskScale {
    ordering: Vec<DirectionalCheck>,
    grad_variance: DirectionalCheck,
    audit: Result<(), String>,
    secs: f64,
}

fn desk_scale(out: &Path) -> Result<DeskScale, String> {
    let start = Instant::now();
    let code = cli(&["repro", "--out", p(out)]);
    let secs = start.elapsed().as_secs_f64();
    ensure(code == EXIT_OK, || format!("repro exited with {code}"))?;
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let checks = |task: &str| -> Vec<DirectionalCheck> {
        serde_json::from_value(summary["tasks"][task].clone()).unwrap_or_default()
    };
    let k10 = checks("kappa-10");
    let k100 = checks("kappa-100");
    let audit = ensure(out.join("manifest.json").exists(), || "missing top-level manifest".into())
        .and_then(|_| audit_task(&out.join("kappa-10"), &k10))
        .and_then(|_| audit_task(&out.join("kappa-100"), &k100));
    let ordering = k10.iter().filter(|c| !c.name.contains("grad variance")).cloned().collect();
    let grad_variance = k100
        .iter()
        .find(|c| c.name.contains("grad variance"))
        .cloned()
        .ok_or("kappa-100 summary has no gradient-variance check")?;
    Ok(DeskScale {
        ordering,
        grad_variance,
        audit,
        secs,
    })
}

/// Unscored: the same kappa=100 LumiNet students with the exact batch-norm
/// backward, compared with the stop-gradient classic KD runs.
fn full_mode_diagnostic(out: &Path) -> Result<String, String> {
    let task = out.join("kappa-100");
    let diag = out.join("diagnostic-full-grad");
    let mut evals: Vec<PathBuf> = SEEDS.iter().map(|s| task.join("eval").join(format!("kd-s{s}"))).collect();
    for seed in SEEDS {
        let seed = seed.to_string();
        let run_dir = diag.join(format!("luminet-full-s{seed}"));
        let eval_dir = diag.join(format!("eval-luminet-full-s{seed}"));
        let code = cli(&[
            "distill", "--data", p(&task.join("data.csv")), "--teacher", p(&task.join("teacher")), "--split-seed", "7",
            "--mode", "luminet", "--grad-mode", "full", "--seed", &seed, "--out", p(&run_dir),
        ]);
        ensure(code == EXIT_OK, || format!("diagnostic distill exited with {code}"))?;
        ensure(cli(&["evaluate", "--run", p(&run_dir), "--out", p(&eval_dir)]) == EXIT_OK, || {
            "diagnostic evaluate failed".into()
        })?;
        evals.push(eval_dir);
    }
    let report_dir = diag.join("report");
    let mut args = vec!["report"];
    args.extend(evals.iter().map(|e| p(e)));
    args.extend(["--out", p(&report_dir)]);
    ensure(cli(&args) == EXIT_OK, || "diagnostic report failed".into())?;
    let c = grad_variance_check(&read_comparison(&report_dir.join("comparison.json")), 4);
    let acc = read_comparison(&report_dir.join("comparison.json"))
        .aggregate("luminet")
        .map(|a| a.accuracy.mean)
        .unwrap_or(f64::NAN);
    Ok(format!(
        "{} with grad_mode=full: {} (luminet accuracy {acc:.4})",
        if c.passed { "would pass" } else { "would fail" },
        c.detail
    ))
}

fn determinism(desk_run: Option<&Path>) -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let data = root.join("d.csv");
    let steps: Vec<Vec<String>> = vec![
        vec!["gen-data", "--classes", "5", "--dims", "6", "--per-class", "80", "--kappa", "10", "--seed", "2", "--out", p(&data)],
        vec!["train-teacher", "--data", p(&data), "--epochs", "8", "--hidden", "32,16", "--out", p(&root.join("t"))],
        vec![
            "distill", "--data", p(&data), "--teacher", p(&root.join("t")), "--epochs", "8", "--mode", "luminet", "--out",
            p(&root.join("s")),
        ],
        vec!["evaluate", "--run", p(&root.join("s")), "--out", p(&root.join("e"))],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for step in &steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        ensure(cli(&args) == EXIT_OK, || format!("{} failed", step[0]))?;
    }
    let mut manifests = vec![
        root.join("d.csv.manifest.json"),
        root.join("t/manifest.json"),
        root.join("s/manifest.json"),
        root.join("e/manifest.json"),
    ];
    if let Some(run_dir) = desk_run {
        manifests.push(run_dir.join("manifest.json"));
    }
    for (i, m) in manifests.iter().enumerate() {
        let target = root.join(format!("replay-{i}"));
        let target = if i == 0 { root.join("replay-0.csv") } else { target };
        ensure(cli(&["replay", "--manifest", p(m), "--out", p(&target)]) == EXIT_OK, || {
            format!("replay of {} differed", m.display())
        })?;
    }
    let a = std::fs::read(root.join("s/records.jsonl")).map_err(|e| e.to_string())?;
    let b = std::fs::read(root.join("replay-2/records.jsonl")).map_err(|e| e.to_string())?;
    ensure(a == b, || "records differ".into())?;
    Ok(format!("{} manifests replayed to byte-identical outputs", manifests.len()))
}

struct Line {
    id: &'static str,
    name: &'static str,
    passed: bool,
    scored: bool,
    secs: f64,
    detail: String,
}

fn timed(id: &'static str, name: &'static str, budget_secs: f64, f: fn() -> Verdict) -> Line {
    let start = Instant::now();
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
    let secs = start.elapsed().as_secs_f64();
    let (passed, mut detail) = match verdict {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    let within = secs < budget_secs;
    if !within {
        detail.push_str(&format!("; over the {budget_secs} s budget"));
    }
    Line {
        id,
        name,
        passed: passed && within,
        scored: true,
        secs,
        detail,
    }
}

fn main() {
    // `cargo test -- --list` and filters from other targets must not start the suite
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut lines = vec![
        timed("1", "perception invariants", 5.0, perception_invariants),
        timed("2", "affine invariance", 2.0, affine_invariance),
        timed("3", "gradient correctness", 60.0, gradient_correctness),
        timed("4", "metric oracle equality", 30.0, metric_oracle_equality),
        timed("5", "entropy direction", 1.0, entropy_direction),
        timed("6", "preconditioning identity", 1.0, preconditioning_identity),
        timed("7", "batch-size robustness", 30.0, batch_size_robustness),
    ];

    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-desk-scale");
    if out.exists() {
        std::fs::remove_dir_all(&out).expect("clear previous acceptance output");
    }
    let desk = catch_unwind(AssertUnwindSafe(|| desk_scale(&out))).unwrap_or_else(|_| Err("panicked".into()));
    let mut desk_run = None;
    match &desk {
        Ok(d) => {
            let failed: Vec<String> = d
                .ordering
                .iter()
                .filter(|c| !c.passed)
                .map(|c| format!("{} ({})", c.name, c.detail))
                .collect();
            let all: Vec<String> = d.ordering.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect();
            lines.push(Line {
                id: "8",
                name: "desk-scale ordering (directional)",
                passed: failed.is_empty() && !d.ordering.is_empty() && d.secs < 900.0,
                scored: false,
                secs: d.secs,
                detail: if failed.is_empty() { all.join("; ") } else { format!("failed: {}", failed.join("; ")) },
            });
            lines.push(Line {
                id: "9",
                name: "gradient variance, kappa=100 (directional)",
                passed: d.grad_variance.passed,
                scored: false,
                secs: 0.0,
                detail: d.grad_variance.detail.clone(),
            });
            lines.push(Line {
                id: "8/9",
                name: "artifacts auditable",
                passed: d.audit.is_ok() && d.secs < 900.0,
                scored: true,
                secs: d.secs,
                detail: match &d.audit {
                    Ok(()) => format!("manifests, records, evaluations and summaries consistent under {}", out.display()),
                    Err(e) => e.clone(),
                },
            });
            desk_run = Some(out.join("kappa-10/runs/luminet-s1"));
        }
        Err(e) => lines.push(Line {
            id: "8/9",
            name: "desk-scale suite",
            passed: false,
            scored: true,
            secs: 0.0,
            detail: e.clone(),
        }),
    }

    let start = Instant::now();
    let det = catch_unwind(AssertUnwindSafe(|| determinism(desk_run.as_deref())))
        .unwrap_or_else(|_| Err("panicked".into()));
    let secs = start.elapsed().as_secs_f64();
    let (passed, detail) = match det {
        Ok(d) => (secs < 120.0, d),
        Err(d) => (false, d),
    };
    lines.push(Line {
        id: "10",
        name: "determinism",
        passed,
        scored: true,
        secs,
        detail,
    });

    println!("\nacceptance criteria");
    for l in &lines {
        let verdict = if l.passed { "PASS" } else { "FAIL" };
        let tag = if l.scored { "" } else { " [reported, not enforced]" };
        println!("criterion {:<4} {verdict}  {} ({:.2} s){tag}: {}", l.id, l.name, l.secs, l.detail);
    }
    if desk.is_ok() {
        let diag = catch_unwind(AssertUnwindSafe(|| full_mode_diagnostic(&out)))
            .unwrap_or_else(|_| Err("panicked".into()));
        match diag {
            Ok(d) => println!("diagnostic (unscored) criterion 9 {d}"),
            Err(e) => println!("diagnostic (unscored) criterion 9 could not run: {e}"),
        }
    }
    let failed = lines.iter().filter(|l| l.scored && !l.passed).count();
    if failed > 0 {
        eprintln!("{failed} enforced criteria failed");
        std::process::exit(1);
    }
}
