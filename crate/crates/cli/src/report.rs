//! Evaluation reports, cross-run comparison tables and the directional
//! checks run over them.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use perceptkd_core::CalibrationReport;

use crate::error::{CliError, CliResult};

/// A score that may be `+inf` (a loss curve without oscillation). JSON has
/// no infinity, so non-finite values are written as strings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score(pub f64);

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else if self.0.is_nan() {
            s.serialize_str("nan")
        } else if self.0 > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Score(v)),
            Raw::Text(t) => match t.as_str() {
                "inf" => Ok(Score(f64::INFINITY)),
                "-inf" => Ok(Score(f64::NEG_INFINITY)),
                "nan" => Ok(Score(f64::NAN)),
                other => Err(serde::de::Error::custom(format!("invalid score '{other}'"))),
            },
        }
    }
}

impl std::fmt::Display for Score {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_finite() {
            write!(f, "{:.6}", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Method label used in reports for a distillation mode name.
pub fn method_label(mode: &str) -> &'static str {
    match mode {
        "none" => "student-alone",
        "kd" => "classic_kd",
        "luminet" => "luminet",
        "teacher" => "teacher",
        _ => "external",
    }
}

fn method_rank(method: &str) -> usize {
    ["teacher", "student-alone", "classic_kd", "luminet", "external"]
        .iter()
        .position(|m| *m == method)
        .unwrap_or(5)
}

/// Everything `evaluate` learns about one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub seed: Option<u64>,
    pub split_part: String,
    /// Digest of the evaluated examples, used to refuse mixed comparisons.
    pub split_sha256: String,
    pub teacher_sha256: Option<String>,
    pub checkpoint_sha256: Option<String>,
    pub epochs: usize,
    /// Mean over epochs of the per-parameter gradient variance.
    pub grad_variance: Option<f64>,
    /// `None` when fewer than three epochs were recorded.
    pub stability_score: Option<Score>,
    pub calibration: CalibrationReport,
}

impl EvaluationReport {
    pub fn render(&self) -> String {
        let c = &self.calibration;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        let mut rows: Vec<(&str, String)> = vec![
            ("method", self.method.clone()),
            ("seed", opt(self.seed.map(|s| s.to_string()))),
            ("split", self.split_part.clone()),
            ("samples", c.samples.to_string()),
            ("classes", c.classes.to_string()),
            ("bins", c.n_bins.to_string()),
            ("top1", format!("{:.6}", c.top1)),
            ("top5", format!("{:.6}", c.top5)),
            ("ece", format!("{:.6}", c.ece)),
            ("mce", format!("{:.6}", c.mce)),
            ("fpr95", format!("{:.6}", c.fpr95)),
            ("mean_entropy", format!("{:.6}", c.mean_entropy)),
            ("mutual_info", format!("{:.6}", c.mutual_info)),
            ("instance_variance", format!("{:.6e}", c.instance_variance)),
            ("grad_variance", opt(self.grad_variance.map(|g| format!("{g:.6e}")))),
            ("stability_score", opt(self.stability_score.map(|s| s.to_string()))),
        ];
        if !c.fpr95_skipped_classes.is_empty() {
            rows.push(("fpr95_skipped", format!("{:?}", c.fpr95_skipped_classes)));
        }
        let mut out: String = rows.iter().map(|(k, v)| format!("{k:<18} {v}\n")).collect();
        out.push_str("\nbin  lower     upper     count  confidence  accuracy\n");
        for (i, b) in c.bins.iter().enumerate() {
            out.push_str(&format!(
                "{i:<4} {:<9.6} {:<9.6} {:<6} {:<11.6} {:.6}\n",
                b.lower, b.upper, b.count, b.mean_confidence, b.accuracy
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: String,
    pub seed: Option<u64>,
    pub accuracy: f64,
    pub ece: f64,
    pub mce: f64,
    pub fpr95: f64,
    pub mean_entropy: f64,
    pub mutual_info: f64,
    pub grad_variance: Option<f64>,
    pub stability_score: Option<Score>,
    #[serde(skip)]
    checkpoint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation across runs.
    pub std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub runs: usize,
    pub accuracy: MeanStd,
    pub ece: MeanStd,
    pub mce: MeanStd,
    pub fpr95: MeanStd,
    pub mean_entropy: MeanStd,
    pub mutual_info: MeanStd,
    pub grad_variance: Option<MeanStd>,
    /// Over finite scores only; see `stability_unbounded`.
    pub stability_score: Option<MeanStd>,
    pub stability_unbounded: usize,
}

/// LumiNet against classic KD gradient variance, paired by seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradVarianceRatio {
    pub numerator: String,
    pub denominator: String,
    /// `nan` when both variances are zero (one batch per epoch).
    pub ratio_of_means: Score,
    pub seeds_matched: usize,
    /// Seeds where the numerator's variance is strictly lower.
    pub seeds_lower: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub split_sha256: String,
    pub teacher_sha256: Option<String>,
    pub runs: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
    pub grad_variance_ratio: Option<GradVarianceRatio>,
}

impl ComparisonReport {
    /// Aggregates evaluations; the result does not depend on input order.
    pub fn build(evaluations: &[EvaluationReport]) -> CliResult<Self> {
        let first = evaluations
            .first()
            .ok_or_else(|| CliError::Usage("report needs at least one evaluation".into()))?;
        for e in evaluations {
            if e.split_sha256 != first.split_sha256 {
                return Err(CliError::Consistency(format!(
                    "evaluations use different test splits ({} on {} vs {} on {})",
                    e.method, e.split_sha256, first.method, first.split_sha256
                )));
            }
        }
        let mut teachers: Vec<&str> = evaluations.iter().filter_map(|e| e.teacher_sha256.as_deref()).collect();
        teachers.sort_unstable();
        teachers.dedup();
        if teachers.len() > 1 {
            return Err(CliError::Consistency(format!(
                "evaluations use different teacher checkpoints: {}",
                teachers.join(", ")
            )));
        }

        let mut runs: Vec<RunRow> = evaluations
            .iter()
            .map(|e| RunRow {
                method: e.method.clone(),
                seed: e.seed,
                accuracy: e.calibration.top1,
                ece: e.calibration.ece,
                mce: e.calibration.mce,
                fpr95: e.calibration.fpr95,
                mean_entropy: e.calibration.mean_entropy,
                mutual_info: e.calibration.mutual_info,
                grad_variance: e.grad_variance,
                stability_score: e.stability_score,
                checkpoint: e.checkpoint_sha256.clone(),
            })
            .collect();
        runs.sort_by(|a, b| {
            (method_rank(&a.method), &a.method, a.seed, &a.checkpoint).cmp(&(
                method_rank(&b.method),
                &b.method,
                b.seed,
                &b.checkpoint,
            ))
        });

        let mut aggregates = Vec::new();
        for group in runs.chunk_by(|a, b| a.method == b.method) {
            let col = |f: fn(&RunRow) -> f64| MeanStd::of(&group.iter().map(f).collect::<Vec<_>>()).expect("non-empty");
            let gv: Vec<f64> = group.iter().filter_map(|r| r.grad_variance).collect();
            let stab: Vec<f64> = group.iter().filter_map(|r| r.stability_score.map(|s| s.0)).collect();
            let finite: Vec<f64> = stab.iter().copied().filter(|s| s.is_finite()).collect();
            aggregates.push(AggregateRow {
                method: group[0].method.clone(),
                runs: group.len(),
                accuracy: col(|r| r.accuracy),
                ece: col(|r| r.ece),
                mce: col(|r| r.mce),
                fpr95: col(|r| r.fpr95),
                mean_entropy: col(|r| r.mean_entropy),
                mutual_info: col(|r| r.mutual_info),
                grad_variance: (gv.len() == group.len()).then(|| MeanStd::of(&gv)).flatten(),
                stability_score: MeanStd::of(&finite),
                stability_unbounded: stab.len() - finite.len(),
            });
        }

        let grad_variance_ratio = grad_variance_ratio(&runs, &aggregates, "luminet", "classic_kd");
        Ok(Self {
            split_sha256: first.split_sha256.clone(),
            teacher_sha256: teachers.first().map(|s| s.to_string()),
            runs,
            aggregates,
            grad_variance_ratio,
        })
    }

    pub fn aggregate(&self, method: &str) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.method == method)
    }

    /// Aligned-column rendering for humans.
    pub fn render(&self) -> String {
        let opt = |v: Option<f64>| v.map(|g| format!("{g:.4e}")).unwrap_or_else(|| "-".into());
        let stab = |v: Option<Score>| v.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
        let header = format!(
            "{:<14} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>11} {:>11}\n",
            "method", "seed", "acc", "ece", "mce", "fpr95", "entropy", "mi", "grad_var", "stability"
        );
        let mut out = format!("test split sha256: {}\n", self.split_sha256);
        if let Some(t) = &self.teacher_sha256 {
            out.push_str(&format!("teacher sha256:    {t}\n"));
        }
        out.push_str("\nper run\n");
        out.push_str(&header);
        for r in &self.runs {
            out.push_str(&format!(
                "{:<14} {:>5} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>11} {:>11}\n",
                r.method,
                r.seed.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
                r.accuracy,
                r.ece,
                r.mce,
                r.fpr95,
                r.mean_entropy,
                r.mutual_info,
                opt(r.grad_variance),
                stab(r.stability_score),
            ));
        }
        out.push_str("\nmean ± std across seeds\n");
        let ms = |m: MeanStd| format!("{:.4}±{:.4}", m.mean, m.std);
        out.push_str(&format!(
            "{:<14} {:>4} {:>15} {:>15} {:>15} {:>15} {:>15} {:>15} {:>21}\n",
            "method", "runs", "acc", "ece", "mce", "fpr95", "entropy", "mi", "grad_var"
        ));
        for a in &self.aggregates {
            out.push_str(&format!(
                "{:<14} {:>4} {:>15} {:>15} {:>15} {:>15} {:>15} {:>15} {:>21}\n",
                a.method,
                a.runs,
                ms(a.accuracy),
                ms(a.ece),
                ms(a.mce),
                ms(a.fpr95),
                ms(a.mean_entropy),
                ms(a.mutual_info),
                a.grad_variance
                    .map(|g| format!("{:.3e}±{:.3e}", g.mean, g.std))
                    .unwrap_or_else(|| "-".into()),
            ));
        }
        if let Some(r) = &self.grad_variance_ratio {
            out.push_str(&format!(
                "\ngrad variance ratio {}/{}: {:.4} (lower in {} of {} matched seeds)\n",
                r.numerator, r.denominator, r.ratio_of_means.0, r.seeds_lower, r.seeds_matched
            ));
        }
        out
    }
}

fn grad_variance_ratio(runs: &[RunRow], aggregates: &[AggregateRow], num: &str, den: &str) -> Option<GradVarianceRatio> {
    let mean_of = |m: &str| aggregates.iter().find(|a| a.method == m)?.grad_variance.map(|g| g.mean);
    let (n, d) = (mean_of(num)?, mean_of(den)?);
    let mut matched = 0;
    let mut lower = 0;
    for r in runs.iter().filter(|r| r.method == num) {
        let partner = runs
            .iter()
            .find(|o| o.method == den && o.seed.is_some() && o.seed == r.seed);
        if let (Some(a), Some(b)) = (r.grad_variance, partner.and_then(|p| p.grad_variance)) {
            matched += 1;
            lower += usize::from(a < b);
        }
    }
    Some(GradVarianceRatio {
        numerator: num.to_string(),
        denominator: den.to_string(),
        ratio_of_means: Score(n / d),
        seeds_matched: matched,
        seeds_lower: lower,
    })
}

/// One directional expectation over a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn missing(name: &str, what: &str) -> DirectionalCheck {
    DirectionalCheck {
        name: name.to_string(),
        passed: false,
        detail: format!("missing {what}"),
    }
}

/// Accuracy and calibration ordering between the three student methods.
pub fn ordering_checks(report: &ComparisonReport, accuracy_slack: f64) -> Vec<DirectionalCheck> {
    let (Some(none), Some(kd), Some(lumi)) = (
        report.aggregate("student-alone"),
        report.aggregate("classic_kd"),
        report.aggregate("luminet"),
    ) else {
        return vec![missing("accuracy and calibration ordering", "student-alone, classic_kd or luminet runs")];
    };
    vec![
        DirectionalCheck {
            name: "student-alone accuracy < classic_kd accuracy".into(),
            passed: none.accuracy.mean < kd.accuracy.mean,
            detail: format!("{:.4} vs {:.4}", none.accuracy.mean, kd.accuracy.mean),
        },
        DirectionalCheck {
            name: format!("luminet accuracy >= classic_kd accuracy - {accuracy_slack}"),
            passed: lumi.accuracy.mean >= kd.accuracy.mean - accuracy_slack,
            detail: format!("{:.4} vs {:.4}", lumi.accuracy.mean, kd.accuracy.mean),
        },
        DirectionalCheck {
            name: "luminet ECE <= classic_kd ECE".into(),
            passed: lumi.ece.mean <= kd.ece.mean,
            detail: format!("{:.4} vs {:.4}", lumi.ece.mean, kd.ece.mean),
        },
    ]
}

/// LumiNet gradient variance below classic KD in at least `min_seeds` seeds.
pub fn grad_variance_check(report: &ComparisonReport, min_seeds: usize) -> DirectionalCheck {
    let name = format!("luminet grad variance < classic_kd in >= {min_seeds} seeds");
    match &report.grad_variance_ratio {
        None => missing(&name, "luminet or classic_kd gradient variance"),
        Some(r) => DirectionalCheck {
            name,
            passed: r.seeds_lower >= min_seeds,
            detail: format!(
                "lower in {} of {} seeds, ratio of means {:.4}",
                r.seeds_lower, r.seeds_matched, r.ratio_of_means.0
            ),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use perceptkd_core::{Matrix, PredictionSet};

    fn eval(method: &str, seed: u64, acc_shift: f64, gv: f64) -> EvaluationReport {
        let probs = Matrix::new(2, 2, vec![0.9, 0.1, 0.4 + acc_shift, 0.6 - acc_shift]).unwrap();
        let preds = PredictionSet::new(probs, vec![0, 1]).unwrap();
        EvaluationReport {
            method: method.into(),
            seed: Some(seed),
            split_part: "test".into(),
            split_sha256: "s".into(),
            teacher_sha256: Some("t".into()),
            checkpoint_sha256: Some(format!("{method}{seed}")),
            epochs: 3,
            grad_variance: Some(gv),
            stability_score: Some(Score(f64::INFINITY)),
            calibration: CalibrationReport::evaluate(&preds, 15).unwrap(),
        }
    }

    #[test]
    fn single_run_has_zero_std() {
        let r = ComparisonReport::build(&[eval("luminet", 1, 0.0, 1.0)]).unwrap();
        let a = &r.aggregates[0];
        assert_eq!((a.accuracy.std, a.ece.std, a.mce.std, a.fpr95.std), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((a.mean_entropy.std, a.mutual_info.std), (0.0, 0.0));
        assert_eq!(a.grad_variance.unwrap().std, 0.0);
        assert_eq!(a.stability_unbounded, 1);
        assert!(a.stability_score.is_none());
    }

    #[test]
    fn order_does_not_matter() {
        let evals = vec![
            eval("luminet", 2, 0.05, 1.0),
            eval("classic_kd", 1, 0.0, 3.0),
            eval("luminet", 1, 0.0, 2.0),
            eval("classic_kd", 2, 0.2, 0.5),
        ];
        let a = ComparisonReport::build(&evals).unwrap();
        let mut rev = evals.clone();
        rev.reverse();
        let b = ComparisonReport::build(&rev).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.render(), b.render());
        let ratio = a.grad_variance_ratio.unwrap();
        assert_eq!((ratio.seeds_matched, ratio.seeds_lower), (2, 1));
        assert!((ratio.ratio_of_means.0 - 1.5 / 1.75).abs() < 1e-15);
    }

    #[test]
    fn mixed_splits_and_teachers_are_refused() {
        let mut other = eval("luminet", 2, 0.0, 1.0);
        other.split_sha256 = "different".into();
        assert!(matches!(
            ComparisonReport::build(&[eval("luminet", 1, 0.0, 1.0), other]),
            Err(CliError::Consistency(_))
        ));
        let mut other = eval("luminet", 2, 0.0, 1.0);
        other.teacher_sha256 = Some("t2".into());
        assert!(matches!(
            ComparisonReport::build(&[eval("luminet", 1, 0.0, 1.0), other]),
            Err(CliError::Consistency(_))
        ));
    }

    #[test]
    fn scores_round_trip_through_json() {
        for v in [1.5, f64::INFINITY, f64::NEG_INFINITY] {
            let s = serde_json::to_string(&Score(v)).unwrap();
            assert_eq!(serde_json::from_str::<Score>(&s).unwrap(), Score(v));
        }
        assert_eq!(serde_json::to_string(&Score(f64::INFINITY)).unwrap(), "\"inf\"");
    }
}
