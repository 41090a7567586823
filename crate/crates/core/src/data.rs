//! Desk-scale datasets: a seeded Gaussian-mixture generator with a
//! heteroscedasticity knob, stratified splits, train-statistics feature
//! standardization, and a delimited-text file format.
//!
//! # File format
//!
//! UTF-8, comma-delimited, `.` as the decimal separator. The first line is
//! the header `dims,classes`; each following line holds `dims` real feature
//! values and then an integer label in `[0, classes)`. Blank lines are
//! skipped.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub provenance: String,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize, provenance: impl Into<String>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Shape {
                op: "Dataset::new",
                left: features.shape(),
                right: (labels.len(), 1),
            });
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::Label { row, label, classes });
        }
        Ok(Self {
            features,
            labels,
            classes,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize], provenance: impl Into<String>) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            provenance: provenance.into(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Parameters of the Gaussian-mixture generator.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub classes: usize,
    pub dims: usize,
    pub samples_per_class: usize,
    /// Standard deviation of the class-center distribution.
    pub center_scale: f64,
    /// Per-coordinate within-class variance of the least spread class.
    pub within_variance: f64,
    /// Ratio of the largest to the smallest per-class variance; class `c`
    /// gets `within_variance * kappa^(c / (C - 1))`.
    pub kappa: f64,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            dims: 16,
            samples_per_class: 500,
            center_scale: 1.0,
            within_variance: 1.0,
            kappa: 1.0,
            seed: 0,
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dims == 0 || self.samples_per_class == 0 {
            return Err(Error::Parameter(format!(
                "mixture needs >= 2 classes, >= 1 dim and >= 1 sample per class (got {}, {}, {})",
                self.classes, self.dims, self.samples_per_class
            )));
        }
        for (name, v) in [("center_scale", self.center_scale), ("within_variance", self.within_variance)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return Err(Error::Parameter(format!("kappa must be >= 1, got {}", self.kappa)));
        }
        Ok(())
    }

    /// Per-coordinate variance of class `c`.
    pub fn class_variance(&self, c: usize) -> f64 {
        let t = if self.classes > 1 {
            c as f64 / (self.classes - 1) as f64
        } else {
            0.0
        };
        self.within_variance * self.kappa.powf(t)
    }

    pub fn describe(&self) -> String {
        format!(
            "mixture(classes={}, dims={}, per_class={}, center_scale={}, within_variance={}, kappa={}, seed={})",
            self.classes,
            self.dims,
            self.samples_per_class,
            self.center_scale,
            self.within_variance,
            self.kappa,
            self.seed
        )
    }
}

/// Samples a balanced Gaussian mixture. Rows are grouped by class.
pub fn generate_mixture(spec: &MixtureSpec) -> Result<Dataset> {
    spec.validate()?;
    let root = RngState::new(spec.seed);
    let mut center_rng = root.fork(0);
    let mut sample_rng = root.fork(1);
    let centers = Matrix::from_fn(spec.classes, spec.dims, |_, _| spec.center_scale * center_rng.normal());
    let n = spec.classes * spec.samples_per_class;
    let mut data = Vec::with_capacity(n * spec.dims);
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.classes {
        let std = spec.class_variance(c).sqrt();
        for _ in 0..spec.samples_per_class {
            for &mu in centers.row(c) {
                data.push(mu + std * sample_rng.normal());
            }
            labels.push(c);
        }
    }
    Dataset::new(Matrix::new(n, spec.dims, data)?, labels, spec.classes, spec.describe())
}

/// Row indices of a three-way split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder allocation of `n` items over `fractions`; ties go to
/// the earlier part.
fn allocate(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut remaining = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[k] += 1;
        remaining -= 1;
    }
    counts
}

/// Stratified index split, deterministic in `seed`. Each part's index list
/// is sorted.
pub fn split_indices(labels: &[usize], classes: usize, fractions: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!(
            "fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Label { row: i, label: l, classes });
        }
        by_class[l].push(i);
    }
    let root = RngState::new(seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (c, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        root.fork(c as u64).shuffle(&mut idx);
        let [a, b, t] = allocate(idx.len(), fractions);
        for (name, count) in [("train", a), ("val", b), ("test", t)] {
            if count == 0 {
                return Err(Error::Split(format!("{name} split receives no samples of class {c}")));
            }
        }
        out.train.extend_from_slice(&idx[..a]);
        out.val.extend_from_slice(&idx[a..a + b]);
        out.test.extend_from_slice(&idx[a + b..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Stratified `(train, val, test)` split of a dataset.
pub fn split(data: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let idx = split_indices(&data.labels, data.classes, fractions, seed)?;
    let tag = |name: &str| format!("{} | {name} split (seed {seed})", data.provenance);
    Ok((
        data.subset(&idx.train, tag("train")),
        data.subset(&idx.val, tag("val")),
        data.subset(&idx.test, tag("test")),
    ))
}

/// Per-feature affine standardization fit on one dataset and applied to
/// others.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Result<Self> {
        let (means, vars) = data.features.column_mean_var()?;
        // constant features pass through centered but unscaled
        let stds = vars.iter().map(|&v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self { means, stds })
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.dims() != self.means.len() {
            return Err(Error::Shape {
                op: "Standardizer::apply",
                left: data.features.shape(),
                right: (1, self.means.len()),
            });
        }
        let mut out = data.clone();
        for i in 0..out.features.rows() {
            for ((v, &m), &s) in out.features.row_mut(i).iter_mut().zip(&self.means).zip(&self.stds) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Expected header values when loading; `None` accepts whatever the file
/// declares.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Schema {
    pub dims: Option<usize>,
    pub classes: Option<usize>,
}

pub fn to_delimited(data: &Dataset) -> String {
    let mut out = String::with_capacity(data.len() * (data.dims() + 1) * 12);
    let _ = writeln!(out, "{},{}", data.dims(), data.classes);
    for (row, &label) in data.features.row_iter().zip(&data.labels) {
        for v in row {
            // shortest representation that round-trips exactly
            let _ = write!(out, "{v:?},");
        }
        let _ = writeln!(out, "{label}");
    }
    out
}

pub fn write_delimited(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_delimited(data)).map_err(|e| Error::io(path, e))
}

pub fn parse_delimited(text: &str, path_label: &str, schema: Schema) -> Result<Dataset> {
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
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    let parsed: Option<Vec<usize>> = fields.iter().map(|f| f.parse().ok()).collect();
    let (dims, classes) = match parsed.as_deref() {
        Some(&[d, c]) if d > 0 && c > 0 => (d, c),
        _ => {
            return Err(Error::Header {
                path: path_label.to_string(),
                message: format!("expected 'dims,classes', found '{header}'"),
            })
        }
    };
    for (name, declared, expected) in [("dims", dims, schema.dims), ("classes", classes, schema.classes)] {
        if let Some(e) = expected {
            if e != declared {
                return Err(Error::Header {
                    path: path_label.to_string(),
                    message: format!("header declares {name}={declared}, expected {e}"),
                });
            }
        }
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dims + 1 {
            return Err(parse_err(
                lineno,
                format!("expected {} fields, found {}", dims + 1, fields.len()),
            ));
        }
        for f in &fields[..dims] {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(lineno, format!("'{f}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("non-finite value '{f}'")));
            }
            data.push(v);
        }
        let label: usize = fields[dims]
            .parse()
            .map_err(|_| parse_err(lineno, format!("'{}' is not a class label", fields[dims])))?;
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
    let n = labels.len();
    Dataset::new(Matrix::new(n, dims, data)?, labels, classes, path_label)
}

pub fn load_delimited(path: impl AsRef<Path>, schema: Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_delimited(&text, &path.display().to_string(), schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        generate_mixture(&MixtureSpec {
            classes: 3,
            dims: 2,
            samples_per_class: 4,
            seed: 1,
            ..MixtureSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn generator_is_balanced_and_deterministic() {
        let a = small();
        assert_eq!(a.len(), 12);
        assert_eq!(a.class_counts(), vec![4, 4, 4]);
        assert_eq!(a, small());
    }

    #[test]
    fn kappa_spreads_variances_geometrically() {
        let spec = MixtureSpec {
            classes: 3,
            kappa: 100.0,
            within_variance: 2.0,
            ..MixtureSpec::default()
        };
        assert_eq!(spec.class_variance(0), 2.0);
        assert!((spec.class_variance(1) - 20.0).abs() < 1e-12);
        assert!((spec.class_variance(2) - 200.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_specs_rejected() {
        for spec in [
            MixtureSpec { kappa: 0.5, ..MixtureSpec::default() },
            MixtureSpec { center_scale: 0.0, ..MixtureSpec::default() },
            MixtureSpec { classes: 1, ..MixtureSpec::default() },
        ] {
            assert!(generate_mixture(&spec).is_err());
        }
    }

    #[test]
    fn allocation_is_within_one_of_proportional() {
        assert_eq!(allocate(100, [0.8, 0.1, 0.1]), [80, 10, 10]);
        assert_eq!(allocate(10, [0.5, 0.25, 0.25]).iter().sum::<usize>(), 10);
        for n in 3..60 {
            let c = allocate(n, [0.7, 0.2, 0.1]);
            assert_eq!(c.iter().sum::<usize>(), n);
            for (k, f) in [0.7, 0.2, 0.1].iter().enumerate() {
                assert!((c[k] as f64 - f * n as f64).abs() < 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn split_rejects_bad_fractions_and_starved_classes() {
        let d = small();
        assert!(matches!(split(&d, [0.5, 0.5, 0.0], 0), Err(Error::Split(_))));
        assert!(matches!(split(&d, [0.5, 0.3, 0.3], 0), Err(Error::Split(_))));
        // 4 per class cannot give every split a sample at 0.9/0.05/0.05
        assert!(matches!(split(&d, [0.9, 0.05, 0.05], 0), Err(Error::Split(_))));
    }

    #[test]
    fn standardizer_uses_fit_statistics() {
        let d = small();
        let s = Standardizer::fit(&d).unwrap();
        let z = s.apply(&d).unwrap();
        let (m, v) = z.features.column_mean_var().unwrap();
        for (mm, vv) in m.iter().zip(&v) {
            assert!(mm.abs() < 1e-12);
            assert!((vv - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn parse_errors_are_distinct() {
        let bad_header = parse_delimited("2\n1,2,0\n", "x", Schema::default());
        assert!(matches!(bad_header, Err(Error::Header { .. })));
        let mismatch = parse_delimited("2,3\n1,2,0\n", "x", Schema { dims: Some(3), classes: None });
        assert!(matches!(mismatch, Err(Error::Header { .. })));
        let short = parse_delimited("2,3\n1,2,0\n1,0\n", "x", Schema::default());
        assert!(matches!(short, Err(Error::Parse { line: 3, .. })));
        let range = parse_delimited("2,3\n1,2,3\n", "x", Schema::default());
        assert!(matches!(range, Err(Error::LabelRange { line: 2, label: 3, .. })));
        assert!(matches!(
            load_delimited("/nonexistent/data.csv", Schema::default()),
            Err(Error::Io { .. })
        ));
    }
}
