//! Small synthetic datasets: the 4-point toy set, Gaussian blobs, shifted-blob
//! out-of-distribution sets, and a CSV format with a JSON metadata sidecar.
//!
//! CSV layout: header `f0,...,f{D-1},label`, then one sample per line with
//! features written to 17 significant digits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum pairwise distance between the four toy points.
pub const TOY_MIN_SEPARATION: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub seed: Option<u64>,
    pub ood: bool,
}

/// Contents of the `.meta.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub num_classes: usize,
    pub dim: usize,
    pub len: usize,
    pub seed: Option<u64>,
    pub ood: bool,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            features,
            labels,
            num_classes,
            seed: None,
            ood: false,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::InvalidInput(format!("dataset '{}' is empty", self.name)));
        }
        if self.features.len() != self.labels.len() {
            return Err(Error::InvalidInput(format!(
                "dataset '{}': {} feature rows but {} labels",
                self.name,
                self.features.len(),
                self.labels.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidInput("datasets need at least 2 classes".into()));
        }
        let dim = self.features[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("features must have at least one column".into()));
        }
        for (i, (row, &label)) in self.features.iter().zip(&self.labels).enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidInput(format!("sample {i} has {} features, expected {dim}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("sample {i} has a non-finite feature")));
            }
            if label >= self.num_classes {
                return Err(Error::InvalidInput(format!(
                    "sample {i} has label {label} >= {}",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            name: self.name.clone(),
            num_classes: self.num_classes,
            dim: self.dim(),
            len: self.len(),
            seed: self.seed,
            ood: self.ood,
        }
    }
}

/// Isotropic Gaussian blobs, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub means: Vec<Vec<f64>>,
    pub stddev: f64,
    pub n_per_class: usize,
    pub seed: u64,
}

impl BlobSpec {
    /// Class means drawn uniformly from `[-spread, spread]^dim` using `seed`.
    pub fn with_random_means(
        classes: usize,
        dim: usize,
        spread: f64,
        stddev: f64,
        n_per_class: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(spread > 0.0) {
            return Err(Error::config("spread", "must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d65_616e_735f_7631);
        let u = Uniform::new_inclusive(-spread, spread);
        let means = (0..classes)
            .map(|_| (0..dim).map(|_| u.sample(&mut rng)).collect())
            .collect();
        let spec = Self {
            means,
            stddev,
            n_per_class,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.len() < 2 {
            return Err(Error::config("blobs.classes", "need at least 2 classes"));
        }
        let dim = self.means[0].len();
        if dim == 0 || self.means.iter().any(|m| m.len() != dim) {
            return Err(Error::config("blobs.means", "all means need the same non-zero dimension"));
        }
        if !(self.stddev > 0.0 && self.stddev.is_finite()) {
            return Err(Error::config("blobs.stddev", "must be positive"));
        }
        if self.n_per_class == 0 {
            return Err(Error::config("blobs.n_per_class", "must be at least 1"));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }
}

/// Four well-separated Gaussian points with labels 0..4.
pub fn make_toy4(dim: usize, seed: u64) -> Result<Dataset> {
    if dim < 2 {
        return Err(Error::InvalidInput(format!("toy dataset needs dim >= 2, got {dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 3.0).expect("valid normal");
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(4);
    while points.len() < 4 {
        let p: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        if points.iter().all(|q| distance(q, &p) >= TOY_MIN_SEPARATION) {
            points.push(p);
        }
    }
    let mut ds = Dataset::new("toy4", points, vec![0, 1, 2, 3], 4)?;
    ds.seed = Some(seed);
    Ok(ds)
}

/// Samples `n_per_class` points around each mean, class by class.
pub fn make_blobs(spec: &BlobSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.stddev).expect("validated stddev");
    let mut features = Vec::with_capacity(spec.num_classes() * spec.n_per_class);
    let mut labels = Vec::with_capacity(features.capacity());
    for (class, mean) in spec.means.iter().enumerate() {
        for _ in 0..spec.n_per_class {
            features.push(mean.iter().map(|&m| m + noise.sample(&mut rng)).collect());
            labels.push(class);
        }
    }
    let mut ds = Dataset::new("blobs", features, labels, spec.num_classes())?;
    ds.seed = Some(spec.seed);
    Ok(ds)
}

/// `base` blobs translated by `shift`, flagged as out-of-distribution.
pub fn make_ood_shift(base: &BlobSpec, shift: &[f64]) -> Result<Dataset> {
    if shift.len() != base.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            actual: shift.len(),
            context: "ood shift",
        });
    }
    let shifted = BlobSpec {
        means: base
            .means
            .iter()
            .map(|m| m.iter().zip(shift).map(|(a, b)| a + b).collect())
            .collect(),
        ..base.clone()
    };
    let mut ds = make_blobs(&shifted)?;
    ds.name = "blobs_ood".into();
    ds.ood = true;
    Ok(ds)
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// 17-significant-digit decimal text; parses back to the same `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Sidecar path: `data.csv` → `data.meta.json`.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    ds.validate()?;
    let dim = ds.dim();
    let mut out = String::new();
    for j in 0..dim {
        let _ = write!(out, "f{j},");
    }
    out.push_str("label\n");
    for (row, label) in ds.features.iter().zip(&ds.labels) {
        for v in row {
            out.push_str(&format_f64(*v));
            out.push(',');
        }
        let _ = writeln!(out, "{label}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let meta = serde_json::to_string_pretty(&ds.meta()).map_err(|e| Error::Serde(e.to_string()))?;
    let mpath = meta_path(path);
    std::fs::write(&mpath, meta).map_err(|e| Error::io(&mpath, e))
}

/// Loads a dataset, taking class count, name, seed and OOD flag from the
/// sidecar next to `path`.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mpath = meta_path(path);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Serde(format!("{}: {e}", mpath.display())))?;
    let mut ds = load_csv(path, meta.num_classes)?;
    if ds.len() != meta.len || ds.dim() != meta.dim {
        return Err(Error::InvalidInput(format!(
            "{}: sidecar says {}x{}, file has {}x{}",
            path.display(),
            meta.len,
            meta.dim,
            ds.len(),
            ds.dim()
        )));
    }
    ds.name = meta.name;
    ds.seed = meta.seed;
    ds.ood = meta.ood;
    Ok(ds)
}

/// Parses the CSV body. Row numbers in errors are 1-based file lines.
pub fn load_csv(path: &Path, num_classes: usize) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path, num_classes)
}

fn parse_csv(text: &str, path: &Path, num_classes: usize) -> Result<Dataset> {
    let err = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let dim = columns.len().saturating_sub(1);
    if dim == 0 || columns.last() != Some(&"label") {
        return Err(err(1, "header must be f0,...,f{D-1},label".into()));
    }
    for (j, c) in columns[..dim].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(err(1, format!("unexpected column '{c}', expected f{j}")));
        }
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim + 1 {
            return Err(err(row, format!("expected {} columns, found {}", dim + 1, fields.len())));
        }
        let values = fields[..dim]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(row, format!("malformed feature '{f}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let label: usize = fields[dim]
            .parse()
            .map_err(|_| err(row, format!("malformed label '{}'", fields[dim])))?;
        if label >= num_classes {
            return Err(err(row, format!("label {label} out of range for {num_classes} classes")));
        }
        features.push(values);
        labels.push(label);
    }
    if features.is_empty() {
        return Err(err(1, "no data rows".into()));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, features, labels, num_classes)
}
