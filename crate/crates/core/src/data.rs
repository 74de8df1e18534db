//! Paired two-modality datasets, the synthetic generator, class-balanced
//! batch sampling and the on-disk feature/label formats.
//!
//! Feature file: `DSTCFEAT`, u32 version 1, u32 n, u32 d, then `n·d`
//! little-endian f32 values row-major. Label file: `DSTCLABL`, u32 version 1,
//! u32 n, u32 classes, then n u32 class indices. A split file is n raw bytes
//! (0 train, 1 val, 2 test). A manifest is `key=value` lines naming `x`, `y`,
//! `labels` and optionally `split`, relative to the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const FEATURE_MAGIC: &[u8; 8] = b"DSTCFEAT";
pub const LABEL_MAGIC: &[u8; 8] = b"DSTCLABL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// A minibatch of aligned pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    pub y: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(x: Matrix, y: Matrix, labels: Vec<usize>) -> Result<Self> {
        if x.rows() != y.rows() || x.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "batch has {} x rows, {} y rows and {} labels",
                x.rows(),
                y.rows(),
                labels.len()
            )));
        }
        Ok(Self { x, y, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One-hot encoding of class indices.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (i, &c) in labels.iter().enumerate() {
        if c >= classes {
            return Err(Error::LabelOutOfRange {
                index: i,
                label: c,
                classes,
            });
        }
        m.set(i, c, 1.0);
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    x: Matrix,
    y: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    splits: Vec<Split>,
}

impl PairedDataset {
    pub fn new(
        x: Matrix,
        y: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let n = labels.len();
        if x.rows() != n || y.rows() != n || splits.len() != n {
            return Err(Error::Shape(format!(
                "dataset parts disagree on size: x {}, y {}, labels {n}, splits {}",
                x.rows(),
                y.rows(),
                splits.len()
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &c)| c >= num_classes) {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                classes: num_classes,
            });
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidArgument("features contain non-finite values".into()));
        }
        Ok(Self {
            x,
            y,
            labels,
            num_classes,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn x_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn y_dim(&self) -> usize {
        self.y.cols()
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch {
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn split_batch(&self, split: Split) -> Batch {
        self.batch(&self.split_indices(split))
    }
}

/// Parameters of the Gaussian-cluster generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub n_per_class: usize,
    pub x_dim: usize,
    pub y_dim: usize,
    pub cluster_spread: f64,
    /// Fraction of pairs per class whose `y` is swapped with another member
    /// of the same class.
    pub pair_noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.n_per_class == 0 || self.x_dim == 0 || self.y_dim == 0 {
            return Err(Error::InvalidArgument(
                "classes, samples per class and feature sizes must be positive".into(),
            ));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cluster spread must be positive, got {}",
                self.cluster_spread
            )));
        }
        if !(0.0..=1.0).contains(&self.pair_noise) {
            return Err(Error::InvalidArgument(format!(
                "pair noise must lie in [0, 1], got {}",
                self.pair_noise
            )));
        }
        Ok(())
    }
}

/// Draws a class-structured paired dataset.
///
/// Each class has independent standard-normal centroids in the two feature
/// spaces. A sample is its centroid plus `N(0, spread²)` noise per
/// coordinate; `min(d1, d2)` of the noise coordinates are shared between the
/// two members of a pair (placed at seeded random positions), so pairs carry
/// instance-level correspondence beyond their class. Samples are stored
/// class-major and split 70/15/15 per class.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<PairedDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (c, n, d1, d2) = (spec.classes, spec.n_per_class, spec.x_dim, spec.y_dim);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let cx = Matrix::from_fn(c, d1, |_, _| normal(&mut rng));
    let cy = Matrix::from_fn(c, d2, |_, _| normal(&mut rng));
    let shared = d1.min(d2);
    let mut slots_x: Vec<usize> = (0..d1).collect();
    let mut slots_y: Vec<usize> = (0..d2).collect();
    slots_x.shuffle(&mut rng);
    slots_y.shuffle(&mut rng);

    let total = c * n;
    let mut x = Matrix::zeros(total, d1);
    let mut y = Matrix::zeros(total, d2);
    let mut labels = Vec::with_capacity(total);
    for class in 0..c {
        for k in 0..n {
            let i = class * n + k;
            let mut nx: Vec<f64> = (0..d1).map(|_| normal(&mut rng)).collect();
            let mut ny: Vec<f64> = (0..d2).map(|_| normal(&mut rng)).collect();
            for s in 0..shared {
                let u = normal(&mut rng);
                nx[slots_x[s]] = u;
                ny[slots_y[s]] = u;
            }
            for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                *v = cx.get(class, j) + spec.cluster_spread * nx[j];
            }
            for (j, v) in y.row_mut(i).iter_mut().enumerate() {
                *v = cy.get(class, j) + spec.cluster_spread * ny[j];
            }
            labels.push(class);
        }
    }

    let n_repair = (spec.pair_noise * n as f64).round() as usize;
    if n_repair >= 2 {
        for class in 0..c {
            let mut members: Vec<usize> = (class * n..(class + 1) * n).collect();
            members.shuffle(&mut rng);
            let chosen = &members[..n_repair];
            // cyclic shift over a shuffled subset: nobody keeps their own partner
            let rows: Vec<Vec<f64>> = chosen.iter().map(|&i| y.row(i).to_vec()).collect();
            for (k, &i) in chosen.iter().enumerate() {
                y.row_mut(i).copy_from_slice(&rows[(k + 1) % n_repair]);
            }
        }
    }

    let splits = stratified_splits(&labels, c, &mut rng);
    PairedDataset::new(x, y, labels, c, splits)
}

/// Per class: first 70% train, next 15% val, remainder test, after a shuffle.
pub fn stratified_splits(labels: &[usize], classes: usize, rng: &mut impl Rng) -> Vec<Split> {
    let mut splits = vec![Split::Test; labels.len()];
    for class in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(rng);
        let m = members.len();
        let n_train = m * 70 / 100;
        let n_val = m * 15 / 100;
        for (k, &i) in members.iter().enumerate() {
            splits[i] = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    splits
}

/// Inverse class-frequency weights: every non-empty class gets the same total mass.
pub fn sampler_weights(labels: &[usize], classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no labels to weight".into()));
    }
    let mut counts = vec![0usize; classes];
    for (index, &c) in labels.iter().enumerate() {
        if c >= classes {
            return Err(Error::LabelOutOfRange {
                index,
                label: c,
                classes,
            });
        }
        counts[c] += 1;
    }
    Ok(labels.iter().map(|&c| 1.0 / counts[c] as f64).collect())
}

/// Draws `batch_size` indices with replacement, proportionally to `weights`.
pub fn sample_batch(weights: &[f64], batch_size: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let dist = WeightedSampler::new(weights)?;
    Ok(dist.sample(batch_size, rng))
}

/// Reusable weighted index distribution.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("sampling weights must be finite and non-negative".into()));
        }
        let dist = WeightedIndex::new(weights).map_err(|_| Error::ZeroWeights)?;
        Ok(Self { dist })
    }

    pub fn sample(&self, batch_size: usize, rng: &mut impl Rng) -> Vec<usize> {
        (0..batch_size).map(|_| self.dist.sample(rng)).collect()
    }
}

pub fn save_features(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = Writer::new(FEATURE_MAGIC, FORMAT_VERSION);
    w.u32(dim_u32(m.rows())?);
    w.u32(dim_u32(m.cols())?);
    for &v in m.data() {
        w.f32(v);
    }
    w.save(path)
}

pub fn load_features(path: &Path) -> Result<Matrix> {
    let mut r = Reader::open(path, FEATURE_MAGIC, FORMAT_VERSION)?;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let count = n
        .checked_mul(d)
        .ok_or_else(|| r.inconsistent(format!("{n}x{d} overflows")))?;
    r.require(count.saturating_mul(4))?;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(r.f32()?);
    }
    r.finish()?;
    Matrix::new(n, d, data)
}

pub fn save_labels(path: &Path, labels: &[usize], classes: usize) -> Result<()> {
    let mut w = Writer::new(LABEL_MAGIC, FORMAT_VERSION);
    w.u32(dim_u32(labels.len())?);
    w.u32(dim_u32(classes)?);
    for (index, &c) in labels.iter().enumerate() {
        if c >= classes {
            return Err(Error::LabelOutOfRange {
                index,
                label: c,
                classes,
            });
        }
        w.u32(c as u32);
    }
    w.save(path)
}

/// Returns the labels and the class count recorded in the header.
pub fn load_labels(path: &Path) -> Result<(Vec<usize>, usize)> {
    let mut r = Reader::open(path, LABEL_MAGIC, FORMAT_VERSION)?;
    let n = r.u32()? as usize;
    let classes = r.u32()? as usize;
    r.require(n.saturating_mul(4))?;
    let mut labels = Vec::with_capacity(n);
    for index in 0..n {
        let c = r.u32()? as usize;
        if c >= classes {
            return Err(Error::LabelOutOfRange {
                index,
                label: c,
                classes,
            });
        }
        labels.push(c);
    }
    r.finish()?;
    Ok((labels, classes))
}

pub fn save_splits(path: &Path, splits: &[Split]) -> Result<()> {
    let bytes: Vec<u8> = splits.iter().map(|s| s.code()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_splits(path: &Path, expected: usize) -> Result<Vec<Split>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed: expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::HeaderInconsistent {
            path: path.to_path_buf(),
            detail: format!("{} split tags for {expected} samples", bytes.len()),
        });
    }
    bytes
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            Split::from_code(b).ok_or_else(|| Error::HeaderInconsistent {
                path: path.to_path_buf(),
                detail: format!("invalid split tag {b} at index {i}"),
            })
        })
        .collect()
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit the u32 header field")))
}

/// Paths named by a dataset manifest, already resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub x: PathBuf,
    pub y: PathBuf,
    pub labels: PathBuf,
    pub split: Option<PathBuf>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |detail: String| Error::Manifest {
                path: path.to_path_buf(),
                detail,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key=value", lineno + 1)))?;
            let key = key.trim();
            if !matches!(key, "x" | "y" | "labels" | "split") {
                return Err(bad(format!("line {}: unknown key `{key}`", lineno + 1)));
            }
            if entries.insert(key.to_string(), base.join(value.trim())).is_some() {
                return Err(bad(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        let mut need = |key: &str| {
            entries.remove(key).ok_or_else(|| Error::Manifest {
                path: path.to_path_buf(),
                detail: format!("missing key `{key}`"),
            })
        };
        Ok(Self {
            x: need("x")?,
            y: need("y")?,
            labels: need("labels")?,
            split: entries.remove("split"),
        })
    }
}

/// Loads a dataset from its manifest. Without a split file, a stratified
/// 70/15/15 split is drawn with seed 0.
pub fn load_dataset(manifest_path: &Path) -> Result<PairedDataset> {
    let manifest = Manifest::read(manifest_path)?;
    let x = load_features(&manifest.x)?;
    let y = load_features(&manifest.y)?;
    let (labels, classes) = load_labels(&manifest.labels)?;
    let splits = match &manifest.split {
        Some(p) => load_splits(p, labels.len())?,
        None => stratified_splits(&labels, classes, &mut ChaCha8Rng::seed_from_u64(0)),
    };
    PairedDataset::new(x, y, labels, classes, splits)
}

/// Writes `x.feat`, `y.feat`, `labels.lbl`, `split.bin` and `manifest.txt`
/// into `dir`, returning the manifest path.
pub fn save_dataset(dir: &Path, data: &PairedDataset) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_features(&dir.join("x.feat"), data.x())?;
    save_features(&dir.join("y.feat"), data.y())?;
    save_labels(&dir.join("labels.lbl"), data.labels(), data.num_classes())?;
    save_splits(&dir.join("split.bin"), data.splits())?;
    let manifest = dir.join("manifest.txt");
    let text = "x=x.feat\ny=y.feat\nlabels=labels.lbl\nsplit=split.bin\n";
    std::fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
