//! Dense datasets and the column split that hands each agent a contiguous
//! block of every feature vector.

use std::fs;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `N × M` feature matrix (row-major) with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: usize,
    features: usize,
    values: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(samples: usize, features: usize, values: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if samples == 0 {
            return Err(Error::InvalidInput("dataset has no samples".into()));
        }
        if values.len() != samples * features || labels.len() != samples {
            return Err(Error::Dimension(format!(
                "{samples} samples x {features} features needs {} values and {samples} labels, got {} and {}",
                samples * features,
                values.len(),
                labels.len()
            )));
        }
        if values.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dataset contains NaN or infinite entries".into()));
        }
        Ok(Dataset {
            samples,
            features,
            values,
            labels,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.features..(n + 1) * self.features]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn squared_norms(&self) -> Vec<f64> {
        (0..self.samples)
            .map(|n| self.row(n).iter().map(|v| v * v).sum())
            .collect()
    }

    /// Min-max scales every feature to `[0, 1]`; constant columns become 0.
    pub fn scale_unit(&mut self) {
        let m = self.features;
        for j in 0..m {
            let (lo, hi) = (0..self.samples)
                .map(|n| self.values[n * m + j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let span = hi - lo;
            for n in 0..self.samples {
                let v = &mut self.values[n * m + j];
                *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
            }
        }
    }

    /// Appends a constant-one feature column.
    pub fn append_bias(&mut self) {
        let m = self.features;
        let mut values = Vec::with_capacity(self.samples * (m + 1));
        for n in 0..self.samples {
            values.extend_from_slice(&self.values[n * m..(n + 1) * m]);
            values.push(1.0);
        }
        self.values = values;
        self.features += 1;
    }

    /// Writes rows as `f1,...,fM,label` with shortest round-trip floats.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        for n in 0..self.samples {
            let mut rec: Vec<String> = self.row(n).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[n].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvOptions {
    /// Label column; negative values count from the end (`-1` = last).
    #[serde(default = "default_label_column")]
    pub label_column: i64,
    #[serde(default)]
    pub header: bool,
}

fn default_label_column() -> i64 {
    -1
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            label_column: -1,
            header: false,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(options.header)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut width = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let cols = record.len();
        match width {
            None => width = Some(cols),
            Some(w) if w != cols => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {w} columns, found {cols}"),
                })
            }
            _ => {}
        }
        let label_idx = if options.label_column < 0 {
            cols as i64 + options.label_column
        } else {
            options.label_column
        };
        if label_idx < 0 || label_idx >= cols as i64 || cols < 2 {
            return Err(Error::Parse {
                line,
                message: format!("label column {} out of range for {cols} columns", options.label_column),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {c}: cannot parse {field:?} as a number"),
            })?;
            if c as i64 == label_idx {
                labels.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let Some(width) = width else {
        return Err(Error::InvalidInput("CSV file has no data rows".into()));
    };
    Dataset::new(labels.len(), width - 1, values, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct IdxOptions {
    /// Keep only these digit classes. With exactly two classes the labels
    /// become `+1` for the first and `-1` for the second; otherwise labels
    /// are the position of the digit in this list.
    #[serde(default)]
    pub classes: Option<Vec<u8>>,
    /// Keep at most this many samples, in file order.
    #[serde(default)]
    pub limit: Option<usize>,
}

fn read_idx(path: &Path, expected_dims: u8) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return Err(Error::Parse {
            line: 0,
            message: format!("{}: not an unsigned-byte IDX file", path.display()),
        });
    }
    if bytes[3] != expected_dims {
        return Err(Error::Parse {
            line: 0,
            message: format!(
                "{}: expected {expected_dims} dimensions, found {}",
                path.display(),
                bytes[3]
            ),
        });
    }
    let header = 4 + 4 * expected_dims as usize;
    if bytes.len() < header {
        return Err(Error::Parse {
            line: 0,
            message: format!("{}: truncated header", path.display()),
        });
    }
    let dims: Vec<usize> = (0..expected_dims as usize)
        .map(|d| u32::from_be_bytes(bytes[4 + 4 * d..8 + 4 * d].try_into().unwrap()) as usize)
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + count {
        return Err(Error::Parse {
            line: 0,
            message: format!(
                "{}: expected {count} data bytes, found {}",
                path.display(),
                bytes.len() - header
            ),
        });
    }
    Ok((dims, bytes[header..].to_vec()))
}

/// Loads an IDX image/label pair (the MNIST layout). Pixels are divided by
/// 255, so they already lie in `[0, 1]`.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, options: &IdxOptions) -> Result<Dataset> {
    let (img_dims, pixels) = read_idx(images.as_ref(), 3)?;
    let (lbl_dims, digits) = read_idx(labels.as_ref(), 1)?;
    if img_dims[0] != lbl_dims[0] {
        return Err(Error::Dimension(format!(
            "{} images but {} labels",
            img_dims[0], lbl_dims[0]
        )));
    }
    let m = img_dims[1] * img_dims[2];
    let limit = options.limit.unwrap_or(usize::MAX);
    let mut values = Vec::new();
    let mut out_labels = Vec::new();
    for (n, &digit) in digits.iter().enumerate() {
        if out_labels.len() >= limit {
            break;
        }
        let label = match &options.classes {
            None => digit as f64,
            Some(classes) => match classes.iter().position(|&c| c == digit) {
                None => continue,
                Some(p) if classes.len() == 2 => {
                    if p == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                Some(p) => p as f64,
            },
        };
        values.extend(pixels[n * m..(n + 1) * m].iter().map(|&p| p as f64 / 255.0));
        out_labels.push(label);
    }
    Dataset::new(out_labels.len(), m, values, out_labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Logistic,
    Ridge,
    Softmax,
}

/// Planted-model generator. Features are i.i.d. `N(0, scale²/M)` so rows
/// have squared norm near `scale²`; the planted weights are standard normal
/// times `planted_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub features: usize,
    pub seed: u64,
    pub model: SyntheticKind,
    /// Classes for `softmax` data.
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Probability a classification label is replaced by a wrong one.
    #[serde(default)]
    pub flip_prob: f64,
    /// Gaussian label noise for `ridge` data.
    #[serde(default)]
    pub noise_std: f64,
    /// Minimum `|hᵀw|` for logistic samples; rows inside the margin are redrawn.
    #[serde(default)]
    pub margin: f64,
    #[serde(default = "one")]
    pub feature_scale: f64,
    #[serde(default = "one")]
    pub planted_scale: f64,
}

fn default_classes() -> usize {
    2
}

fn one() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn new(samples: usize, features: usize, seed: u64, model: SyntheticKind) -> Self {
        SyntheticSpec {
            samples,
            features,
            seed,
            model,
            classes: 2,
            flip_prob: 0.0,
            noise_std: 0.0,
            margin: 0.0,
            feature_scale: 1.0,
            planted_scale: 1.0,
        }
    }
}

/// Draws a dataset and returns it with the planted weights (`M × C`,
/// row-major; `C = 1` unless softmax).
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Vec<f64>)> {
    let (n, m) = (spec.samples, spec.features);
    if n == 0 || m == 0 {
        return Err(Error::Config(
            "synthetic data needs samples >= 1 and features >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.flip_prob) {
        return Err(Error::Config(format!(
            "flip_prob must lie in [0, 1], got {}",
            spec.flip_prob
        )));
    }
    let classes = match spec.model {
        SyntheticKind::Softmax if spec.classes < 2 => {
            return Err(Error::Config("softmax data needs classes >= 2".into()))
        }
        SyntheticKind::Softmax => spec.classes,
        _ => 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let planted: Vec<f64> = (0..m * classes)
        .map(|_| spec.planted_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let feat_sd = spec.feature_scale / (m as f64).sqrt();
    let mut values = Vec::with_capacity(n * m);
    let mut labels = Vec::with_capacity(n);
    let mut scores = vec![0.0; classes];
    let mut row = vec![0.0; m];
    for _ in 0..n {
        let mut attempts = 0;
        loop {
            row.iter_mut()
                .for_each(|v| *v = feat_sd * rng.sample::<f64, _>(StandardNormal));
            crate::model::block_score(&row, &planted, classes, &mut scores);
            attempts += 1;
            let inside = spec.model == SyntheticKind::Logistic && scores[0].abs() < spec.margin;
            if !inside || attempts >= 10_000 {
                break;
            }
        }
        let label = match spec.model {
            SyntheticKind::Ridge => scores[0] + spec.noise_std * rng.sample::<f64, _>(StandardNormal),
            SyntheticKind::Logistic => {
                let y = if scores[0] >= 0.0 { 1.0 } else { -1.0 };
                if rng.random::<f64>() < spec.flip_prob {
                    -y
                } else {
                    y
                }
            }
            SyntheticKind::Softmax => {
                let best = (0..classes).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
                if rng.random::<f64>() < spec.flip_prob {
                    let shift = rng.random_range(1..classes);
                    ((best + shift) % classes) as f64
                } else {
                    best as f64
                }
            }
        };
        values.extend_from_slice(&row);
        labels.push(label);
    }
    Ok((Dataset::new(n, m, values, labels)?, planted))
}

/// Contiguous split of the feature indices `0..M` over `K` agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    ranges: Vec<Range<usize>>,
}

impl Partition {
    /// The first `M mod K` agents get `⌈M/K⌉` features, the rest `⌊M/K⌋`.
    pub fn even(features: usize, agents: usize) -> Result<Self> {
        if agents == 0 || features < agents {
            return Err(Error::Config(format!(
                "cannot split {features} features over {agents} agents"
            )));
        }
        let (base, extra) = (features / agents, features % agents);
        Self::from_sizes((0..agents).map(|k| base + usize::from(k < extra)).collect(), features)
    }

    pub fn from_sizes(sizes: Vec<usize>, features: usize) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        if total != features {
            return Err(Error::Config(format!(
                "partition sizes sum to {total}, dataset has {features} features"
            )));
        }
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::Config("every agent needs at least one feature".into()));
        }
        let mut start = 0;
        let ranges = sizes
            .iter()
            .map(|s| {
                let r = start..start + s;
                start += s;
                r
            })
            .collect();
        Ok(Partition { ranges })
    }

    pub fn agents(&self) -> usize {
        self.ranges.len()
    }

    pub fn features(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }
}

/// One agent's columns of every sample, with the shared labels and full-row
/// squared norms.
#[derive(Debug, Clone)]
pub struct FeatureShard {
    agent: usize,
    range: Range<usize>,
    values: Vec<f64>,
    labels: Arc<[f64]>,
    squared_norms: Arc<[f64]>,
}

impl FeatureShard {
    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }

    pub fn width(&self) -> usize {
        self.range.len()
    }

    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    /// `h_{n,k}`.
    #[inline]
    pub fn row(&self, n: usize) -> &[f64] {
        let w = self.range.len();
        &self.values[n * w..(n + 1) * w]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn squared_norms(&self) -> &[f64] {
        &self.squared_norms
    }
}

pub fn shard(dataset: &Dataset, partition: &Partition) -> Result<Vec<FeatureShard>> {
    if partition.features() != dataset.features() {
        return Err(Error::Dimension(format!(
            "partition covers {} features, dataset has {}",
            partition.features(),
            dataset.features()
        )));
    }
    let labels: Arc<[f64]> = dataset.labels().into();
    let squared_norms: Arc<[f64]> = dataset.squared_norms().into();
    Ok(partition
        .ranges()
        .iter()
        .enumerate()
        .map(|(agent, range)| {
            let values = (0..dataset.samples())
                .flat_map(|n| dataset.row(n)[range.clone()].iter().copied())
                .collect();
            FeatureShard {
                agent,
                range: range.clone(),
                values,
                labels: labels.clone(),
                squared_norms: squared_norms.clone(),
            }
        })
        .collect())
}

/// Column-concatenates shards back into the row-major feature matrix.
pub fn reconstruct(shards: &[FeatureShard]) -> Vec<f64> {
    let n = shards.first().map_or(0, |s| s.samples());
    let mut out = Vec::with_capacity(n * shards.iter().map(|s| s.width()).sum::<usize>());
    for i in 0..n {
        for s in shards {
            out.extend_from_slice(s.row(i));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn csv_label_last() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1,2,+1\n3,4,-1\n5,6,+1").unwrap();
        let d = load_csv(f.path(), &CsvOptions::default()).unwrap();
        assert_eq!((d.samples(), d.features()), (3, 2));
        assert_eq!(d.labels(), &[1.0, -1.0, 1.0]);
        assert_eq!(d.row(2), &[5.0, 6.0]);
    }

    #[test]
    fn csv_errors() {
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(load_csv(f.path(), &CsvOptions::default()).is_err());

        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1,2,1\n3,x,1").unwrap();
        match load_csv(f.path(), &CsvOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_header_and_first_column_label() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "y,a,b\n1,0.5,0.25\n-1,1,2").unwrap();
        let opts = CsvOptions {
            label_column: 0,
            header: true,
        };
        let d = load_csv(f.path(), &opts).unwrap();
        assert_eq!(d.labels(), &[1.0, -1.0]);
        assert_eq!(d.row(0), &[0.5, 0.25]);
    }

    #[test]
    fn idx_images_flatten() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 28, 0, 0, 0, 28];
        img.extend((0..3 * 784).map(|i| (i % 256) as u8));
        let mut lbl = vec![0, 0, 8, 1, 0, 0, 0, 3];
        lbl.extend([0u8, 7, 1]);
        fs::write(dir.path().join("img"), img).unwrap();
        fs::write(dir.path().join("lbl"), lbl).unwrap();
        let d = load_idx(dir.path().join("img"), dir.path().join("lbl"), &IdxOptions::default()).unwrap();
        assert_eq!((d.samples(), d.features()), (3, 784));
        let opts = IdxOptions {
            classes: Some(vec![0, 1]),
            limit: None,
        };
        let d = load_idx(dir.path().join("img"), dir.path().join("lbl"), &opts).unwrap();
        assert_eq!(d.labels(), &[1.0, -1.0]);
        assert!(d.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::new(1, 1, 42, SyntheticKind::Logistic);
        assert_eq!(make_synthetic(&spec).unwrap(), make_synthetic(&spec).unwrap());
        let mut spec = SyntheticSpec::new(30, 4, 9, SyntheticKind::Softmax);
        spec.classes = 3;
        let (d, w) = make_synthetic(&spec).unwrap();
        assert_eq!(w.len(), 12);
        assert!(d.labels().iter().all(|y| [0.0, 1.0, 2.0].contains(y)));
    }

    #[test]
    fn even_partition_sizes() {
        assert_eq!(Partition::even(6, 3).unwrap().sizes(), vec![2, 2, 2]);
        assert_eq!(Partition::even(7, 3).unwrap().sizes(), vec![3, 2, 2]);
        assert_eq!(Partition::even(784, 8).unwrap().sizes(), vec![98; 8]);
        assert!(Partition::even(2, 3).is_err());
        assert!(Partition::from_sizes(vec![2, 2], 5).is_err());
        assert!(Partition::from_sizes(vec![5, 0], 5).is_err());
    }

    #[test]
    fn single_shard_is_dataset() {
        let (d, _) = make_synthetic(&SyntheticSpec::new(5, 3, 1, SyntheticKind::Ridge)).unwrap();
        let shards = shard(&d, &Partition::even(3, 1).unwrap()).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(reconstruct(&shards), d.values());
    }

    #[test]
    fn unit_scaling() {
        let mut d = Dataset::new(3, 2, vec![0.0, 5.0, 2.0, 5.0, 4.0, 5.0], vec![1.0; 3]).unwrap();
        d.scale_unit();
        assert_eq!(d.values(), &[0.0, 0.0, 0.5, 0.0, 1.0, 0.0]);
        d.append_bias();
        assert_eq!(d.row(1), &[0.5, 0.0, 1.0]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Dataset::new(1, 1, vec![f64::NAN], vec![1.0]).is_err());
    }
}
