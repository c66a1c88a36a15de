//! Dataset loading (UCI-style CSV and MNIST IDX), splits and minibatching.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoding::sample_seed;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub name: String,
    pub class_names: Vec<String>,
    /// How raw columns were turned into features and labels.
    pub notes: String,
}

/// Feature rows (raw units) with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    meta: DatasetMeta,
}

impl Dataset {
    /// `features` is `[rows × feature_len]`.
    pub fn new(features: Tensor, labels: Vec<usize>, meta: DatasetMeta) -> Result<Self> {
        if features.rank() != 2 || features.rows() != labels.len() {
            return Err(Error::Consistency(format!(
                "features {:?} for {} labels",
                features.shape(),
                labels.len()
            )));
        }
        let classes = meta.class_names.len();
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Consistency(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn name(&self) -> &str {
        &self.meta.name
    }

    pub fn feature_len(&self) -> usize {
        self.features.row_len()
    }

    pub fn classes(&self) -> usize {
        self.meta.class_names.len()
    }

    /// Rows in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let n = self.feature_len();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            data.extend_from_slice(self.features.row(r));
        }
        Dataset {
            features: Tensor::new(vec![rows.len(), n], data).expect("row length preserved"),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Number of rows per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// What one CSV column contributes.
#[derive(Clone, Debug, PartialEq)]
pub enum ColumnRole {
    Numeric,
    Skip,
    Label,
    /// Categorical feature coded as the index of its value in the list.
    Coded(Vec<String>),
}

impl ColumnRole {
    /// Parses `num`, `skip`, `label` or `code:A/B/C`.
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "num" => Ok(ColumnRole::Numeric),
            "skip" => Ok(ColumnRole::Skip),
            "label" => Ok(ColumnRole::Label),
            other => match other.strip_prefix("code:") {
                Some(values) if !values.is_empty() => Ok(ColumnRole::Coded(
                    values.split('/').map(|v| v.trim().to_string()).collect(),
                )),
                _ => Err(Error::Config(format!(
                    "unknown column role `{other}` (expected num, skip, label or code:A/B/...)"
                ))),
            },
        }
    }
}

/// How the label column becomes a class index.
#[derive(Clone, Debug, PartialEq)]
pub enum LabelEncoding {
    /// Class index = position of the label text in the list.
    Classes(Vec<String>),
    /// Numeric target cut into `k` classes at its quantiles over the file.
    Quantile(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvSchema {
    pub name: String,
    pub columns: Vec<ColumnRole>,
    pub labels: LabelEncoding,
}

impl CsvSchema {
    pub fn feature_count(&self) -> usize {
        self.columns
            .iter()
            .filter(|c| matches!(c, ColumnRole::Numeric | ColumnRole::Coded(_)))
            .count()
    }

    fn label_column(&self) -> Result<usize> {
        let mut labels = self
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == ColumnRole::Label);
        match (labels.next(), labels.next()) {
            (Some((i, _)), None) => Ok(i),
            _ => Err(Error::Config(format!(
                "schema `{}` needs exactly one label column",
                self.name
            ))),
        }
    }

    /// Built-in layouts for the files written by the fetch script.
    pub fn preset(name: &str) -> Option<CsvSchema> {
        let nums = |n: usize| vec![ColumnRole::Numeric; n];
        let classes = |names: &[&str]| {
            LabelEncoding::Classes(names.iter().map(|s| s.to_string()).collect())
        };
        let with_label = |mut cols: Vec<ColumnRole>| {
            cols.push(ColumnRole::Label);
            cols
        };
        let schema = match name {
            "iris" => CsvSchema {
                name: name.into(),
                columns: with_label(nums(4)),
                labels: classes(&["Iris-setosa", "Iris-versicolor", "Iris-virginica"]),
            },
            "wbc" => CsvSchema {
                name: name.into(),
                columns: with_label(nums(9)),
                labels: classes(&["2", "4"]),
            },
            "abalone" => {
                let mut columns = vec![ColumnRole::Coded(vec!["M".into(), "F".into(), "I".into()])];
                columns.extend(nums(7));
                CsvSchema {
                    name: name.into(),
                    columns: with_label(columns),
                    labels: LabelEncoding::Quantile(2),
                }
            }
            "yeast" => CsvSchema {
                name: name.into(),
                columns: with_label(nums(8)),
                labels: classes(&[
                    "CYT", "NUC", "MIT", "ME3", "ME2", "ME1", "EXC", "VAC", "POX", "ERL",
                ]),
            },
            _ => return None,
        };
        Some(schema)
    }
}

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Reads a headerless CSV file under `schema`. Blank lines are skipped and
/// row order is preserved.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&bytes, schema)
}

pub fn parse_csv(bytes: &[u8], schema: &CsvSchema) -> Result<Dataset> {
    schema.label_column()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let n_features = schema.feature_count();
    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != schema.columns.len() {
            return Err(parse_error(
                line,
                format!(
                    "expected {} fields, found {}",
                    schema.columns.len(),
                    record.len()
                ),
            ));
        }
        for (col, (field, role)) in record.iter().zip(&schema.columns).enumerate() {
            match role {
                ColumnRole::Numeric => {
                    let v: f64 = field.parse().map_err(|_| {
                        parse_error(line, format!("column {}: `{field}` is not a number", col + 1))
                    })?;
                    if !v.is_finite() {
                        return Err(parse_error(line, format!("column {}: `{field}`", col + 1)));
                    }
                    features.push(v);
                }
                ColumnRole::Coded(values) => {
                    let code = values.iter().position(|v| v == field).ok_or_else(|| {
                        Error::Schema(format!(
                            "line {line}, column {}: unknown category `{field}`",
                            col + 1
                        ))
                    })?;
                    features.push(code as f64);
                }
                ColumnRole::Label => raw_labels.push((line, field.to_string())),
                ColumnRole::Skip => {}
            }
        }
        debug_assert_eq!(features.len(), raw_labels.len() * n_features);
    }
    if raw_labels.is_empty() {
        return Err(parse_error(1, "no data rows"));
    }

    let (labels, class_names, notes) = match &schema.labels {
        LabelEncoding::Classes(names) => {
            let labels = raw_labels
                .iter()
                .map(|(line, l)| {
                    names.iter().position(|n| n == l).ok_or_else(|| {
                        Error::Schema(format!("line {line}: unknown class `{l}`"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (labels, names.clone(), String::new())
        }
        LabelEncoding::Quantile(k) => quantile_labels(&raw_labels, *k)?,
    };
    let mut notes = notes;
    for (col, role) in schema.columns.iter().enumerate() {
        if let ColumnRole::Coded(values) = role {
            if !notes.is_empty() {
                notes.push_str("; ");
            }
            let codes: Vec<String> = values
                .iter()
                .enumerate()
                .map(|(i, v)| format!("{v}={i}"))
                .collect();
            notes.push_str(&format!("column {} coded {}", col + 1, codes.join(",")));
        }
    }
    let rows = labels.len();
    Dataset::new(
        Tensor::new(vec![rows, n_features], features)?,
        labels,
        DatasetMeta {
            name: schema.name.clone(),
            class_names,
            notes,
        },
    )
}

/// Cuts a numeric target at its `k`-quantiles: class = number of cut points
/// strictly below the value, so ties at a cut point fall in the lower class.
fn quantile_labels(raw: &[(u64, String)], k: usize) -> Result<(Vec<usize>, Vec<String>, String)> {
    if k < 2 {
        return Err(Error::Config(format!("quantile binning needs k ≥ 2, got {k}")));
    }
    let values = raw
        .iter()
        .map(|(line, v)| {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_error(*line, format!("label `{v}` is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let cuts: Vec<f64> = (1..k).map(|i| sorted[(i * n).div_ceil(k) - 1]).collect();
    let labels = values
        .iter()
        .map(|&v| cuts.iter().filter(|&&c| c < v).count())
        .collect();
    let names = (0..k)
        .map(|i| match (i.checked_sub(1).map(|j| cuts[j]), cuts.get(i)) {
            (None, Some(hi)) => format!("<={hi}"),
            (Some(lo), Some(hi)) => format!("({lo},{hi}]"),
            (Some(lo), None) => format!(">{lo}"),
            (None, None) => unreachable!("k ≥ 2"),
        })
        .collect();
    let cut_text: Vec<String> = cuts.iter().map(f64::to_string).collect();
    let notes = format!("label binned into {k} quantile classes at {}", cut_text.join(","));
    Ok((labels, names, notes))
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Length(format!("{what}: header truncated at byte {}", bytes.len())))
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES {
        return Err(Error::Format(format!(
            "image file magic {magic:#010x}, expected {IDX_IMAGES:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let need = n * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(Error::Length(format!(
            "image payload has {} bytes, header promises {n}×{rows}×{cols}",
            payload.len()
        )));
    }
    Ok((n, rows, cols, &payload[..need]))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS {
        return Err(Error::Format(format!(
            "label file magic {magic:#010x}, expected {IDX_LABELS:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(Error::Length(format!(
            "label payload has {} bytes, header promises {n}",
            payload.len()
        )));
    }
    Ok(&payload[..n])
}

/// Decodes IDX image and label bytes; pixels are scaled to `[0,1]` by /255.
pub fn decode_mnist(images: &[u8], labels: &[u8], name: &str) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Consistency(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Format(format!("digit label {bad} outside 0..=9")));
    }
    let features = Tensor::new(
        vec![n, rows * cols],
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )?;
    Dataset::new(
        features,
        labels.iter().map(|&l| usize::from(l)).collect(),
        DatasetMeta {
            name: name.to_string(),
            class_names: (0..10).map(|d| d.to_string()).collect(),
            notes: format!("{rows}x{cols} pixels scaled by 1/255"),
        },
    )
}

pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    decode_mnist(&images, &labels, "mnist")
}

/// Seeded train/test partition. With `stratify`, each class contributes to
/// the training split in proportion to its size (largest remainder). Both
/// splits keep the original row order.
pub fn split(
    dataset: &Dataset,
    n_train: usize,
    seed: u64,
    stratify: bool,
) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset, n_train, seed, stratify)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

pub fn split_indices(
    dataset: &Dataset,
    n_train: usize,
    seed: u64,
    stratify: bool,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = dataset.len();
    if n_train > n {
        return Err(Error::Domain(format!(
            "cannot take {n_train} training rows from {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; n];
    if stratify {
        let classes = dataset.classes();
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); classes];
        for (i, &l) in dataset.labels().iter().enumerate() {
            groups[l].push(i);
        }
        let exact: Vec<f64> = groups
            .iter()
            .map(|g| n_train as f64 * g.len() as f64 / n as f64)
            .collect();
        let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..classes).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - quota[a] as f64;
            let fb = exact[b] - quota[b] as f64;
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let missing = n_train - quota.iter().sum::<usize>();
        for &c in order.iter().take(missing) {
            quota[c] += 1;
        }
        for (group, q) in groups.iter_mut().zip(quota) {
            group.shuffle(&mut rng);
            for &i in &group[..q] {
                in_train[i] = true;
            }
        }
    } else {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for &i in &perm[..n_train] {
            in_train[i] = true;
        }
    }
    let train = (0..n).filter(|&i| in_train[i]).collect();
    let test = (0..n).filter(|&i| !in_train[i]).collect();
    Ok((train, test))
}

/// Epoch-seeded permutation of `0..n` cut into contiguous slices of
/// `batch_size` (the last may be short). A `batch_size` of 0 is treated as 1.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, epoch, u64::MAX));
    perm.shuffle(&mut rng);
    perm.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
