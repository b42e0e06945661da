//! Sparse annotations: sampling, bookkeeping, persistence and pseudo labels.
//!
//! Label files (`SQNL v1`) are plain text:
//!
//! ```text
//! SQNL 1 <N> <C> <ratio> <seed>
//! <index> <class>
//! ...
//! ```
//!
//! with indices strictly ascending.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pointcloud::sampling::{count_for_ratio, seeded_prefix_sample};
use crate::pointcloud::{ClassId, PointCloud};

/// Annotated subset of a cloud of `n` points.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLabelSet {
    indices: Vec<usize>,
    labels: Vec<ClassId>,
    n: usize,
    num_classes: u16,
    /// Labeled fraction `len / n`.
    pub ratio: f64,
    pub seed: u64,
}

impl SparseLabelSet {
    /// Pairs need not be sorted; duplicates are rejected.
    pub fn new(mut pairs: Vec<(usize, ClassId)>, n: usize, num_classes: u16, seed: u64) -> Result<Self> {
        pairs.sort_unstable_by_key(|p| p.0);
        for (i, &(idx, class)) in pairs.iter().enumerate() {
            if idx >= n {
                return Err(Error::invalid(format!("label index {idx} out of range for {n} points")));
            }
            if class >= num_classes {
                return Err(Error::LabelOutOfRange {
                    record: idx as u64,
                    label: class as u32,
                    num_classes: num_classes as u32,
                });
            }
            if i > 0 && pairs[i - 1].0 == idx {
                return Err(Error::invalid(format!("index {idx} labeled twice")));
            }
        }
        let (indices, labels): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let ratio = if n == 0 { 0.0 } else { indices.len() as f64 / n as f64 };
        Ok(Self {
            indices,
            labels,
            n,
            num_classes,
            ratio,
            seed,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Size of the cloud the indices refer to.
    pub fn cloud_len(&self) -> usize {
        self.n
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, ClassId)> + '_ {
        self.indices.iter().copied().zip(self.labels.iter().copied())
    }

    pub fn positions(&self, cloud: &PointCloud) -> Vec<[f32; 3]> {
        self.indices.iter().map(|&i| cloud.positions()[i]).collect()
    }
}

/// Uniform annotation of `round(ratio * N)` points, labels copied from ground truth.
///
/// With a fixed seed a smaller ratio always labels a subset of a larger one.
pub fn sample_sparse_labels(cloud: &PointCloud, ratio: f64, seed: u64) -> Result<SparseLabelSet> {
    let gt = cloud.require_labels()?;
    let m = count_for_ratio(cloud.len(), ratio)?;
    let pairs = seeded_prefix_sample(cloud.len(), m, seed)
        .into_iter()
        .map(|i| (i, gt[i]))
        .collect();
    SparseLabelSet::new(pairs, cloud.len(), cloud.num_classes(), seed)
}

pub fn label_histogram(labels: &SparseLabelSet, num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &c in labels.labels() {
        counts[c as usize] += 1;
    }
    counts
}

/// Loss weights `w_c ∝ 1 / sqrt(count_c + 1)`, scaled to mean 1.
pub fn class_weights(labels: &SparseLabelSet, num_classes: usize) -> Vec<f64> {
    let raw: Vec<f64> = label_histogram(labels, num_classes)
        .into_iter()
        .map(|c| 1.0 / ((c + 1) as f64).sqrt())
        .collect();
    let mean = raw.iter().sum::<f64>() / num_classes as f64;
    raw.into_iter().map(|w| w / mean).collect()
}

/// Dense labels from predictions, with annotated points reset to their true class.
pub fn overlay_labels(predictions: &[ClassId], sparse: &SparseLabelSet) -> Result<Vec<ClassId>> {
    if predictions.len() != sparse.cloud_len() {
        return Err(Error::ShapeMismatch {
            op: "overlay_labels",
            lhs: vec![predictions.len()],
            rhs: vec![sparse.cloud_len()],
        });
    }
    let mut out = predictions.to_vec();
    for (i, c) in sparse.iter() {
        out[i] = c;
    }
    Ok(out)
}

pub fn format_label_file(set: &SparseLabelSet) -> String {
    let mut out = format!(
        "SQNL 1 {} {} {} {}\n",
        set.n, set.num_classes, set.ratio, set.seed
    );
    for (i, c) in set.iter() {
        writeln!(out, "{i} {c}").expect("writing to a String");
    }
    out
}

/// Parse an `SQNL v1` body; `n` and `num_classes` must match the header.
pub fn parse_label_file(text: &str, n: usize, num_classes: u16) -> Result<SparseLabelSet> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        reason: "missing SQNL header".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let header_err = |reason: String| Error::Parse { line: 1, reason };
    if fields.len() != 6 || fields[0] != "SQNL" {
        return Err(header_err("expected `SQNL 1 <N> <C> <ratio> <seed>`".into()));
    }
    if fields[1] != "1" {
        return Err(header_err(format!("unsupported version {}", fields[1])));
    }
    let file_n: usize = fields[2].parse().map_err(|_| header_err(format!("bad point count `{}`", fields[2])))?;
    let file_c: u16 = fields[3].parse().map_err(|_| header_err(format!("bad class count `{}`", fields[3])))?;
    let ratio: f64 = fields[4].parse().map_err(|_| header_err(format!("bad ratio `{}`", fields[4])))?;
    let seed: u64 = fields[5].parse().map_err(|_| header_err(format!("bad seed `{}`", fields[5])))?;
    if file_n != n || file_c != num_classes {
        return Err(header_err(format!(
            "file is for {file_n} points / {file_c} classes, cloud has {n} / {num_classes}"
        )));
    }

    let mut pairs = Vec::new();
    let mut last: Option<usize> = None;
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse { line: line_no, reason };
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err("expected `<index> <class>`".into()));
        };
        let idx: usize = a.parse().map_err(|_| err(format!("bad index `{a}`")))?;
        let class: u32 = b.parse().map_err(|_| err(format!("bad class `{b}`")))?;
        if idx >= n {
            return Err(err(format!("index {idx} out of range for {n} points")));
        }
        if class >= num_classes as u32 {
            return Err(err(format!("class {class} out of range for {num_classes} classes")));
        }
        if last.is_some_and(|l| idx <= l) {
            return Err(err(format!("index {idx} is not strictly ascending")));
        }
        last = Some(idx);
        pairs.push((idx, class as ClassId));
    }
    let mut set = SparseLabelSet::new(pairs, n, num_classes, seed)?;
    set.ratio = ratio;
    Ok(set)
}

pub fn export_label_file(set: &SparseLabelSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_label_file(set)).map_err(|e| Error::io(path, e))
}

pub fn import_label_file(path: impl AsRef<Path>, n: usize, num_classes: u16) -> Result<SparseLabelSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_label_file(&text, n, num_classes)
}
