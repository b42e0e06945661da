//! Segmentation metrics and boundary analysis.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::SqnModel;
use crate::pointcloud::{ClassId, PointCloud, SpatialIndex};

/// `counts[g * C + p]` = points of true class `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn accumulate(gt: &[ClassId], pred: &[ClassId], num_classes: usize) -> Result<Self> {
        let mut cm = Self::new(num_classes);
        cm.add(gt, pred)?;
        Ok(cm)
    }

    pub fn add(&mut self, gt: &[ClassId], pred: &[ClassId]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::ShapeMismatch {
                op: "confusion matrix",
                lhs: vec![gt.len()],
                rhs: vec![pred.len()],
            });
        }
        let c = self.num_classes;
        if let Some(bad) = gt.iter().chain(pred).find(|&&l| l as usize >= c) {
            return Err(Error::invalid(format!("label {bad} is not below class count {c}")));
        }
        for (&g, &p) in gt.iter().zip(pred) {
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    /// Entrywise sum, for sharded accumulation.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::ShapeMismatch {
                op: "confusion merge",
                lhs: vec![self.num_classes],
                rhs: vec![other.num_classes],
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn true_positive(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    fn gt_count(&self, c: usize) -> u64 {
        (0..self.num_classes).map(|p| self.get(c, p)).sum()
    }

    fn pred_count(&self, c: usize) -> u64 {
        (0..self.num_classes).map(|g| self.get(g, c)).sum()
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            Err(Error::Empty("confusion matrix"))
        } else {
            Ok(())
        }
    }
}

pub fn oa(cm: &ConfusionMatrix) -> Result<f64> {
    cm.check_nonempty()?;
    let trace: u64 = (0..cm.num_classes).map(|c| cm.true_positive(c)).sum();
    Ok(trace as f64 / cm.total() as f64)
}

/// Mean recall over classes present in the ground truth.
pub fn macc(cm: &ConfusionMatrix) -> Result<f64> {
    cm.check_nonempty()?;
    let recalls: Vec<f64> = (0..cm.num_classes)
        .filter(|&c| cm.gt_count(c) > 0)
        .map(|c| cm.true_positive(c) as f64 / cm.gt_count(c) as f64)
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// `TP / (TP + FP + FN)` per class; `None` where the union is empty.
pub fn per_class_iou(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..cm.num_classes)
        .map(|c| {
            let tp = cm.true_positive(c);
            let union = cm.gt_count(c) + cm.pred_count(c) - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect()
}

/// Mean IoU over classes with a non-empty union.
pub fn miou(cm: &ConfusionMatrix) -> Result<f64> {
    cm.check_nonempty()?;
    let ious: Vec<f64> = per_class_iou(cm).into_iter().flatten().collect();
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Points with at least one ground-truth neighbor of another class within `radius`.
pub fn boundary_mask(cloud: &PointCloud, radius: f64) -> Result<Vec<bool>> {
    let labels = cloud.require_labels()?;
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("boundary radius must be positive, got {radius}")));
    }
    if cloud.is_empty() {
        return Ok(Vec::new());
    }
    let index = SpatialIndex::build(cloud.positions())?;
    cloud
        .positions()
        .iter()
        .zip(labels)
        .map(|(p, &l)| Ok(index.radius_neighbors(p, radius)?.iter().any(|&j| labels[j] != l)))
        .collect()
}

/// OA, mAcc and mIoU of one subset of points.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub points: u64,
    pub oa: f64,
    pub macc: f64,
    pub miou: f64,
    pub iou: Vec<Option<f64>>,
}

impl Summary {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            points: cm.total(),
            oa: oa(cm)?,
            macc: macc(cm)?,
            miou: miou(cm)?,
            iou: per_class_iou(cm),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySplit {
    pub radius: f64,
    pub boundary: Option<Summary>,
    pub interior: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub overall: Summary,
    pub boundaries: Vec<BoundarySplit>,
}

/// Metrics of `pred` against the cloud's labels, plus a boundary / interior
/// split for each radius.
pub fn evaluate(cloud: &PointCloud, pred: &[ClassId], radii: &[f64]) -> Result<EvalReport> {
    let gt = cloud.require_labels()?;
    let c = cloud.num_classes() as usize;
    let overall = Summary::from_confusion(&ConfusionMatrix::accumulate(gt, pred, c)?)?;
    let mut boundaries = Vec::with_capacity(radii.len());
    for &radius in radii {
        let mask = boundary_mask(cloud, radius)?;
        let mut parts = [ConfusionMatrix::new(c), ConfusionMatrix::new(c)];
        for (i, &b) in mask.iter().enumerate() {
            parts[b as usize].add(&gt[i..=i], &pred[i..=i])?;
        }
        let summarize = |cm: &ConfusionMatrix| (cm.total() > 0).then(|| Summary::from_confusion(cm)).transpose();
        boundaries.push(BoundarySplit {
            radius,
            interior: summarize(&parts[0])?,
            boundary: summarize(&parts[1])?,
        });
    }
    Ok(EvalReport { overall, boundaries })
}

/// Predict every point of `cloud` with `model` and evaluate.
pub fn eval_report(model: &SqnModel, cloud: &PointCloud, radii: &[f64]) -> Result<EvalReport> {
    evaluate(cloud, &model.predict_cloud(cloud)?, radii)
}

fn write_summary(out: &mut String, prefix: &str, s: &Summary) {
    let _ = writeln!(out, "{prefix}points,,{}", s.points);
    let _ = writeln!(out, "{prefix}oa,,{}", s.oa);
    let _ = writeln!(out, "{prefix}macc,,{}", s.macc);
    let _ = writeln!(out, "{prefix}miou,,{}", s.miou);
    for (c, iou) in s.iou.iter().enumerate() {
        match iou {
            Some(v) => {
                let _ = writeln!(out, "{prefix}iou,{c},{v}");
            }
            None => {
                let _ = writeln!(out, "{prefix}iou,{c},");
            }
        }
    }
}

impl EvalReport {
    /// Rows `metric,class,value`. Boundary rows are prefixed
    /// `boundary@<r>/` and `interior@<r>/`; an undefined IoU has an empty value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,class,value\n");
        write_summary(&mut out, "", &self.overall);
        for split in &self.boundaries {
            if let Some(s) = &split.boundary {
                write_summary(&mut out, &format!("boundary@{}/", split.radius), s);
            }
            if let Some(s) = &split.interior {
                write_summary(&mut out, &format!("interior@{}/", split.radius), s);
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        #[derive(Default)]
        struct Partial {
            points: Option<u64>,
            oa: Option<f64>,
            macc: Option<f64>,
            miou: Option<f64>,
            iou: Vec<Option<f64>>,
        }
        // Sections in first-appearance order keyed by prefix.
        let mut sections: Vec<(String, Partial)> = Vec::new();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "metric,class,value")) => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    reason: "expected header `metric,class,value`".into(),
                })
            }
        }
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |reason: String| Error::Parse { line: i + 1, reason };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 fields, got {}", fields.len())));
            }
            let (prefix, metric) = match fields[0].rsplit_once('/') {
                Some((p, m)) => (p.to_string(), m),
                None => (String::new(), fields[0]),
            };
            if !sections.iter().any(|(p, _)| *p == prefix) {
                sections.push((prefix.clone(), Partial::default()));
            }
            let part = &mut sections.iter_mut().find(|(p, _)| *p == prefix).expect("inserted").1;
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad value `{s}`")));
            match metric {
                "points" => part.points = Some(fields[2].parse().map_err(|_| err(format!("bad count `{}`", fields[2])))?),
                "oa" => part.oa = Some(num(fields[2])?),
                "macc" => part.macc = Some(num(fields[2])?),
                "miou" => part.miou = Some(num(fields[2])?),
                "iou" => {
                    let c: usize = fields[1].parse().map_err(|_| err(format!("bad class `{}`", fields[1])))?;
                    if part.iou.len() <= c {
                        part.iou.resize(c + 1, None);
                    }
                    part.iou[c] = if fields[2].is_empty() { None } else { Some(num(fields[2])?) };
                }
                other => return Err(err(format!("unknown metric `{other}`"))),
            }
        }
        let finish = |p: Partial, name: &str| -> Result<Summary> {
            let missing = |m: &str| Error::Parse {
                line: 0,
                reason: format!("section `{name}` lacks `{m}`"),
            };
            Ok(Summary {
                points: p.points.ok_or_else(|| missing("points"))?,
                oa: p.oa.ok_or_else(|| missing("oa"))?,
                macc: p.macc.ok_or_else(|| missing("macc"))?,
                miou: p.miou.ok_or_else(|| missing("miou"))?,
                iou: p.iou,
            })
        };
        let mut overall = None;
        let mut boundaries: Vec<BoundarySplit> = Vec::new();
        for (prefix, part) in sections {
            if prefix.is_empty() {
                overall = Some(finish(part, "overall")?);
                continue;
            }
            let (kind, r) = prefix.split_once('@').ok_or_else(|| Error::Parse {
                line: 0,
                reason: format!("bad section `{prefix}`"),
            })?;
            let radius: f64 = r.parse().map_err(|_| Error::Parse {
                line: 0,
                reason: format!("bad radius in `{prefix}`"),
            })?;
            let summary = finish(part, &prefix)?;
            let idx = match boundaries.iter().position(|b| b.radius == radius) {
                Some(i) => i,
                None => {
                    boundaries.push(BoundarySplit {
                        radius,
                        boundary: None,
                        interior: None,
                    });
                    boundaries.len() - 1
                }
            };
            match kind {
                "boundary" => boundaries[idx].boundary = Some(summary),
                "interior" => boundaries[idx].interior = Some(summary),
                other => {
                    return Err(Error::Parse {
                        line: 0,
                        reason: format!("unknown section kind `{other}`"),
                    })
                }
            }
        }
        Ok(Self {
            overall: overall.ok_or_else(|| Error::Parse {
                line: 0,
                reason: "no overall metrics".into(),
            })?,
            boundaries,
        })
    }
}
