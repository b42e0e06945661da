use crate::error::{Error, Result};

/// Class id of a point. Matches the `u16` label block of the binary format.
pub type ClassId = u16;

/// A point cloud with optional per-point colors and ground-truth labels.
///
/// Every optional sequence has exactly one entry per position, positions are
/// finite, and every label is below `num_classes`. The constructors enforce
/// this, so any `PointCloud` in hand is valid.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f32; 3]>,
    colors: Option<Vec<[u8; 3]>>,
    labels: Option<Vec<ClassId>>,
    num_classes: u16,
}

impl PointCloud {
    pub fn new(
        positions: Vec<[f32; 3]>,
        colors: Option<Vec<[u8; 3]>>,
        labels: Option<Vec<ClassId>>,
        num_classes: u16,
    ) -> Result<Self> {
        let n = positions.len();
        if let Some(i) = positions
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidCloud(format!(
                "position {i} is not finite: {:?}",
                positions[i]
            )));
        }
        if let Some(c) = &colors {
            if c.len() != n {
                return Err(Error::InvalidCloud(format!(
                    "{} colors for {n} points",
                    c.len()
                )));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::InvalidCloud(format!(
                    "{} labels for {n} points",
                    l.len()
                )));
            }
            if let Some((i, &bad)) = l.iter().enumerate().find(|(_, &c)| c >= num_classes) {
                return Err(Error::LabelOutOfRange {
                    record: i as u64,
                    label: bad as u32,
                    num_classes: num_classes as u32,
                });
            }
        }
        Ok(Self {
            positions,
            colors,
            labels,
            num_classes,
        })
    }

    /// Unlabeled, uncolored cloud.
    pub fn from_positions(positions: Vec<[f32; 3]>) -> Result<Self> {
        Self::new(positions, None, None, 0)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f32; 3]] {
        &self.positions
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    pub fn labels(&self) -> Option<&[ClassId]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    /// Ground-truth labels, or [`Error::MissingLabels`].
    pub fn require_labels(&self) -> Result<&[ClassId]> {
        self.labels.as_deref().ok_or(Error::MissingLabels)
    }

    /// Replace the label block, validating against `num_classes`.
    pub fn with_labels(self, labels: Vec<ClassId>, num_classes: u16) -> Result<Self> {
        Self::new(self.positions, self.colors, Some(labels), num_classes)
    }

    /// Same attributes, new positions (e.g. after augmentation).
    pub fn with_positions(&self, positions: Vec<[f32; 3]>) -> Result<Self> {
        if positions.len() != self.len() {
            return Err(Error::InvalidCloud(format!(
                "{} replacement positions for {} points",
                positions.len(),
                self.len()
            )));
        }
        Self::new(
            positions,
            self.colors.clone(),
            self.labels.clone(),
            self.num_classes,
        )
    }

    /// Sub-cloud made of the given source rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            num_classes: self.num_classes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nan_position() {
        let err = PointCloud::from_positions(vec![[0.0, f32::NAN, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::InvalidCloud(_)));
    }

    #[test]
    fn rejects_label_length_mismatch() {
        let err = PointCloud::new(vec![[0.0; 3]; 2], None, Some(vec![0]), 2).unwrap_err();
        assert!(matches!(err, Error::InvalidCloud(_)));
    }

    #[test]
    fn rejects_label_at_class_count() {
        let err = PointCloud::new(vec![[0.0; 3]; 2], None, Some(vec![0, 3]), 3).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { record: 1, label: 3, .. }));
    }

    #[test]
    fn select_keeps_attributes_aligned() {
        let cloud = PointCloud::new(
            vec![[0.0; 3], [1.0; 3], [2.0; 3]],
            Some(vec![[0; 3], [10; 3], [20; 3]]),
            Some(vec![0, 1, 2]),
            3,
        )
        .unwrap();
        let sub = cloud.select(&[2, 0]);
        assert_eq!(sub.positions(), &[[2.0; 3], [0.0; 3]]);
        assert_eq!(sub.colors().unwrap(), &[[20; 3], [0; 3]]);
        assert_eq!(sub.labels().unwrap(), &[2, 0]);
    }
}
