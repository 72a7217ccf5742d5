use nalgebra::Point3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PointLabel {
    #[default]
    Unlabeled,
    Ground,
    Instance(u32),
}

impl PointLabel {
    pub fn is_ground(&self) -> bool {
        matches!(self, PointLabel::Ground)
    }

    pub fn instance(&self) -> Option<u32> {
        match self {
            PointLabel::Instance(id) => Some(*id),
            _ => None,
        }
    }
}

/// One frame of points. Features are stored row-major with `feature_dim`
/// values per point; labels are kept aligned with positions by every
/// operation in this crate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    positions: Vec<Point3<f64>>,
    features: Vec<f32>,
    feature_dim: usize,
    labels: Vec<PointLabel>,
}

impl PointCloud {
    pub fn new(
        positions: Vec<Point3<f64>>,
        features: Vec<f32>,
        feature_dim: usize,
        labels: Vec<PointLabel>,
    ) -> Result<Self> {
        if features.len() != positions.len() * feature_dim {
            return Err(Error::Input(format!(
                "{} feature values for {} points of dimension {feature_dim}",
                features.len(),
                positions.len()
            )));
        }
        if labels.len() != positions.len() {
            return Err(Error::Input(format!(
                "{} labels for {} points",
                labels.len(),
                positions.len()
            )));
        }
        if let Some(i) = positions.iter().position(|p| !p.coords.iter().all(|v| v.is_finite())) {
            return Err(Error::Input(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud {
            positions,
            features,
            feature_dim,
            labels,
        })
    }

    /// Unlabeled cloud without features. Panics on non-finite input.
    pub fn from_positions(positions: Vec<Point3<f64>>) -> Self {
        let n = positions.len();
        PointCloud::new(positions, Vec::new(), 0, vec![PointLabel::Unlabeled; n]).expect("finite positions")
    }

    pub fn with_labels(positions: Vec<Point3<f64>>, labels: Vec<PointLabel>) -> Result<Self> {
        PointCloud::new(positions, Vec::new(), 0, labels)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3<f64>] {
        &self.positions
    }

    pub fn labels(&self) -> &[PointLabel] {
        &self.labels
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn set_label(&mut self, i: usize, label: PointLabel) {
        self.labels[i] = label;
    }

    /// New cloud made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        for &i in indices {
            features.extend_from_slice(self.feature(i));
        }
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            features,
            feature_dim: self.feature_dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}
