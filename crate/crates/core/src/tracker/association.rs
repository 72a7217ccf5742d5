use nalgebra::DMatrix;

use crate::assignment::max_weight_assignment;
use crate::geometry::{iou3d, Box3D};

use super::Detection;

/// A tracklet's predicted box together with its class tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicted {
    pub bbox: Box3D,
    pub category: String,
}

/// `T x M` matrix of 3D IoU between predictions and detections; pairs of
/// different categories score 0.
pub fn build_similarity(predicted: &[Predicted], detections: &[Detection]) -> DMatrix<f64> {
    DMatrix::from_fn(predicted.len(), detections.len(), |i, j| {
        let (p, d) = (&predicted[i], &detections[j]);
        if p.category == d.category {
            iou3d(&p.bbox, &d.bbox)
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Association {
    /// `(tracklet, detection)` pairs, ascending by tracklet.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracklets: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Maximum-total-similarity one-to-one assignment; assigned pairs scoring
/// below `iou_min` are released on both sides.
pub fn associate(similarity: &DMatrix<f64>, iou_min: f64) -> Association {
    let (rows, cols) = similarity.shape();
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut matches = Vec::new();
    for (i, j) in max_weight_assignment(similarity) {
        if similarity[(i, j)] >= iou_min {
            row_used[i] = true;
            col_used[j] = true;
            matches.push((i, j));
        }
    }
    Association {
        matches,
        unmatched_tracklets: (0..rows).filter(|&i| !row_used[i]).collect(),
        unmatched_detections: (0..cols).filter(|&j| !col_used[j]).collect(),
    }
}
