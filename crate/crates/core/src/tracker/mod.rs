//! Flow-driven tracking-by-detection.
//!
//! Each frame, every live tracklet is moved by the mean scene flow of the
//! previous-frame points inside its box, predicted boxes are matched to the
//! new detections by 3D IoU with an optimal assignment, and matched
//! tracklets adopt the detection box verbatim. Unmatched detections start
//! provisional tracklets that must be matched `min_det` frames in a row to
//! be confirmed; confirmed tracklets survive up to `max_mis` consecutive
//! misses while being advanced by their predicted motion.

mod association;
mod config;
mod motion;

pub use association::{associate, build_similarity, Association, Predicted};
pub use config::{FlowSourceKind, TrackerConfig, TrackerFileConfig};
pub use motion::{compute_offset, predict, predict_constant_velocity, yaw_increment, Offset, OffsetEstimate};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geometry::Box3D;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: Box3D,
    pub confidence: f64,
    pub category: String,
}

impl Detection {
    pub fn new(bbox: Box3D, confidence: f64, category: impl Into<String>) -> Result<Self> {
        if !confidence.is_finite() {
            return Err(Error::Input(format!("detection confidence {confidence} is not finite")));
        }
        Ok(Detection {
            bbox,
            confidence,
            category: category.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: u64,
    pub bbox: Box3D,
    /// Score of the last adopted detection.
    pub confidence: f64,
    pub category: String,
    /// Consecutive frames without a match.
    pub age_missed: u32,
    /// Consecutive frames with a match.
    pub hits: u32,
    pub confirmed: bool,
    /// Yaw one state before `bbox`.
    pub yaw_prev: Option<f64>,
    /// Box one state before `bbox`, used by the constant-velocity predictor.
    pub prev_box: Option<Box3D>,
}

impl Tracklet {
    fn history(&self) -> Vec<Box3D> {
        self.prev_box.into_iter().chain(Some(self.bbox)).collect()
    }

    fn advance_to(&mut self, next: Box3D) {
        self.prev_box = Some(self.bbox);
        self.yaw_prev = Some(self.bbox.theta());
        self.bbox = next;
    }
}

/// A confirmed track reported for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub id: u64,
    pub bbox: Box3D,
    pub confidence: f64,
    pub category: String,
}

/// Where predicted boxes come from.
#[derive(Debug, Clone, Copy)]
pub enum MotionInput<'a> {
    /// Flow aligned with the previous frame's sampled points.
    Flow {
        prev_cloud: &'a PointCloud,
        flow: &'a FlowField,
    },
    /// Constant-velocity extrapolation of each tracklet's last two states.
    ConstantVelocity,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub tracks: Vec<TrackOutput>,
    /// Tracklets with no flow support this frame (predicted by constant
    /// velocity instead).
    pub flow_starved: Vec<u64>,
}

/// Tracking state of one sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracklets: Vec<Tracklet>,
    next_id: u64,
    frame: usize,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Tracker {
            cfg,
            tracklets: Vec::new(),
            next_id: 0,
            frame: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    /// Number of frames processed so far.
    pub fn frames_seen(&self) -> usize {
        self.frame
    }

    fn predict_all(&self, motion: &MotionInput<'_>) -> Result<(Vec<Box3D>, Vec<u64>)> {
        let mut starved = Vec::new();
        let mut boxes = Vec::with_capacity(self.tracklets.len());
        for trk in &self.tracklets {
            let next = match motion {
                MotionInput::Flow { prev_cloud, flow } => {
                    let est = compute_offset(trk, prev_cloud, flow)?;
                    if est.flow_starved() {
                        starved.push(trk.id);
                        predict_constant_velocity(&trk.history())
                    } else {
                        predict(trk, &est.offset)
                    }
                }
                MotionInput::ConstantVelocity => predict_constant_velocity(&trk.history()),
            };
            boxes.push(next);
        }
        Ok((boxes, starved))
    }

    /// Processes the detections of the next frame. On error the state is
    /// left untouched.
    pub fn step(&mut self, detections: &[Detection], motion: MotionInput<'_>) -> Result<StepOutput> {
        if let MotionInput::Flow { prev_cloud, flow } = &motion {
            flow.check_aligned(prev_cloud)?;
        }
        if let Some(d) = detections.iter().find(|d| !d.confidence.is_finite()) {
            return Err(Error::Input(format!(
                "detection confidence {} is not finite",
                d.confidence
            )));
        }

        let (predicted, flow_starved) = self.predict_all(&motion)?;
        let queries: Vec<Predicted> = predicted
            .iter()
            .zip(&self.tracklets)
            .map(|(b, t)| Predicted {
                bbox: *b,
                category: t.category.clone(),
            })
            .collect();
        let similarity = build_similarity(&queries, detections);
        let assoc = associate(&similarity, self.cfg.iou_min);

        let mut matched_det: Vec<Option<usize>> = vec![None; self.tracklets.len()];
        for &(t, d) in &assoc.matches {
            matched_det[t] = Some(d);
        }

        let old = std::mem::take(&mut self.tracklets);
        for ((mut trk, pred), det_idx) in old.into_iter().zip(predicted).zip(matched_det) {
            match det_idx {
                Some(d) => {
                    let det = &detections[d];
                    trk.advance_to(det.bbox);
                    trk.confidence = det.confidence;
                    trk.category = det.category.clone();
                    trk.hits += 1;
                    trk.age_missed = 0;
                    if trk.hits >= self.cfg.min_det {
                        trk.confirmed = true;
                    }
                    self.tracklets.push(trk);
                }
                None => {
                    // provisional tracklets need an unbroken run of matches
                    if !trk.confirmed {
                        continue;
                    }
                    trk.age_missed += 1;
                    trk.hits = 0;
                    if trk.age_missed > self.cfg.max_mis {
                        continue;
                    }
                    trk.advance_to(pred);
                    self.tracklets.push(trk);
                }
            }
        }

        for &d in &assoc.unmatched_detections {
            let det = &detections[d];
            self.tracklets.push(Tracklet {
                id: self.next_id,
                bbox: det.bbox,
                confidence: det.confidence,
                category: det.category.clone(),
                age_missed: 0,
                hits: 1,
                confirmed: self.cfg.min_det <= 1,
                yaw_prev: None,
                prev_box: None,
            });
            self.next_id += 1;
        }

        let frame = self.frame;
        self.frame += 1;
        let warmup = self.cfg.warmup_emit;
        let mut tracks: Vec<TrackOutput> = self
            .tracklets
            .iter()
            .filter(|t| t.confirmed || (warmup && t.hits as usize == frame + 1))
            .map(|t| TrackOutput {
                id: t.id,
                bbox: t.bbox,
                confidence: t.confidence,
                category: t.category.clone(),
            })
            .collect();
        tracks.sort_by_key(|t| t.id);
        Ok(StepOutput { tracks, flow_starved })
    }
}
