//! Per-sequence driver: conditions each scan, obtains flow between
//! consecutive sampled scans and steps the tracker.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calib::Calibration;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::flow::{estimate_nn, estimate_oracle, FileFlow, FlowField, NnFlowConfig, RigidMotion};
use crate::kitti_io::{self, FrameLabels};
use crate::metrics::{Sequence, TrackedBox};
use crate::preprocess::{filter_fov, fit_ground, sample_points, Frustum, GroundConfig};
use crate::sim::{layout, SimFrame};
use crate::tracker::{Detection, MotionInput, TrackOutput, Tracker, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Predictor {
    #[default]
    Flow,
    /// Constant-velocity extrapolation; needs no scans.
    #[serde(rename = "cv")]
    ConstantVelocity,
}

impl std::str::FromStr for Predictor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flow" => Ok(Predictor::Flow),
            "cv" | "constant-velocity" => Ok(Predictor::ConstantVelocity),
            other => Err(Error::Config(format!("unknown predictor `{other}`"))),
        }
    }
}

/// Where the flow between consecutive scans comes from.
#[derive(Debug, Clone)]
pub enum FlowSource {
    /// Exact flow from per-instance rigid motions; entry `t` maps frame
    /// `t - 1` to `t`.
    Oracle(Vec<HashMap<u32, RigidMotion>>),
    NearestNeighbor(NnFlowConfig),
    /// Precomputed files; the source points stored in each file stand in
    /// for the previous sampled scan.
    Files(PathBuf),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub tracker: TrackerConfig,
    pub predictor: Predictor,
    /// Crop applied before ground removal; `None` keeps every point.
    pub frustum: Option<Frustum>,
    pub ground: GroundConfig,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tracker: TrackerConfig::default(),
            predictor: Predictor::Flow,
            frustum: None,
            ground: GroundConfig::default(),
            sample_size: 6000,
            seed: 0,
        }
    }
}

/// Scans and detections of one sequence; `clouds` may be empty for the
/// constant-velocity predictor.
#[derive(Debug, Clone, Default)]
pub struct SequenceInput {
    pub clouds: Vec<PointCloud>,
    pub detections: Vec<Vec<Detection>>,
}

impl SequenceInput {
    pub fn from_sim(frames: &[SimFrame]) -> (Self, Vec<HashMap<u32, RigidMotion>>) {
        let input = SequenceInput {
            clouds: frames.iter().map(|f| f.cloud.clone()).collect(),
            detections: frames.iter().map(|f| f.detections.clone()).collect(),
        };
        (input, frames.iter().map(|f| f.motions.clone()).collect())
    }

    pub fn frames(&self) -> usize {
        self.clouds.len().max(self.detections.len())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackRun {
    /// Emitted tracks per frame.
    pub frames: Vec<Vec<TrackOutput>>,
    /// Tracklet-frames predicted without flow support.
    pub flow_starved: usize,
}

impl TrackRun {
    pub fn to_sequence(&self) -> Sequence {
        self.frames
            .iter()
            .map(|f| {
                f.iter()
                    .map(|t| TrackedBox {
                        id: t.id as i64,
                        bbox: t.bbox,
                        score: Some(t.confidence),
                    })
                    .collect()
            })
            .collect()
    }
}

fn frame_seed(seed: u64, frame: usize) -> u64 {
    seed ^ (frame as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Crop, ground labeling and sampling of one scan.
pub fn condition(cloud: &PointCloud, cfg: &PipelineConfig, frame: usize) -> Result<PointCloud> {
    let cropped = match &cfg.frustum {
        Some(f) => filter_fov(cloud, f)?,
        None => cloud.clone(),
    };
    let labeled = if cropped.len() >= 3 {
        fit_ground(&cropped, &cfg.ground)?.cloud
    } else {
        cropped
    };
    Ok(sample_points(&labeled, cfg.sample_size, frame_seed(cfg.seed, frame))?.cloud)
}

pub fn run_sequence(input: &SequenceInput, cfg: &PipelineConfig, flow: &FlowSource) -> Result<TrackRun> {
    let frames = input.frames();
    let empty = Vec::new();
    let mut tracker = Tracker::new(cfg.tracker)?;
    let mut run = TrackRun::default();

    if cfg.predictor == Predictor::ConstantVelocity {
        for t in 0..frames {
            let dets = input.detections.get(t).unwrap_or(&empty);
            let out = tracker.step(dets, MotionInput::ConstantVelocity)?;
            run.frames.push(out.tracks);
        }
        return Ok(run);
    }

    if input.clouds.len() != frames {
        return Err(Error::Input(format!(
            "{} scans for {frames} frames of detections",
            input.clouds.len()
        )));
    }
    match flow {
        FlowSource::Oracle(m) if m.len() < frames => {
            return Err(Error::Input(format!(
                "rigid motions cover {} of {frames} frames",
                m.len()
            )));
        }
        FlowSource::Files(dir) => {
            if let Some(frame) = (FileFlow { dir: dir.clone() }).first_missing(frames) {
                return Err(Error::Flow {
                    frame,
                    msg: format!("missing flow file {}", FileFlow::path_for(dir, frame).display()),
                });
            }
        }
        _ => {}
    }

    let mut prev: Option<PointCloud> = None;
    for t in 0..frames {
        let dets = input.detections.get(t).unwrap_or(&empty);
        let needs_scan = !matches!(flow, FlowSource::Files(_));
        let curr = if needs_scan {
            Some(condition(&input.clouds[t], cfg, t)?)
        } else {
            None
        };
        let out = match (&prev, t) {
            (_, 0) => tracker.step(dets, MotionInput::ConstantVelocity)?,
            _ => {
                let (prev_cloud, field): (PointCloud, FlowField) = match flow {
                    FlowSource::Oracle(m) => {
                        let p = prev.clone().expect("previous scan conditioned");
                        let f = estimate_oracle(&p, &m[t]).map_err(|e| Error::Flow {
                            frame: t,
                            msg: e.to_string(),
                        })?;
                        (p, f)
                    }
                    FlowSource::NearestNeighbor(nn) => {
                        let p = prev.clone().expect("previous scan conditioned");
                        let f = estimate_nn(&p, curr.as_ref().expect("scan conditioned"), nn);
                        (p, f)
                    }
                    FlowSource::Files(dir) => {
                        let file = FileFlow { dir: dir.clone() }.read(t)?;
                        (PointCloud::from_positions(file.sources), file.field)
                    }
                };
                tracker.step(
                    dets,
                    MotionInput::Flow {
                        prev_cloud: &prev_cloud,
                        flow: &field,
                    },
                )?
            }
        };
        run.flow_starved += out.flow_starved.len();
        run.frames.push(out.tracks);
        prev = curr;
    }
    Ok(run)
}

/// Scans `000000.bin`, `000001.bin`, ... of a directory. When a sibling
/// `instances` directory holds per-point tags for every scan they are
/// attached as labels.
pub fn load_clouds(dir: &Path) -> Result<Vec<PointCloud>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".bin"))
        .collect();
    names.sort();
    for (i, n) in names.iter().enumerate() {
        if *n != layout::frame_file(i, "bin") {
            return Err(Error::Input(format!(
                "{}: scans must be numbered contiguously from 000000.bin, found {n} at position {i}",
                dir.display()
            )));
        }
    }
    let inst_dir = dir.parent().map(|p| p.join(layout::INSTANCES));
    let tagged = inst_dir
        .as_ref()
        .is_some_and(|d| (0..names.len()).all(|i| d.join(layout::frame_file(i, "bin")).is_file()));
    names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let cloud = kitti_io::read_velodyne(&dir.join(n))?;
            if !tagged {
                return Ok(cloud);
            }
            let p = inst_dir.as_ref().unwrap().join(layout::frame_file(i, "bin"));
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let labels = kitti_io::decode_point_labels(&bytes, &p)?;
            if labels.len() != cloud.len() {
                return Err(Error::Input(format!(
                    "{}: {} tags for {} points",
                    p.display(),
                    labels.len(),
                    cloud.len()
                )));
            }
            PointCloud::new(
                cloud.positions().to_vec(),
                cloud.features().to_vec(),
                cloud.feature_dim(),
                labels,
            )
        })
        .collect()
}

/// Detections of one category per frame, converted to the LiDAR frame.
/// Rows without a score get confidence 1.
pub fn detections_from_labels(
    labels: &FrameLabels,
    calib: &Calibration,
    category: &str,
    frames: usize,
) -> Result<Vec<Vec<Detection>>> {
    if let Some((&last, _)) = labels.iter().next_back() {
        if last >= frames {
            return Err(Error::Input(format!(
                "detections reference frame {last} of a {frames}-frame sequence"
            )));
        }
    }
    let mut out = vec![Vec::new(); frames];
    for (&f, rows) in labels {
        for r in rows.iter().filter(|r| r.category == category) {
            out[f].push(Detection::new(
                r.to_lidar_box(calib)?,
                r.score.unwrap_or(1.0),
                r.category.clone(),
            )?);
        }
    }
    Ok(out)
}

/// Label rows of one category as an evaluation sequence, boxes taken in
/// the camera-attached frame.
pub fn labels_to_sequence(labels: &FrameLabels, category: &str, frames: usize) -> Result<Sequence> {
    let frames = frames.max(labels.keys().next_back().map_or(0, |f| f + 1));
    let mut seq = vec![Vec::new(); frames];
    for (&f, rows) in labels {
        for r in rows.iter().filter(|r| r.category == category) {
            seq[f].push(TrackedBox {
                id: r.track_id,
                bbox: r.camera_frame_box()?,
                score: r.score,
            });
        }
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{recall_sweep, EvalConfig};
    use crate::sim::{generate, Scenario};

    #[test]
    fn zero_noise_demo_is_perfect() {
        let frames = generate(&Scenario::demo()).unwrap();
        let (input, motions) = SequenceInput::from_sim(&frames);
        let run = run_sequence(&input, &PipelineConfig::default(), &FlowSource::Oracle(motions)).unwrap();
        assert_eq!(run.flow_starved, 0);
        let gt: Sequence = frames
            .iter()
            .map(|f| {
                f.gt.iter()
                    .map(|o| TrackedBox {
                        id: o.id as i64,
                        bbox: o.bbox,
                        score: None,
                    })
                    .collect()
            })
            .collect();
        let rep = recall_sweep(&[(gt, run.to_sequence())], &EvalConfig::new(0.7, "Car")).unwrap();
        assert_eq!((rep.samota, rep.mota, rep.ids, rep.frag), (100.0, 1.0, 0, 0));
    }

    #[test]
    fn cv_runs_without_scans() {
        let frames = generate(&Scenario::demo()).unwrap();
        let input = SequenceInput {
            clouds: vec![],
            detections: frames.iter().map(|f| f.detections.clone()).collect(),
        };
        let cfg = PipelineConfig {
            predictor: Predictor::ConstantVelocity,
            ..Default::default()
        };
        let run = run_sequence(&input, &cfg, &FlowSource::Oracle(vec![])).unwrap();
        assert_eq!(run.frames.len(), 30);
        assert_eq!(run.frames[0].len(), 5);
    }

    #[test]
    fn missing_flow_file_names_frame() {
        let frames = generate(&Scenario::demo()).unwrap();
        let (input, _) = SequenceInput::from_sim(&frames[..4]);
        let dir = tempfile::tempdir().unwrap();
        let err = run_sequence(
            &input,
            &PipelineConfig::default(),
            &FlowSource::Files(dir.path().into()),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Flow { frame: 1, .. }), "{err}");
    }

    #[test]
    fn scan_count_must_match() {
        let frames = generate(&Scenario::demo()).unwrap();
        let (mut input, motions) = SequenceInput::from_sim(&frames[..4]);
        input.clouds.pop();
        assert!(run_sequence(&input, &PipelineConfig::default(), &FlowSource::Oracle(motions)).is_err());
    }
}
