//! Tracking-by-detection for LiDAR point clouds where tracklet motion is
//! predicted from per-point scene flow instead of a hand-tuned filter.
//!
//! The pipeline per frame pair is: condition the cloud ([`preprocess`]),
//! obtain a flow field aligned with the previous frame's sampled points
//! ([`flow`]), turn the flow inside each tracklet box into an offset,
//! associate predicted boxes with detections by oriented 3D IoU and an
//! optimal assignment, then run the birth/death bookkeeping ([`tracker`]).
//! [`metrics`] implements the recall-swept 3D MOT evaluation and [`sim`]
//! produces synthetic scenes with complete ground truth.

pub mod assignment;
pub mod calib;
pub mod cli;
pub mod cloud;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod kitti_io;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod sim;
pub mod tracker;

pub use cloud::{PointCloud, PointLabel};
pub use error::{Error, Result};
pub use flow::FlowField;
pub use geometry::{iou3d, Box3D};
pub use tracker::{Detection, Tracker, TrackerConfig};
