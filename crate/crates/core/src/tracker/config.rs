use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Association gate on 3D IoU.
    pub iou_min: f64,
    /// Consecutive misses tolerated before a tracklet is dropped.
    pub max_mis: u32,
    /// Consecutive matches needed to confirm a new tracklet.
    pub min_det: u32,
    /// Emit tracklets that have been matched in every frame since the start
    /// of the sequence before they reach `min_det`.
    pub warmup_emit: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            iou_min: 0.01,
            max_mis: 2,
            min_det: 3,
            warmup_emit: true,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_min) {
            return Err(Error::Config(format!(
                "iou_min must lie in [0, 1], got {}",
                self.iou_min
            )));
        }
        if self.min_det < 1 {
            return Err(Error::Config("min_det must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FlowSourceKind {
    #[default]
    Oracle,
    Nn,
    File,
}

impl std::str::FromStr for FlowSourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(FlowSourceKind::Oracle),
            "nn" => Ok(FlowSourceKind::Nn),
            "file" => Ok(FlowSourceKind::File),
            other => Err(Error::Config(format!("unknown flow source `{other}`"))),
        }
    }
}

/// Contents of a tracker configuration file:
///
/// ```text
/// iou_min = 0.01
/// max_mis = 2
/// min_det = 3
/// flow_source = "nn"
/// category = "Car"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerFileConfig {
    pub iou_min: f64,
    pub max_mis: u32,
    pub min_det: u32,
    pub warmup_emit: bool,
    pub flow_source: FlowSourceKind,
    pub category: String,
}

impl Default for TrackerFileConfig {
    fn default() -> Self {
        let t = TrackerConfig::default();
        TrackerFileConfig {
            iou_min: t.iou_min,
            max_mis: t.max_mis,
            min_det: t.min_det,
            warmup_emit: t.warmup_emit,
            flow_source: FlowSourceKind::default(),
            category: "Car".into(),
        }
    }
}

impl TrackerFileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrackerFileConfig = toml::from_str(text).map_err(|e| Error::Config(format!("tracker config: {e}")))?;
        cfg.tracker().validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            iou_min: self.iou_min,
            max_mis: self.max_mis,
            min_det: self.min_det,
            warmup_emit: self.warmup_emit,
        }
    }
}
