//! Scene flow: one displacement per previous-frame point.
//!
//! Three sources sit behind [`FlowEstimator`]: exact flow from known rigid
//! motions ([`OracleFlow`]), a nearest-neighbour baseline ([`NearestNeighborFlow`])
//! and flow exported by an external network ([`FileFlow`]).
//!
//! Flow files are little-endian: magic `SFL1`, `u32` point count, then per
//! point six `f32` (source x, y, z, flow dx, dy, dz).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Rotation3, Vector3};

use crate::cloud::{PointCloud, PointLabel};
use crate::error::{Error, Result};

pub const FLOW_MAGIC: &[u8; 4] = b"SFL1";
/// Allowed deviation between stored source points and the sampled cloud.
pub const ALIGNMENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowField {
    vectors: Vec<Vector3<f64>>,
}

impl FlowField {
    pub fn new(vectors: Vec<Vector3<f64>>) -> Result<Self> {
        if let Some(i) = vectors.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Input(format!("flow vector {i} is not finite")));
        }
        Ok(FlowField { vectors })
    }

    pub fn zeros(n: usize) -> Self {
        FlowField {
            vectors: vec![Vector3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vector3<f64>] {
        &self.vectors
    }

    /// Errors unless there is exactly one vector per source point.
    pub fn check_aligned(&self, prev: &PointCloud) -> Result<()> {
        if self.len() != prev.len() {
            return Err(Error::Contract(format!(
                "flow has {} vectors for {} source points",
                self.len(),
                prev.len()
            )));
        }
        Ok(())
    }
}

/// `p -> rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidMotion {
    pub fn identity() -> Self {
        RigidMotion {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        RigidMotion {
            rotation: Rotation3::identity(),
            translation: t,
        }
    }

    /// Yaw by `dyaw` about the vertical axis through `pivot`, then shift.
    pub fn yaw_about(pivot: &Point3<f64>, dyaw: f64, shift: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_axis_angle(&Vector3::z_axis(), dyaw);
        RigidMotion {
            rotation,
            translation: pivot.coords - rotation * pivot.coords + shift,
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Motion equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &RigidMotion) -> RigidMotion {
        RigidMotion {
            rotation: next.rotation * self.rotation,
            translation: next.rotation * self.translation + next.translation,
        }
    }
}

/// The frames a flow field connects: `prev` is frame `frame - 1`.
#[derive(Debug, Clone, Copy)]
pub struct FramePair<'a> {
    pub frame: usize,
    pub prev: &'a PointCloud,
    pub curr: &'a PointCloud,
}

pub trait FlowEstimator {
    /// Flow aligned 1:1 with `pair.prev`.
    fn estimate(&self, pair: FramePair<'_>) -> Result<FlowField>;
}

/// Exact flow: instance points follow their rigid motion, all other points
/// are static.
pub fn estimate_oracle(prev: &PointCloud, motions: &HashMap<u32, RigidMotion>) -> Result<FlowField> {
    let mut vectors = Vec::with_capacity(prev.len());
    for (p, label) in prev.positions().iter().zip(prev.labels()) {
        let v = match label {
            PointLabel::Instance(id) => {
                let m = motions
                    .get(id)
                    .ok_or_else(|| Error::Input(format!("no motion for instance {id}")))?;
                m.apply(p) - p
            }
            PointLabel::Unlabeled | PointLabel::Ground => Vector3::zeros(),
        };
        vectors.push(v);
    }
    FlowField::new(vectors)
}

/// Oracle estimator over a whole sequence; entry `t` maps instances from
/// frame `t - 1` to frame `t`.
#[derive(Debug, Clone, Default)]
pub struct OracleFlow {
    pub motions: Vec<HashMap<u32, RigidMotion>>,
}

impl FlowEstimator for OracleFlow {
    fn estimate(&self, pair: FramePair<'_>) -> Result<FlowField> {
        let motions = self.motions.get(pair.frame).ok_or_else(|| Error::Flow {
            frame: pair.frame,
            msg: "no rigid motions recorded".into(),
        })?;
        estimate_oracle(pair.prev, motions).map_err(|e| Error::Flow {
            frame: pair.frame,
            msg: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnFlowConfig {
    pub max_match_distance: f64,
}

impl Default for NnFlowConfig {
    fn default() -> Self {
        NnFlowConfig {
            max_match_distance: 1.0,
        }
    }
}

/// Uniform hash grid with cell size equal to the search radius, so an
/// exact radius query only has to visit the 27 surrounding cells.
struct Grid<'a> {
    cell: f64,
    points: &'a [Point3<f64>],
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [Point3<f64>], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Grid { cell, points, cells }
    }

    fn key(p: &Point3<f64>, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Closest point within `radius`; ties go to the lower index.
    fn nearest_within(&self, q: &Point3<f64>, radius: f64) -> Option<usize> {
        let k = Self::key(q, self.cell);
        let mut best: Option<(f64, usize)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else {
                        continue;
                    };
                    for &i in bucket {
                        let d2 = (self.points[i] - q).norm_squared();
                        let better = match best {
                            None => true,
                            Some((bd, bi)) => d2 < bd || (d2 == bd && i < bi),
                        };
                        if better {
                            best = Some((d2, i));
                        }
                    }
                }
            }
        }
        best.filter(|(d2, _)| *d2 <= radius * radius).map(|(_, i)| i)
    }
}

/// Flow to the nearest current-frame point within the match distance, or
/// zero when there is none.
pub fn estimate_nn(prev: &PointCloud, curr: &PointCloud, cfg: &NnFlowConfig) -> FlowField {
    let radius = cfg.max_match_distance;
    if curr.is_empty() || radius.is_nan() || radius <= 0.0 || !radius.is_finite() {
        return FlowField::zeros(prev.len());
    }
    let grid = Grid::new(curr.positions(), radius);
    let vectors = prev
        .positions()
        .iter()
        .map(|p| match grid.nearest_within(p, radius) {
            Some(j) => curr.positions()[j] - p,
            None => Vector3::zeros(),
        })
        .collect();
    FlowField { vectors }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NearestNeighborFlow {
    pub cfg: NnFlowConfig,
}

impl FlowEstimator for NearestNeighborFlow {
    fn estimate(&self, pair: FramePair<'_>) -> Result<FlowField> {
        Ok(estimate_nn(pair.prev, pair.curr, &self.cfg))
    }
}

/// Contents of one flow file.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowFile {
    pub sources: Vec<Point3<f64>>,
    pub field: FlowField,
}

pub fn encode_flow(sources: &[Point3<f64>], field: &FlowField) -> Result<Vec<u8>> {
    if sources.len() != field.len() {
        return Err(Error::Input(format!(
            "{} source points for {} flow vectors",
            sources.len(),
            field.len()
        )));
    }
    let count = u32::try_from(sources.len()).map_err(|_| Error::Input("too many points for a flow file".into()))?;
    let mut buf = Vec::with_capacity(8 + 24 * sources.len());
    buf.extend_from_slice(FLOW_MAGIC);
    buf.extend_from_slice(&count.to_le_bytes());
    for (p, v) in sources.iter().zip(field.vectors()) {
        for c in [p.x, p.y, p.z, v.x, v.y, v.z] {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_flow(bytes: &[u8], frame: usize) -> Result<FlowFile> {
    let err = |msg: String| Error::Flow { frame, msg };
    if bytes.len() < 8 || &bytes[..4] != FLOW_MAGIC {
        return Err(err("missing SFL1 header".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload = &bytes[8..];
    if !payload.len().is_multiple_of(4) {
        return Err(err(format!(
            "payload of {} bytes is not a whole number of f32",
            payload.len()
        )));
    }
    let values = payload.len() / 4;
    if values != count * 6 {
        return Err(err(format!(
            "length mismatch: header declares {count} points ({} values), payload holds {values}",
            count * 6
        )));
    }
    let floats: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(i) = floats.iter().position(|v| !v.is_finite()) {
        return Err(err(format!("non-finite value at record {}", i / 6)));
    }
    let (sources, vectors) = floats
        .chunks_exact(6)
        .map(|r| (Point3::new(r[0], r[1], r[2]), Vector3::new(r[3], r[4], r[5])))
        .unzip();
    Ok(FlowFile {
        sources,
        field: FlowField { vectors },
    })
}

pub fn write_flow(path: &Path, sources: &[Point3<f64>], field: &FlowField) -> Result<()> {
    let bytes = encode_flow(sources, field)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_flow_file(path: &Path, frame: usize) -> Result<FlowFile> {
    let bytes = fs::read(path).map_err(|e| Error::Flow {
        frame,
        msg: format!("cannot read {}: {e}", path.display()),
    })?;
    decode_flow(&bytes, frame)
}

/// Loads a flow file and, when `expected` is given, checks that its source
/// points match that cloud row by row.
pub fn load_flow(path: &Path, frame: usize, expected: Option<&PointCloud>) -> Result<FlowField> {
    let file = read_flow_file(path, frame)?;
    if let Some(cloud) = expected {
        check_sources(&file, cloud, frame)?;
    }
    Ok(file.field)
}

fn check_sources(file: &FlowFile, cloud: &PointCloud, frame: usize) -> Result<()> {
    if file.sources.len() != cloud.len() {
        return Err(Error::Flow {
            frame,
            msg: format!(
                "file holds {} source points, sampled cloud has {}",
                file.sources.len(),
                cloud.len()
            ),
        });
    }
    for (i, (a, b)) in file.sources.iter().zip(cloud.positions()).enumerate() {
        let dev = (a - b).amax();
        if dev > ALIGNMENT_TOLERANCE {
            return Err(Error::Flow {
                frame,
                msg: format!("source point {i} deviates by {dev:.3e} m"),
            });
        }
    }
    Ok(())
}

/// Flow exported by an external estimator, one file per frame pair.
#[derive(Debug, Clone)]
pub struct FileFlow {
    pub dir: PathBuf,
}

impl FileFlow {
    pub fn path_for(dir: &Path, frame: usize) -> PathBuf {
        dir.join(format!("{frame:06}.sfl"))
    }

    /// First frame in `1..frames` whose file is absent.
    pub fn first_missing(&self, frames: usize) -> Option<usize> {
        (1..frames).find(|&t| !Self::path_for(&self.dir, t).is_file())
    }

    pub fn read(&self, frame: usize) -> Result<FlowFile> {
        let path = Self::path_for(&self.dir, frame);
        if !path.is_file() {
            return Err(Error::Flow {
                frame,
                msg: format!("missing flow file {}", path.display()),
            });
        }
        read_flow_file(&path, frame)
    }
}

impl FlowEstimator for FileFlow {
    fn estimate(&self, pair: FramePair<'_>) -> Result<FlowField> {
        let file = self.read(pair.frame)?;
        check_sources(&file, pair.prev, pair.frame)?;
        Ok(file.field)
    }
}
