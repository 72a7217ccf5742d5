//! Synthetic scenes with complete ground truth: box-surface LiDAR returns
//! moving along scripted trajectories over a flat ground, noisy detections,
//! and the rigid motion of every instance between consecutive frames.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calib::Calibration;
use crate::cloud::{PointCloud, PointLabel};
use crate::error::{Error, Result};
use crate::flow::RigidMotion;
use crate::geometry::{normalize_angle, Box3D};
use crate::kitti_io::{self, LabelRow};
use crate::tracker::Detection;

/// Five cars over 30 frames, all inside the camera frustum: two straight
/// lanes, one accelerating, one turning and one parked.
pub const DEMO_SCENARIO: &str = r#"
frames = 30
seed = 7

[[object]]
id = 0
category = "Car"
size = [4.0, 1.8, 1.5]
trajectory = { waypoints = [[0, 10.0, -2.5, -0.98, 0.0], [29, 39.0, -2.5, -0.98, 0.0]] }

[[object]]
id = 1
category = "Car"
size = [4.4, 1.9, 1.6]
trajectory = { waypoints = [[0, 45.0, 3.0, -0.93, 3.14159], [29, 16.0, 3.0, -0.93, 3.14159]] }

[[object]]
id = 2
category = "Car"
size = [4.2, 1.8, 1.5]
trajectory = { arc = { start = [12.0, -9.0, -0.98], yaw0 = 0.0, speed = 0.8, yaw_rate = -0.01 } }

[[object]]
id = 3
category = "Car"
size = [4.2, 1.8, 1.5]
trajectory = { waypoints = [[0, 25.0, 8.0, -0.98, 0.5], [29, 25.0, 8.0, -0.98, 0.5]] }

[[object]]
id = 4
category = "Car"
size = [3.9, 1.7, 1.5]
trajectory = { waypoints = [[0, 30.0, -5.5, -0.98, 0.0], [15, 40.0, -5.5, -0.98, 0.0], [29, 58.0, -5.5, -0.98, 0.0]] }
"#;

/// Three cars at a constant 2.5 m per frame (25 m/s at 10 Hz).
pub const HIGH_SPEED_SCENARIO: &str = r#"
frames = 30
seed = 11

[[object]]
id = 0
category = "Car"
size = [4.0, 1.8, 1.5]
trajectory = { arc = { start = [5.0, -4.0, -0.98], yaw0 = 0.0, speed = 2.5, yaw_rate = 0.0 } }

[[object]]
id = 1
category = "Car"
size = [4.0, 1.8, 1.5]
trajectory = { arc = { start = [15.0, 0.0, -0.98], yaw0 = 0.0, speed = 2.5, yaw_rate = 0.0 } }

[[object]]
id = 2
category = "Car"
size = [4.0, 1.8, 1.5]
trajectory = { arc = { start = [10.0, 4.0, -0.98], yaw0 = 0.0, speed = 2.5, yaw_rate = 0.0 } }
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundSpec {
    pub z: f64,
    pub points: usize,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
}

impl Default for GroundSpec {
    fn default() -> Self {
        GroundSpec {
            z: -1.73,
            points: 2000,
            x_range: [2.0, 70.0],
            y_range: [-35.0, 35.0],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Std-dev of the horizontal detection position error, meters.
    pub position_sigma: f64,
    pub yaw_sigma: f64,
    /// Probability of one false-positive box per frame.
    pub fp_rate: f64,
    /// Probability of dropping each true detection.
    pub fn_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcSpec {
    pub start: [f64; 3],
    pub yaw0: f64,
    /// Meters per frame.
    pub speed: f64,
    /// Radians per frame.
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    /// `[frame, x, y, z, yaw]` rows, interpolated linearly.
    Waypoints(Vec<[f64; 5]>),
    Arc(ArcSpec),
}

impl Trajectory {
    pub fn pose(&self, frame: usize) -> (Point3<f64>, f64) {
        let f = frame as f64;
        match self {
            Trajectory::Arc(a) => {
                let s = Point3::from(a.start);
                let yaw = a.yaw0 + a.yaw_rate * f;
                let d = if a.yaw_rate == 0.0 {
                    Vector3::new(a.yaw0.cos(), a.yaw0.sin(), 0.0) * (a.speed * f)
                } else {
                    let r = a.speed / a.yaw_rate;
                    Vector3::new(r * (yaw.sin() - a.yaw0.sin()), -r * (yaw.cos() - a.yaw0.cos()), 0.0)
                };
                (s + d, normalize_angle(yaw))
            }
            Trajectory::Waypoints(w) => {
                let k = w.iter().position(|p| p[0] >= f).unwrap_or(w.len() - 1);
                if k == 0 || w[k][0] == f {
                    let p = w[k];
                    return (Point3::new(p[1], p[2], p[3]), normalize_angle(p[4]));
                }
                let (a, b) = (w[k - 1], w[k]);
                let t = (f - a[0]) / (b[0] - a[0]);
                let lerp = |i: usize| a[i] + t * (b[i] - a[i]);
                let yaw = a[4] + t * normalize_angle(b[4] - a[4]);
                (Point3::new(lerp(1), lerp(2), lerp(3)), normalize_angle(yaw))
            }
        }
    }

    fn validate(&self, frames: usize, id: u32) -> Result<()> {
        match self {
            Trajectory::Arc(a) => {
                if !a
                    .start
                    .iter()
                    .chain([&a.yaw0, &a.speed, &a.yaw_rate])
                    .all(|v| v.is_finite())
                {
                    return Err(Error::Config(format!("object {id}: non-finite arc parameter")));
                }
            }
            Trajectory::Waypoints(w) => {
                if w.is_empty() || w.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Config(format!(
                        "object {id}: waypoints must be finite and non-empty"
                    )));
                }
                if w.windows(2).any(|p| p[1][0] <= p[0][0]) {
                    return Err(Error::Config(format!("object {id}: waypoint frames must increase")));
                }
                if w[0][0] > 0.0 || w[w.len() - 1][0] < (frames as f64 - 1.0) {
                    return Err(Error::Config(format!(
                        "object {id}: waypoints cover frames {}..={}, need 0..={}",
                        w[0][0],
                        w[w.len() - 1][0],
                        frames.saturating_sub(1)
                    )));
                }
            }
        }
        Ok(())
    }
}

fn default_points() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: u32,
    pub category: String,
    /// `[l, w, h]`.
    pub size: [f64; 3],
    #[serde(default = "default_points")]
    pub points: usize,
    pub trajectory: Trajectory,
}

impl ObjectSpec {
    pub fn box_at(&self, frame: usize) -> Result<Box3D> {
        let (c, yaw) = self.trajectory.pose(frame);
        Box3D::new(c.x, c.y, c.z, self.size[0], self.size[1], self.size[2], yaw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ground: GroundSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default, rename = "object")]
    pub objects: Vec<ObjectSpec>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn demo() -> Self {
        Self::parse(DEMO_SCENARIO).expect("built-in scenario is valid")
    }

    pub fn high_speed() -> Self {
        Self::parse(HIGH_SPEED_SCENARIO).expect("built-in scenario is valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.noise;
        for (name, r) in [("fp_rate", n.fp_rate), ("fn_rate", n.fn_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        for (name, s) in [("position_sigma", n.position_sigma), ("yaw_sigma", n.yaw_sigma)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {s}")));
            }
        }
        let g = &self.ground;
        if !(g.x_range[0] < g.x_range[1] && g.y_range[0] < g.y_range[1] && g.z.is_finite()) {
            return Err(Error::Config("ground ranges must be increasing".into()));
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return Err(Error::Config(format!("duplicate object id {}", o.id)));
            }
            o.trajectory.validate(self.frames, o.id)?;
            for f in 0..self.frames {
                o.box_at(f)
                    .map_err(|e| Error::Config(format!("object {}: {e}", o.id)))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub id: u32,
    pub category: String,
    pub bbox: Box3D,
}

#[derive(Debug, Clone)]
pub struct SimFrame {
    /// Object points labeled by instance, ground points unlabeled.
    pub cloud: PointCloud,
    pub gt: Vec<GtObject>,
    pub detections: Vec<Detection>,
    /// Motion of each instance from the previous frame; empty for the first
    /// frame of a sequence.
    pub motions: HashMap<u32, RigidMotion>,
}

/// Surface returns are drawn on a box shrunk by this much on every side so
/// that points stay strictly inside the labeled box after text and `f32`
/// round trips.
const SURFACE_INSET: f64 = 0.02;

/// Points uniformly distributed over the four sides and the top of a box
/// centered at the origin with zero yaw. The bottom face is never seen.
fn sample_surface(size: [f64; 3], n: usize, rng: &mut ChaCha8Rng) -> Vec<Point3<f64>> {
    let [l, w, h] = size.map(|d| (d - 2.0 * SURFACE_INSET).max(d * 0.5));
    let (hl, hw, hh) = (l / 2.0, w / 2.0, h / 2.0);
    // front, back, left, right, top
    let areas = [w * h, w * h, l * h, l * h, l * w];
    let total: f64 = areas.iter().sum();
    (0..n)
        .map(|_| {
            let mut pick = rng.random::<f64>() * total;
            let mut face = 0;
            while face < 4 && pick >= areas[face] {
                pick -= areas[face];
                face += 1;
            }
            let (u, v): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            match face {
                0 => Point3::new(hl, u * hw, v * hh),
                1 => Point3::new(-hl, u * hw, v * hh),
                2 => Point3::new(u * hl, hw, v * hh),
                3 => Point3::new(u * hl, -hw, v * hh),
                _ => Point3::new(u * hl, v * hw, hh),
            }
        })
        .collect()
}

fn motion_between(a: &Box3D, b: &Box3D) -> RigidMotion {
    RigidMotion::yaw_about(
        &a.center(),
        normalize_angle(b.theta() - a.theta()),
        b.center() - a.center(),
    )
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Renders every frame of the scenario. Deterministic for a given seed.
pub fn generate(scenario: &Scenario) -> Result<Vec<SimFrame>> {
    scenario.validate()?;
    let mut shape_rng = stream(scenario.seed, 0);
    let mut ground_rng = stream(scenario.seed, 1);
    let mut det_rng = stream(scenario.seed, 2);

    let shapes: Vec<Vec<Point3<f64>>> = scenario
        .objects
        .iter()
        .map(|o| sample_surface(o.size, o.points, &mut shape_rng))
        .collect();
    let noise = &scenario.noise;
    let pos_noise = Normal::new(0.0, noise.position_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let yaw_noise = Normal::new(0.0, noise.yaw_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let fp_template = scenario
        .objects
        .first()
        .map_or(("Car".to_string(), [4.0, 1.8, 1.5]), |o| (o.category.clone(), o.size));
    let g = &scenario.ground;

    let mut out = Vec::with_capacity(scenario.frames);
    let mut prev_boxes: Option<Vec<Box3D>> = None;
    for f in 0..scenario.frames {
        let boxes: Vec<Box3D> = scenario.objects.iter().map(|o| o.box_at(f)).collect::<Result<_>>()?;

        let mut positions = Vec::new();
        let mut labels = Vec::new();
        for ((o, shape), b) in scenario.objects.iter().zip(&shapes).zip(&boxes) {
            positions.extend(shape.iter().map(|p| b.to_world(p)));
            labels.extend(std::iter::repeat_n(PointLabel::Instance(o.id), shape.len()));
        }
        for _ in 0..g.points {
            positions.push(Point3::new(
                ground_rng.random_range(g.x_range[0]..g.x_range[1]),
                ground_rng.random_range(g.y_range[0]..g.y_range[1]),
                g.z,
            ));
            labels.push(PointLabel::Unlabeled);
        }
        let n = positions.len();
        let cloud = PointCloud::new(positions, vec![0.5; n], 1, labels)?;

        let gt: Vec<GtObject> = scenario
            .objects
            .iter()
            .zip(&boxes)
            .map(|(o, b)| GtObject {
                id: o.id,
                category: o.category.clone(),
                bbox: *b,
            })
            .collect();

        let mut detections = Vec::new();
        for obj in &gt {
            if det_rng.random::<f64>() < noise.fn_rate {
                continue;
            }
            let b = &obj.bbox;
            let bbox = if noise.position_sigma > 0.0 || noise.yaw_sigma > 0.0 {
                let d = Vector3::new(pos_noise.sample(&mut det_rng), pos_noise.sample(&mut det_rng), 0.0);
                b.translated(&d).rotated_yaw(yaw_noise.sample(&mut det_rng))
            } else {
                *b
            };
            detections.push(Detection::new(
                bbox,
                det_rng.random_range(0.3..1.0),
                obj.category.clone(),
            )?);
        }
        if det_rng.random::<f64>() < noise.fp_rate {
            let x: f64 = det_rng.random_range(8.0..60.0);
            let y = det_rng.random_range(-0.7..0.7) * x;
            let yaw = det_rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let [l, w, h] = fp_template.1;
            let bbox = Box3D::new(x, y, g.z + h / 2.0, l, w, h, yaw)?;
            detections.push(Detection::new(
                bbox,
                det_rng.random_range(0.0..0.6),
                fp_template.0.clone(),
            )?);
        }

        let motions = match &prev_boxes {
            None => HashMap::new(),
            Some(prev) => scenario
                .objects
                .iter()
                .zip(prev.iter().zip(&boxes))
                .map(|(o, (a, b))| (o.id, motion_between(a, b)))
                .collect(),
        };
        prev_boxes = Some(boxes);
        out.push(SimFrame {
            cloud,
            gt,
            detections,
            motions,
        });
    }
    Ok(out)
}

/// Which frames survive decimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    Even,
    Odd,
    Stride(usize),
}

impl Keep {
    pub fn indices(&self, n: usize) -> Vec<usize> {
        let (start, step) = match *self {
            Keep::Even => (0, 2),
            Keep::Odd => (1, 2),
            Keep::Stride(s) => (0, s.max(1)),
        };
        (start..n).step_by(step).collect()
    }
}

impl std::str::FromStr for Keep {
    type Err = Error;

    /// `even`, `odd` or `stride:N`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "even" => Ok(Keep::Even),
            "odd" => Ok(Keep::Odd),
            _ => match s.strip_prefix("stride:").map(str::parse::<usize>) {
                Some(Ok(n)) if n >= 1 => Ok(Keep::Stride(n)),
                _ => Err(Error::Config(format!(
                    "keep must be even, odd or stride:N with N >= 1, got `{s}`"
                ))),
            },
        }
    }
}

/// Motions for the kept frames: each kept frame after the first gets the
/// composition of all per-frame motions since the previous kept frame, for
/// the instances present throughout.
pub fn compose_motions(motions: &[HashMap<u32, RigidMotion>], kept: &[usize]) -> Vec<HashMap<u32, RigidMotion>> {
    kept.iter()
        .enumerate()
        .map(|(k, &t)| {
            if k == 0 {
                return HashMap::new();
            }
            let span = &motions[kept[k - 1] + 1..=t];
            span[0]
                .iter()
                .filter_map(|(id, first)| {
                    span[1..]
                        .iter()
                        .try_fold(*first, |acc, m| m.get(id).map(|next| acc.then(next)))
                        .map(|m| (*id, m))
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Decimated {
    pub frames: Vec<SimFrame>,
    /// Set when nothing was kept.
    pub warning: Option<String>,
}

/// Keeps a subset of frames, re-indexed densely, with motions composed
/// across the dropped frames.
pub fn decimate(frames: &[SimFrame], keep: Keep) -> Decimated {
    let kept = keep.indices(frames.len());
    let warning = kept.is_empty().then(|| {
        let msg = format!("decimation with {keep:?} keeps none of {} frames", frames.len());
        warn!("{msg}");
        msg
    });
    let all: Vec<HashMap<u32, RigidMotion>> = frames.iter().map(|f| f.motions.clone()).collect();
    let motions = compose_motions(&all, &kept);
    let frames = kept
        .iter()
        .zip(motions)
        .map(|(&t, motions)| SimFrame {
            motions,
            ..frames[t].clone()
        })
        .collect();
    Decimated { frames, warning }
}

pub fn format_motions(motions: &[HashMap<u32, RigidMotion>]) -> String {
    let mut s = String::new();
    for (f, m) in motions.iter().enumerate() {
        let mut ids: Vec<&u32> = m.keys().collect();
        ids.sort();
        for id in ids {
            let r = m[id].rotation.matrix();
            let t = m[id].translation;
            let vals: Vec<String> = (0..3)
                .flat_map(|i| (0..3).map(move |j| r[(i, j)]))
                .chain(t.iter().copied())
                .map(|v| v.to_string())
                .collect();
            s.push_str(&format!("{f} {id} {}\n", vals.join(" ")));
        }
    }
    s
}

/// Inverse of [`format_motions`] for a sequence of `frames` frames.
pub fn parse_motions(text: &str, frames: usize, path: &Path) -> Result<Vec<HashMap<u32, RigidMotion>>> {
    let mut out = vec![HashMap::new(); frames];
    for (i, line) in text.lines().enumerate() {
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let c: Vec<&str> = line.split_whitespace().collect();
        if c.is_empty() {
            continue;
        }
        if c.len() != 14 {
            return Err(err(format!("expected 14 columns, found {}", c.len())));
        }
        let f: usize = c[0].parse().map_err(|_| err(format!("bad frame `{}`", c[0])))?;
        let id: u32 = c[1].parse().map_err(|_| err(format!("bad instance id `{}`", c[1])))?;
        let v = c[2..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| err(e.to_string()))?;
        if f >= frames {
            return Err(err(format!("frame {f} outside a {frames}-frame sequence")));
        }
        let rotation = Rotation3::from_matrix_unchecked(Matrix3::from_row_slice(&v[..9]));
        out[f].insert(
            id,
            RigidMotion {
                rotation,
                translation: Vector3::new(v[9], v[10], v[11]),
            },
        );
    }
    Ok(out)
}

/// File names inside a sequence directory.
pub mod layout {
    pub const CALIB: &str = "calib.txt";
    pub const GT: &str = "gt.txt";
    pub const DETECTIONS: &str = "detections.txt";
    pub const MOTIONS: &str = "motions.txt";
    pub const VELODYNE: &str = "velodyne";
    pub const INSTANCES: &str = "instances";
    pub const SCENARIO: &str = "scenario.toml";

    pub fn frame_file(frame: usize, ext: &str) -> String {
        format!("{frame:06}.{ext}")
    }
}

pub fn gt_rows(frames: &[SimFrame], calib: &Calibration) -> Vec<LabelRow> {
    frames
        .iter()
        .enumerate()
        .flat_map(|(f, fr)| {
            fr.gt
                .iter()
                .map(move |o| kitti_io::box_to_row(f, o.id as i64, &o.category, &o.bbox, None, calib))
        })
        .collect()
}

pub fn detection_rows(frames: &[SimFrame], calib: &Calibration) -> Vec<LabelRow> {
    frames
        .iter()
        .enumerate()
        .flat_map(|(f, fr)| {
            fr.detections
                .iter()
                .map(move |d| kitti_io::box_to_row(f, -1, &d.category, &d.bbox, Some(d.confidence), calib))
        })
        .collect()
}

/// Writes a sequence directory: scans, per-point instance tags, ground
/// truth, detections, instance motions and the calibration.
pub fn write_sequence(dir: &Path, frames: &[SimFrame], calib: &Calibration) -> Result<()> {
    let velo = dir.join(layout::VELODYNE);
    let inst = dir.join(layout::INSTANCES);
    for d in [&velo, &inst] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for (f, fr) in frames.iter().enumerate() {
        kitti_io::write_velodyne(&velo.join(layout::frame_file(f, "bin")), &fr.cloud)?;
        let p = inst.join(layout::frame_file(f, "bin"));
        fs::write(&p, kitti_io::encode_point_labels(fr.cloud.labels())).map_err(|e| Error::io(&p, e))?;
    }
    kitti_io::write_labels(&dir.join(layout::GT), &gt_rows(frames, calib))?;
    kitti_io::write_labels(&dir.join(layout::DETECTIONS), &detection_rows(frames, calib))?;
    let motions: Vec<HashMap<u32, RigidMotion>> = frames.iter().map(|f| f.motions.clone()).collect();
    let p = dir.join(layout::MOTIONS);
    fs::write(&p, format_motions(&motions)).map_err(|e| Error::io(&p, e))?;
    kitti_io::write_calib(&dir.join(layout::CALIB), calib)
}
