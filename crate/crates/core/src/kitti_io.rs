//! Readers and writers for KITTI-style tracking data.
//!
//! Label rows come in three layouts, told apart by column count:
//!
//! * 17 whitespace-separated columns: tracking labels
//!   (`frame id type truncated occluded alpha x1 y1 x2 y2 h w l x y z ry`),
//! * 18 columns: the same followed by a score (tracking results),
//! * 15 comma-separated columns: per-frame detections as distributed with
//!   public 3D MOT baselines
//!   (`frame,type,x1,y1,x2,y2,score,h,w,l,x,y,z,ry,alpha`, type as an
//!   integer 1 = Pedestrian, 2 = Car, 3 = Cyclist).
//!
//! Locations are in the rectified camera frame and refer to the bottom
//! face of the box.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Point3};

use crate::calib::{Calibration, CameraBox};
use crate::cloud::{PointCloud, PointLabel};
use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::tracker::TrackOutput;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub frame: usize,
    /// `-1` for detections.
    pub track_id: i64,
    pub category: String,
    pub truncated: f64,
    pub occluded: f64,
    pub alpha: f64,
    pub bbox2d: [f64; 4],
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl LabelRow {
    pub fn camera_box(&self) -> CameraBox {
        CameraBox {
            h: self.h,
            w: self.w,
            l: self.l,
            x: self.x,
            y: self.y,
            z: self.z,
            rotation_y: self.rotation_y,
        }
    }

    /// Box in the LiDAR frame.
    pub fn to_lidar_box(&self, calib: &Calibration) -> Result<Box3D> {
        calib.camera_to_box(&self.camera_box())
    }

    /// Box in a z-up frame rigidly attached to the rectified camera
    /// (`x` right, `y` forward, `z` up). Needs no calibration; overlap
    /// between two rows is the same as in any other rigid frame.
    pub fn camera_frame_box(&self) -> Result<Box3D> {
        Box3D::new(
            self.x,
            self.z,
            -self.y + 0.5 * self.h,
            self.l,
            self.w,
            self.h,
            -self.rotation_y,
        )
    }
}

pub type FrameLabels = BTreeMap<usize, Vec<LabelRow>>;

fn category_from_code(code: &str) -> Option<&'static str> {
    match code {
        "1" => Some("Pedestrian"),
        "2" => Some("Car"),
        "3" => Some("Cyclist"),
        _ => None,
    }
}

fn parse_line(line: &str) -> std::result::Result<LabelRow, String> {
    let num = |s: &str, what: &str| -> std::result::Result<f64, String> {
        let v: f64 = s.parse().map_err(|_| format!("cannot parse {what} `{s}`"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{what} is not finite"))
        }
    };
    let int = |s: &str, what: &str| -> std::result::Result<i64, String> {
        s.parse::<i64>().map_err(|_| format!("cannot parse {what} `{s}`"))
    };

    let row = if line.contains(',') {
        let c: Vec<&str> = line.split(',').map(str::trim).collect();
        if c.len() != 15 {
            return Err(format!("expected 15 comma-separated columns, found {}", c.len()));
        }
        let frame = int(c[0], "frame")?;
        let category = category_from_code(c[1])
            .ok_or_else(|| format!("unknown type code `{}`", c[1]))?
            .to_string();
        LabelRow {
            frame: usize::try_from(frame).map_err(|_| "negative frame".to_string())?,
            track_id: -1,
            category,
            truncated: 0.0,
            occluded: 0.0,
            alpha: num(c[14], "alpha")?,
            bbox2d: [num(c[2], "x1")?, num(c[3], "y1")?, num(c[4], "x2")?, num(c[5], "y2")?],
            h: num(c[7], "h")?,
            w: num(c[8], "w")?,
            l: num(c[9], "l")?,
            x: num(c[10], "x")?,
            y: num(c[11], "y")?,
            z: num(c[12], "z")?,
            rotation_y: num(c[13], "rotation_y")?,
            score: Some(num(c[6], "score")?),
        }
    } else {
        let c: Vec<&str> = line.split_whitespace().collect();
        if c.len() != 17 && c.len() != 18 {
            return Err(format!("expected 17 or 18 columns, found {}", c.len()));
        }
        let frame = int(c[0], "frame")?;
        LabelRow {
            frame: usize::try_from(frame).map_err(|_| "negative frame".to_string())?,
            track_id: int(c[1], "track id")?,
            category: c[2].to_string(),
            truncated: num(c[3], "truncated")?,
            occluded: num(c[4], "occluded")?,
            alpha: num(c[5], "alpha")?,
            bbox2d: [num(c[6], "x1")?, num(c[7], "y1")?, num(c[8], "x2")?, num(c[9], "y2")?],
            h: num(c[10], "h")?,
            w: num(c[11], "w")?,
            l: num(c[12], "l")?,
            x: num(c[13], "x")?,
            y: num(c[14], "y")?,
            z: num(c[15], "z")?,
            rotation_y: num(c[16], "rotation_y")?,
            score: if c.len() == 18 {
                Some(num(c[17], "score")?)
            } else {
                None
            },
        }
    };
    Ok(row)
}

/// Whether a row describes a box the tracker can consume. `DontCare`
/// regions carry placeholder dimensions and are kept as-is.
fn has_valid_dims(row: &LabelRow) -> bool {
    row.category == "DontCare" || (row.h > 0.0 && row.w > 0.0 && row.l > 0.0)
}

pub fn parse_labels(text: &str, path: &Path) -> Result<FrameLabels> {
    let mut out = FrameLabels::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let row = parse_line(line).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        })?;
        if !has_valid_dims(&row) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("non-positive dimensions h={} w={} l={}", row.h, row.w, row.l),
            });
        }
        out.entry(row.frame).or_default().push(row);
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<FrameLabels> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, path)
}

/// One 17- or 18-column line (18 when the row carries a score).
pub fn format_row(row: &LabelRow) -> String {
    let mut s = format!(
        "{} {} {} {} {} {:.6} {:.4} {:.4} {:.4} {:.4} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
        row.frame,
        row.track_id,
        row.category,
        row.truncated,
        row.occluded,
        row.alpha,
        row.bbox2d[0],
        row.bbox2d[1],
        row.bbox2d[2],
        row.bbox2d[3],
        row.h,
        row.w,
        row.l,
        row.x,
        row.y,
        row.z,
        row.rotation_y
    );
    if let Some(score) = row.score {
        let _ = write!(s, " {score:.6}");
    }
    s
}

/// Writes rows ordered by frame, then track id.
pub fn write_labels(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let mut sorted: Vec<&LabelRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.track_id));
    let mut text = String::new();
    for r in sorted {
        text.push_str(&format_row(r));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// 2D box of the projected 3D corners, clipped to the image.
fn image_box(calib: &Calibration, b: &Box3D, width: f64, height: f64) -> [f64; 4] {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for c in crate::geometry::corners_bev(b) {
        for z in [b.bottom(), b.top()] {
            let rect = calib.velo_to_rect(&Point3::new(c.x, c.y, z));
            if rect.z <= 0.1 {
                return [0.0; 4];
            }
            let (u, v, _) = calib.project_rect(&rect);
            lo = [lo[0].min(u), lo[1].min(v)];
            hi = [hi[0].max(u), hi[1].max(v)];
        }
    }
    [
        lo[0].clamp(0.0, width),
        lo[1].clamp(0.0, height),
        hi[0].clamp(0.0, width),
        hi[1].clamp(0.0, height),
    ]
}

/// Label row for a LiDAR-frame box.
pub fn box_to_row(
    frame: usize,
    track_id: i64,
    category: &str,
    b: &Box3D,
    score: Option<f64>,
    calib: &Calibration,
) -> LabelRow {
    let cam = calib.box_to_camera(b);
    let alpha = crate::geometry::normalize_angle(cam.rotation_y - cam.x.atan2(cam.z));
    LabelRow {
        frame,
        track_id,
        category: category.to_string(),
        truncated: 0.0,
        occluded: 0.0,
        alpha,
        bbox2d: image_box(calib, b, 1242.0, 375.0),
        h: cam.h,
        w: cam.w,
        l: cam.l,
        x: cam.x,
        y: cam.y,
        z: cam.z,
        rotation_y: cam.rotation_y,
        score,
    }
}

/// Writes emitted tracks (one slice per frame) in the 18-column result
/// format.
pub fn write_results(path: &Path, frames: &[Vec<TrackOutput>], calib: &Calibration) -> Result<()> {
    let rows: Vec<LabelRow> = frames
        .iter()
        .enumerate()
        .flat_map(|(f, tracks)| {
            tracks
                .iter()
                .map(move |t| box_to_row(f, t.id as i64, &t.category, &t.bbox, Some(t.confidence), calib))
        })
        .collect();
    write_labels(path, &rows)
}

/// Raw scan: little-endian `f32` quadruples `(x, y, z, intensity)`.
pub fn decode_velodyne(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("truncated scan: {} bytes is not a multiple of 16", bytes.len()),
        });
    }
    let n = bytes.len() / 16;
    let mut positions = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(16) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        positions.push(Point3::new(f(0) as f64, f(1) as f64, f(2) as f64));
        intensity.push(f(3));
    }
    PointCloud::new(positions, intensity, 1, vec![PointLabel::Unlabeled; n]).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })
}

pub fn encode_velodyne(cloud: &PointCloud) -> Vec<u8> {
    let mut buf = Vec::with_capacity(cloud.len() * 16);
    for (i, p) in cloud.positions().iter().enumerate() {
        let intensity = if cloud.feature_dim() > 0 {
            cloud.feature(i)[0]
        } else {
            0.0
        };
        for v in [p.x as f32, p.y as f32, p.z as f32, intensity] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn read_velodyne(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_velodyne(&bytes, path)
}

pub fn write_velodyne(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_velodyne(cloud)).map_err(|e| Error::io(path, e))
}

/// Per-point instance tags stored next to synthetic scans: little-endian
/// `i32`, `-2` ground, `-1` unlabeled, otherwise the instance id.
pub fn encode_point_labels(labels: &[PointLabel]) -> Vec<u8> {
    labels
        .iter()
        .flat_map(|l| {
            let v: i32 = match l {
                PointLabel::Unlabeled => -1,
                PointLabel::Ground => -2,
                PointLabel::Instance(id) => *id as i32,
            };
            v.to_le_bytes()
        })
        .collect()
}

pub fn decode_point_labels(bytes: &[u8], path: &Path) -> Result<Vec<PointLabel>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{} bytes is not a multiple of 4", bytes.len()),
        });
    }
    bytes
        .chunks_exact(4)
        .map(|c| match i32::from_le_bytes(c.try_into().unwrap()) {
            -1 => Ok(PointLabel::Unlabeled),
            -2 => Ok(PointLabel::Ground),
            v if v >= 0 => Ok(PointLabel::Instance(v as u32)),
            v => Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("invalid point label {v}"),
            }),
        })
        .collect()
}

fn parse_matrix<const R: usize, const C: usize>(
    entries: &BTreeMap<String, Vec<f64>>,
    keys: &[&str],
    path: &Path,
) -> Result<Option<[f64; 12]>> {
    let Some((key, vals)) = keys.iter().find_map(|k| entries.get(*k).map(|v| (*k, v))) else {
        return Ok(None);
    };
    if vals.len() != R * C {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{key} has {} values, expected {}", vals.len(), R * C),
        });
    }
    let mut out = [0.0; 12];
    out[..vals.len()].copy_from_slice(vals);
    Ok(Some(out))
}

pub fn parse_calib(text: &str, path: &Path) -> Result<Calibration> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = match line.split_once(':') {
            Some((k, r)) if !k.contains(char::is_whitespace) => (k.trim(), r),
            _ => line.split_once(char::is_whitespace).unwrap_or((line, "")),
        };
        let vals = rest
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("{key}: {e}"),
            })?;
        entries.insert(key.to_string(), vals);
    }
    let missing = |k: &str| Error::Config(format!("{}: missing calibration key {k}", path.display()));
    let p2 = parse_matrix::<3, 4>(&entries, &["P2"], path)?.ok_or_else(|| missing("P2"))?;
    let rect = parse_matrix::<3, 3>(&entries, &["R0_rect", "R_rect"], path)?.ok_or_else(|| missing("R0_rect"))?;
    let tr = parse_matrix::<3, 4>(&entries, &["Tr_velo_to_cam", "Tr_velo_cam"], path)?
        .ok_or_else(|| missing("Tr_velo_to_cam"))?;
    Calibration::new(
        Matrix3x4::from_row_slice(&p2),
        Matrix3::from_row_slice(&rect[..9]),
        Matrix3x4::from_row_slice(&tr),
    )
}

pub fn read_calib(path: &Path) -> Result<Calibration> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_calib(&text, path)
}

pub fn format_calib(calib: &Calibration) -> String {
    let row_major = |vals: Vec<f64>| vals.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ");
    let m34 = |m: &Matrix3x4<f64>| row_major((0..3).flat_map(|r| (0..4).map(move |c| m[(r, c)])).collect());
    let m33 = |m: &Matrix3<f64>| row_major((0..3).flat_map(|r| (0..3).map(move |c| m[(r, c)])).collect());
    format!(
        "P2: {}\nR0_rect: {}\nTr_velo_to_cam: {}\n",
        m34(&calib.p2),
        m33(&calib.rect),
        m34(&calib.velo_to_cam)
    )
}

pub fn write_calib(path: &Path, calib: &Calibration) -> Result<()> {
    fs::write(path, format_calib(calib)).map_err(|e| Error::io(path, e))
}
