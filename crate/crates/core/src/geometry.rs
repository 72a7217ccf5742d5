//! Oriented 3D boxes with yaw-only rotation and their overlap.
//!
//! Boxes live in a right-handed frame with `z` pointing up. The footprint
//! (bird's-eye view) is the rectangle spanned by `l` along the heading and
//! `w` across it; the vertical extent is `h` centered on `z`.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{Point2, Point3, Vector3};

use crate::error::{Error, Result};

/// Collinearity / containment tolerance in meters.
pub const GEOM_EPS: f64 = 1e-9;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    x: f64,
    y: f64,
    z: f64,
    l: f64,
    w: f64,
    h: f64,
    theta: f64,
}

impl Box3D {
    /// Builds a box, normalizing the yaw. Rejects non-finite fields and
    /// non-positive dimensions.
    pub fn new(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        let fields = [x, y, z, l, w, h, theta];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite field in {fields:?}")));
        }
        if l <= 0.0 || w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "dimensions must be positive, got l={l} w={w} h={h}"
            )));
        }
        Ok(Box3D {
            x,
            y,
            z,
            l,
            w,
            h,
            theta: normalize_angle(theta),
        })
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }
    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::new(self.x, self.y, self.z)
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn bottom(&self) -> f64 {
        self.z - 0.5 * self.h
    }

    pub fn top(&self) -> f64 {
        self.z + 0.5 * self.h
    }

    /// Half of the footprint diagonal.
    pub fn bev_radius(&self) -> f64 {
        0.5 * self.l.hypot(self.w)
    }

    /// Same box moved by `d`; dimensions and yaw unchanged.
    pub fn translated(&self, d: &Vector3<f64>) -> Box3D {
        let out = Box3D {
            x: self.x + d.x,
            y: self.y + d.y,
            z: self.z + d.z,
            ..*self
        };
        debug_assert!(out.x.is_finite() && out.y.is_finite() && out.z.is_finite());
        out
    }

    /// Same box with the yaw advanced by `dtheta` (wrapped).
    pub fn rotated_yaw(&self, dtheta: f64) -> Box3D {
        Box3D {
            theta: normalize_angle(self.theta + dtheta),
            ..*self
        }
    }

    pub fn with_center(&self, c: &Point3<f64>) -> Box3D {
        Box3D {
            x: c.x,
            y: c.y,
            z: c.z,
            ..*self
        }
    }

    fn fields(&self) -> [f64; 7] {
        [self.x, self.y, self.z, self.l, self.w, self.h, self.theta]
    }

    /// Point expressed in the box frame (origin at the center, `x` along
    /// the heading).
    pub fn to_local(&self, p: &Point3<f64>) -> Point3<f64> {
        let (s, c) = self.theta.sin_cos();
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        Point3::new(c * dx + s * dy, -s * dx + c * dy, p.z - self.z)
    }

    /// Inverse of [`Box3D::to_local`].
    pub fn to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        let (s, c) = self.theta.sin_cos();
        Point3::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y, self.z + p.z)
    }

    /// Boundary points count as inside (within [`GEOM_EPS`]).
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= 0.5 * self.l + GEOM_EPS
            && q.y.abs() <= 0.5 * self.w + GEOM_EPS
            && q.z.abs() <= 0.5 * self.h + GEOM_EPS
    }
}

/// Footprint rectangle, counter-clockwise, starting at the front-left corner.
pub fn corners_bev(b: &Box3D) -> [Point2<f64>; 4] {
    let (s, c) = b.theta.sin_cos();
    let hl = 0.5 * b.l;
    let hw = 0.5 * b.w;
    [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(u, v)| Point2::new(b.x + c * u - s * v, b.y + s * u + c * v))
}

fn cross(o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Signed area (positive for counter-clockwise input).
pub fn polygon_area(poly: &[Point2<f64>]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

/// Sutherland-Hodgman clipping of `subject` against the convex,
/// counter-clockwise polygon `clip`.
pub fn clip_convex(subject: &[Point2<f64>], clip: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut output: Vec<Point2<f64>> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let edge_len = (b - a).norm();
        if edge_len <= GEOM_EPS {
            continue;
        }
        // signed distance to the edge line, positive on the inner side
        let dist = |p: &Point2<f64>| cross(&a, &b, p) / edge_len;

        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let d_cur = dist(&cur);
            let d_prev = dist(&prev);
            let cur_in = d_cur >= -GEOM_EPS;
            let prev_in = d_prev >= -GEOM_EPS;
            if cur_in {
                if !prev_in {
                    output.push(intersect(&prev, &cur, d_prev, d_cur));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(&prev, &cur, d_prev, d_cur));
            }
        }
    }
    output
}

fn intersect(p: &Point2<f64>, q: &Point2<f64>, dp: f64, dq: f64) -> Point2<f64> {
    let t = dp / (dp - dq);
    p + (q - p) * t
}

/// Area of the overlap of two box footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let pa = corners_bev(a);
    let pb = corners_bev(b);
    let poly = clip_convex(&pa, &pb);
    polygon_area(&poly).max(0.0)
}

fn canonical_order<'a>(a: &'a Box3D, b: &'a Box3D) -> (&'a Box3D, &'a Box3D) {
    let ord = a
        .fields()
        .iter()
        .zip(b.fields().iter())
        .map(|(u, v)| u.total_cmp(v))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal);
    if ord == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    }
}

/// Intersection over union of two oriented boxes, in `[0, 1]`.
///
/// The footprint overlap comes from convex polygon clipping and is
/// multiplied by the vertical overlap. The result is exactly symmetric and
/// exactly 1 for identical boxes.
pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let (p, q) = canonical_order(a, b);
    let center_dist = (p.x - q.x).hypot(p.y - q.y);
    if center_dist > p.bev_radius() + q.bev_radius() {
        return 0.0;
    }
    let dz = (p.top().min(q.top()) - p.bottom().max(q.bottom())).max(0.0);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(p, q) * dz;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Indices of the points inside `b` (boundary included).
pub fn points_in_box(b: &Box3D, points: &[Point3<f64>]) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| b.contains(p))
        .map(|(i, _)| i)
        .collect()
}
