use nalgebra::Vector3;

use crate::cloud::PointCloud;
use crate::error::Result;
use crate::flow::FlowField;
use crate::geometry::{normalize_angle, Box3D};

use super::Tracklet;

/// Per-tracklet increment: mean flow of the tracklet's points plus a yaw
/// step from the constant angular velocity model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Offset {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dtheta: f64,
}

impl Offset {
    pub const ZERO: Offset = Offset {
        dx: 0.0,
        dy: 0.0,
        dz: 0.0,
        dtheta: 0.0,
    };

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.dx, self.dy, self.dz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetEstimate {
    pub offset: Offset,
    /// Number of source points found inside the tracklet box.
    pub support: usize,
}

impl OffsetEstimate {
    /// No flow vector fell inside the box; the translation is zero.
    pub fn flow_starved(&self) -> bool {
        self.support == 0
    }
}

/// Yaw increment between the last two adopted states, or 0 without history.
pub fn yaw_increment(tracklet: &Tracklet) -> f64 {
    tracklet
        .yaw_prev
        .map_or(0.0, |prev| normalize_angle(tracklet.bbox.theta() - prev))
}

pub fn compute_offset(tracklet: &Tracklet, prev_cloud: &PointCloud, flow: &FlowField) -> Result<OffsetEstimate> {
    flow.check_aligned(prev_cloud)?;
    let mut sum = Vector3::zeros();
    let mut support = 0usize;
    for (p, v) in prev_cloud.positions().iter().zip(flow.vectors()) {
        if tracklet.bbox.contains(p) {
            sum += v;
            support += 1;
        }
    }
    let mean = if support > 0 {
        sum / support as f64
    } else {
        Vector3::zeros()
    };
    Ok(OffsetEstimate {
        offset: Offset {
            dx: mean.x,
            dy: mean.y,
            dz: mean.z,
            dtheta: yaw_increment(tracklet),
        },
        support,
    })
}

/// Box advanced by the offset; dimensions unchanged.
pub fn predict(tracklet: &Tracklet, offset: &Offset) -> Box3D {
    tracklet
        .bbox
        .translated(&offset.translation())
        .rotated_yaw(offset.dtheta)
}

/// Linear extrapolation from the last two states of `history` (oldest
/// first). A single state is returned unchanged.
///
/// Panics if `history` is empty.
pub fn predict_constant_velocity(history: &[Box3D]) -> Box3D {
    let last = history.last().expect("history holds at least one state");
    match history.len() {
        1 => *last,
        n => {
            let prev = &history[n - 2];
            let step = last.center() - prev.center();
            last.translated(&step)
                .rotated_yaw(normalize_angle(last.theta() - prev.theta()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use approx::assert_abs_diff_eq;
    use nalgebra::Point3;
    use std::f64::consts::PI;

    fn tracklet(b: Box3D, yaw_prev: Option<f64>) -> Tracklet {
        Tracklet {
            id: 0,
            bbox: b,
            confidence: 1.0,
            category: "Car".into(),
            age_missed: 0,
            hits: 1,
            confirmed: false,
            yaw_prev,
            prev_box: None,
        }
    }

    fn unit_box(theta: f64) -> Box3D {
        Box3D::new(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, theta).unwrap()
    }

    #[test]
    fn mean_of_in_box_flow() {
        let t = tracklet(unit_box(0.0), None);
        let pts: Vec<Point3<f64>> = (0..5).map(|i| Point3::new(-1.0 + 0.5 * i as f64, 0.0, 0.0)).collect();
        let mut all = pts.clone();
        all.push(Point3::new(30.0, 0.0, 0.0));
        let cloud = PointCloud::from_positions(all);
        let mut vecs = vec![Vector3::new(1.0, 0.0, 0.0); 5];
        vecs.push(Vector3::new(-9.0, 0.0, 0.0));
        let flow = FlowField::new(vecs).unwrap();
        let est = compute_offset(&t, &cloud, &flow).unwrap();
        assert_eq!(
            est.offset,
            Offset {
                dx: 1.0,
                dy: 0.0,
                dz: 0.0,
                dtheta: 0.0
            }
        );
        assert_eq!(est.support, 5);

        let two = PointCloud::from_positions(vec![Point3::new(0.5, 0.0, 0.0), Point3::new(-0.5, 0.0, 0.0)]);
        let f2 = FlowField::new(vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(3.0, 0.0, 0.0)]).unwrap();
        assert_eq!(
            compute_offset(&t, &two, &f2).unwrap().offset.translation(),
            Vector3::new(2.0, 0.0, 0.0)
        );
    }

    #[test]
    fn yaw_history_gives_angular_step() {
        let t = tracklet(unit_box(0.3), Some(0.1));
        let cloud = PointCloud::from_positions(vec![]);
        let est = compute_offset(&t, &cloud, &FlowField::zeros(0)).unwrap();
        assert_abs_diff_eq!(est.offset.dtheta, 0.2, epsilon = 1e-12);
        assert!(est.flow_starved());
        assert_eq!(est.offset.translation(), Vector3::zeros());
    }

    #[test]
    fn yaw_increment_wraps() {
        let t = tracklet(unit_box(-3.1), Some(3.1));
        assert_abs_diff_eq!(yaw_increment(&t), 2.0 * PI - 6.2, epsilon = 1e-12);
    }

    #[test]
    fn misaligned_flow_rejected() {
        let t = tracklet(unit_box(0.0), None);
        let cloud = PointCloud::from_positions(vec![Point3::origin()]);
        assert!(matches!(
            compute_offset(&t, &cloud, &FlowField::zeros(2)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn predict_examples() {
        let t = tracklet(unit_box(0.0), None);
        assert_eq!(predict(&t, &Offset::ZERO), t.bbox);
        let p = predict(
            &t,
            &Offset {
                dx: 1.0,
                dy: 2.0,
                dz: 0.0,
                dtheta: 0.1,
            },
        );
        assert_eq!((p.x(), p.y(), p.z()), (1.0, 2.0, 0.0));
        assert_abs_diff_eq!(p.theta(), 0.1, epsilon = 1e-15);
        assert_eq!((p.l(), p.w(), p.h()), (4.0, 2.0, 1.5));

        let wrap = predict(
            &tracklet(unit_box(3.1), None),
            &Offset {
                dtheta: 0.1,
                ..Offset::ZERO
            },
        );
        assert_abs_diff_eq!(wrap.theta(), -PI + (3.2 - PI), epsilon = 1e-12);
    }

    #[test]
    fn constant_velocity_examples() {
        let a = unit_box(0.0);
        assert_eq!(predict_constant_velocity(&[a]), a);
        let b = a.translated(&Vector3::new(1.0, 0.0, 0.0));
        let p = predict_constant_velocity(&[a, b]);
        assert_eq!(p.center(), Point3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn first_frame_error_doubles_when_decimated() {
        // object moving 1.5 m per full-rate frame
        let v = 1.5;
        let at = |k: usize| unit_box(0.0).translated(&Vector3::new(v * k as f64, 0.0, 0.0));
        let err = |stride: usize| {
            let pred = predict_constant_velocity(&[at(0)]);
            (pred.center() - at(stride).center()).norm()
        };
        assert_abs_diff_eq!(err(2), 2.0 * err(1), epsilon = 1e-12);
        // a velocity learned at full rate and applied over a decimated step
        // is one full-rate step short
        let learned = predict_constant_velocity(&[at(0), at(1)]);
        assert_abs_diff_eq!((learned.center() - at(3).center()).norm(), v, epsilon = 1e-12);
    }
}
