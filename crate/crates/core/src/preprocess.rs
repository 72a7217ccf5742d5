//! Per-frame scene conditioning ahead of flow estimation: crop to the
//! (widened) camera frustum, label the ground plane, draw a fixed-size
//! random subset of the remaining points.

use log::warn;
use nalgebra::{Matrix3, Point3, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::calib::Calibration;
use crate::cloud::{PointCloud, PointLabel};
use crate::error::{Error, Result};

/// Camera frustum used to crop LiDAR points.
#[derive(Debug, Clone)]
pub struct Frustum {
    pub calibration: Calibration,
    pub image_width: f64,
    pub image_height: f64,
    /// Half-angle widening applied to each image border, in degrees.
    pub expansion_margin_deg: f64,
    /// Optional depth cutoff in the rectified camera frame, meters.
    pub max_depth: Option<f64>,
    /// Extra depth kept past `max_depth`, meters.
    pub depth_margin: f64,
}

impl Frustum {
    pub const DEFAULT_MARGIN_DEG: f64 = 10.0;
    pub const DEFAULT_DEPTH_MARGIN: f64 = 20.0;

    pub fn new(calibration: Calibration, image_width: f64, image_height: f64) -> Self {
        Frustum {
            calibration,
            image_width,
            image_height,
            expansion_margin_deg: Self::DEFAULT_MARGIN_DEG,
            max_depth: None,
            depth_margin: Self::DEFAULT_DEPTH_MARGIN,
        }
    }

    pub fn with_margin(mut self, degrees: f64) -> Self {
        self.expansion_margin_deg = degrees;
        self
    }

    fn validate(&self) -> Result<()> {
        self.calibration.validate()?;
        if self.expansion_margin_deg.is_nan() || self.expansion_margin_deg < 0.0 {
            return Err(Error::Config(format!(
                "expansion margin must be >= 0, got {}",
                self.expansion_margin_deg
            )));
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return Err(Error::Config("image bounds must be positive".into()));
        }
        Ok(())
    }

    /// Whether a LiDAR-frame point survives the crop.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let rect = self.calibration.velo_to_rect(p);
        if rect.z <= 0.0 {
            return false;
        }
        if let Some(max_depth) = self.max_depth {
            if rect.z > max_depth + self.depth_margin {
                return false;
            }
        }
        let (u, v, _) = self.calibration.project_rect(&rect);
        let (fx, fy) = self.calibration.focal();
        let (cx, cy) = self.calibration.principal_point();
        let margin = self.expansion_margin_deg.to_radians();
        let within = |pix: f64, c: f64, f: f64, extent: f64| {
            let angle = ((pix - c) / f).atan();
            let lo = ((0.0 - c) / f).atan() - margin;
            let hi = ((extent - c) / f).atan() + margin;
            angle >= lo && angle <= hi
        };
        within(u, cx, fx, self.image_width) && within(v, cy, fy, self.image_height)
    }
}

/// Keeps the points inside the widened frustum. Points behind the camera
/// are always dropped.
pub fn filter_fov(cloud: &PointCloud, frustum: &Frustum) -> Result<PointCloud> {
    frustum.validate()?;
    let keep: Vec<usize> = cloud
        .positions()
        .iter()
        .enumerate()
        .filter(|(_, p)| frustum.contains(p))
        .map(|(i, _)| i)
        .collect();
    Ok(cloud.select(&keep))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundConfig {
    pub inlier_threshold: f64,
    pub iterations: usize,
    pub min_inlier_fraction: f64,
    pub seed: u64,
}

impl Default for GroundConfig {
    fn default() -> Self {
        GroundConfig {
            inlier_threshold: 0.15,
            iterations: 200,
            min_inlier_fraction: 0.25,
            seed: 0,
        }
    }
}

/// Plane `normal . p + offset = 0` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn through(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Option<Plane> {
        let n = (b - a).cross(&(c - a));
        let norm = n.norm();
        if norm < 1e-12 {
            return None;
        }
        let normal = n / norm;
        Some(Plane {
            normal,
            offset: -normal.dot(&a.coords),
        })
    }

    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        (self.normal.dot(&p.coords) + self.offset).abs()
    }
}

#[derive(Debug, Clone)]
pub struct GroundFit {
    pub cloud: PointCloud,
    /// `None` signals that no plane reached the required inlier fraction;
    /// the cloud is then returned unchanged.
    pub plane: Option<Plane>,
    pub inliers: usize,
}

impl GroundFit {
    pub fn found(&self) -> bool {
        self.plane.is_some()
    }
}

fn count_inliers(points: &[Point3<f64>], plane: &Plane, thr: f64) -> usize {
    points.iter().filter(|p| plane.distance(p) <= thr).count()
}

fn least_squares_plane(points: &[Point3<f64>]) -> Option<Plane> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let (imin, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let normal: Vector3<f64> = eig.eigenvectors.column(imin).into_owned();
    let normal = normal.normalize();
    if !normal.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(Plane {
        normal,
        offset: -normal.dot(&centroid),
    })
}

/// Random-sample consensus over 3-point plane hypotheses, followed by one
/// least-squares refit on the consensus set. Unlabeled points within the
/// threshold become [`PointLabel::Ground`]; instance labels are left alone
/// and no point is ever removed.
pub fn fit_ground(cloud: &PointCloud, cfg: &GroundConfig) -> Result<GroundFit> {
    if cloud.len() < 3 {
        return Err(Error::Input(format!(
            "ground fitting needs at least 3 points, got {}",
            cloud.len()
        )));
    }
    let pts = cloud.positions();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Plane, usize)> = None;
    for _ in 0..cfg.iterations.max(1) {
        let pick = index::sample(&mut rng, pts.len(), 3);
        let Some(plane) = Plane::through(&pts[pick.index(0)], &pts[pick.index(1)], &pts[pick.index(2)]) else {
            continue;
        };
        let count = count_inliers(pts, &plane, cfg.inlier_threshold);
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((plane, count));
        }
    }

    let needed = cfg.min_inlier_fraction * pts.len() as f64;
    let Some((mut plane, mut count)) = best.filter(|(_, c)| *c as f64 >= needed) else {
        return Ok(GroundFit {
            cloud: cloud.clone(),
            plane: None,
            inliers: 0,
        });
    };

    let support: Vec<Point3<f64>> = pts
        .iter()
        .filter(|p| plane.distance(p) <= cfg.inlier_threshold)
        .copied()
        .collect();
    if let Some(refit) = least_squares_plane(&support) {
        let refit_count = count_inliers(pts, &refit, cfg.inlier_threshold);
        if refit_count >= count {
            plane = refit;
            count = refit_count;
        }
    }

    let mut out = cloud.clone();
    for (i, p) in pts.iter().enumerate() {
        if plane.distance(p) <= cfg.inlier_threshold && out.labels()[i] == PointLabel::Unlabeled {
            out.set_label(i, PointLabel::Ground);
        }
    }
    Ok(GroundFit {
        cloud: out,
        plane: Some(plane),
        inliers: count,
    })
}

#[derive(Debug, Clone)]
pub struct Sampled {
    pub cloud: PointCloud,
    /// Rows of the input cloud, ascending.
    pub indices: Vec<usize>,
    /// Set when the non-ground pool was empty and every point was eligible.
    pub fell_back: bool,
}

/// Uniform sample without replacement of `min(n, pool)` non-ground points.
pub fn sample_points(cloud: &PointCloud, n: usize, seed: u64) -> Result<Sampled> {
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let mut pool: Vec<usize> = (0..cloud.len()).filter(|&i| !cloud.labels()[i].is_ground()).collect();
    let fell_back = pool.is_empty();
    if fell_back {
        warn!(
            "no non-ground points to sample; sampling from all {} points",
            cloud.len()
        );
        pool = (0..cloud.len()).collect();
    }
    let indices = if n >= pool.len() {
        pool
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), n)
            .into_iter()
            .map(|k| pool[k])
            .collect();
        picked.sort_unstable();
        picked
    };
    Ok(Sampled {
        cloud: cloud.select(&indices),
        indices,
        fell_back,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    /// Lidar point whose rectified-camera direction has the given horizontal
    /// angle, for the synthetic calibration (camera x = -lidar y).
    fn at_horizontal_angle(deg: f64, depth: f64) -> Point3<f64> {
        let xc = depth * deg.to_radians().tan();
        Point3::new(depth, -xc, 0.0)
    }

    fn frustum(margin: f64) -> Frustum {
        Frustum::new(Calibration::synthetic(), 1242.0, 375.0).with_margin(margin)
    }

    #[test]
    fn fov_examples() {
        let f0 = frustum(0.0);
        let center = Point3::new(10.0, 0.0, 0.0);
        assert!(f0.contains(&center));
        let behind = Point3::new(-10.0, 0.0, 0.0);
        assert!(!f0.contains(&behind));
        assert!(!frustum(80.0).contains(&behind));

        let (fx, _) = f0.calibration.focal();
        let (cx, _) = f0.calibration.principal_point();
        let left_edge = (-cx / fx).atan().to_degrees();
        let outside = at_horizontal_angle(left_edge - 5.0, 20.0);
        assert!(!f0.contains(&outside));
        assert!(frustum(10.0).contains(&outside));
    }

    #[test]
    fn fov_idempotent_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3<f64>> = (0..2000)
            .map(|_| {
                Point3::new(
                    rng.random_range(-40.0..60.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-3.0..3.0),
                )
            })
            .collect();
        let cloud = PointCloud::from_positions(pts);
        let once = filter_fov(&cloud, &frustum(5.0)).unwrap();
        let twice = filter_fov(&once, &frustum(5.0)).unwrap();
        assert_eq!(once, twice);

        let mut prev_kept: Option<Vec<bool>> = None;
        for margin in [0.0, 2.0, 10.0, 30.0] {
            let f = frustum(margin);
            let kept: Vec<bool> = cloud.positions().iter().map(|p| f.contains(p)).collect();
            if let Some(prev) = &prev_kept {
                assert!(prev.iter().zip(&kept).all(|(a, b)| !a || *b));
            }
            prev_kept = Some(kept);
        }
    }

    #[test]
    fn degenerate_calibration_is_config_error() {
        let mut f = frustum(0.0);
        f.calibration.p2 = nalgebra::Matrix3x4::zeros();
        let cloud = PointCloud::from_positions(vec![Point3::new(1.0, 0.0, 0.0)]);
        assert!(matches!(filter_fov(&cloud, &f), Err(Error::Config(_))));
    }

    #[test]
    fn ground_on_noisy_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut pts = Vec::new();
        for _ in 0..5000 {
            pts.push(Point3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                noise.sample(&mut rng),
            ));
        }
        for _ in 0..500 {
            pts.push(Point3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(0.5..2.0),
            ));
        }
        let cloud = PointCloud::from_positions(pts);
        let cfg = GroundConfig {
            inlier_threshold: 0.05,
            ..GroundConfig::default()
        };
        let fit = fit_ground(&cloud, &cfg).unwrap();
        assert!(fit.found());
        let plane_hits = fit.cloud.labels()[..5000].iter().filter(|l| l.is_ground()).count();
        assert!(plane_hits as f64 >= 0.99 * 5000.0, "{plane_hits}");
        assert!(fit.cloud.labels()[5000..].iter().all(|l| !l.is_ground()));
        assert_eq!(fit.cloud.positions(), cloud.positions());
    }

    #[test]
    fn three_coplanar_points() {
        let cloud = PointCloud::from_positions(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ]);
        let fit = fit_ground(&cloud, &GroundConfig::default()).unwrap();
        assert!(fit.cloud.labels().iter().all(|l| l.is_ground()));
    }

    #[test]
    fn instance_labels_survive_ground_fit() {
        let mut labels = vec![PointLabel::Unlabeled; 4];
        labels[3] = PointLabel::Instance(2);
        let cloud = PointCloud::with_labels(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
            ],
            labels,
        )
        .unwrap();
        let fit = fit_ground(&cloud, &GroundConfig::default()).unwrap();
        assert_eq!(fit.cloud.labels()[3], PointLabel::Instance(2));
        assert!(fit.cloud.labels()[..3].iter().all(|l| l.is_ground()));
    }

    #[test]
    fn random_cube_has_no_ground() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point3<f64>> = (0..30)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let thr = 0.05;
        // exhaustive sweep over every 3-point plane bounds the best consensus
        let mut best = 0;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                for k in j + 1..pts.len() {
                    if let Some(pl) = Plane::through(&pts[i], &pts[j], &pts[k]) {
                        best = best.max(count_inliers(&pts, &pl, thr));
                    }
                }
            }
        }
        assert!((best as f64) < 0.6 * 30.0, "sweep found {best} inliers");
        let cloud = PointCloud::from_positions(pts);
        let cfg = GroundConfig {
            inlier_threshold: thr,
            min_inlier_fraction: 0.6,
            ..GroundConfig::default()
        };
        let fit = fit_ground(&cloud, &cfg).unwrap();
        assert!(!fit.found());
        assert_eq!(fit.cloud, cloud);
    }

    fn labeled_cloud(n: usize, ground_every: usize) -> PointCloud {
        let pts = (0..n).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let labels = (0..n)
            .map(|i| {
                if i % ground_every == 0 {
                    PointLabel::Ground
                } else {
                    PointLabel::Unlabeled
                }
            })
            .collect();
        PointCloud::with_labels(pts, labels).unwrap()
    }

    #[test]
    fn sampling_examples() {
        let cloud = labeled_cloud(20000, 4);
        let s = sample_points(&cloud, 6000, 9).unwrap();
        assert_eq!(s.cloud.len(), 6000);
        assert!(s.cloud.labels().iter().all(|l| !l.is_ground()));
        let again = sample_points(&cloud, 6000, 9).unwrap();
        assert_eq!(s.indices, again.indices);
        let mut dedup = s.indices.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 6000);

        let small = labeled_cloud(10, 2);
        let all = sample_points(&small, 100, 0).unwrap();
        assert_eq!(all.indices, vec![1, 3, 5, 7, 9]);
        assert!(!all.fell_back);
    }

    #[test]
    fn sampling_falls_back_when_all_ground() {
        let cloud = labeled_cloud(5, 1);
        let s = sample_points(&cloud, 3, 0).unwrap();
        assert!(s.fell_back);
        assert_eq!(s.cloud.len(), 3);
        assert!(sample_points(&cloud, 0, 0).is_err());
    }
}
