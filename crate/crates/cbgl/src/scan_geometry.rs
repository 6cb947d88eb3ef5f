//! Poses, range scans, and ray-cast scan simulation against an occupancy
//! grid.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_map::OccupancyGrid;

/// Wraps an angle to `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU for tiny negative inputs, which
    // would leave w at +PI; fold that case back onto -PI.
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// A planar pose (position in meters, heading in radians).
///
/// `theta` is wrapped to `[-pi, pi)` by every constructor and operation in
/// this crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    /// Composes `self` with `delta` expressed in this pose's frame.
    pub fn compose(&self, delta: &Pose) -> Pose {
        let (s, c) = self.theta.sin_cos();
        Pose::new(
            self.x + delta.x * c - delta.y * s,
            self.y + delta.x * s + delta.y * c,
            self.theta + delta.theta,
        )
    }

    /// The inverse under composition: `p.compose(&p.inverse())` is the
    /// identity pose.
    pub fn inverse(&self) -> Pose {
        let (s, c) = self.theta.sin_cos();
        Pose::new(
            -self.x * c - self.y * s,
            self.x * s - self.y * c,
            -self.theta,
        )
    }
}

/// Bearing of ray `n` of an `n_rays`-ray scan spanning `lambda` radians,
/// relative to the sensor heading.
///
/// The span is half-open: ray 0 points at `-lambda/2` and there is no ray at
/// `+lambda/2`, so a full-circle scan has no duplicated ray.
pub fn ray_bearing(lambda: f64, n_rays: usize, n: usize) -> f64 {
    -lambda / 2.0 + lambda * (n as f64 / n_rays as f64)
}

fn validate_sensor(lambda: f64, n_rays: usize, r_max: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= TAU * (1.0 + 1e-12)) {
        return Err(Error::ScanFormat(format!(
            "angular range {lambda} outside (0, 2*pi]"
        )));
    }
    if n_rays == 0 {
        return Err(Error::ScanFormat("scan must have at least one ray".into()));
    }
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(Error::ScanFormat(format!("max range {r_max} must be positive")));
    }
    Ok(())
}

/// A 2D range scan. Ray `n` is measured along [`ray_bearing`]`(lambda,
/// n_rays, n)` relative to the sensor heading; all ranges lie in
/// `[0, r_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeScan {
    lambda: f64,
    r_max: f64,
    ranges: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScanFile {
    lambda: f64,
    n_rays: usize,
    r_max: f64,
    ranges: Vec<f64>,
}

impl RangeScan {
    pub fn new(lambda: f64, r_max: f64, mut ranges: Vec<f64>) -> Result<Self> {
        validate_sensor(lambda, ranges.len(), r_max)?;
        for r in &mut ranges {
            if !r.is_finite() || *r < -1e-9 || *r > r_max + 1e-9 {
                return Err(Error::ScanFormat(format!(
                    "range {r} outside [0, {r_max}]"
                )));
            }
            *r = r.clamp(0.0, r_max);
        }
        Ok(RangeScan {
            lambda,
            r_max,
            ranges,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn n_rays(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[f64] {
        &self.ranges
    }

    pub fn bearing(&self, n: usize) -> f64 {
        ray_bearing(self.lambda, self.ranges.len(), n)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ScanFile {
            lambda: self.lambda,
            n_rays: self.ranges.len(),
            r_max: self.r_max,
            ranges: self.ranges.clone(),
        })
        .expect("scan serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScanFile =
            serde_json::from_str(text).map_err(|e| Error::ScanFormat(e.to_string()))?;
        if file.n_rays != file.ranges.len() {
            return Err(Error::ScanFormat(format!(
                "n_rays is {} but {} ranges given",
                file.n_rays,
                file.ranges.len()
            )));
        }
        RangeScan::new(file.lambda, file.r_max, file.ranges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn axis_setup(g: f64, d: f64, cell: i64, res: f64) -> (i64, f64, f64) {
    if d > 0.0 {
        (1, res / d, ((cell + 1) as f64 * res - g) / d)
    } else if d < 0.0 {
        (-1, res / -d, (g - cell as f64 * res) / -d)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    }
}

/// Distance from grid-frame point `(gx, gy)` along unit direction
/// `(dx, dy)` to the entry face of the first non-free cell, clamped to
/// `r_max`.
///
/// Grid-traversal walk over cell boundaries; cells outside the grid count as
/// non-free, so rays stop at the map border. A start inside a non-free cell
/// yields distance 0.
pub(crate) fn cast_ray(
    grid: &OccupancyGrid,
    gx: f64,
    gy: f64,
    dx: f64,
    dy: f64,
    r_max: f64,
) -> f64 {
    let res = grid.resolution();
    let mut cx = (gx / res).floor() as i64;
    let mut cy = (gy / res).floor() as i64;
    if !grid.cell_is_free(cx, cy) {
        return 0.0;
    }
    let (step_x, t_delta_x, mut t_max_x) = axis_setup(gx, dx, cx, res);
    let (step_y, t_delta_y, mut t_max_y) = axis_setup(gy, dy, cy, res);
    loop {
        let t;
        if t_max_x < t_max_y {
            t = t_max_x;
            t_max_x += t_delta_x;
            cx += step_x;
        } else {
            t = t_max_y;
            t_max_y += t_delta_y;
            cy += step_y;
        }
        if t >= r_max {
            return r_max;
        }
        if !grid.cell_is_free(cx, cy) {
            return t;
        }
    }
}

/// Ray-casts the scan a sensor at `pose` would measure in `grid`:
/// `n_rays` rays over `lambda` radians, each range the distance to the first
/// non-free cell, clamped to `r_max`.
///
/// Unknown cells block rays exactly like occupied ones. Errors if `pose` is
/// not in free space.
pub fn scan_map(
    grid: &OccupancyGrid,
    pose: &Pose,
    n_rays: usize,
    lambda: f64,
    r_max: f64,
) -> Result<RangeScan> {
    validate_sensor(lambda, n_rays, r_max)?;
    if !grid.is_free(pose.x, pose.y) {
        return Err(Error::PoseNotFree {
            x: pose.x,
            y: pose.y,
        });
    }
    let (gx, gy) = grid.world_to_grid_frame(pose.x, pose.y);
    let heading = pose.theta - grid.origin().theta;
    let mut ranges = Vec::with_capacity(n_rays);
    for n in 0..n_rays {
        let (s, c) = (heading + ray_bearing(lambda, n_rays, n)).sin_cos();
        ranges.push(cast_ray(grid, gx, gy, c, s, r_max));
    }
    RangeScan::new(lambda, r_max, ranges)
}

/// Simulates a noisy measurement: [`scan_map`] plus independent zero-mean
/// Gaussian noise of standard deviation `sigma` per ray, clamped back to
/// `[0, r_max]`.
///
/// `sigma == 0` returns the ray-cast scan unchanged without consuming
/// randomness.
pub fn simulate_measurement(
    grid: &OccupancyGrid,
    pose: &Pose,
    n_rays: usize,
    lambda: f64,
    r_max: f64,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<RangeScan> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma {sigma} must be non-negative"
        )));
    }
    let clean = scan_map(grid, pose, n_rays, lambda, r_max)?;
    if sigma == 0.0 {
        return Ok(clean);
    }
    let normal = rand_distr::Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let ranges = clean
        .ranges()
        .iter()
        .map(|r| (r + rng.sample(normal)).clamp(0.0, r_max))
        .collect();
    RangeScan::new(lambda, r_max, ranges)
}

/// Keeps every `factor`-th ray starting from ray 0. `factor` must divide the
/// ray count; bearings of kept rays are unchanged.
pub fn downsample(scan: &RangeScan, factor: usize) -> Result<RangeScan> {
    if factor == 0 {
        return Err(Error::InvalidParameter("downsample factor must be >= 1".into()));
    }
    if scan.n_rays() % factor != 0 {
        return Err(Error::InvalidParameter(format!(
            "downsample factor {} does not divide ray count {}",
            factor,
            scan.n_rays()
        )));
    }
    let ranges = scan.ranges().iter().step_by(factor).copied().collect();
    RangeScan::new(scan.lambda(), scan.r_max(), ranges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn wrap_angle_range_and_identities() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert_relative_eq!(wrap_angle(3.0 * PI), -PI);
        assert_relative_eq!(wrap_angle(-3.0), -3.0);
        assert_relative_eq!(wrap_angle(TAU + 0.25), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn bearings_cover_half_open_span() {
        let scan = RangeScan::new(TAU, 10.0, vec![1.0; 4]).unwrap();
        assert_eq!(scan.bearing(0), -PI);
        assert_eq!(scan.bearing(1), -PI / 2.0);
        assert_eq!(scan.bearing(2), 0.0);
        assert_eq!(scan.bearing(3), PI / 2.0);
    }

    #[test]
    fn scan_rejects_bad_shapes() {
        assert!(RangeScan::new(0.0, 10.0, vec![1.0]).is_err());
        assert!(RangeScan::new(7.0, 10.0, vec![1.0]).is_err());
        assert!(RangeScan::new(TAU, 10.0, vec![]).is_err());
        assert!(RangeScan::new(TAU, 10.0, vec![11.0]).is_err());
        assert!(RangeScan::new(TAU, 10.0, vec![-0.5]).is_err());
        assert!(RangeScan::new(TAU, -1.0, vec![0.5]).is_err());
    }

    #[test]
    fn scan_json_round_trip_is_exact() {
        let scan = RangeScan::new(TAU, 10.0, vec![0.0, 1.25, 9.999, 10.0]).unwrap();
        let back = RangeScan::from_json(&scan.to_json()).unwrap();
        assert_eq!(scan, back);
    }

    #[test]
    fn scan_json_rejects_inconsistent_ray_count() {
        let text = r#"{"lambda": 6.283185307179586, "n_rays": 3, "r_max": 10.0, "ranges": [1.0, 2.0]}"#;
        assert!(RangeScan::from_json(text).is_err());
    }

    #[test]
    fn downsample_keeps_bearings_exactly() {
        let ranges: Vec<f64> = (0..1440).map(|i| (i % 97) as f64 / 100.0).collect();
        let scan = RangeScan::new(TAU, 15.0, ranges).unwrap();
        for factor in [1usize, 2, 3, 4, 6, 360] {
            let down = downsample(&scan, factor).unwrap();
            assert_eq!(down.n_rays(), 1440 / factor);
            for n in 0..down.n_rays() {
                assert_eq!(down.bearing(n), scan.bearing(n * factor));
                assert_eq!(down.ranges()[n], scan.ranges()[n * factor]);
            }
        }
        assert!(downsample(&scan, 7).is_err());
        assert!(downsample(&scan, 0).is_err());
    }

    proptest! {
        #[test]
        fn wrap_angle_stays_in_range(a in -1e3f64..1e3) {
            let w = wrap_angle(a);
            prop_assert!((-PI..PI).contains(&w));
            // Same direction: the wrapped angle differs by a whole number of
            // turns.
            let turns = (a - w) / TAU;
            prop_assert!((turns - turns.round()).abs() < 1e-9);
        }

        #[test]
        fn compose_inverse_is_identity(
            x in -50.0f64..50.0,
            y in -50.0f64..50.0,
            t in -10.0f64..10.0,
        ) {
            let p = Pose::new(x, y, t);
            let id = p.compose(&p.inverse());
            prop_assert!(id.x.abs() < 1e-9);
            prop_assert!(id.y.abs() < 1e-9);
            prop_assert!(wrap_angle(id.theta).abs() < 1e-9);
        }

        #[test]
        fn compose_is_associative(
            ax in -5.0f64..5.0, ay in -5.0f64..5.0, at in -4.0f64..4.0,
            bx in -5.0f64..5.0, by in -5.0f64..5.0, bt in -4.0f64..4.0,
            cx in -5.0f64..5.0, cy in -5.0f64..5.0, ct in -4.0f64..4.0,
        ) {
            let (a, b, c) = (Pose::new(ax, ay, at), Pose::new(bx, by, bt), Pose::new(cx, cy, ct));
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!((left.x - right.x).abs() < 1e-9);
            prop_assert!((left.y - right.y).abs() < 1e-9);
            prop_assert!(wrap_angle(left.theta - right.theta).abs() < 1e-9);
        }
    }
}
