//! Scan-to-map-scan matching: refines a pose hypothesis by registering the
//! measured scan against a map-scan ray-cast at the hypothesis.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid_map::OccupancyGrid;
use crate::scan_geometry::{scan_map, Pose, RangeScan};

/// Rays below this count make a scan unusable for matching.
const MIN_VALID_RAYS: usize = 10;

/// Minimum correspondences for the three-parameter solve.
const MIN_PAIRS: usize = 3;

/// Point-to-line ICP settings.
#[derive(Debug, Clone, Serialize)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Translation step below which an iteration counts as converged, m.
    pub translation_epsilon: f64,
    /// Rotation step below which an iteration counts as converged, rad.
    pub rotation_epsilon: f64,
    /// Correspondences farther than this are discarded, m.
    pub max_correspondence_distance: f64,
    /// Fraction of the worst remaining correspondences trimmed per
    /// iteration, in `[0, 0.5]`.
    pub outlier_trim_ratio: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 50,
            translation_epsilon: 1e-4,
            rotation_epsilon: 1e-4,
            max_correspondence_distance: 1.0,
            outlier_trim_ratio: 0.1,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        if !(self.translation_epsilon > 0.0 && self.rotation_epsilon > 0.0) {
            return Err(Error::InvalidParameter(
                "convergence epsilons must be positive".into(),
            ));
        }
        if !(self.max_correspondence_distance > 0.0) {
            return Err(Error::InvalidParameter(
                "max_correspondence_distance must be positive".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.outlier_trim_ratio) {
            return Err(Error::InvalidParameter(
                "outlier_trim_ratio must lie in [0, 0.5]".into(),
            ));
        }
        Ok(())
    }
}

/// Result of aligning two scans.
#[derive(Debug, Clone, Serialize)]
pub struct ScanMatchResult {
    /// Transform from the second scan's sensor frame to the first scan's
    /// sensor frame: composing the second scan's pose with `delta` lands on
    /// the pose the first scan was taken from.
    pub delta: Pose,
    pub iterations: usize,
    pub converged: bool,
    /// Mean point-to-line distance over the final correspondence set, m.
    pub residual: f64,
}

/// Result of refining a pose against the map.
#[derive(Debug, Clone, Serialize)]
pub struct MatchResult {
    /// Always `input pose ⊕ delta`.
    pub corrected_pose: Pose,
    pub delta: Pose,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
}

/// Converts a scan to 2D points in the world frame of `pose`. Rays clamped
/// at the maximum range carry no surface information and are excluded.
pub fn scan_to_points(scan: &RangeScan, pose: &Pose) -> Vec<(f64, f64)> {
    let (ps, pc) = pose.theta.sin_cos();
    scan.ranges()
        .iter()
        .enumerate()
        .filter(|(_, r)| **r < scan.r_max())
        .map(|(n, r)| {
            let (s, c) = scan.bearing(n).sin_cos();
            let (lx, ly) = (r * c, r * s);
            (pose.x + lx * pc - ly * ps, pose.y + lx * ps + ly * pc)
        })
        .collect()
}

/// Unit normals estimated from each point's neighbors in scan order; `None`
/// where neighbors coincide.
fn point_normals(points: &[(f64, f64)]) -> Vec<Option<(f64, f64)>> {
    let m = points.len();
    (0..m)
        .map(|j| {
            let a = points[j.saturating_sub(1)];
            let b = points[(j + 1).min(m - 1)];
            let (tx, ty) = (b.0 - a.0, b.1 - a.1);
            let len = (tx * tx + ty * ty).sqrt();
            if len < 1e-12 {
                None
            } else {
                Some((-ty / len, tx / len))
            }
        })
        .collect()
}

struct Correspondences {
    /// (moving index, target index, squared distance), trimmed.
    pairs: Vec<(usize, usize, f64)>,
}

fn correspond(
    moving: &[(f64, f64)],
    target: &[(f64, f64)],
    normals: &[Option<(f64, f64)>],
    transform: (f64, f64, f64),
    config: &IcpConfig,
) -> Correspondences {
    let (tx, ty, phi) = transform;
    let (s, c) = phi.sin_cos();
    let limit2 = config.max_correspondence_distance * config.max_correspondence_distance;
    let mut pairs = Vec::with_capacity(moving.len());
    for (i, &(mx, my)) in moving.iter().enumerate() {
        let px = mx * c - my * s + tx;
        let py = mx * s + my * c + ty;
        let mut best = usize::MAX;
        let mut best_d2 = limit2;
        for (j, &(vx, vy)) in target.iter().enumerate() {
            let (dx, dy) = (px - vx, py - vy);
            let d2 = dx * dx + dy * dy;
            if d2 < best_d2 && normals[j].is_some() {
                best = j;
                best_d2 = d2;
            }
        }
        if best != usize::MAX {
            pairs.push((i, best, best_d2));
        }
    }
    // Trim the worst correspondences by distance; deterministic order.
    pairs.sort_unstable_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    let drop = (config.outlier_trim_ratio * pairs.len() as f64).floor() as usize;
    let keep = (pairs.len() - drop).max(MIN_PAIRS.min(pairs.len()));
    pairs.truncate(keep);
    Correspondences { pairs }
}

fn mean_point_to_line(
    moving: &[(f64, f64)],
    target: &[(f64, f64)],
    normals: &[Option<(f64, f64)>],
    transform: (f64, f64, f64),
    pairs: &[(usize, usize, f64)],
) -> f64 {
    if pairs.is_empty() {
        return f64::INFINITY;
    }
    let (tx, ty, phi) = transform;
    let (s, c) = phi.sin_cos();
    let mut sum = 0.0;
    for &(i, j, _) in pairs {
        let (mx, my) = moving[i];
        let px = mx * c - my * s + tx;
        let py = mx * s + my * c + ty;
        let (vx, vy) = target[j];
        let (nx, ny) = normals[j].expect("paired targets have normals");
        sum += (nx * (px - vx) + ny * (py - vy)).abs();
    }
    sum / pairs.len() as f64
}

/// Aligns `scan_r` to `scan_v` with point-to-line ICP.
///
/// `scan_v`'s points act as the model: normals come from adjacent
/// virtual-scan points, and each iteration matches every measured point to
/// its nearest model point, trims the worst `outlier_trim_ratio`, and takes
/// one Gauss-Newton step. The iteration stops when the step drops below the
/// epsilons, the residual grows three iterations in a row (divergence,
/// `converged = false`), or `max_iterations` is reached.
pub fn scan_match(
    scan_r: &RangeScan,
    scan_v: &RangeScan,
    config: &IcpConfig,
) -> Result<ScanMatchResult> {
    config.validate()?;
    let moving = scan_to_points(scan_r, &Pose::new(0.0, 0.0, 0.0));
    let target = scan_to_points(scan_v, &Pose::new(0.0, 0.0, 0.0));
    for (points, name) in [(&moving, "measured"), (&target, "virtual")] {
        if points.len() < MIN_VALID_RAYS {
            let _ = name;
            return Err(Error::TooFewValidRays {
                have: points.len(),
                need: MIN_VALID_RAYS,
            });
        }
    }
    let normals = point_normals(&target);

    let mut transform = (0.0f64, 0.0f64, 0.0f64);
    let mut converged = false;
    let mut iterations = 0;
    let mut prev_residual = f64::INFINITY;
    let mut growth = 0;

    for iter in 1..=config.max_iterations {
        iterations = iter;
        let corr = correspond(&moving, &target, &normals, transform, config);
        if corr.pairs.len() < MIN_PAIRS {
            break;
        }
        let residual_now =
            mean_point_to_line(&moving, &target, &normals, transform, &corr.pairs);
        if residual_now > prev_residual {
            growth += 1;
            if growth >= 3 {
                break;
            }
        } else {
            growth = 0;
        }
        prev_residual = residual_now;

        // One Gauss-Newton step on sum of squared point-to-line residuals,
        // linearized around the current transform.
        let (tx, ty, phi) = transform;
        let (s, c) = phi.sin_cos();
        let mut h = [[0.0f64; 3]; 3];
        let mut g = [0.0f64; 3];
        for &(i, j, _) in &corr.pairs {
            let (mx, my) = moving[i];
            let px = mx * c - my * s + tx;
            let py = mx * s + my * c + ty;
            let (vx, vy) = target[j];
            let (nx, ny) = normals[j].expect("paired targets have normals");
            let r = nx * (px - vx) + ny * (py - vy);
            let jac = [nx, ny, nx * -py + ny * px];
            for a in 0..3 {
                for b in 0..3 {
                    h[a][b] += jac[a] * jac[b];
                }
                g[a] += jac[a] * r;
            }
        }
        // Tiny damping keeps the solve well-posed when a parameter is
        // unobservable (e.g. rotation against circularly symmetric data).
        let damping = 1e-12 * (h[0][0] + h[1][1] + h[2][2]).max(1e-12);
        for a in 0..3 {
            h[a][a] += damping;
        }
        let step = match solve3(&h, &[-g[0], -g[1], -g[2]]) {
            Some(d) => d,
            None => break,
        };
        transform = compose_increment(transform, step);
        if step[0].hypot(step[1]) < config.translation_epsilon
            && step[2].abs() < config.rotation_epsilon
        {
            converged = true;
            break;
        }
    }

    let final_corr = correspond(&moving, &target, &normals, transform, config);
    let residual = mean_point_to_line(&moving, &target, &normals, transform, &final_corr.pairs);
    if final_corr.pairs.len() < MIN_PAIRS {
        converged = false;
    }
    Ok(ScanMatchResult {
        delta: Pose::new(transform.0, transform.1, transform.2),
        iterations,
        converged,
        residual,
    })
}

/// Applies the increment `(dt, dphi)` on the left of the running transform.
fn compose_increment(t: (f64, f64, f64), step: [f64; 3]) -> (f64, f64, f64) {
    let (s, c) = step[2].sin_cos();
    (
        t.0 * c - t.1 * s + step[0],
        t.0 * s + t.1 * c + step[1],
        t.2 + step[2],
    )
}

/// Solves a 3x3 system by Gaussian elimination with partial pivoting.
fn solve3(h: &[[f64; 3]; 3], rhs: &[f64; 3]) -> Option<[f64; 3]> {
    let mut m = [
        [h[0][0], h[0][1], h[0][2], rhs[0]],
        [h[1][0], h[1][1], h[1][2], rhs[1]],
        [h[2][0], h[2][1], h[2][2], rhs[2]],
    ];
    for col in 0..3 {
        let pivot = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = [0.0f64; 3];
    for col in (0..3).rev() {
        let mut v = m[col][3];
        for k in col + 1..3 {
            v -= m[col][k] * x[k];
        }
        x[col] = v / m[col][col];
    }
    Some(x)
}

/// The free-space rule: a correction that leaves free space is rejected and
/// the input pose kept, reported as non-converged.
fn apply_free_space_rule(
    grid: &OccupancyGrid,
    pose: &Pose,
    matched: ScanMatchResult,
) -> MatchResult {
    let corrected = pose.compose(&matched.delta);
    if grid.is_free(corrected.x, corrected.y) {
        MatchResult {
            corrected_pose: corrected,
            delta: matched.delta,
            iterations: matched.iterations,
            converged: matched.converged,
            residual: matched.residual,
        }
    } else {
        MatchResult {
            corrected_pose: *pose,
            delta: Pose::new(0.0, 0.0, 0.0),
            iterations: matched.iterations,
            converged: false,
            residual: matched.residual,
        }
    }
}

/// Scan-to-map-scan matching: ray-casts a map-scan at `pose` with the
/// measured scan's shape, aligns the measured scan to it, and composes the
/// resulting delta onto `pose`. A correction landing outside free space is
/// rejected per [`apply_free_space_rule`].
pub fn sm2(
    scan_r: &RangeScan,
    grid: &OccupancyGrid,
    pose: &Pose,
    config: &IcpConfig,
) -> Result<MatchResult> {
    if !grid.is_free(pose.x, pose.y) {
        return Err(Error::PoseNotFree {
            x: pose.x,
            y: pose.y,
        });
    }
    let scan_v = scan_map(grid, pose, scan_r.n_rays(), scan_r.lambda(), scan_r.r_max())?;
    let matched = scan_match(scan_r, &scan_v, config)?;
    Ok(apply_free_space_rule(grid, pose, matched))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_maps::rect_room;
    use std::f64::consts::TAU;

    #[test]
    fn config_validation() {
        assert!(IcpConfig::default().validate().is_ok());
        assert!(IcpConfig {
            max_iterations: 0,
            ..IcpConfig::default()
        }
        .validate()
        .is_err());
        assert!(IcpConfig {
            outlier_trim_ratio: 0.6,
            ..IcpConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn scan_to_points_excludes_clamped_rays() {
        let scan = RangeScan::new(TAU, 5.0, vec![1.0, 5.0, 2.0, 5.0]).unwrap();
        let points = scan_to_points(&scan, &Pose::new(0.0, 0.0, 0.0));
        assert_eq!(points.len(), 2);
        // Ray 0 points along bearing -pi.
        assert!((points[0].0 + 1.0).abs() < 1e-12);
        assert!(points[0].1.abs() < 1e-9);
    }

    #[test]
    fn matching_identical_scans_is_exact() {
        let grid = rect_room(5.0, 4.0, 0.05);
        let pose = Pose::new(0.4, -0.3, 0.7);
        let scan = scan_map(&grid, &pose, 180, TAU, 10.0).unwrap();
        let result = sm2(&scan, &grid, &pose, &IcpConfig::default()).unwrap();
        assert!(result.converged);
        assert_eq!(result.delta.x, 0.0);
        assert_eq!(result.delta.y, 0.0);
        assert_eq!(result.delta.theta, 0.0);
        assert_eq!(result.corrected_pose, pose);
        assert!(result.residual < 1e-12);
    }

    #[test]
    fn translation_offset_is_recovered() {
        let grid = rect_room(4.0, 4.0, 0.05);
        let scan_r = scan_map(&grid, &Pose::new(0.0, 0.0, 0.0), 360, TAU, 10.0).unwrap();
        let scan_v = scan_map(&grid, &Pose::new(0.1, 0.0, 0.0), 360, TAU, 10.0).unwrap();
        let m = scan_match(&scan_r, &scan_v, &IcpConfig::default()).unwrap();
        assert!(m.converged);
        // The delta moves the virtual pose onto the measured pose.
        assert!((m.delta.x + 0.1).abs() < 0.02, "delta.x = {}", m.delta.x);
        assert!(m.delta.y.abs() < 0.02);
        assert!(m.delta.theta.abs() < 0.01);
    }

    #[test]
    fn rotation_offset_is_recovered() {
        let grid = rect_room(5.0, 3.0, 0.05);
        let scan_r = scan_map(&grid, &Pose::new(0.2, 0.1, 0.0), 360, TAU, 10.0).unwrap();
        let scan_v = scan_map(&grid, &Pose::new(0.2, 0.1, 0.15), 360, TAU, 10.0).unwrap();
        let m = scan_match(&scan_r, &scan_v, &IcpConfig::default()).unwrap();
        assert!(m.converged);
        assert!((m.delta.theta + 0.15).abs() < 0.01, "delta.theta = {}", m.delta.theta);
        assert!(m.delta.x.abs() < 0.02 && m.delta.y.abs() < 0.02);
    }

    #[test]
    fn nearby_hypothesis_is_refined_onto_the_true_pose() {
        let grid = rect_room(6.0, 4.0, 0.05);
        let truth = Pose::new(0.2, -0.3, 0.5);
        let scan_r = scan_map(&grid, &truth, 360, TAU, 10.0).unwrap();
        let hyp = Pose::new(truth.x + 0.2, truth.y - 0.15, truth.theta + 0.1);
        let result = sm2(&scan_r, &grid, &hyp, &IcpConfig::default()).unwrap();
        assert!(result.converged);
        let err = ((result.corrected_pose.x - truth.x).powi(2)
            + (result.corrected_pose.y - truth.y).powi(2))
        .sqrt();
        assert!(err <= 0.05, "position error {err}");
        assert_eq!(
            result.corrected_pose,
            hyp.compose(&result.delta),
            "corrected pose must be the composition of input and delta"
        );
    }

    #[test]
    fn correction_leaving_free_space_is_rejected() {
        let grid = rect_room(4.0, 4.0, 0.05);
        let pose = Pose::new(-1.9, 0.0, 0.0);
        let matched = ScanMatchResult {
            delta: Pose::new(-0.4, 0.0, 0.0),
            iterations: 5,
            converged: true,
            residual: 0.01,
        };
        let result = apply_free_space_rule(&grid, &pose, matched);
        assert!(!result.converged);
        assert_eq!(result.corrected_pose, pose);
        assert_eq!(result.delta, Pose::new(0.0, 0.0, 0.0));
    }

    #[test]
    fn too_few_valid_rays_is_an_error() {
        let near = RangeScan::new(TAU, 5.0, vec![5.0; 64]).unwrap();
        let full = RangeScan::new(TAU, 5.0, vec![2.0; 64]).unwrap();
        assert!(matches!(
            scan_match(&near, &full, &IcpConfig::default()),
            Err(Error::TooFewValidRays { .. })
        ));
    }

    #[test]
    fn rotationally_symmetric_input_keeps_residual_low_without_pinning_theta() {
        // A perfect circle of points: rotation is unobservable, so only the
        // residual is asserted.
        let circle = RangeScan::new(TAU, 10.0, vec![3.0; 180]).unwrap();
        let m = scan_match(&circle, &circle, &IcpConfig::default()).unwrap();
        let identity = mean_residual_for(&circle, &circle, (0.0, 0.0, 0.0));
        assert!(m.delta.x.abs() < 1e-6 && m.delta.y.abs() < 1e-6);
        assert!(
            (m.residual - identity).abs() < 1e-9,
            "returned residual {} vs identity residual {}",
            m.residual,
            identity
        );
    }

    fn mean_residual_for(scan_r: &RangeScan, scan_v: &RangeScan, t: (f64, f64, f64)) -> f64 {
        let moving = scan_to_points(scan_r, &Pose::new(0.0, 0.0, 0.0));
        let target = scan_to_points(scan_v, &Pose::new(0.0, 0.0, 0.0));
        let normals = point_normals(&target);
        let corr = correspond(&moving, &target, &normals, t, &IcpConfig::default());
        mean_point_to_line(&moving, &target, &normals, t, &corr.pairs)
    }
}
