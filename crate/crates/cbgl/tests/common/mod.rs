//! Helpers shared by the integration suites.
#![allow(dead_code)]

use cbgl::{CellState, OccupancyGrid, Pose};

/// Ray ranges by plain fixed-step marching: walk the ray in `step`-sized
/// increments and report the first sample outside free space. Shares no
/// traversal logic with the library's ray caster.
pub fn march_ray(
    grid: &OccupancyGrid,
    x: f64,
    y: f64,
    dx: f64,
    dy: f64,
    r_max: f64,
    step: f64,
) -> f64 {
    let mut t = 0.0;
    while t <= r_max {
        if !grid.is_free(x + t * dx, y + t * dy) {
            return t;
        }
        t += step;
    }
    r_max
}

/// Marching equivalent of a full scan at `pose`, with the library's bearing
/// convention reproduced arithmetically.
pub fn march_scan(
    grid: &OccupancyGrid,
    pose: &Pose,
    n_rays: usize,
    lambda: f64,
    r_max: f64,
    step: f64,
) -> Vec<f64> {
    (0..n_rays)
        .map(|n| {
            let bearing = -lambda / 2.0 + lambda * (n as f64 / n_rays as f64);
            let (dy, dx) = (pose.theta + bearing).sin_cos();
            march_ray(grid, pose.x, pose.y, dx, dy, r_max, step)
        })
        .collect()
}

fn shell(
    wi: usize,
    hi: usize,
    res: f64,
    free_at: impl Fn(usize, usize) -> bool,
) -> OccupancyGrid {
    let wall = 2usize;
    let (full_w, full_h) = (wi + 2 * wall, hi + 2 * wall);
    let mut cells = vec![CellState::Occupied; full_w * full_h];
    for y in 0..hi {
        for x in 0..wi {
            if free_at(x, y) {
                cells[(y + wall) * full_w + (x + wall)] = CellState::Free;
            }
        }
    }
    let origin = Pose::new(
        -(wi as f64 / 2.0 + wall as f64) * res,
        -(hi as f64 / 2.0 + wall as f64) * res,
        0.0,
    );
    OccupancyGrid::from_cell_states(full_w, full_h, res, origin, cells).unwrap()
}

/// Rectangular room, `w_m x h_m` free interior centered on the world origin.
pub fn rect_room(w_m: f64, h_m: f64, res: f64) -> OccupancyGrid {
    let wi = (w_m / res).round() as usize;
    let hi = (h_m / res).round() as usize;
    shell(wi, hi, res, |_, _| true)
}

/// Convex room with no rotational symmetry: the right wall slants so the
/// free width grows from `0.7 * w_m` at the bottom to `w_m` at the top.
/// A symmetric room admits twin poses with identical panoramic scans; this
/// one has a single global optimum per scan.
pub fn trapezoid_room(w_m: f64, h_m: f64, res: f64) -> OccupancyGrid {
    let wi = (w_m / res).round() as usize;
    let hi = (h_m / res).round() as usize;
    shell(wi, hi, res, move |x, y| {
        let frac = y as f64 / (hi - 1).max(1) as f64;
        x < ((0.7 + 0.3 * frac) * wi as f64).round() as usize
    })
}

/// Two rooms of clearly different sizes joined by nothing: poses in the
/// small room see geometry that cannot be matched to the big room's scans.
pub fn dissimilar_rooms(res: f64) -> OccupancyGrid {
    let (big_w, h, small_w, wall) = (
        (6.0 / res).round() as usize,
        (4.0 / res).round() as usize,
        (2.0 / res).round() as usize,
        (0.2 / res).ceil() as usize,
    );
    let wi = big_w + wall + small_w;
    shell(wi, h, res, move |x, _| x < big_w || x >= big_w + wall)
}

/// Checks one scan against the marcher. A coarse march can overshoot past a
/// corner the exact caster clips, so disagreements are retried at a fine
/// step before they count as failures.
pub fn assert_scan_matches_march(
    grid: &OccupancyGrid,
    pose: &Pose,
    n_rays: usize,
    lambda: f64,
    r_max: f64,
) {
    let res = grid.resolution();
    let scan = cbgl::scan_map(grid, pose, n_rays, lambda, r_max).unwrap();
    let coarse = march_scan(grid, pose, n_rays, lambda, r_max, res / 10.0);
    for (n, (&got, &expected)) in scan.ranges().iter().zip(&coarse).enumerate() {
        if (got - expected).abs() <= res {
            continue;
        }
        let bearing = -lambda / 2.0 + lambda * (n as f64 / n_rays as f64);
        let (dy, dx) = (pose.theta + bearing).sin_cos();
        let fine = march_ray(grid, pose.x, pose.y, dx, dy, r_max, res / 1000.0);
        assert!(
            (got - fine).abs() <= res,
            "ray {n} from ({:.3}, {:.3}, {:.3}): cast {got}, coarse march {expected}, fine march {fine}",
            pose.x,
            pose.y,
            pose.theta
        );
    }
}
