//! Map constructors shared by unit tests.

use crate::grid_map::{CellState, OccupancyGrid};
use crate::scan_geometry::Pose;

/// Rectangular room with a two-cell wall ring; the free interior is
/// `w_m x h_m` meters centered on the world origin.
pub(crate) fn rect_room(w_m: f64, h_m: f64, res: f64) -> OccupancyGrid {
    let wi = (w_m / res).round() as usize;
    let hi = (h_m / res).round() as usize;
    let wall = 2usize;
    let (full_w, full_h) = (wi + 2 * wall, hi + 2 * wall);
    let mut cells = vec![CellState::Occupied; full_w * full_h];
    for cy in wall..wall + hi {
        for cx in wall..wall + wi {
            cells[cy * full_w + cx] = CellState::Free;
        }
    }
    let origin = Pose::new(
        -(wi as f64 / 2.0 + wall as f64) * res,
        -(hi as f64 / 2.0 + wall as f64) * res,
        0.0,
    );
    OccupancyGrid::from_cell_states(full_w, full_h, res, origin, cells).unwrap()
}

/// Convex but rotationally asymmetric room: the right wall slants so no
/// rigid motion maps the room onto itself. Width grows from `0.7 * w_m` at
/// the bottom to `w_m` at the top; the nominal `w_m x h_m` box is centered
/// on the world origin.
pub(crate) fn trapezoid_room(w_m: f64, h_m: f64, res: f64) -> OccupancyGrid {
    let wi = (w_m / res).round() as usize;
    let hi = (h_m / res).round() as usize;
    let wall = 2usize;
    let (full_w, full_h) = (wi + 2 * wall, hi + 2 * wall);
    let mut cells = vec![CellState::Occupied; full_w * full_h];
    for y in 0..hi {
        let frac = y as f64 / (hi - 1).max(1) as f64;
        let row_w = ((0.7 + 0.3 * frac) * wi as f64).round() as usize;
        for x in 0..row_w {
            cells[(y + wall) * full_w + (x + wall)] = CellState::Free;
        }
    }
    let origin = Pose::new(
        -(wi as f64 / 2.0 + wall as f64) * res,
        -(hi as f64 / 2.0 + wall as f64) * res,
        0.0,
    );
    OccupancyGrid::from_cell_states(full_w, full_h, res, origin, cells).unwrap()
}
