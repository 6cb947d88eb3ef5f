//! Benchmark harness: synthetic floorplan generation, Monte Carlo trial
//! execution, timing-vs-area profiles, and the rank-partition diagnostic.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::caer_field::{psi_field, rank_field};
use crate::error::{Error, Result};
use crate::grid_map::{CellState, OccupancyGrid};
use crate::pipeline::{cbgl, estimate_error, CbglConfig, CbglResult, StageTimings};
use crate::scan_geometry::{simulate_measurement, Pose, RangeScan};

/// Parameters of a generated rectilinear floorplan.
#[derive(Debug, Clone, Serialize)]
pub struct EnvSpec {
    /// Interior bounding area, m^2 (the interior is square).
    pub area: f64,
    pub room_count: u32,
    /// Doorway width range, m.
    pub corridor_width: (f64, f64),
    /// Thickness of interior and boundary walls, m.
    pub wall_thickness: f64,
    /// Cell size, m.
    pub resolution: f64,
    /// Obstacles per m^2 of interior.
    pub clutter_density: f64,
    pub seed: u64,
}

impl EnvSpec {
    pub fn new(area: f64, room_count: u32, seed: u64) -> Self {
        EnvSpec {
            area,
            room_count,
            corridor_width: (0.8, 1.4),
            wall_thickness: 0.1,
            resolution: 0.05,
            clutter_density: 0.03,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.area > 0.0 && self.area.is_finite()) {
            return Err(Error::InvalidParameter("area must be positive".into()));
        }
        if self.room_count == 0 {
            return Err(Error::InvalidParameter("room_count must be at least 1".into()));
        }
        if !(self.corridor_width.0 > 0.0 && self.corridor_width.0 <= self.corridor_width.1) {
            return Err(Error::InvalidParameter(
                "corridor_width must be a positive non-empty range".into(),
            ));
        }
        if !(self.wall_thickness > 0.0) {
            return Err(Error::InvalidParameter("wall_thickness must be positive".into()));
        }
        if !(self.resolution > 0.0) {
            return Err(Error::InvalidParameter("resolution must be positive".into()));
        }
        if !(self.clutter_density >= 0.0) {
            return Err(Error::InvalidParameter("clutter_density must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

struct CellCanvas {
    width: usize,
    height: usize,
    cells: Vec<CellState>,
}

impl CellCanvas {
    fn occupied(width: usize, height: usize) -> Self {
        CellCanvas {
            width,
            height,
            cells: vec![CellState::Occupied; width * height],
        }
    }

    fn fill(&mut self, x0: usize, y0: usize, w: usize, h: usize, state: CellState) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.cells[y * self.width + x] = state;
            }
        }
    }

    fn all_free(&self, x0: usize, y0: usize, w: usize, h: usize) -> bool {
        (y0..y0 + h).all(|y| (x0..x0 + w).all(|x| self.cells[y * self.width + x] == CellState::Free))
    }

    /// (total free cells, free cells reachable from the first free cell).
    fn free_connectivity(&self) -> (usize, usize) {
        let total = self.cells.iter().filter(|s| **s == CellState::Free).count();
        let start = match self.cells.iter().position(|s| *s == CellState::Free) {
            Some(i) => i,
            None => return (0, 0),
        };
        let mut seen = vec![false; self.cells.len()];
        let mut stack = vec![start];
        seen[start] = true;
        let mut reached = 0usize;
        while let Some(i) = stack.pop() {
            reached += 1;
            let (x, y) = (i % self.width, i / self.width);
            let push = |nx: usize, ny: usize, stack: &mut Vec<usize>, seen: &mut Vec<bool>| {
                let j = ny * self.width + nx;
                if !seen[j] && self.cells[j] == CellState::Free {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                push(x - 1, y, &mut stack, &mut seen);
            }
            if x + 1 < self.width {
                push(x + 1, y, &mut stack, &mut seen);
            }
            if y > 0 {
                push(x, y - 1, &mut stack, &mut seen);
            }
            if y + 1 < self.height {
                push(x, y + 1, &mut stack, &mut seen);
            }
        }
        (total, reached)
    }
}

/// Number of 4-connected free components in a grid.
pub fn free_component_count(grid: &OccupancyGrid) -> usize {
    let (w, h) = (grid.width(), grid.height());
    let mut canvas = CellCanvas::occupied(w, h);
    for y in 0..h {
        for x in 0..w {
            canvas.cells[y * w + x] = grid.state_at_cell(x, y).unwrap();
        }
    }
    let mut count = 0;
    loop {
        let (total, reached) = canvas.free_connectivity();
        if total == 0 {
            return count;
        }
        count += 1;
        if reached == total {
            return count;
        }
        // Erase the reached component and look again.
        let start = canvas
            .cells
            .iter()
            .position(|s| *s == CellState::Free)
            .unwrap();
        let mut stack = vec![start];
        canvas.cells[start] = CellState::Unknown;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            for (nx, ny) in [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ] {
                if nx < w && ny < h {
                    let j = ny * w + nx;
                    if canvas.cells[j] == CellState::Free {
                        canvas.cells[j] = CellState::Unknown;
                        stack.push(j);
                    }
                }
            }
        }
    }
}

/// Generates a rectilinear multi-room floorplan: a square interior split by
/// axis-aligned walls into `room_count` rooms, one doorway per dividing
/// wall, plus rectangular clutter that never disconnects free space.
/// Deterministic per `spec.seed`.
pub fn generate_environment(spec: &EnvSpec) -> Result<OccupancyGrid> {
    spec.validate()?;
    let res = spec.resolution;
    let side = ((spec.area.sqrt() / res).round() as usize).max(4);
    let wall = ((spec.wall_thickness / res).ceil() as usize).max(1);
    let (width, height) = (side + 2 * wall, side + 2 * wall);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut canvas = CellCanvas::occupied(width, height);
    canvas.fill(wall, wall, side, side, CellState::Free);

    // Rooms must fit a doorway in any wall plus some maneuvering space.
    let min_side_m = (spec.corridor_width.1 + 0.4).max(1.5);
    let min_side = ((min_side_m / res).ceil() as usize).max(2);

    let mut leaves = vec![Rect {
        x: wall,
        y: wall,
        w: side,
        h: side,
    }];
    while leaves.len() < spec.room_count as usize {
        let splittable = leaves
            .iter()
            .enumerate()
            .filter(|(_, r)| r.w.max(r.h) >= 2 * min_side + wall)
            .max_by_key(|(i, r)| (r.w * r.h, usize::MAX - i))
            .map(|(i, _)| i);
        let index = splittable.ok_or_else(|| {
            Error::Infeasible(format!(
                "cannot fit {} rooms of side >= {:.2} m into {:.0} m2",
                spec.room_count, min_side_m, spec.area
            ))
        })?;
        let rect = leaves.remove(index);
        let vertical = rect.w >= rect.h;
        let span = if vertical { rect.w } else { rect.h };
        let offset = rng.random_range(min_side..=span - min_side - wall);

        let door_m = rng.random_range(spec.corridor_width.0..=spec.corridor_width.1);
        let across = if vertical { rect.h } else { rect.w };
        let door = (((door_m / res).round() as usize).max(1)).min(across);
        let door_at = rng.random_range(0..=across - door);

        if vertical {
            canvas.fill(rect.x + offset, rect.y, wall, rect.h, CellState::Occupied);
            canvas.fill(rect.x + offset, rect.y + door_at, wall, door, CellState::Free);
            leaves.push(Rect {
                w: offset,
                ..rect
            });
            leaves.push(Rect {
                x: rect.x + offset + wall,
                w: rect.w - offset - wall,
                ..rect
            });
        } else {
            canvas.fill(rect.x, rect.y + offset, rect.w, wall, CellState::Occupied);
            canvas.fill(rect.x + door_at, rect.y + offset, door, wall, CellState::Free);
            leaves.push(Rect {
                h: offset,
                ..rect
            });
            leaves.push(Rect {
                y: rect.y + offset + wall,
                h: rect.h - offset - wall,
                ..rect
            });
        }
    }

    let interior_m2 = (side as f64 * res) * (side as f64 * res);
    let obstacles = (spec.clutter_density * interior_m2).floor() as usize;
    for _ in 0..obstacles {
        for _attempt in 0..40 {
            let ow = (((rng.random_range(0.2..=0.6) / res).round() as usize).max(1)).min(side);
            let oh = (((rng.random_range(0.2..=0.6) / res).round() as usize).max(1)).min(side);
            let ox = rng.random_range(wall..=wall + side - ow);
            let oy = rng.random_range(wall..=wall + side - oh);
            if !canvas.all_free(ox, oy, ow, oh) {
                continue;
            }
            canvas.fill(ox, oy, ow, oh, CellState::Occupied);
            let (total, reached) = canvas.free_connectivity();
            if total == reached {
                break;
            }
            canvas.fill(ox, oy, ow, oh, CellState::Free);
        }
    }

    OccupancyGrid::from_cell_states(width, height, res, Pose::new(0.0, 0.0, 0.0), canvas.cells)
}

/// Two identical rooms separated by a solid wall: every pose in one room has
/// an exact geometric twin in the other, shifted by [`two_room_offset`].
pub fn two_room_map(room_w: f64, room_h: f64, resolution: f64) -> Result<OccupancyGrid> {
    if !(room_w > 0.0 && room_h > 0.0 && resolution > 0.0) {
        return Err(Error::InvalidParameter(
            "room dimensions and resolution must be positive".into(),
        ));
    }
    let res = resolution;
    let rw = ((room_w / res).round() as usize).max(2);
    let rh = ((room_h / res).round() as usize).max(2);
    let wall = ((0.2 / res).ceil() as usize).max(2);
    let width = 3 * wall + 2 * rw;
    let height = 2 * wall + rh;
    let mut canvas = CellCanvas::occupied(width, height);
    canvas.fill(wall, wall, rw, rh, CellState::Free);
    canvas.fill(2 * wall + rw, wall, rw, rh, CellState::Free);
    OccupancyGrid::from_cell_states(width, height, res, Pose::new(0.0, 0.0, 0.0), canvas.cells)
}

/// World-frame x offset that carries a pose in the first room of
/// [`two_room_map`] onto its twin in the second.
pub fn two_room_offset(room_w: f64, resolution: f64) -> f64 {
    let rw = ((room_w / resolution).round() as usize).max(2);
    let wall = ((0.2 / resolution).ceil() as usize).max(2);
    (rw + wall) as f64 * resolution
}

/// Range sensor description used by the harness.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SensorModel {
    pub n_rays: usize,
    /// Angular range, rad.
    pub lambda: f64,
    /// Range cap, m.
    pub r_max: f64,
    /// Additive range noise standard deviation, m.
    pub sigma: f64,
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        if self.n_rays == 0 {
            return Err(Error::InvalidParameter("n_rays must be at least 1".into()));
        }
        if !(self.lambda > 0.0 && self.r_max > 0.0 && self.sigma >= 0.0) {
            return Err(Error::InvalidParameter(
                "lambda and r_max must be positive, sigma non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `(pose_index, trial_index)` under a master seed. Each trial
/// derives its randomness from this value alone, so trials can run in any
/// order, or concurrently, without changing any record.
pub fn trial_seed(master: u64, pose_index: u64, trial_index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ pose_index) ^ trial_index)
}

/// One completed localization attempt.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub pose_index: usize,
    pub trial_index: usize,
    pub seed: u64,
    pub truth: Pose,
    pub estimate: Pose,
    pub psi_of_estimate: f64,
    pub location_error: f64,
    pub orientation_error: f64,
    pub combined_error: f64,
    pub hypothesis_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<StageTimings>,
}

/// A trial that returned an error instead of an estimate.
#[derive(Debug, Clone, Serialize)]
pub struct TrialFailure {
    pub pose_index: usize,
    pub trial_index: usize,
    pub message: String,
}

/// Quantiles of per-trial total runtime, nearest-rank.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TimingQuantiles {
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub max_ms: f64,
}

/// Summary statistics over a trial batch. Means and standard deviations are
/// over successful trials; the inlier denominator counts failures as
/// non-inliers.
#[derive(Debug, Clone, Serialize)]
pub struct Aggregates {
    pub attempted: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub delta_l: f64,
    pub delta_theta: f64,
    /// Fraction of attempts with location error <= delta_l and orientation
    /// error <= delta_theta.
    pub inlier_proportion: f64,
    pub location_mean: f64,
    pub location_std: f64,
    pub orientation_mean: f64,
    pub orientation_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingQuantiles>,
}

impl Aggregates {
    /// Recomputes the summary from raw records (population standard
    /// deviation). The timing block is present only when every record still
    /// carries timings.
    pub fn from_records(
        records: &[TrialRecord],
        failed: usize,
        delta_l: f64,
        delta_theta: f64,
    ) -> Aggregates {
        let n = records.len();
        let attempted = n + failed;
        let inliers = records
            .iter()
            .filter(|r| r.location_error <= delta_l && r.orientation_error <= delta_theta)
            .count();
        let mean = |f: &dyn Fn(&TrialRecord) -> f64| {
            if n == 0 {
                0.0
            } else {
                records.iter().map(|r| f(r)).sum::<f64>() / n as f64
            }
        };
        let std = |f: &dyn Fn(&TrialRecord) -> f64, m: f64| {
            if n == 0 {
                0.0
            } else {
                (records.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / n as f64).sqrt()
            }
        };
        let loc = &|r: &TrialRecord| r.location_error;
        let ori = &|r: &TrialRecord| r.orientation_error;
        let location_mean = mean(loc);
        let orientation_mean = mean(ori);
        let timing = if n > 0 && records.iter().all(|r| r.timing.is_some()) {
            let mut totals: Vec<f64> = records
                .iter()
                .map(|r| r.timing.as_ref().unwrap().total_ms)
                .collect();
            totals.sort_unstable_by(f64::total_cmp);
            let rank = |q: f64| totals[((q * (n - 1) as f64).round()) as usize];
            Some(TimingQuantiles {
                p50_ms: rank(0.5),
                p90_ms: rank(0.9),
                max_ms: totals[n - 1],
            })
        } else {
            None
        };
        Aggregates {
            attempted,
            succeeded: n,
            failed,
            delta_l,
            delta_theta,
            inlier_proportion: if attempted == 0 {
                0.0
            } else {
                inliers as f64 / attempted as f64
            },
            location_mean,
            location_std: std(loc, location_mean),
            orientation_mean,
            orientation_std: std(ori, orientation_mean),
            timing,
        }
    }
}

/// Records, failures, and aggregates of one trial batch.
#[derive(Debug, Clone, Serialize)]
pub struct TrialReport {
    pub records: Vec<TrialRecord>,
    pub failures: Vec<TrialFailure>,
    pub aggregates: Aggregates,
}

impl TrialReport {
    /// Removes all wall-clock measurements so the report's bytes depend only
    /// on seeds and inputs.
    pub fn strip_timing(&mut self) {
        for r in &mut self.records {
            r.timing = None;
        }
        self.aggregates.timing = None;
    }

    /// One CSV row per successful trial. Timing columns appear only while
    /// the records carry timings.
    pub fn to_csv(&self) -> String {
        let with_timing =
            !self.records.is_empty() && self.records.iter().all(|r| r.timing.is_some());
        let mut out = String::from(
            "pose_index,trial_index,seed,truth_x,truth_y,truth_theta,\
             estimate_x,estimate_y,estimate_theta,psi,location_error,\
             orientation_error,combined_error,hypothesis_count",
        );
        if with_timing {
            out.push_str(
                ",dispersal_ms,field_evaluation_ms,ranking_ms,sm2_ms,\
                 final_selection_ms,total_ms",
            );
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.pose_index,
                r.trial_index,
                r.seed,
                r.truth.x,
                r.truth.y,
                r.truth.theta,
                r.estimate.x,
                r.estimate.y,
                r.estimate.theta,
                r.psi_of_estimate,
                r.location_error,
                r.orientation_error,
                r.combined_error,
                r.hypothesis_count,
            ));
            if with_timing {
                let t = r.timing.as_ref().unwrap();
                out.push_str(&format!(
                    ",{},{},{},{},{},{}",
                    t.dispersal_ms,
                    t.field_evaluation_ms,
                    t.ranking_ms,
                    t.sm2_ms,
                    t.final_selection_ms,
                    t.total_ms
                ));
            }
            out.push('\n');
        }
        out
    }

    /// Aggregates plus failures as pretty JSON.
    pub fn aggregate_json(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            aggregates: &'a Aggregates,
            failures: &'a [TrialFailure],
        }
        serde_json::to_string_pretty(&View {
            aggregates: &self.aggregates,
            failures: &self.failures,
        })
        .expect("aggregates serialize")
        + "\n"
    }
}

fn run_one_trial(
    grid: &OccupancyGrid,
    sensor: &SensorModel,
    config: &CbglConfig,
    truth: &Pose,
    seed: u64,
) -> Result<(RangeScan, CbglResult)> {
    let scan_seed = splitmix64(seed);
    let mut scan_rng = ChaCha8Rng::seed_from_u64(scan_seed);
    let scan = simulate_measurement(
        grid,
        truth,
        sensor.n_rays,
        sensor.lambda,
        sensor.r_max,
        sensor.sigma,
        &mut scan_rng,
    )?;
    let trial_config = CbglConfig {
        seed: splitmix64(scan_seed),
        ..config.clone()
    };
    let result = cbgl(&scan, grid, &trial_config)?;
    Ok((scan, result))
}

/// Runs `n_poses * n_trials_per_pose` independent localization attempts:
/// true poses are drawn from free space under `seed`, each trial simulates a
/// fresh noisy scan and runs the pipeline from scratch. Per-trial failures
/// are recorded, not fatal. Records are ordered by `(pose_index,
/// trial_index)` regardless of execution order.
#[allow(clippy::too_many_arguments)]
pub fn run_trials(
    grid: &OccupancyGrid,
    sensor: &SensorModel,
    config: &CbglConfig,
    n_poses: usize,
    n_trials_per_pose: usize,
    seed: u64,
    delta_l: f64,
    delta_theta: f64,
) -> Result<TrialReport> {
    sensor.validate()?;
    config.validate()?;
    if n_poses == 0 || n_trials_per_pose == 0 {
        return Err(Error::InvalidParameter(
            "n_poses and n_trials_per_pose must be at least 1".into(),
        ));
    }
    if !(delta_l > 0.0 && delta_theta > 0.0) {
        return Err(Error::InvalidParameter("thresholds must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truths = Vec::with_capacity(n_poses);
    for _ in 0..n_poses {
        let (x, y) = grid.sample_free_point(&mut rng)?;
        truths.push(Pose::new(x, y, rng.random_range(-PI..PI)));
    }

    let jobs: Vec<(usize, usize)> = (0..n_poses)
        .flat_map(|p| (0..n_trials_per_pose).map(move |t| (p, t)))
        .collect();
    let outcomes: Vec<(usize, usize, u64, Result<(RangeScan, CbglResult)>)> = jobs
        .par_iter()
        .map(|&(p, t)| {
            let ts = trial_seed(seed, p as u64, t as u64);
            (p, t, ts, run_one_trial(grid, sensor, config, &truths[p], ts))
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (p, t, ts, outcome) in outcomes {
        match outcome {
            Ok((_, result)) => {
                let err = estimate_error(&result.estimate, &truths[p]);
                records.push(TrialRecord {
                    pose_index: p,
                    trial_index: t,
                    seed: ts,
                    truth: truths[p],
                    estimate: result.estimate,
                    psi_of_estimate: result.psi_of_estimate,
                    location_error: err.location,
                    orientation_error: err.orientation,
                    combined_error: err.combined,
                    hypothesis_count: result.hypothesis_count,
                    timing: result.timing,
                });
            }
            Err(e) => failures.push(TrialFailure {
                pose_index: p,
                trial_index: t,
                message: e.to_string(),
            }),
        }
    }
    let aggregates = Aggregates::from_records(&records, failures.len(), delta_l, delta_theta);
    Ok(TrialReport {
        records,
        failures,
        aggregates,
    })
}

/// The rank partition around the bottom-k threshold.
///
/// `psi_0` is the largest CAER among the k best-ranked hypotheses and
/// `delta_0` the largest combined pose error among hypotheses at or below
/// `psi_0`. `v` collects hypotheses inside both bounds, `w` those outside
/// the CAER bound but inside the error bound, `x` the rest;
/// `admissible_in_v` says whether any member of `v` is within
/// `(delta_l, delta_theta)` of the true pose.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionDiagnostic {
    pub psi_0: f64,
    pub delta_0: f64,
    pub v_size: usize,
    pub w_size: usize,
    pub x_size: usize,
    pub admissible_in_v: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn partition_diagnostic(
    scan_r: &RangeScan,
    grid: &OccupancyGrid,
    hypotheses: &[Pose],
    true_pose: &Pose,
    k: usize,
    delta_l: f64,
    delta_theta: f64,
) -> Result<PartitionDiagnostic> {
    if k == 0 || k > hypotheses.len() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must lie in 1..={}",
            hypotheses.len()
        )));
    }
    if !(delta_l > 0.0 && delta_theta > 0.0) {
        return Err(Error::InvalidParameter("thresholds must be positive".into()));
    }
    let ranked = rank_field(psi_field(scan_r, grid, hypotheses)?);
    let psi = ranked.field().psi();
    let psi_0 = psi[ranked.permutation()[k - 1]];
    let errors: Vec<_> = hypotheses
        .iter()
        .map(|h| estimate_error(h, true_pose))
        .collect();
    let delta_0 = errors
        .iter()
        .zip(psi)
        .filter(|(_, p)| **p <= psi_0)
        .map(|(e, _)| e.combined)
        .fold(0.0f64, f64::max);
    let (mut v_size, mut w_size, mut x_size) = (0usize, 0usize, 0usize);
    let mut admissible_in_v = false;
    for (e, p) in errors.iter().zip(psi) {
        if *p <= psi_0 && e.combined <= delta_0 {
            v_size += 1;
            if e.location <= delta_l && e.orientation <= delta_theta {
                admissible_in_v = true;
            }
        } else if e.combined <= delta_0 {
            w_size += 1;
        } else {
            x_size += 1;
        }
    }
    Ok(PartitionDiagnostic {
        psi_0,
        delta_0,
        v_size,
        w_size,
        x_size,
        admissible_in_v,
    })
}

/// Mean runtime and stage shares for one environment size.
#[derive(Debug, Clone, Serialize)]
pub struct AreaTiming {
    pub area: f64,
    pub free_area: f64,
    pub hypothesis_count: usize,
    pub mean_total_ms: f64,
    /// Fraction of total wall-clock spent evaluating the CAER field (the
    /// map-scan stage), aggregated over trials.
    pub field_share: f64,
}

/// Generates one environment per requested area and measures pipeline
/// runtime over `trials_per_area` trials each.
pub fn timing_profile(
    areas: &[f64],
    sensor: &SensorModel,
    config: &CbglConfig,
    trials_per_area: usize,
    seed: u64,
) -> Result<Vec<AreaTiming>> {
    if areas.is_empty() || trials_per_area == 0 {
        return Err(Error::InvalidParameter(
            "need at least one area and one trial per area".into(),
        ));
    }
    if areas.windows(2).any(|w| w[0] >= w[1]) || areas[0] <= 0.0 {
        return Err(Error::InvalidParameter(
            "areas must be positive and strictly ascending".into(),
        ));
    }
    sensor.validate()?;
    config.validate()?;
    let mut rows = Vec::with_capacity(areas.len());
    for (i, &area) in areas.iter().enumerate() {
        let rooms = ((area / 40.0).round() as u32).max(1);
        let env_seed = splitmix64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let grid = generate_environment(&EnvSpec::new(area, rooms, env_seed))?;
        let mut rng = ChaCha8Rng::seed_from_u64(env_seed);
        let mut total = 0.0;
        let mut field = 0.0;
        let mut hypothesis_count = 0;
        for t in 0..trials_per_area {
            let (x, y) = grid.sample_free_point(&mut rng)?;
            let truth = Pose::new(x, y, rng.random_range(-PI..PI));
            let (_, result) =
                run_one_trial(&grid, sensor, config, &truth, trial_seed(env_seed, 0, t as u64))?;
            let timing = result.timing.expect("pipeline reports timings");
            total += timing.total_ms;
            field += timing.field_evaluation_ms;
            hypothesis_count = result.hypothesis_count;
        }
        rows.push(AreaTiming {
            area,
            free_area: grid.free_area(),
            hypothesis_count,
            mean_total_ms: total / trials_per_area as f64,
            field_share: field / total,
        });
    }
    Ok(rows)
}

/// CSV rows for a timing profile.
pub fn profile_csv(rows: &[AreaTiming]) -> String {
    let mut out =
        String::from("area_m2,free_area_m2,hypothesis_count,mean_total_ms,field_share\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.area, r.free_area, r.hypothesis_count, r.mean_total_ms, r.field_share
        ));
    }
    out
}
