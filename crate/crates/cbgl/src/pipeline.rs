//! The end-to-end localization pipeline: hypothesis dispersal, field
//! evaluation, ranking, refinement of the best few, final selection.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::caer_field::{caer, psi_field_dispersed, rank_field, DispersedSet};
use crate::error::{Error, Result};
use crate::grid_map::OccupancyGrid;
use crate::scan_geometry::{scan_map, wrap_angle, Pose, RangeScan};
use crate::sm2_matcher::{sm2, IcpConfig, MatchResult};

/// Pipeline parameters.
#[derive(Debug, Clone, Serialize)]
pub struct CbglConfig {
    /// Hypothesis locations per square meter of free space.
    pub d_l: f64,
    /// Headings per location, equispaced over a full turn.
    pub d_alpha: u32,
    /// Number of best-ranked hypotheses handed to scan-to-map-scan matching.
    pub k: usize,
    pub icp: IcpConfig,
    /// Seed of the dispersal generator; fixes the whole run.
    pub seed: u64,
}

impl Default for CbglConfig {
    fn default() -> Self {
        CbglConfig {
            d_l: 40.0,
            d_alpha: 32,
            k: 10,
            icp: IcpConfig::default(),
            seed: 0,
        }
    }
}

impl CbglConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_l >= 1.0) {
            return Err(Error::InvalidParameter("d_l must be at least 1".into()));
        }
        if self.d_alpha == 0 {
            return Err(Error::InvalidParameter("d_alpha must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        self.icp.validate()
    }
}

/// Wall-clock duration of each pipeline stage, milliseconds.
#[derive(Debug, Clone, Serialize)]
pub struct StageTimings {
    pub dispersal_ms: f64,
    pub field_evaluation_ms: f64,
    pub ranking_ms: f64,
    pub sm2_ms: f64,
    pub final_selection_ms: f64,
    pub total_ms: f64,
}

/// One refined hypothesis with its field value at the refined pose.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateEstimate {
    pub pose: Pose,
    pub psi: f64,
    pub converged: bool,
}

/// Pipeline output.
#[derive(Debug, Clone, Serialize)]
pub struct CbglResult {
    pub estimate: Pose,
    pub psi_of_estimate: f64,
    /// The refined candidates in rank order of their source hypotheses.
    pub candidates: Vec<CandidateEstimate>,
    pub hypothesis_count: usize,
    /// `None` when the caller strips timing for bit-stable output.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<StageTimings>,
}

/// Draws `floor(d_l * free_area)` locations uniformly over free space, each
/// with a random base heading in `[-pi, pi)` fanned into `d_alpha` headings
/// spaced `2*pi/d_alpha` apart. The structured form feeds
/// [`psi_field_dispersed`]; [`disperse_hypotheses`] flattens it.
pub fn disperse_set(
    grid: &OccupancyGrid,
    d_l: f64,
    d_alpha: u32,
    rng: &mut impl Rng,
) -> Result<DispersedSet> {
    if !(d_l > 0.0) {
        return Err(Error::InvalidParameter("d_l must be positive".into()));
    }
    if d_alpha == 0 {
        return Err(Error::InvalidParameter("d_alpha must be at least 1".into()));
    }
    let n_locations = (d_l * grid.free_area()).floor() as usize;
    if n_locations == 0 {
        if grid.free_area() == 0.0 {
            return Err(Error::NoFreeSpace);
        }
        return Err(Error::InvalidParameter(format!(
            "d_l = {d_l} over {:.3} m2 of free space gives zero hypothesis locations",
            grid.free_area()
        )));
    }
    let mut locations = Vec::with_capacity(n_locations);
    let mut base_headings = Vec::with_capacity(n_locations);
    for _ in 0..n_locations {
        locations.push(grid.sample_free_point(rng)?);
        base_headings.push(rng.random_range(-PI..PI));
    }
    Ok(DispersedSet {
        locations,
        base_headings,
        d_alpha,
    })
}

/// The dispersal stage as a flat pose list, location-major.
pub fn disperse_hypotheses(
    grid: &OccupancyGrid,
    d_l: f64,
    d_alpha: u32,
    rng: &mut impl Rng,
) -> Result<Vec<Pose>> {
    Ok(disperse_set(grid, d_l, d_alpha, rng)?.poses())
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Runs the full pipeline: disperse hypotheses over free space, evaluate the
/// CAER field, keep the bottom `k`, refine each by scan-to-map-scan
/// matching, and return the refined candidate with the lowest CAER.
///
/// Deterministic given `(config.seed, scan_r, grid)`: results are
/// bit-identical for any rayon thread count. Stage timings are always
/// collected; callers wanting reproducible bytes drop `timing`.
pub fn cbgl(scan_r: &RangeScan, grid: &OccupancyGrid, config: &CbglConfig) -> Result<CbglResult> {
    cbgl_with_matcher(scan_r, grid, config, sm2)
}

/// [`cbgl`] with the refinement stage swapped out, for isolating stages in
/// tests.
pub(crate) fn cbgl_with_matcher<F>(
    scan_r: &RangeScan,
    grid: &OccupancyGrid,
    config: &CbglConfig,
    matcher: F,
) -> Result<CbglResult>
where
    F: Fn(&RangeScan, &OccupancyGrid, &Pose, &IcpConfig) -> Result<MatchResult> + Sync,
{
    config.validate()?;
    let run_start = Instant::now();

    let stage = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let set = disperse_set(grid, config.d_l, config.d_alpha, &mut rng)?;
    let dispersal_ms = ms_since(stage);

    let stage = Instant::now();
    let field = psi_field_dispersed(scan_r, grid, &set)?;
    let hypothesis_count = field.len();
    let field_evaluation_ms = ms_since(stage);

    let stage = Instant::now();
    let ranked = rank_field(field);
    let best_hypotheses = ranked.bottom_k(config.k);
    let ranking_ms = ms_since(stage);

    // Refinement. A candidate whose matching does not converge, or errors,
    // keeps its uncorrected pose: a bad pose earns a large CAER and loses
    // the final argmin on its own.
    let stage = Instant::now();
    let refined: Vec<(Pose, bool)> = best_hypotheses
        .par_iter()
        .map(|pose| match matcher(scan_r, grid, pose, &config.icp) {
            Ok(m) => (m.corrected_pose, m.converged),
            Err(_) => (*pose, false),
        })
        .collect();
    let sm2_ms = ms_since(stage);

    let stage = Instant::now();
    let psi_refined: Vec<Result<f64>> = refined
        .par_iter()
        .map(|(pose, _)| {
            let scan_v = scan_map(grid, pose, scan_r.n_rays(), scan_r.lambda(), scan_r.r_max())?;
            caer(scan_r, &scan_v)
        })
        .collect();
    let mut candidates = Vec::with_capacity(refined.len());
    for ((pose, converged), psi) in refined.into_iter().zip(psi_refined) {
        candidates.push(CandidateEstimate {
            pose,
            psi: psi?,
            converged,
        });
    }
    let best = candidates
        .iter()
        .min_by(|a, b| a.psi.total_cmp(&b.psi))
        .expect("at least one candidate by construction");
    let estimate = best.pose;
    let psi_of_estimate = best.psi;
    let final_selection_ms = ms_since(stage);

    Ok(CbglResult {
        estimate,
        psi_of_estimate,
        candidates,
        hypothesis_count,
        timing: Some(StageTimings {
            dispersal_ms,
            field_evaluation_ms,
            ranking_ms,
            sm2_ms,
            final_selection_ms,
            total_ms: ms_since(run_start),
        }),
    })
}

/// Deviation of an estimate from ground truth.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PoseError {
    /// Euclidean position error, m.
    pub location: f64,
    /// Absolute wrapped heading error, rad, in `[0, pi]`.
    pub orientation: f64,
    /// `sqrt(location^2 + orientation^2)`.
    pub combined: f64,
}

pub fn estimate_error(estimate: &Pose, truth: &Pose) -> PoseError {
    let location = (estimate.x - truth.x).hypot(estimate.y - truth.y);
    let orientation = wrap_angle(estimate.theta - truth.theta).abs();
    PoseError {
        location,
        orientation,
        combined: location.hypot(orientation),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_maps::rect_room;
    use std::f64::consts::TAU;

    fn identity_matcher(
        _scan: &RangeScan,
        _grid: &OccupancyGrid,
        pose: &Pose,
        _icp: &IcpConfig,
    ) -> Result<MatchResult> {
        Ok(MatchResult {
            corrected_pose: *pose,
            delta: Pose::new(0.0, 0.0, 0.0),
            iterations: 0,
            converged: true,
            residual: 0.0,
        })
    }

    fn small_config(seed: u64) -> CbglConfig {
        CbglConfig {
            d_l: 4.0,
            d_alpha: 8,
            k: 5,
            seed,
            ..CbglConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(CbglConfig::default().validate().is_ok());
        for bad in [
            CbglConfig {
                d_l: 0.5,
                ..CbglConfig::default()
            },
            CbglConfig {
                d_alpha: 0,
                ..CbglConfig::default()
            },
            CbglConfig {
                k: 0,
                ..CbglConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn error_of_identical_poses_is_zero() {
        let p = Pose::new(1.0, -2.0, 0.5);
        let e = estimate_error(&p, &p);
        assert_eq!((e.location, e.orientation, e.combined), (0.0, 0.0, 0.0));
    }

    #[test]
    fn error_components_combine_euclideanly() {
        let truth = Pose::new(0.0, 0.0, 0.0);
        let est = Pose::new(0.3, 0.0, 0.4);
        let e = estimate_error(&est, &truth);
        assert!((e.location - 0.3).abs() < 1e-12);
        assert!((e.orientation - 0.4).abs() < 1e-12);
        assert!((e.combined - 0.5).abs() < 1e-12);
    }

    #[test]
    fn orientation_error_wraps() {
        let e = estimate_error(&Pose::new(0.0, 0.0, 3.0), &Pose::new(0.0, 0.0, -3.0));
        assert!((e.orientation - (TAU - 6.0)).abs() < 1e-12);
    }

    #[test]
    fn hypothesis_count_follows_the_density_arithmetic() {
        let grid = rect_room(4.0, 4.0, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let poses = disperse_hypotheses(&grid, 2.5, 8, &mut rng).unwrap();
        let expected = (2.5 * grid.free_area()).floor() as usize * 8;
        assert_eq!(poses.len(), expected);
        for p in &poses {
            assert!(grid.is_free(p.x, p.y));
        }
    }

    #[test]
    fn headings_at_each_location_are_equispaced() {
        let grid = rect_room(3.0, 3.0, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d_alpha = 8usize;
        let poses = disperse_hypotheses(&grid, 1.0, d_alpha as u32, &mut rng).unwrap();
        let step = TAU / d_alpha as f64;
        for block in poses.chunks(d_alpha) {
            for pair in block.windows(2) {
                assert!((pair[0].x, pair[0].y) == (pair[1].x, pair[1].y));
                let gap = wrap_angle(pair[1].theta - pair[0].theta - step).abs();
                assert!(gap < 1e-9, "heading gap off by {gap}");
            }
        }
    }

    #[test]
    fn dispersal_rejects_hopeless_densities() {
        let grid = rect_room(3.0, 3.0, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(disperse_hypotheses(&grid, 1e-9, 8, &mut rng).is_err());
        assert!(disperse_hypotheses(&grid, 1.0, 0, &mut rng).is_err());
    }

    #[test]
    fn pipeline_is_deterministic_for_a_fixed_seed() {
        let grid = rect_room(5.0, 4.0, 0.05);
        let truth = Pose::new(0.8, -0.6, 1.0);
        let scan_r = scan_map(&grid, &truth, 90, TAU, 10.0).unwrap();
        let config = small_config(42);
        let mut a = cbgl(&scan_r, &grid, &config).unwrap();
        let mut b = cbgl(&scan_r, &grid, &config).unwrap();
        a.timing = None;
        b.timing = None;
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn estimate_is_the_minimum_caer_candidate() {
        let grid = rect_room(5.0, 4.0, 0.05);
        let truth = Pose::new(-0.4, 0.2, 2.0);
        let scan_r = scan_map(&grid, &truth, 90, TAU, 10.0).unwrap();
        let result = cbgl(&scan_r, &grid, &small_config(7)).unwrap();
        for c in &result.candidates {
            assert!(result.psi_of_estimate <= c.psi);
        }
        assert_eq!(result.candidates.len(), 5);
        assert_eq!(
            result.hypothesis_count,
            (4.0 * grid.free_area()).floor() as usize * 8
        );
    }

    #[test]
    fn identity_matcher_reduces_the_pipeline_to_plain_ranking() {
        let grid = rect_room(5.0, 4.0, 0.05);
        let truth = Pose::new(0.3, 0.9, -1.2);
        let scan_r = scan_map(&grid, &truth, 90, TAU, 10.0).unwrap();
        let config = small_config(19);
        let result = cbgl_with_matcher(&scan_r, &grid, &config, identity_matcher).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let poses = disperse_hypotheses(&grid, config.d_l, config.d_alpha, &mut rng).unwrap();
        let best = crate::caer_field::bottom_k_poses(&scan_r, &grid, &poses, 1).unwrap();
        assert_eq!(result.estimate, best[0]);
    }

    #[test]
    fn k_of_one_refines_the_single_best_hypothesis() {
        let grid = rect_room(5.0, 4.0, 0.05);
        let truth = Pose::new(0.0, 0.5, 0.3);
        let scan_r = scan_map(&grid, &truth, 90, TAU, 10.0).unwrap();
        let config = CbglConfig {
            k: 1,
            ..small_config(23)
        };
        let result = cbgl(&scan_r, &grid, &config).unwrap();
        assert_eq!(result.candidates.len(), 1);

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let set = disperse_set(&grid, config.d_l, config.d_alpha, &mut rng).unwrap();
        let ranked = rank_field(psi_field_dispersed(&scan_r, &grid, &set).unwrap());
        let top = ranked.bottom_k(1)[0];
        let refined = sm2(&scan_r, &grid, &top, &config.icp).unwrap();
        assert_eq!(result.estimate, refined.corrected_pose);
    }

    // A symmetric room (rectangle, square) has twin poses whose panoramic
    // scans are identical to the true pose's, so a single shot cannot pick
    // between them; the asymmetric convex room leaves one global optimum.
    #[test]
    fn noiseless_convex_room_localizes_within_the_admissible_radius() {
        let grid = crate::test_maps::trapezoid_room(6.0, 5.0, 0.05);
        let truth = Pose::new(1.2, -0.8, 0.7);
        let scan_r = scan_map(&grid, &truth, 360, TAU, 10.0).unwrap();
        let config = CbglConfig {
            seed: 5,
            ..CbglConfig::default()
        };
        let result = cbgl(&scan_r, &grid, &config).unwrap();
        let err = estimate_error(&result.estimate, &truth);
        assert!(
            err.location <= 0.5 && err.orientation <= 0.4,
            "location {} orientation {}",
            err.location,
            err.orientation
        );
    }
}
