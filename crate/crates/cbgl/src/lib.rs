//! Single-shot Monte Carlo global localization of a 2D LIDAR in a known
//! occupancy-grid map.
//!
//! The method disperses pose hypotheses over the map's free space, ranks them
//! by the cumulative absolute error per ray (CAER) between the measured scan
//! and a ray-cast map-scan at each hypothesis, refines the best-ranked few by
//! scan-to-map-scan matching, and returns the refined pose with the lowest
//! CAER.

pub mod caer_field;
pub mod error;
pub mod grid_map;
pub mod pipeline;
pub mod scan_geometry;
pub mod sim_bench;
pub mod sm2_matcher;

#[cfg(test)]
pub(crate) mod test_maps;

pub use caer_field::{
    bottom_k_poses, caer, psi_field, psi_field_dispersed, rank_field, DispersedSet, PsiField,
    RankedField,
};
pub use error::{Error, Result};
pub use grid_map::{CellState, MapMetadata, OccupancyGrid};
pub use pipeline::{
    cbgl, disperse_hypotheses, disperse_set, estimate_error, CandidateEstimate, CbglConfig,
    CbglResult, PoseError, StageTimings,
};
pub use scan_geometry::{
    downsample, scan_map, simulate_measurement, wrap_angle, Pose, RangeScan,
};
pub use sim_bench::{
    free_component_count, generate_environment, partition_diagnostic, profile_csv, run_trials,
    timing_profile, trial_seed, two_room_map, two_room_offset, Aggregates, AreaTiming, EnvSpec,
    PartitionDiagnostic, SensorModel, TimingQuantiles, TrialFailure, TrialRecord, TrialReport,
};
pub use sm2_matcher::{scan_match, scan_to_points, sm2, IcpConfig, MatchResult, ScanMatchResult};
