//! Scan-similarity field: the CAER metric, field evaluation over pose
//! hypotheses, ranking, and bottom-k selection.

use std::f64::consts::TAU;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid_map::OccupancyGrid;
use crate::scan_geometry::{cast_ray, scan_map, Pose, RangeScan};

/// Cumulative absolute error per ray between two scans of equal angular
/// range and ray count: `sum_n |a[n] - b[n]|`.
///
/// This is a metric on fixed-shape scans: zero exactly on identical range
/// vectors, symmetric, and triangle-inequality-compliant.
pub fn caer(a: &RangeScan, b: &RangeScan) -> Result<f64> {
    if a.lambda() != b.lambda() || a.n_rays() != b.n_rays() {
        return Err(Error::ScanShapeMismatch {
            lambda_a: a.lambda(),
            lambda_b: b.lambda(),
            rays_a: a.n_rays(),
            rays_b: b.n_rays(),
        });
    }
    Ok(a.ranges()
        .iter()
        .zip(b.ranges())
        .map(|(p, q)| (p - q).abs())
        .sum())
}

/// CAER of every hypothesis against a measured scan. `psi[i]` belongs to
/// `hypotheses[i]`.
#[derive(Debug, Clone)]
pub struct PsiField {
    hypotheses: Vec<Pose>,
    psi: Vec<f64>,
}

impl PsiField {
    pub fn new(hypotheses: Vec<Pose>, psi: Vec<f64>) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(Error::EmptyHypotheses);
        }
        if hypotheses.len() != psi.len() {
            return Err(Error::InvalidParameter(format!(
                "{} hypotheses but {} field values",
                hypotheses.len(),
                psi.len()
            )));
        }
        if let Some(bad) = psi.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "field value {bad} is not finite and non-negative"
            )));
        }
        Ok(PsiField { hypotheses, psi })
    }

    pub fn hypotheses(&self) -> &[Pose] {
        &self.hypotheses
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }
}

/// A [`PsiField`] plus the permutation that sorts it ascending.
#[derive(Debug, Clone)]
pub struct RankedField {
    field: PsiField,
    permutation: Vec<usize>,
}

impl RankedField {
    pub fn field(&self) -> &PsiField {
        &self.field
    }

    /// Indices of hypotheses in ascending CAER order; ties keep the lower
    /// original index first.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Rank of each hypothesis (inverse of [`RankedField::permutation`]).
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0usize; self.permutation.len()];
        for (rank, &idx) in self.permutation.iter().enumerate() {
            ranks[idx] = rank;
        }
        ranks
    }

    /// The `min(k, len)` best-ranked hypothesis poses.
    pub fn bottom_k(&self, k: usize) -> Vec<Pose> {
        self.permutation
            .iter()
            .take(k.min(self.permutation.len()))
            .map(|&i| self.field.hypotheses[i])
            .collect()
    }
}

/// Sorts a field ascending by CAER, breaking ties by original index.
pub fn rank_field(field: PsiField) -> RankedField {
    let mut permutation: Vec<usize> = (0..field.psi.len()).collect();
    permutation.sort_unstable_by(|&i, &j| field.psi[i].total_cmp(&field.psi[j]).then(i.cmp(&j)));
    RankedField { field, permutation }
}

/// Evaluates the CAER of every hypothesis: a map-scan is ray-cast at each
/// pose with the measured scan's shape and compared against it.
///
/// Hypotheses are evaluated in parallel; each hypothesis's sum is
/// accumulated sequentially, so the result is bit-identical for any thread
/// count or evaluation order.
pub fn psi_field(
    scan_r: &RangeScan,
    grid: &OccupancyGrid,
    hypotheses: &[Pose],
) -> Result<PsiField> {
    if hypotheses.is_empty() {
        return Err(Error::EmptyHypotheses);
    }
    let evaluated: Vec<Result<f64>> = hypotheses
        .par_iter()
        .map(|h| {
            let scan_v = scan_map(grid, h, scan_r.n_rays(), scan_r.lambda(), scan_r.r_max())?;
            caer(scan_r, &scan_v)
        })
        .collect();
    let mut psi = Vec::with_capacity(evaluated.len());
    for value in evaluated {
        psi.push(value?);
    }
    PsiField::new(hypotheses.to_vec(), psi)
}

/// The `min(k, |hypotheses|)` poses with the smallest CAER against the
/// measured scan, ascending, ties broken by original index.
pub fn bottom_k_poses(
    scan_r: &RangeScan,
    grid: &OccupancyGrid,
    hypotheses: &[Pose],
    k: usize,
) -> Result<Vec<Pose>> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    Ok(rank_field(psi_field(scan_r, grid, hypotheses)?).bottom_k(k))
}

/// Hypotheses structured as dispersal output: every location carries
/// `d_alpha` headings fanned at spacing `2*pi/d_alpha` from that location's
/// base heading. Pose order is location-major, heading-minor.
#[derive(Debug, Clone)]
pub struct DispersedSet {
    pub locations: Vec<(f64, f64)>,
    pub base_headings: Vec<f64>,
    pub d_alpha: u32,
}

impl DispersedSet {
    pub fn len(&self) -> usize {
        self.locations.len() * self.d_alpha as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn poses(&self) -> Vec<Pose> {
        let step = TAU / self.d_alpha as f64;
        let mut out = Vec::with_capacity(self.len());
        for (&(x, y), &base) in self.locations.iter().zip(&self.base_headings) {
            for j in 0..self.d_alpha {
                out.push(Pose::new(x, y, base + j as f64 * step));
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.d_alpha == 0 {
            return Err(Error::InvalidParameter("d_alpha must be at least 1".into()));
        }
        if self.locations.len() != self.base_headings.len() {
            return Err(Error::InvalidParameter(format!(
                "{} locations but {} base headings",
                self.locations.len(),
                self.base_headings.len()
            )));
        }
        if self.locations.is_empty() {
            return Err(Error::EmptyHypotheses);
        }
        Ok(())
    }
}

/// Angular lattice shared by the ray bearings of all headings at one
/// location: both the heading increment and the ray increment are whole
/// numbers of `2*pi/count`.
struct Lattice {
    count: usize,
    heading_stride: usize,
    ray_stride: usize,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Finds the direction lattice for an angular span that is a small rational
/// multiple of a full turn. Returns `None` for incommensurate spans, which
/// then take the per-hypothesis path.
fn detect_lattice(lambda: f64, n_rays: usize, d_alpha: u32) -> Option<Lattice> {
    let x = lambda / TAU;
    let (mut p, mut q) = (0u64, 0u64);
    for denom in 1..=16u64 {
        let numer = (x * denom as f64).round();
        if numer >= 1.0 && (x - numer / denom as f64).abs() < 1e-12 {
            (p, q) = (numer as u64, denom);
            break;
        }
    }
    if q == 0 {
        return None;
    }
    let n = n_rays as u64;
    let da = d_alpha as u64;
    let g = gcd(q * n, p * da);
    let count = da * q * n / g;
    if count > 2_000_000 {
        return None;
    }
    Some(Lattice {
        count: count as usize,
        heading_stride: (q * n / g) as usize,
        ray_stride: (p * da / g) as usize,
    })
}

/// Evaluates the CAER field over a dispersed set.
///
/// All headings at one location share ray geometry, so when the heading and
/// ray increments are commensurate each location is ray-cast once over the
/// merged direction set and every heading reads its rays from that table.
/// This cuts casting work by the factor `gcd(n_rays, d_alpha)`-ish and is
/// the throughput path for panoramic sensors. Incommensurate spans fall
/// back to [`psi_field`]. Either path is bit-identical across thread
/// counts; the two paths agree with each other up to bearing round-off.
pub fn psi_field_dispersed(
    scan_r: &RangeScan,
    grid: &OccupancyGrid,
    set: &DispersedSet,
) -> Result<PsiField> {
    set.validate()?;
    let poses = set.poses();
    let lattice = match detect_lattice(scan_r.lambda(), scan_r.n_rays(), set.d_alpha) {
        Some(l) => l,
        None => return psi_field(scan_r, grid, &poses),
    };
    for &(x, y) in &set.locations {
        if !grid.is_free(x, y) {
            return Err(Error::PoseNotFree { x, y });
        }
    }

    let n_rays = scan_r.n_rays();
    let d_alpha = set.d_alpha as usize;
    let slot_count = lattice.count;

    // Direction slots actually used by some (heading, ray) pair, densely
    // renumbered. The mapping is location-independent, so it is built once.
    let mut used = vec![false; slot_count];
    let mut slot_of = vec![0u32; d_alpha * n_rays];
    for j in 0..d_alpha {
        let base = j * lattice.heading_stride;
        for n in 0..n_rays {
            let slot = (base + n * lattice.ray_stride) % slot_count;
            used[slot] = true;
            slot_of[j * n_rays + n] = slot as u32;
        }
    }
    let mut dense_of_slot = vec![u32::MAX; slot_count];
    let mut slots = Vec::new();
    for (slot, &u) in used.iter().enumerate() {
        if u {
            dense_of_slot[slot] = slots.len() as u32;
            slots.push(slot);
        }
    }
    let idx: Vec<u32> = slot_of
        .iter()
        .map(|&s| dense_of_slot[s as usize])
        .collect();

    let step = TAU / slot_count as f64;
    let slot_dirs: Vec<(f64, f64)> = slots
        .iter()
        .map(|&s| {
            let (sin, cos) = (s as f64 * step).sin_cos();
            (cos, sin)
        })
        .collect();

    let half_span = scan_r.lambda() / 2.0;
    let origin_theta = grid.origin().theta;
    let measured = scan_r.ranges();
    let r_max = scan_r.r_max();

    let mut psi = vec![0.0f64; set.locations.len() * d_alpha];
    psi.par_chunks_mut(d_alpha)
        .zip(set.locations.par_iter().zip(set.base_headings.par_iter()))
        .for_each(|(block, (&(x, y), &base_heading))| {
            let (gx, gy) = grid.world_to_grid_frame(x, y);
            let (sb, cb) = (base_heading - half_span - origin_theta).sin_cos();
            let table: Vec<f64> = slot_dirs
                .iter()
                .map(|&(c, s)| cast_ray(grid, gx, gy, c * cb - s * sb, c * sb + s * cb, r_max))
                .collect();
            for (j, out) in block.iter_mut().enumerate() {
                let row = &idx[j * n_rays..(j + 1) * n_rays];
                let mut sum = 0.0;
                for (m, &d) in measured.iter().zip(row) {
                    sum += (m - table[d as usize]).abs();
                }
                *out = sum;
            }
        });
    PsiField::new(poses, psi)
}
