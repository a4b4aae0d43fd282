//! Multi-scale center-aligned overlapped pillar voxelization.
//!
//! The cropped cloud is partitioned into a base grid along x and y (the z
//! division is ignored). Every non-empty cell then receives K pillar
//! filters, all centered on that cell, where the scale-k filter spans
//! `k` cells in each direction. Points near cell edges are therefore
//! re-gathered by the larger filters of neighboring cells.
//!
//! Membership is decided in normalized grid coordinates
//! `u = (x - x_min) / x_s`, where the scale-k range of the cell at row r is
//! `[r + (1-k)/2, r + (1+k)/2)`. Those bounds are exact integers or
//! half-integers in f64, so scale-1 membership coincides bit-exactly with
//! `floor(u) == r` and the K ranges share their center by construction.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pointcloud::{CropRange, PointCloud};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct VoxelConfig {
    pub crop: CropRange,
    /// Base cell size (x_s, y_s) in meters.
    pub cell_size: (f64, f64),
    /// Number of pillar scales K.
    pub scales: usize,
    /// Per-scale point cap `n_max_base * k^2`, so larger filters keep
    /// comparable spatial density.
    pub n_max_base: usize,
    /// Global cap on pillars per batch; overflow drops the highest sorted
    /// cell indices.
    pub p_max: usize,
    /// Seed for the subsampling RNG.
    pub seed: u64,
    /// When set, scales k > 1 keep the raw (x, y, z) columns too.
    pub wide_features: bool,
}

impl VoxelConfig {
    pub fn new(crop: CropRange) -> Self {
        VoxelConfig {
            crop,
            cell_size: (0.16, 0.16),
            scales: 3,
            n_max_base: 32,
            p_max: 12_000,
            seed: 0,
            wide_features: false,
        }
    }

    pub fn n_max(&self, k: usize) -> usize {
        self.n_max_base * k * k
    }

    pub fn feature_width(&self, k: usize) -> usize {
        if k == 1 || self.wide_features {
            9
        } else {
            6
        }
    }

    fn validate(&self) -> Result<()> {
        if self.cell_size.0 <= 0.0 || self.cell_size.1 <= 0.0 {
            return Err(Error::arg("cell size must be positive"));
        }
        if self.scales == 0 || self.n_max_base == 0 || self.p_max == 0 {
            return Err(Error::arg("scales and caps must be positive"));
        }
        Ok(())
    }
}

/// Base-grid cell, row-major ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

/// Per-scale gathered, decorated, count-masked point groups.
#[derive(Debug, Clone)]
pub struct PillarBatch {
    pub scale: usize,
    /// `[P, N_max(k), D_k]`; rows past `counts[p]` are zero padding.
    pub decorated: Tensor<f64>,
    pub counts: Vec<usize>,
    /// Unique, sorted row-major cell indices, one per pillar.
    pub indices: Vec<CellIndex>,
}

/// `H = ceil(x_span / x_s)`, `W = ceil(y_span / y_s)`. Quotients within a
/// relative 1e-9 of an integer snap to it before the ceiling so spans that
/// are exact multiples of the cell size do not pick up a phantom row.
pub fn grid_dims(config: &VoxelConfig) -> (usize, usize) {
    let h = ceil_cells(config.crop.x.1 - config.crop.x.0, config.cell_size.0);
    let w = ceil_cells(config.crop.y.1 - config.crop.y.0, config.cell_size.1);
    (h, w)
}

fn ceil_cells(span: f64, cell: f64) -> usize {
    let q = span / cell;
    let snapped = q.round();
    if (q - snapped).abs() < 1e-9 * snapped.max(1.0) {
        snapped as usize
    } else {
        q.ceil() as usize
    }
}

/// Normalized grid coordinates of a point.
#[inline]
fn normalized(x: f32, y: f32, config: &VoxelConfig) -> (f64, f64) {
    (
        (x as f64 - config.crop.x.0) / config.cell_size.0,
        (y as f64 - config.crop.y.0) / config.cell_size.1,
    )
}

/// Scale-k pillar bounds of a cell in normalized coordinates. Exact
/// integers for odd k, half-integers for even k.
#[inline]
pub fn pillar_bounds_normalized(cell: CellIndex, k: usize) -> (f64, f64, f64, f64) {
    let half_lo = 0.5 * (1.0 - k as f64);
    let half_hi = 0.5 * (1.0 + k as f64);
    (
        cell.row as f64 + half_lo,
        cell.row as f64 + half_hi,
        cell.col as f64 + half_lo,
        cell.col as f64 + half_hi,
    )
}

/// Membership test shared by the gather path and the test oracles.
#[inline]
pub fn point_in_pillar(u: f64, v: f64, cell: CellIndex, k: usize) -> bool {
    let (lo_u, hi_u, lo_v, hi_v) = pillar_bounds_normalized(cell, k);
    u >= lo_u && u < hi_u && v >= lo_v && v < hi_v
}

/// Map every point to its base cell and list the sorted unique non-empty
/// cells. The cloud must already be cropped; out-of-range points are a
/// contract violation.
pub fn assign_cells(cloud: &PointCloud, config: &VoxelConfig) -> Result<(Vec<CellIndex>, Vec<CellIndex>)> {
    config.validate()?;
    let (h, w) = grid_dims(config);
    let mut per_point = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points.iter().enumerate() {
        let (u, v) = normalized(p.x, p.y, config);
        if u < 0.0 || v < 0.0 {
            return Err(Error::arg(format!("point {i} lies outside the crop range")));
        }
        let (row, col) = (u.floor() as usize, v.floor() as usize);
        if row >= h || col >= w {
            return Err(Error::arg(format!("point {i} lies outside the crop range")));
        }
        per_point.push(CellIndex { row, col });
    }
    let mut non_empty: Vec<CellIndex> = per_point.clone();
    non_empty.sort_unstable();
    non_empty.dedup();
    Ok((per_point, non_empty))
}

/// Point indices gathered by the scale-k pillar of every non-empty cell,
/// before any cap is applied. Membership lists are ascending.
pub fn collect_pillar_members(
    cloud: &PointCloud,
    non_empty: &[CellIndex],
    k: usize,
    config: &VoxelConfig,
) -> Result<Vec<Vec<u32>>> {
    config.validate()?;
    if k == 0 || k > config.scales {
        return Err(Error::arg(format!("scale {k} outside 1..={}", config.scales)));
    }

    // Bucket points by base cell for the neighborhood scan.
    let mut buckets: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
    let mut coords = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points.iter().enumerate() {
        let (u, v) = normalized(p.x, p.y, config);
        buckets
            .entry((u.floor() as i64, v.floor() as i64))
            .or_default()
            .push(i as u32);
        coords.push((u, v));
    }

    // A scale-k range reaches at most floor(k/2) buckets away from its
    // cell; scan one extra ring and let the exact predicate decide.
    let reach = (k / 2 + 1) as i64;
    let members: Vec<Vec<u32>> = non_empty
        .par_iter()
        .map(|&cell| {
            let mut list = Vec::new();
            for dr in -reach..=reach {
                for dc in -reach..=reach {
                    let key = (cell.row as i64 + dr, cell.col as i64 + dc);
                    if let Some(bucket) = buckets.get(&key) {
                        for &pi in bucket {
                            let (u, v) = coords[pi as usize];
                            if point_in_pillar(u, v, cell, k) {
                                list.push(pi);
                            }
                        }
                    }
                }
            }
            list.sort_unstable();
            list
        })
        .collect();
    Ok(members)
}

/// Per-scale gather: collect members, enforce the point and pillar caps,
/// and decorate the retained points.
pub fn gather_pillars(
    cloud: &PointCloud,
    non_empty: &[CellIndex],
    k: usize,
    config: &VoxelConfig,
) -> Result<PillarBatch> {
    let members = collect_pillar_members(cloud, non_empty, k, config)?;

    let mut cells = Vec::new();
    let mut retained: Vec<Vec<u32>> = Vec::new();
    for (cell, list) in non_empty.iter().zip(members) {
        if list.is_empty() {
            // A non-empty base cell always contains its own points at every
            // scale, so this indicates a cropped/assigned mismatch upstream.
            return Err(Error::arg(format!(
                "cell ({}, {}) has no members at scale {k}",
                cell.row, cell.col
            )));
        }
        if cells.len() == config.p_max {
            break; // overflow drops the highest sorted indices
        }
        cells.push(*cell);
        retained.push(subsample(list, config.n_max(k), config.seed, k, *cell));
    }

    let d = config.feature_width(k);
    let n_max = config.n_max(k);
    let p = cells.len();
    let mut decorated = Tensor::zeros(&[p, n_max, d]);
    let mut counts = Vec::with_capacity(p);
    for (pi, (cell, list)) in cells.iter().zip(&retained).enumerate() {
        let rows = decorate(cloud, list, *cell, k, config);
        counts.push(list.len());
        let dst = decorated.data_mut();
        for (ri, row) in rows.iter().enumerate() {
            let base = (pi * n_max + ri) * d;
            dst[base..base + d].copy_from_slice(row);
        }
    }

    Ok(PillarBatch {
        scale: k,
        decorated,
        counts,
        indices: cells,
    })
}

/// Uniform random subsample of `cap` members, seeded per (seed, scale,
/// cell) so the result is independent of gather order. Keeps ascending
/// point order.
fn subsample(mut list: Vec<u32>, cap: usize, seed: u64, k: usize, cell: CellIndex) -> Vec<u32> {
    if list.len() <= cap {
        return list;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, k as u64, cell.row as u64, cell.col as u64));
    // Partial Fisher-Yates: the first `cap` slots become the sample.
    for i in 0..cap {
        let j = rng.random_range(i..list.len());
        list.swap(i, j);
    }
    list.truncate(cap);
    list.sort_unstable();
    list
}

fn mix_seed(a: u64, b: u64, c: u64, d: u64) -> u64 {
    // SplitMix64 over the packed words.
    let mut state = a;
    for w in [b, c, d] {
        state = state.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(w);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        state = z ^ (z >> 31);
    }
    state
}

/// Cell center in meters.
pub fn cell_center(cell: CellIndex, config: &VoxelConfig) -> (f64, f64) {
    (
        config.crop.x.0 + (cell.row as f64 + 0.5) * config.cell_size.0,
        config.crop.y.0 + (cell.col as f64 + 0.5) * config.cell_size.1,
    )
}

/// Feature rows for the retained points of one pillar.
///
/// Scale 1 rows are `[x, y, z, x_c, y_c, z_c, x_p, y_p, r]`; larger scales
/// drop the raw coordinates and keep `[x_c, y_c, z_c, x_p, y_p, r]`. The
/// `_c` offsets are relative to the mean of the retained points, the `_p`
/// offsets relative to the pillar center (z has no center offset).
pub fn decorate(
    cloud: &PointCloud,
    members: &[u32],
    cell: CellIndex,
    k: usize,
    config: &VoxelConfig,
) -> Vec<Vec<f64>> {
    assert!(!members.is_empty(), "decorate requires a non-empty pillar");
    let (cx, cy) = cell_center(cell, config);
    let inv_n = 1.0 / members.len() as f64;
    let (mut mx, mut my, mut mz) = (0.0, 0.0, 0.0);
    for &pi in members {
        let p = &cloud.points[pi as usize];
        mx += p.x as f64;
        my += p.y as f64;
        mz += p.z as f64;
    }
    mx *= inv_n;
    my *= inv_n;
    mz *= inv_n;

    let wide = config.feature_width(k) == 9;
    members
        .iter()
        .map(|&pi| {
            let p = &cloud.points[pi as usize];
            let (x, y, z, r) = (p.x as f64, p.y as f64, p.z as f64, p.r as f64);
            if wide {
                vec![x, y, z, x - mx, y - my, z - mz, x - cx, y - cy, r]
            } else {
                vec![x - mx, y - my, z - mz, x - cx, y - cy, r]
            }
        })
        .collect()
}

/// Convenience wrapper: crop is assumed done; returns one batch per scale.
pub fn voxelize_all_scales(cloud: &PointCloud, config: &VoxelConfig) -> Result<Vec<PillarBatch>> {
    let (_, non_empty) = assign_cells(cloud, config)?;
    (1..=config.scales)
        .map(|k| gather_pillars(cloud, &non_empty, k, config))
        .collect()
}
