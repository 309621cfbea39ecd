//! Dense semantic voxel map fused by channel-wise max pooling.
//!
//! Channel 0 is occupancy, channels `1..K` hold the best score seen for each
//! category. Storage is channel-major with x varying fastest:
//! `((c * H + z) * W + y) * L + x`.

use std::io::{BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SealError};
use crate::geometry::{depth_to_pointcloud, CameraModel, DepthImage, Pose};
use crate::perception::ScoreImage;

pub const VOXEL_SIZE: f64 = 0.05;
/// Default allocation cap in cells (1 GiB of f32).
pub const DEFAULT_CELL_CAP: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapDims {
    /// K: occupancy plus one channel per category.
    pub channels: usize,
    /// L, along map x.
    pub length: usize,
    /// W, along map y.
    pub width: usize,
    /// H, along z.
    pub height: usize,
}

impl Default for MapDims {
    fn default() -> Self {
        Self {
            channels: 7,
            length: 256,
            width: 256,
            height: 64,
        }
    }
}

impl MapDims {
    pub fn spatial(&self) -> usize {
        self.length * self.width * self.height
    }

    pub fn cells(&self) -> Option<usize> {
        self.channels
            .checked_mul(self.length)?
            .checked_mul(self.width)?
            .checked_mul(self.height)
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.channels, self.length, self.width, self.height]
    }
}

/// Receives every voxel change made by an update.
pub trait MapObserver {
    fn voxel_changed(&mut self, voxel: [usize; 3], newly_occupied: bool, old_max: f32, new_max: f32);
}

pub struct NoObserver;

impl MapObserver for NoObserver {
    fn voxel_changed(&mut self, _: [usize; 3], _: bool, _: f32, _: f32) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UpdateStats {
    pub points: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticVoxelMap {
    pub dims: MapDims,
    pub voxel_size: f64,
    /// World pose of the episode start; it maps to voxel `(L/2, W/2, 0)`.
    pub origin: Pose,
    data: Vec<f32>,
    /// Points that fell outside the map so far.
    pub dropped: u64,
}

pub fn new_map(dims: MapDims) -> Result<SemanticVoxelMap> {
    new_map_with_cap(dims, DEFAULT_CELL_CAP)
}

pub fn new_map_with_cap(dims: MapDims, cap: usize) -> Result<SemanticVoxelMap> {
    if dims.channels < 2 || dims.length == 0 || dims.width == 0 || dims.height == 0 {
        return Err(SealError::InvalidDims(dims.as_array()));
    }
    let cells = dims.cells().ok_or(SealError::AllocationTooLarge { cells: usize::MAX, cap })?;
    if cells > cap {
        return Err(SealError::AllocationTooLarge { cells, cap });
    }
    Ok(SemanticVoxelMap {
        dims,
        voxel_size: VOXEL_SIZE,
        origin: Pose::new(0.0, 0.0, 0.0),
        data: vec![0.0; cells],
        dropped: 0,
    })
}

impl SemanticVoxelMap {
    pub fn with_origin(mut self, origin: Pose) -> Self {
        self.origin = origin;
        self
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn spatial_index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims.width + y) * self.dims.length + x
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f32 {
        self.data[c * self.dims.spatial() + self.spatial_index(x, y, z)]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, z: usize, v: f32) {
        let i = c * self.dims.spatial() + self.spatial_index(x, y, z);
        self.data[i] = v;
    }

    pub fn occupied(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.spatial_index(x, y, z)] > 0.0
    }

    /// Largest category score at a voxel.
    pub fn max_score(&self, x: usize, y: usize, z: usize) -> f32 {
        let s = self.spatial_index(x, y, z);
        let n = self.dims.spatial();
        (1..self.dims.channels).map(|c| self.data[c * n + s]).fold(0.0, f32::max)
    }

    /// Category scores at a voxel (channels `1..K`).
    pub fn scores(&self, x: usize, y: usize, z: usize) -> Vec<f32> {
        let s = self.spatial_index(x, y, z);
        let n = self.dims.spatial();
        (1..self.dims.channels).map(|c| self.data[c * n + s]).collect()
    }

    /// Voxel containing a point given in the map frame (meters relative to
    /// the episode start, z above the floor).
    pub fn voxel_of_local(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let vs = self.voxel_size;
        let mut z = p[2];
        // Floor points reconstructed from depth land a hair below zero.
        if (-1e-6..0.0).contains(&z) {
            z = 0.0;
        }
        let fx = (p[0] / vs).floor() + (self.dims.length / 2) as f64;
        let fy = (p[1] / vs).floor() + (self.dims.width / 2) as f64;
        let fz = (z / vs).floor();
        if !(fx >= 0.0 && fy >= 0.0 && fz >= 0.0)
            || fx >= self.dims.length as f64
            || fy >= self.dims.width as f64
            || fz >= self.dims.height as f64
        {
            return None;
        }
        Some([fx as usize, fy as usize, fz as usize])
    }

    /// Map-frame coordinates of the grid corner (voxel `(0,0,0)`'s min).
    pub fn grid_corner(&self) -> [f64; 3] {
        [
            -((self.dims.length / 2) as f64) * self.voxel_size,
            -((self.dims.width / 2) as f64) * self.voxel_size,
            0.0,
        ]
    }

    /// Max-pool one scored point (map frame) into the grid.
    pub fn integrate_point(&mut self, p: [f64; 3], scores: &[f32], obs: &mut impl MapObserver) -> bool {
        let Some(v) = self.voxel_of_local(p) else {
            self.dropped += 1;
            return false;
        };
        let n = self.dims.spatial();
        let s = self.spatial_index(v[0], v[1], v[2]);
        let newly = self.data[s] == 0.0;
        self.data[s] = 1.0;
        let mut old_max = 0.0f32;
        let mut new_max = 0.0f32;
        for c in 1..self.dims.channels {
            let slot = &mut self.data[c * n + s];
            old_max = old_max.max(*slot);
            let inc = scores.get(c - 1).copied().unwrap_or(0.0);
            let inc = if inc.is_nan() { 0.0 } else { inc.clamp(0.0, 1.0) };
            if inc > *slot {
                *slot = inc;
            }
            new_max = new_max.max(*slot);
        }
        if newly || new_max > old_max {
            obs.voxel_changed(v, newly, old_max, new_max);
        }
        true
    }

    pub fn occupied_count(&self) -> u64 {
        self.data[..self.dims.spatial()].iter().filter(|&&v| v > 0.0).count() as u64
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}

fn check_inputs(map: &SemanticVoxelMap, depth: &DepthImage, scores: &ScoreImage, cam: &CameraModel) -> Result<()> {
    depth.check_camera(cam)?;
    if scores.width != cam.width || scores.height != cam.height {
        return Err(SealError::DimensionMismatch {
            expected: (cam.height, cam.width),
            found: (scores.height, scores.width),
        });
    }
    if scores.categories + 1 != map.dims.channels {
        return Err(SealError::DimensionMismatch {
            expected: (map.dims.channels - 1, 1),
            found: (scores.categories, 1),
        });
    }
    Ok(())
}

/// Fuse one observation. `pose` is the agent's world pose.
pub fn update_map(
    map: &mut SemanticVoxelMap,
    depth: &DepthImage,
    scores: &ScoreImage,
    pose: &Pose,
    cam: &CameraModel,
) -> Result<UpdateStats> {
    update_map_observed(map, depth, scores, pose, cam, &mut NoObserver)
}

pub fn update_map_observed(
    map: &mut SemanticVoxelMap,
    depth: &DepthImage,
    scores: &ScoreImage,
    pose: &Pose,
    cam: &CameraModel,
    obs: &mut impl MapObserver,
) -> Result<UpdateStats> {
    check_inputs(map, depth, scores, cam)?;
    let rel = pose.relative_to(&map.origin);
    let cloud = depth_to_pointcloud(depth, cam)?;
    let mut stats = UpdateStats {
        points: cloud.len(),
        dropped: 0,
    };
    for q in &cloud.points {
        let p = rel.to_parent(q.p);
        if !map.integrate_point(p, scores.pixel(q.pixel as usize), obs) {
            stats.dropped += 1;
        }
    }
    Ok(stats)
}

/// Number of voxels whose best category score is strictly above `s_hat`.
pub fn gainful_curiosity_reward(map: &SemanticVoxelMap, s_hat: f32) -> u64 {
    let n = map.dims.spatial();
    let mut best = vec![0.0f32; n];
    for c in 1..map.dims.channels {
        for (b, &v) in best.iter_mut().zip(&map.data[c * n..(c + 1) * n]) {
            if v > *b {
                *b = v;
            }
        }
    }
    best.iter().filter(|&&v| v > s_hat).count() as u64
}

/// Row-major 2D grid indexed `y * width + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Grid2<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }
}

impl<T: Copy> Grid2<T> {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }
}

/// OR of occupancy over `z_range` for every map column.
pub fn occupancy_floor_slice(map: &SemanticVoxelMap, z_range: Range<usize>) -> Result<Grid2<bool>> {
    if z_range.start > z_range.end || z_range.end > map.dims.height {
        return Err(SealError::InvalidArgument(format!(
            "z range {:?} outside map height {}",
            z_range, map.dims.height
        )));
    }
    let (l, w) = (map.dims.length, map.dims.width);
    let mut g = Grid2::new(l, w, false);
    for z in z_range {
        let layer = &map.data[z * l * w..(z + 1) * l * w];
        for (o, &v) in g.data.iter_mut().zip(layer) {
            *o |= v > 0.0;
        }
    }
    Ok(g)
}

const MAGIC: &[u8; 4] = b"SVM1";

/// Write the map in the SVM1 binary layout.
pub fn write_svm1(map: &SemanticVoxelMap, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    for d in map.dims.as_array() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in &map.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read an SVM1 file. The origin is not stored and comes back as identity.
pub fn read_svm1(path: &Path) -> Result<SemanticVoxelMap> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(SealError::Format("missing SVM1 header".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let dims = MapDims {
        channels: dim(0),
        length: dim(1),
        width: dim(2),
        height: dim(3),
    };
    let mut map = new_map(dims)?;
    let body = &bytes[20..];
    if body.len() != map.data.len() * 4 {
        return Err(SealError::Format(format!(
            "SVM1 body has {} bytes, expected {}",
            body.len(),
            map.data.len() * 4
        )));
    }
    for (v, ch) in map.data.iter_mut().zip(body.chunks_exact(4)) {
        *v = f32::from_le_bytes(ch.try_into().unwrap());
    }
    Ok(map)
}

/// CSV of occupied voxels with their best category (0 when no score).
pub fn write_argmax_csv(map: &SemanticVoxelMap, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "z", "category", "score"])?;
    let d = map.dims;
    for z in 0..d.height {
        for y in 0..d.width {
            for x in 0..d.length {
                if !map.occupied(x, y, z) {
                    continue;
                }
                let s = map.scores(x, y, z);
                let (mut bc, mut bs) = (0usize, 0.0f32);
                for (c, &v) in s.iter().enumerate() {
                    if v > bs {
                        bc = c + 1;
                        bs = v;
                    }
                }
                w.write_record([x.to_string(), y.to_string(), z.to_string(), bc.to_string(), bs.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SemanticVoxelMap {
        new_map(MapDims {
            channels: 7,
            length: 16,
            width: 16,
            height: 8,
        })
        .unwrap()
    }

    #[test]
    fn default_dims_zero_map() {
        let m = new_map(MapDims::default()).unwrap();
        assert_eq!(m.data().len(), 7 * 256 * 256 * 64);
        assert_eq!(m.sum(), 0.0);
    }

    #[test]
    fn zero_length_rejected() {
        let d = MapDims {
            length: 0,
            ..MapDims::default()
        };
        assert!(matches!(new_map(d), Err(SealError::InvalidDims(_))));
        assert!(matches!(
            new_map_with_cap(MapDims::default(), 1000),
            Err(SealError::AllocationTooLarge { .. })
        ));
    }

    #[test]
    fn point_lands_at_expected_voxel() {
        let mut m = new_map(MapDims::default()).unwrap();
        let mut s = [0.0f32; 6];
        s[0] = 0.95;
        assert!(m.integrate_point([1.0, 2.0, 0.5], &s, &mut NoObserver));
        assert_eq!(m.get(0, 148, 168, 10), 1.0);
        assert_eq!(m.get(1, 148, 168, 10), 0.95);
        assert_eq!(m.occupied_count(), 1);
    }

    #[test]
    fn max_pooling_keeps_best() {
        let mut m = small();
        m.integrate_point([0.01, 0.01, 0.01], &[0.4, 0.0, 0.0, 0.0, 0.0, 0.0], &mut NoObserver);
        m.integrate_point([0.01, 0.01, 0.01], &[0.7, 0.0, 0.0, 0.0, 0.0, 0.0], &mut NoObserver);
        m.integrate_point([0.01, 0.01, 0.01], &[0.5, 0.0, 0.0, 0.0, 0.0, 0.0], &mut NoObserver);
        assert_eq!(m.get(1, 8, 8, 0), 0.7);
    }

    #[test]
    fn reward_counts_voxels_not_channels() {
        let mut m = small();
        for i in 0..3 {
            m.integrate_point([0.05 * i as f64, 0.0, 0.1], &[0.95, 0.0, 0.0, 0.0, 0.0, 0.0], &mut NoObserver);
        }
        for i in 0..5 {
            m.integrate_point([0.05 * i as f64, 0.2, 0.1], &[0.0, 0.85, 0.0, 0.0, 0.0, 0.0], &mut NoObserver);
        }
        assert_eq!(gainful_curiosity_reward(&m, 0.9), 3);
        m.integrate_point([0.0, -0.2, 0.1], &[0.91, 0.95, 0.0, 0.0, 0.0, 0.0], &mut NoObserver);
        assert_eq!(gainful_curiosity_reward(&m, 0.9), 4);
        assert_eq!(gainful_curiosity_reward(&small(), 0.9), 0);
    }

    #[test]
    fn floor_slice() {
        let mut m = small();
        assert!(occupancy_floor_slice(&m, 0..8).unwrap().data.iter().all(|&b| !b));
        m.integrate_point([0.12, -0.07, 0.2], &[0.0; 6], &mut NoObserver);
        let g = occupancy_floor_slice(&m, 2..6).unwrap();
        assert!(g.at(10, 6));
        assert_eq!(g.data.iter().filter(|&&b| b).count(), 1);
        assert!(occupancy_floor_slice(&m, 0..2).unwrap().data.iter().all(|&b| !b));
    }

    #[test]
    fn out_of_bounds_is_counted() {
        let mut m = small();
        assert!(!m.integrate_point([5.0, 0.0, 0.0], &[0.0; 6], &mut NoObserver));
        assert!(!m.integrate_point([0.0, 0.0, -0.1], &[0.0; 6], &mut NoObserver));
        assert!(m.integrate_point([0.0, 0.0, -1e-7], &[0.0; 6], &mut NoObserver));
        assert_eq!(m.dropped, 2);
    }

    #[test]
    fn svm1_round_trip() {
        let mut m = small();
        m.integrate_point([0.3, 0.1, 0.2], &[0.2, 0.9, 0.0, 0.0, 0.0, 0.5], &mut NoObserver);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.svm");
        write_svm1(&m, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"SVM1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 7);
        assert_eq!(bytes.len(), 20 + 4 * 7 * 16 * 16 * 8);
        let back = read_svm1(&p).unwrap();
        assert_eq!(back.data(), m.data());
        write_argmax_csv(&m, &dir.path().join("m.csv")).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().ends_with(",2,0.9"));
    }
}
