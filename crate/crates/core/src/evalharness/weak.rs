//! Choosing frames for human annotation by map uncertainty.

use crate::geometry::{CameraModel, DepthImage, Pose, VoxelRay};
use crate::labelprop::DEPTH_GUARD_VOXELS;
use crate::semmap::SemanticVoxelMap;

/// Entropy of category scores plus a background residual `1 - max`,
/// normalized to a distribution.
pub fn voxel_entropy(scores: &[f32]) -> f64 {
    let max = scores.iter().fold(0.0f32, |m, &s| m.max(s)) as f64;
    let residual = (1.0 - max).max(0.0);
    let total: f64 = scores.iter().map(|&s| s.max(0.0) as f64).sum::<f64>() + residual;
    if total <= 0.0 {
        return 0.0;
    }
    let mut h = 0.0;
    for p in scores.iter().map(|&s| s.max(0.0) as f64).chain(std::iter::once(residual)) {
        if p > 0.0 {
            let q = p / total;
            h -= q * q.ln();
        }
    }
    h
}

/// Mean voxel entropy over the pixels of a frame whose ray meets an
/// occupied voxel near the measured surface; `None` if no pixel does.
pub fn frame_entropy(map: &SemanticVoxelMap, pose: &Pose, depth: &DepthImage, cam: &CameraModel) -> Option<f64> {
    let rel = pose.relative_to(&map.origin);
    let corner = map.grid_corner();
    let cam_map = rel.to_parent([0.0, 0.0, cam.height_m]);
    let origin = [cam_map[0] - corner[0], cam_map[1] - corner[1], cam_map[2] - corner[2]];
    let (s, c) = rel.heading_rad().sin_cos();
    let d = map.dims;
    let grid = crate::geometry::GridSpec {
        dims: [d.length, d.width, d.height],
        voxel_size: map.voxel_size,
    };
    let extent = [
        d.length as f64 * map.voxel_size,
        d.width as f64 * map.voxel_size,
        d.height as f64 * map.voxel_size,
    ];
    let guard = DEPTH_GUARD_VOXELS * map.voxel_size;
    let mut sum = 0.0;
    let mut hits = 0usize;
    for row in 0..cam.height {
        for col in 0..cam.width {
            let dval = depth.data[row * cam.width + col];
            if !cam.is_valid_depth(dval) {
                continue;
            }
            let r = cam.pixel_ray(row, col);
            let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            let dir = [(c * r[0] - s * r[1]) / norm, (s * r[0] + c * r[1]) / norm, r[2] / norm];
            let t_surf = dval as f64 * norm;
            let t0 = (t_surf - guard).max(0.0);
            let start = [origin[0] + dir[0] * t0, origin[1] + dir[1] * t0, origin[2] + dir[2] * t0];
            if (0..3).any(|a| start[a] < 0.0 || start[a] > extent[a]) {
                continue;
            }
            let Ok(ray) = VoxelRay::new(start, dir, &grid, t_surf + guard - t0) else {
                continue;
            };
            for cell in ray {
                let [x, y, z] = cell.cell;
                if map.occupied(x, y, z) {
                    sum += voxel_entropy(&map.scores(x, y, z));
                    hits += 1;
                    break;
                }
            }
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Indices of the `k` frames with the highest mean voxel entropy; ties go
/// to the lower index. Frames without hits score 0.
pub fn select_weak_frames(map: &SemanticVoxelMap, frames: &[(Pose, &DepthImage)], cam: &CameraModel, k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let scores: Vec<f64> = frames
        .iter()
        .map(|(pose, depth)| frame_entropy(map, pose, depth, cam).unwrap_or(0.0))
        .collect();
    rank_top_k(&scores, k)
}

/// Top-k by descending score, ties by ascending index.
pub fn rank_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}
