//! 2D navigation state derived incrementally from map updates.

use std::collections::VecDeque;

use crate::geometry::Pose;
use crate::semmap::{Grid2, MapObserver, SemanticVoxelMap};

use super::fmm::{disc_offsets, DILATION_CELLS};

/// Voxel layers that count as obstacles: 0.10 m to 1.80 m above the floor.
pub const OBSTACLE_Z: std::ops::Range<usize> = 2..36;

/// Map-frame cell geometry shared by the planners. Cell `(L/2, W/2)` has its
/// lower corner at the episode start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavGrid {
    pub length: usize,
    pub width: usize,
    pub cell: f64,
}

impl NavGrid {
    pub fn of_map(map: &SemanticVoxelMap) -> Self {
        Self {
            length: map.dims.length,
            width: map.dims.width,
            cell: map.voxel_size,
        }
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = (x / self.cell).floor() + (self.length / 2) as f64;
        let fy = (y / self.cell).floor() + (self.width / 2) as f64;
        if fx < 0.0 || fy < 0.0 || fx >= self.length as f64 || fy >= self.width as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i as f64 - (self.length / 2) as f64 + 0.5) * self.cell,
            (j as f64 - (self.width / 2) as f64 + 0.5) * self.cell,
        )
    }
}

/// Obstacles, exploration and confidence bookkeeping for one episode.
#[derive(Debug, Clone)]
pub struct NavState {
    pub grid: NavGrid,
    pub obstacle: Grid2<bool>,
    /// Number of obstacle cells within the dilation disc; blocked if > 0.
    blocked: Grid2<u16>,
    pub explored: Grid2<bool>,
    /// Voxels per column whose best score lies in `(mid_low, s_hat]`.
    pub mid_conf: Grid2<u32>,
    pub visits: Grid2<u32>,
    pub s_hat: f32,
    pub mid_low: f32,
    /// Running gainful-curiosity reward.
    pub gainful: u64,
    /// Running count of occupied voxels.
    pub occupied: u64,
    /// Set whenever the blocked set grows.
    pub dirty: bool,
    disc: Vec<(i64, i64)>,
}

impl NavState {
    pub fn new(grid: NavGrid, s_hat: f32, mid_low: f32) -> Self {
        let (l, w) = (grid.length, grid.width);
        Self {
            grid,
            obstacle: Grid2::new(l, w, false),
            blocked: Grid2::new(l, w, 0),
            explored: Grid2::new(l, w, false),
            mid_conf: Grid2::new(l, w, 0),
            visits: Grid2::new(l, w, 0),
            s_hat,
            mid_low,
            gainful: 0,
            occupied: 0,
            dirty: false,
            disc: disc_offsets(DILATION_CELLS),
        }
    }

    /// Rebuild the state from a finished map by a full scan.
    pub fn from_map(map: &SemanticVoxelMap, s_hat: f32, mid_low: f32) -> Self {
        let mut nav = NavState::new(NavGrid::of_map(map), s_hat, mid_low);
        let d = map.dims;
        for z in 0..d.height {
            for y in 0..d.width {
                for x in 0..d.length {
                    if map.occupied(x, y, z) {
                        nav.voxel_changed([x, y, z], true, 0.0, map.max_score(x, y, z));
                    }
                }
            }
        }
        nav
    }

    pub fn mark_obstacle(&mut self, x: usize, y: usize) {
        if self.obstacle.at(x, y) {
            return;
        }
        self.obstacle.set(x, y, true);
        for &(dx, dy) in &self.disc {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && (nx as usize) < self.grid.length && (ny as usize) < self.grid.width {
                let v = self.blocked.at(nx as usize, ny as usize);
                self.blocked.set(nx as usize, ny as usize, v.saturating_add(1));
            }
        }
        self.dirty = true;
    }

    pub fn is_blocked(&self, x: usize, y: usize) -> bool {
        self.blocked.at(x, y) > 0
    }

    pub fn blocked_grid(&self) -> Grid2<bool> {
        Grid2 {
            width: self.grid.length,
            height: self.grid.width,
            data: self.blocked.data.iter().map(|&c| c > 0).collect(),
        }
    }

    /// Frontier cells: explored, not an obstacle, with an unexplored
    /// 4-neighbor.
    pub fn frontier(&self) -> Grid2<bool> {
        let (l, w) = (self.grid.length, self.grid.width);
        let mut f = Grid2::new(l, w, false);
        for y in 0..w {
            for x in 0..l {
                if !self.explored.at(x, y) || self.obstacle.at(x, y) {
                    continue;
                }
                let unexplored = (x > 0 && !self.explored.at(x - 1, y))
                    || (x + 1 < l && !self.explored.at(x + 1, y))
                    || (y > 0 && !self.explored.at(x, y - 1))
                    || (y + 1 < w && !self.explored.at(x, y + 1));
                f.set(x, y, unexplored);
            }
        }
        f
    }

    pub fn record_visit(&mut self, pose_map: &Pose) {
        if let Some((x, y)) = self.grid.cell_of(pose_map.x, pose_map.y) {
            let v = self.visits.at(x, y);
            self.visits.set(x, y, v + 1);
        }
    }

    fn in_band(&self, v: f32) -> bool {
        v > self.mid_low && v <= self.s_hat
    }
}

impl MapObserver for NavState {
    fn voxel_changed(&mut self, v: [usize; 3], newly_occupied: bool, old_max: f32, new_max: f32) {
        let (x, y, z) = (v[0], v[1], v[2]);
        if newly_occupied {
            self.occupied += 1;
            self.explored.set(x, y, true);
            if OBSTACLE_Z.contains(&z) {
                self.mark_obstacle(x, y);
            }
        }
        if old_max <= self.s_hat && new_max > self.s_hat {
            self.gainful += 1;
        }
        let was = self.in_band(old_max);
        let now = self.in_band(new_max);
        if was != now {
            let c = self.mid_conf.at(x, y);
            self.mid_conf.set(x, y, if now { c + 1 } else { c.saturating_sub(1) });
        }
    }
}

/// Summed-area table for window sums.
pub struct Integral {
    w: usize,
    sums: Vec<f64>,
}

impl Integral {
    pub fn new<T: Copy + Into<f64>>(g: &Grid2<T>) -> Self {
        let (w, h) = (g.width, g.height);
        let mut sums = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += g.at(x, y).into();
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, sums }
    }

    /// Sum over the square window of half-size `r` centred at `(x, y)`,
    /// clipped to the grid.
    pub fn window(&self, x: usize, y: usize, r: usize, h: usize) -> f64 {
        let x0 = x.saturating_sub(r);
        let y0 = y.saturating_sub(r);
        let x1 = (x + r + 1).min(self.w);
        let y1 = (y + r + 1).min(h);
        let s = |xx: usize, yy: usize| self.sums[yy * (self.w + 1) + xx];
        s(x1, y1) - s(x0, y1) - s(x1, y0) + s(x0, y0)
    }
}

/// 4-connected BFS distance in cells from the `true` cells of `sources`,
/// spreading only through cells where `passable` holds.
pub fn bfs_distance(sources: &Grid2<bool>, passable: impl Fn(usize, usize) -> bool) -> Grid2<u32> {
    let (w, h) = (sources.width, sources.height);
    let mut d = Grid2::new(w, h, u32::MAX);
    let mut q = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if sources.at(x, y) {
                d.set(x, y, 0);
                q.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = q.pop_front() {
        let dv = d.at(x, y) + 1;
        let nb = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in nb {
            if nx < w && ny < h && d.at(nx, ny) == u32::MAX && passable(nx, ny) {
                d.set(nx, ny, dv);
                q.push_back((nx, ny));
            }
        }
    }
    d
}
