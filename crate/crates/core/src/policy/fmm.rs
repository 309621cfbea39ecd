//! Fast marching on an 8-connected grid.
//!
//! Each cell is updated from the eight 45-degree triangles formed by an
//! axial neighbor `a` and the adjacent diagonal neighbor `b`: the arrival
//! time is minimized over points on the segment `a-b` with linear
//! interpolation of the known times. Because the endpoints are among the
//! candidates the result never exceeds 8-connected Dijkstra, and because
//! interpolating a convex distance overestimates it the result never drops
//! below the straight-line distance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Result, SealError};
use crate::semmap::Grid2;

/// Obstacle dilation applied before planning, in cells (0.10 m).
pub const DILATION_CELLS: usize = 2;

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        // min-heap on time, then on index for determinism
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

/// Offsets inside a disc of the given radius in cells.
pub fn disc_offsets(radius: usize) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                v.push((dx, dy));
            }
        }
    }
    v
}

pub fn dilate(grid: &Grid2<bool>, radius: usize) -> Grid2<bool> {
    let offs = disc_offsets(radius);
    let mut out = Grid2::new(grid.width, grid.height, false);
    for y in 0..grid.height {
        for x in 0..grid.width {
            if !grid.at(x, y) {
                continue;
            }
            for &(dx, dy) in &offs {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < grid.width && (ny as usize) < grid.height {
                    out.set(nx as usize, ny as usize, true);
                }
            }
        }
    }
    out
}

/// Inclusive-exclusive cell window `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

const AXIAL: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

fn triangle(ta: f64, tb: f64) -> f64 {
    let s2 = std::f64::consts::SQRT_2;
    let mut best = (ta + 1.0).min(tb + s2);
    if ta.is_finite() && tb.is_finite() {
        let r = ta - tb;
        if r > 0.0 && r < std::f64::consts::FRAC_1_SQRT_2 {
            let lam = r / (1.0 - r * r).sqrt();
            let v = (1.0 + lam * lam).sqrt() + ta - lam * r;
            best = best.min(v);
        }
    }
    best
}

/// Arrival times in cells from `sources` over cells where `blocked` is
/// false, restricted to `window` when given. Unreached cells are infinite.
pub fn fmm_solve(blocked: &Grid2<bool>, sources: &[(usize, usize)], window: Option<Window>) -> Grid2<f64> {
    let (w, h) = (blocked.width, blocked.height);
    let win = window.unwrap_or(Window { x0: 0, y0: 0, x1: w, y1: h });
    let mut t = Grid2::new(w, h, f64::INFINITY);
    let mut done = Grid2::new(w, h, false);
    let mut heap = BinaryHeap::new();
    let inside = |x: i64, y: i64| x >= win.x0 as i64 && y >= win.y0 as i64 && x < win.x1 as i64 && y < win.y1 as i64;
    for &(x, y) in sources {
        if inside(x as i64, y as i64) && !blocked.at(x, y) {
            t.set(x, y, 0.0);
            heap.push(Item(0.0, y * w + x));
        }
    }
    while let Some(Item(v, k)) = heap.pop() {
        let (x, y) = (k % w, k / w);
        if done.at(x, y) || v > t.at(x, y) {
            continue;
        }
        done.set(x, y, true);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if !inside(nx, ny) {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if done.at(nx, ny) || blocked.at(nx, ny) {
                    continue;
                }
                let cand = update_cell(&t, &done, nx, ny, &inside);
                if cand < t.at(nx, ny) {
                    t.set(nx, ny, cand);
                    heap.push(Item(cand, ny * w + nx));
                }
            }
        }
    }
    t
}

fn update_cell(t: &Grid2<f64>, done: &Grid2<bool>, x: usize, y: usize, inside: &impl Fn(i64, i64) -> bool) -> f64 {
    let get = |dx: i64, dy: i64| -> f64 {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        if inside(nx, ny) && done.at(nx as usize, ny as usize) {
            t.at(nx as usize, ny as usize)
        } else {
            f64::INFINITY
        }
    };
    let mut best = f64::INFINITY;
    for &(ax, ay) in &AXIAL {
        let ta = get(ax, ay);
        // the two diagonals flanking this axial neighbor
        for side in [-1i64, 1] {
            let (bx, by) = if ax != 0 { (ax, side) } else { (side, ay) };
            let tb = get(bx, by);
            best = best.min(triangle(ta, tb));
        }
    }
    best
}

/// Distance field (in cells) to `goal` after dilating obstacles by the
/// agent radius.
pub fn fmm_distance_field(occupancy: &Grid2<bool>, goal: (usize, usize)) -> Result<Grid2<f64>> {
    if goal.0 >= occupancy.width || goal.1 >= occupancy.height {
        return Err(SealError::InvalidArgument(format!("goal {goal:?} outside grid")));
    }
    let blocked = dilate(occupancy, DILATION_CELLS);
    if blocked.at(goal.0, goal.1) {
        return Err(SealError::GoalOccupied(goal));
    }
    Ok(fmm_solve(&blocked, &[goal], None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_grid_diagonal() {
        let g = Grid2::new(10, 10, false);
        let blocked = Grid2::new(10, 10, false);
        let t = fmm_solve(&blocked, &[(8, 8)], None);
        let want = 7.0 * std::f64::consts::SQRT_2;
        assert!((t.at(1, 1) - want).abs() / want < 0.05);
        assert_eq!(t.at(8, 8), 0.0);
        let f = fmm_distance_field(&g, (8, 8)).unwrap();
        assert_eq!(f.at(8, 8), 0.0);
    }

    #[test]
    fn sealed_cell_is_infinite() {
        let mut g = Grid2::new(20, 20, false);
        for i in 0..20 {
            g.set(10, i, true);
        }
        let f = fmm_distance_field(&g, (3, 3)).unwrap();
        assert!(f.at(17, 3).is_infinite());
        assert!(f.at(3, 10).is_finite());
        assert!(matches!(fmm_distance_field(&g, (10, 4)), Err(SealError::GoalOccupied(_))));
        assert!(matches!(fmm_distance_field(&g, (9, 4)), Err(SealError::GoalOccupied(_))));
    }

    #[test]
    fn straight_line_is_exact() {
        let b = Grid2::new(30, 5, false);
        let t = fmm_solve(&b, &[(0, 2)], None);
        for x in 0..30 {
            assert!((t.at(x, 2) - x as f64).abs() < 1e-12);
        }
    }
}
