//! Procedural indoor scenes, the discrete agent and a ray-cast renderer.
//!
//! Scenes live on a 5 cm floor raster. Walls are full-height slabs, objects
//! are axis-aligned boxes whose side faces sit on raster lines and whose top
//! and bottom faces sit halfway between multiples of 5 cm.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SealError};
use crate::geometry::{CameraModel, DepthImage, Pose};
use crate::seeding::{rng_for, tags};

/// Floor raster resolution in meters.
pub const CELL: f64 = 0.05;
pub const NUM_CATEGORIES: usize = 6;
pub const CATEGORY_NAMES: [&str; NUM_CATEGORIES] =
    ["chair", "couch", "bed", "toilet", "tv", "potted_plant"];

pub const AGENT_RADIUS: f64 = 0.10;
pub const FORWARD_STEP: f64 = 0.25;
pub const TURN_DEG: f64 = 30.0;

const WALL_CELLS: i64 = 2;
const DOOR_CELLS: i64 = 20;
const MIN_ROOM_CELLS: i64 = 50;
const CLEARANCE_CELLS: i64 = 6;
const OBSERVE_RADIUS_CELLS: i64 = 10;
const MAX_ATTEMPTS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Forward, Action::TurnLeft, Action::TurnRight];

    pub fn name(&self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::TurnLeft => "turn_left",
            Action::TurnRight => "turn_right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub num_rooms: u32,
    pub objects_per_room: u32,
    pub extents: [f64; 3],
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            num_rooms: 3,
            objects_per_room: 2,
            extents: [12.8, 12.8, 3.2],
        }
    }
}

/// Wall slab footprint in meters; walls span the full scene height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub instance: u16,
    pub category: u8,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Free,
    Wall,
    /// Index into `Scene::objects`.
    Object(u16),
}

const CODE_FREE: u16 = 0;
const CODE_WALL: u16 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SceneFile {
    seed: u64,
    params: SceneParams,
    extents: [f64; 3],
    walls: Vec<WallBox>,
    objects: Vec<SceneObject>,
}

/// Immutable scene: boxes plus derived floor rasters.
#[derive(Debug, Clone)]
pub struct Scene {
    pub seed: u64,
    pub params: SceneParams,
    pub extents: [f64; 3],
    pub walls: Vec<WallBox>,
    pub objects: Vec<SceneObject>,
    nx: usize,
    ny: usize,
    footprint: Vec<u16>,
    navigable: Vec<bool>,
    reachable: Vec<bool>,
    spawn_cell: (usize, usize),
}

fn to_cells(m: f64) -> i64 {
    (m / CELL).round() as i64
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
}

impl Rect {
    fn grow(&self, m: i64) -> Rect {
        Rect {
            x0: self.x0 - m,
            y0: self.y0 - m,
            x1: self.x1 + m,
            y1: self.y1 + m,
        }
    }

    fn overlaps(&self, o: &Rect) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }

    fn to_wall(self) -> WallBox {
        WallBox {
            min: [self.x0 as f64 * CELL, self.y0 as f64 * CELL],
            max: [self.x1 as f64 * CELL, self.y1 as f64 * CELL],
        }
    }
}

/// Footprint size in cells and vertical extent in meters per category.
fn category_shape(category: u8) -> (i64, i64, f64, f64) {
    match category {
        1 => (12, 12, 0.0, 0.95),
        2 => (36, 18, 0.0, 0.825),
        3 => (40, 30, 0.0, 0.625),
        4 => (10, 14, 0.0, 0.8),
        5 => (20, 4, 0.525, 1.125),
        _ => (10, 10, 0.0, 1.2),
    }
}

pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<Scene> {
    if params.num_rooms == 0 {
        return Err(SealError::Config("num_rooms must be >= 1".into()));
    }
    let [lx, ly, lz] = params.extents;
    if !(lx >= 4.0 && ly >= 4.0) || !(lz >= 1.5) || !lx.is_finite() || !ly.is_finite() || !lz.is_finite() {
        return Err(SealError::Config(format!(
            "scene extents {:?} must be >= 4 m horizontally and >= 1.5 m tall",
            params.extents
        )));
    }
    let nx = to_cells(lx);
    let ny = to_cells(ly);
    let extents = [nx as f64 * CELL, ny as f64 * CELL, lz];
    let mut rng = rng_for(&[seed, tags::SCENE]);

    for _attempt in 0..MAX_ATTEMPTS {
        let mut walls = vec![
            Rect { x0: 0, y0: 0, x1: nx, y1: WALL_CELLS },
            Rect { x0: 0, y0: ny - WALL_CELLS, x1: nx, y1: ny },
            Rect { x0: 0, y0: 0, x1: WALL_CELLS, y1: ny },
            Rect { x0: nx - WALL_CELLS, y0: 0, x1: nx, y1: ny },
        ];
        let mut rooms = vec![Rect {
            x0: WALL_CELLS,
            y0: WALL_CELLS,
            x1: nx - WALL_CELLS,
            y1: ny - WALL_CELLS,
        }];
        let mut doors: Vec<Rect> = Vec::new();

        for _ in 1..params.num_rooms {
            let (ri, room) = rooms
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.area().cmp(&b.1.area()).then(b.0.cmp(&a.0)))
                .map(|(i, r)| (i, *r))
                .unwrap();
            let split_x = (room.x1 - room.x0) >= (room.y1 - room.y0);
            let (lo, hi, a0, a1) = if split_x {
                (room.x0, room.x1, room.y0, room.y1)
            } else {
                (room.y0, room.y1, room.x0, room.x1)
            };
            if hi - lo < 2 * MIN_ROOM_CELLS + WALL_CELLS {
                break;
            }
            let mut chosen = None;
            for _ in 0..50 {
                let pos = rng.gen_range(lo + MIN_ROOM_CELLS..=hi - MIN_ROOM_CELLS - WALL_CELLS);
                // Keep the new wall clear of doorways in the walls it abuts.
                let band = if split_x {
                    Rect { x0: pos - 6, y0: a0 - WALL_CELLS - 1, x1: pos + WALL_CELLS + 6, y1: a1 + WALL_CELLS + 1 }
                } else {
                    Rect { x0: a0 - WALL_CELLS - 1, y0: pos - 6, x1: a1 + WALL_CELLS + 1, y1: pos + WALL_CELLS + 6 }
                };
                if !doors.iter().any(|d| d.overlaps(&band)) {
                    chosen = Some(pos);
                    break;
                }
            }
            let Some(pos) = chosen else { break };
            let door_at = rng.gen_range(a0 + 4..=a1 - 4 - DOOR_CELLS);
            let (w1, w2, door, r1, r2) = if split_x {
                (
                    Rect { x0: pos, y0: a0, x1: pos + WALL_CELLS, y1: door_at },
                    Rect { x0: pos, y0: door_at + DOOR_CELLS, x1: pos + WALL_CELLS, y1: a1 },
                    Rect { x0: pos, y0: door_at, x1: pos + WALL_CELLS, y1: door_at + DOOR_CELLS },
                    Rect { x1: pos, ..room },
                    Rect { x0: pos + WALL_CELLS, ..room },
                )
            } else {
                (
                    Rect { x0: a0, y0: pos, x1: door_at, y1: pos + WALL_CELLS },
                    Rect { x0: door_at + DOOR_CELLS, y0: pos, x1: a1, y1: pos + WALL_CELLS },
                    Rect { x0: door_at, y0: pos, x1: door_at + DOOR_CELLS, y1: pos + WALL_CELLS },
                    Rect { y1: pos, ..room },
                    Rect { y0: pos + WALL_CELLS, ..room },
                )
            };
            walls.push(w1);
            walls.push(w2);
            doors.push(door);
            rooms[ri] = r1;
            rooms.push(r2);
        }

        let center = Rect { x0: nx / 2 - 12, y0: ny / 2 - 12, x1: nx / 2 + 12, y1: ny / 2 + 12 };
        let mut placed: Vec<(Rect, u8, f64, f64)> = Vec::new();
        let mut ok = true;
        for room in &rooms {
            for _ in 0..params.objects_per_room {
                let mut done = false;
                for _ in 0..100 {
                    let category: u8 = rng.gen_range(1..=NUM_CATEGORIES as u8);
                    let (mut w, mut d, z0, z1) = category_shape(category);
                    if rng.gen_bool(0.5) {
                        std::mem::swap(&mut w, &mut d);
                    }
                    let xl = room.x0 + CLEARANCE_CELLS;
                    let xh = room.x1 - CLEARANCE_CELLS - w;
                    let yl = room.y0 + CLEARANCE_CELLS;
                    let yh = room.y1 - CLEARANCE_CELLS - d;
                    if xl > xh || yl > yh {
                        continue;
                    }
                    let x0 = rng.gen_range(xl..=xh);
                    let y0 = rng.gen_range(yl..=yh);
                    let r = Rect { x0, y0, x1: x0 + w, y1: y0 + d };
                    let grown = r.grow(CLEARANCE_CELLS);
                    if placed.iter().any(|p| p.0.overlaps(&grown))
                        || doors.iter().any(|dr| dr.grow(12).overlaps(&r))
                        || center.overlaps(&r)
                    {
                        continue;
                    }
                    placed.push((r, category, z0, z1));
                    done = true;
                    break;
                }
                if !done {
                    ok = false;
                }
            }
        }
        if !ok {
            continue;
        }
        let objects: Vec<SceneObject> = placed
            .iter()
            .enumerate()
            .map(|(i, (r, c, z0, z1))| SceneObject {
                instance: (i + 1) as u16,
                category: *c,
                min: [r.x0 as f64 * CELL, r.y0 as f64 * CELL, *z0],
                max: [r.x1 as f64 * CELL, r.y1 as f64 * CELL, *z1],
            })
            .collect();
        let walls: Vec<WallBox> = walls.into_iter().filter(|w| w.area() > 0).map(Rect::to_wall).collect();
        let scene = match Scene::from_parts(seed, params.clone(), extents, walls, objects) {
            Ok(s) => s,
            Err(SealError::NoFreeSpawn) => continue,
            Err(e) => return Err(e),
        };
        if scene.connectivity() >= 0.6 && scene.all_objects_observable() {
            return Ok(scene);
        }
    }
    Err(SealError::GenerationFailed {
        seed,
        attempts: MAX_ATTEMPTS,
    })
}

impl Scene {
    /// Assemble a scene from its boxes and derive the floor rasters.
    pub fn from_parts(
        seed: u64,
        params: SceneParams,
        extents: [f64; 3],
        walls: Vec<WallBox>,
        objects: Vec<SceneObject>,
    ) -> Result<Scene> {
        let nx = to_cells(extents[0]).max(1) as usize;
        let ny = to_cells(extents[1]).max(1) as usize;
        let mut footprint = vec![CODE_FREE; nx * ny];
        let mut fill = |x0: f64, y0: f64, x1: f64, y1: f64, code: u16| {
            let (x0, x1) = (to_cells(x0).max(0) as usize, (to_cells(x1).max(0) as usize).min(nx));
            let (y0, y1) = (to_cells(y0).max(0) as usize, (to_cells(y1).max(0) as usize).min(ny));
            for y in y0..y1 {
                for x in x0..x1 {
                    footprint[y * nx + x] = code;
                }
            }
        };
        for w in &walls {
            fill(w.min[0], w.min[1], w.max[0], w.max[1], CODE_WALL);
        }
        let mut seen = std::collections::HashSet::new();
        for (i, o) in objects.iter().enumerate() {
            if !seen.insert(o.instance) || o.instance == 0 {
                return Err(SealError::Format(format!("duplicate or zero instance id {}", o.instance)));
            }
            if o.category == 0 || o.category as usize > NUM_CATEGORIES {
                return Err(SealError::Format(format!("bad category {}", o.category)));
            }
            fill(o.min[0], o.min[1], o.max[0], o.max[1], 2 + i as u16);
        }
        let mut scene = Scene {
            seed,
            params,
            extents,
            walls,
            objects,
            nx,
            ny,
            footprint,
            navigable: vec![false; nx * ny],
            reachable: vec![false; nx * ny],
            spawn_cell: (0, 0),
        };
        let navigable: Vec<bool> = (0..nx * ny)
            .map(|k| {
                let (x, y) = scene.cell_center(k % nx, k / nx);
                scene.disc_is_free(x, y, AGENT_RADIUS)
            })
            .collect();
        scene.navigable = navigable;
        let cx = nx as f64 / 2.0;
        let cy = ny as f64 / 2.0;
        let spawn = (0..nx * ny)
            .filter(|&k| scene.navigable[k])
            .min_by(|&a, &b| {
                let da = ((a % nx) as f64 + 0.5 - cx).powi(2) + ((a / nx) as f64 + 0.5 - cy).powi(2);
                let db = ((b % nx) as f64 + 0.5 - cx).powi(2) + ((b / nx) as f64 + 0.5 - cy).powi(2);
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            })
            .ok_or(SealError::NoFreeSpawn)?;
        scene.spawn_cell = (spawn % nx, spawn / nx);
        scene.reachable = flood_fill(&scene.navigable, nx, ny, spawn);
        Ok(scene)
    }

    pub fn grid_size(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn cell(&self, x: usize, y: usize) -> Cell {
        match self.footprint[y * self.nx + x] {
            CODE_FREE => Cell::Free,
            CODE_WALL => Cell::Wall,
            c => Cell::Object(c - 2),
        }
    }

    pub fn cell_center(&self, x: usize, y: usize) -> (f64, f64) {
        ((x as f64 + 0.5) * CELL, (y as f64 + 0.5) * CELL)
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let cx = (x / CELL).floor();
        let cy = (y / CELL).floor();
        if cx < 0.0 || cy < 0.0 || cx >= self.nx as f64 || cy >= self.ny as f64 {
            return None;
        }
        Some((cx as usize, cy as usize))
    }

    pub fn is_navigable_cell(&self, x: usize, y: usize) -> bool {
        self.navigable[y * self.nx + x]
    }

    pub fn is_reachable_cell(&self, x: usize, y: usize) -> bool {
        self.reachable[y * self.nx + x]
    }

    /// True if a disc of radius `r` at `(x, y)` touches no wall or object.
    pub fn disc_is_free(&self, x: f64, y: f64, r: f64) -> bool {
        let x0 = ((x - r) / CELL).floor() as i64;
        let x1 = ((x + r) / CELL).floor() as i64;
        let y0 = ((y - r) / CELL).floor() as i64;
        let y1 = ((y + r) / CELL).floor() as i64;
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                if cx < 0 || cy < 0 || cx >= self.nx as i64 || cy >= self.ny as i64 {
                    return false;
                }
                if self.footprint[cy as usize * self.nx + cx as usize] == CODE_FREE {
                    continue;
                }
                let nx = x.clamp(cx as f64 * CELL, (cx + 1) as f64 * CELL);
                let ny = y.clamp(cy as f64 * CELL, (cy + 1) as f64 * CELL);
                if (nx - x).powi(2) + (ny - y).powi(2) < r * r {
                    return false;
                }
            }
        }
        true
    }

    /// Fraction of free floor cells reachable from the spawn cell.
    pub fn connectivity(&self) -> f64 {
        let free = self.footprint.iter().filter(|&&c| c == CODE_FREE).count();
        let reach = self.reachable.iter().filter(|&&r| r).count();
        if free == 0 {
            0.0
        } else {
            reach as f64 / free as f64
        }
    }

    /// Every object has a reachable cell within 0.5 m of its footprint.
    pub fn all_objects_observable(&self) -> bool {
        self.objects.iter().all(|o| self.object_observable(o))
    }

    fn object_observable(&self, o: &SceneObject) -> bool {
        let r = OBSERVE_RADIUS_CELLS;
        let x0 = (to_cells(o.min[0]) - r).max(0) as usize;
        let y0 = (to_cells(o.min[1]) - r).max(0) as usize;
        let x1 = ((to_cells(o.max[0]) + r) as usize).min(self.nx);
        let y1 = ((to_cells(o.max[1]) + r) as usize).min(self.ny);
        (y0..y1).any(|y| (x0..x1).any(|x| self.reachable[y * self.nx + x]))
    }

    pub fn spawn_cell(&self) -> (usize, usize) {
        self.spawn_cell
    }

    pub fn to_json(&self) -> Result<String> {
        let f = SceneFile {
            seed: self.seed,
            params: self.params.clone(),
            extents: self.extents,
            walls: self.walls.clone(),
            objects: self.objects.clone(),
        };
        Ok(serde_json::to_string_pretty(&f)?)
    }

    pub fn from_json(s: &str) -> Result<Scene> {
        let f: SceneFile = serde_json::from_str(s)?;
        Scene::from_parts(f.seed, f.params, f.extents, f.walls, f.objects)
    }
}

impl Rect {
    fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }
}

impl Rect {
    fn area(&self) -> i64 {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0) * (self.y1 - self.y0)
        }
    }
}

fn flood_fill(mask: &[bool], nx: usize, ny: usize, start: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    if !mask[start] {
        return out;
    }
    let mut q = VecDeque::from([start]);
    out[start] = true;
    while let Some(k) = q.pop_front() {
        let (x, y) = (k % nx, k / nx);
        let mut push = |n: usize| {
            if mask[n] && !out[n] {
                out[n] = true;
                q.push_back(n);
            }
        };
        if x > 0 {
            push(k - 1);
        }
        if x + 1 < nx {
            push(k + 1);
        }
        if y > 0 {
            push(k - nx);
        }
        if y + 1 < ny {
            push(k + nx);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub pose: Pose,
    pub collided_last_step: bool,
    pub step_count: u32,
}

/// Place the agent on a reachable cell near the scene center, facing east.
pub fn reset(scene: &Scene, seed: u64) -> Result<AgentState> {
    let (nx, ny) = (scene.nx, scene.ny);
    let (sx, sy) = scene.spawn_cell;
    if !scene.reachable[sy * nx + sx] {
        return Err(SealError::NoFreeSpawn);
    }
    let r = OBSERVE_RADIUS_CELLS;
    let mut candidates = Vec::new();
    for y in (sy as i64 - r).max(0)..(sy as i64 + r + 1).min(ny as i64) {
        for x in (sx as i64 - r).max(0)..(sx as i64 + r + 1).min(nx as i64) {
            let d2 = (x - sx as i64).pow(2) + (y - sy as i64).pow(2);
            if d2 <= r * r && scene.reachable[y as usize * nx + x as usize] {
                candidates.push((x as usize, y as usize));
            }
        }
    }
    let mut rng = rng_for(&[scene.seed, seed, tags::SPAWN]);
    let (x, y) = candidates[rng.gen_range(0..candidates.len())];
    let (px, py) = scene.cell_center(x, y);
    Ok(AgentState {
        pose: Pose::new(px, py, 0.0),
        collided_last_step: false,
        step_count: 0,
    })
}

/// Advance the agent by one action. Forward moves are all-or-nothing.
pub fn step(scene: &Scene, state: &AgentState, action: Action) -> AgentState {
    let mut next = *state;
    next.step_count += 1;
    next.collided_last_step = false;
    match action {
        Action::TurnLeft => next.pose = Pose::new(state.pose.x, state.pose.y, state.pose.theta + TURN_DEG),
        Action::TurnRight => next.pose = Pose::new(state.pose.x, state.pose.y, state.pose.theta - TURN_DEG),
        Action::Forward => {
            let [fx, fy] = state.pose.forward();
            let samples = (FORWARD_STEP / CELL).round() as usize;
            let clear = (1..=samples).all(|k| {
                let s = FORWARD_STEP * k as f64 / samples as f64;
                scene.disc_is_free(state.pose.x + s * fx, state.pose.y + s * fy, AGENT_RADIUS)
            });
            if clear {
                next.pose = Pose::new(
                    state.pose.x + FORWARD_STEP * fx,
                    state.pose.y + FORWARD_STEP * fy,
                    state.pose.theta,
                );
            } else {
                next.collided_last_step = true;
            }
        }
    }
    next
}

/// Rendered depth plus per-pixel ground-truth semantics.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub depth: DepthImage,
    /// 0 = background, else 1..=6.
    pub category: Vec<u8>,
    /// 0 = background, else the scene instance id.
    pub instance: Vec<u16>,
}

impl GroundTruthFrame {
    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }
}

/// What a ray hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hit {
    Floor,
    Ceiling,
    Wall,
    Object(u16),
}

impl Scene {
    /// First surface hit along a unit-direction ray, if any within `t_limit`
    /// meters. Returns the hit distance.
    pub fn cast(&self, o: [f64; 3], d: [f64; 3], t_limit: f64) -> Option<(f64, Hit)> {
        let lz = self.extents[2];
        let mut ix = (o[0] / CELL).floor() as i64;
        let mut iy = (o[1] / CELL).floor() as i64;
        let (nx, ny) = (self.nx as i64, self.ny as i64);
        let axis = |o: f64, d: f64, i: i64| -> (i64, f64, f64) {
            if d > 0.0 {
                (1, ((i + 1) as f64 * CELL - o) / d, CELL / d)
            } else if d < 0.0 {
                (-1, (i as f64 * CELL - o) / d, CELL / -d)
            } else {
                (0, f64::INFINITY, f64::INFINITY)
            }
        };
        let (sx, mut tx, dtx) = axis(o[0], d[0], ix);
        let (sy, mut ty, dty) = axis(o[1], d[1], iy);
        let t_floor = if d[2] < 0.0 { o[2] / -d[2] } else { f64::INFINITY };
        let t_ceil = if d[2] > 0.0 { (lz - o[2]) / d[2] } else { f64::INFINITY };
        let mut t0 = 0.0f64;
        loop {
            if ix < 0 || iy < 0 || ix >= nx || iy >= ny || t0 > t_limit {
                return None;
            }
            let t1 = tx.min(ty);
            let code = self.footprint[iy as usize * self.nx + ix as usize];
            let mut best: Option<(f64, Hit)> = None;
            let mut offer = |t: f64, h: Hit| {
                if t >= t0 && t <= t1 && best.is_none_or(|b| t < b.0) {
                    best = Some((t, h));
                }
            };
            offer(t_floor, Hit::Floor);
            offer(t_ceil, Hit::Ceiling);
            match code {
                CODE_FREE => {}
                CODE_WALL => offer(t0, Hit::Wall),
                c => {
                    let idx = c - 2;
                    let ob = &self.objects[idx as usize];
                    let (zb, zt) = (ob.min[2], ob.max[2]);
                    if d[2] == 0.0 {
                        if o[2] >= zb && o[2] <= zt {
                            offer(t0, Hit::Object(idx));
                        }
                    } else {
                        let ta = (zb - o[2]) / d[2];
                        let tb = (zt - o[2]) / d[2];
                        let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
                        if hi >= t0 && lo <= t1 {
                            offer(lo.max(t0), Hit::Object(idx));
                        }
                    }
                }
            }
            if let Some(b) = best {
                return if b.0 <= t_limit { Some(b) } else { None };
            }
            if !t1.is_finite() {
                return None;
            }
            if tx <= t1 {
                ix += sx;
                tx += dtx;
            }
            if ty <= t1 {
                iy += sy;
                ty += dty;
            }
            t0 = t1;
        }
    }
}

/// Non-free run of cells along a horizontal line, in horizontal distance.
#[derive(Debug, Clone, Copy)]
struct Span {
    s0: f64,
    s1: f64,
    code: u16,
}

impl Scene {
    /// Occupied spans crossed by a horizontal ray up to the first wall or
    /// `s_max`. Consecutive cells of the same object are merged.
    fn column_spans(&self, ox: f64, oy: f64, hx: f64, hy: f64, s_max: f64, out: &mut Vec<Span>) {
        out.clear();
        let mut ix = (ox / CELL).floor() as i64;
        let mut iy = (oy / CELL).floor() as i64;
        let (nx, ny) = (self.nx as i64, self.ny as i64);
        let axis = |o: f64, d: f64, i: i64| -> (i64, f64, f64) {
            if d > 0.0 {
                (1, ((i + 1) as f64 * CELL - o) / d, CELL / d)
            } else if d < 0.0 {
                (-1, (i as f64 * CELL - o) / d, CELL / -d)
            } else {
                (0, f64::INFINITY, f64::INFINITY)
            }
        };
        let (sx, mut tx, dtx) = axis(ox, hx, ix);
        let (sy, mut ty, dty) = axis(oy, hy, iy);
        let mut s0 = 0.0f64;
        while ix >= 0 && iy >= 0 && ix < nx && iy < ny && s0 <= s_max {
            let s1 = tx.min(ty);
            let code = self.footprint[iy as usize * self.nx + ix as usize];
            if code != CODE_FREE {
                match out.last_mut() {
                    Some(last) if last.code == code && last.s1 >= s0 => last.s1 = s1,
                    _ => out.push(Span { s0, s1, code }),
                }
                if code == CODE_WALL {
                    return;
                }
            }
            if !s1.is_finite() {
                return;
            }
            if tx <= s1 {
                ix += sx;
                tx += dtx;
            }
            if ty <= s1 {
                iy += sy;
                ty += dty;
            }
            s0 = s1;
        }
    }
}

/// Ray-cast depth and ground-truth semantics from the agent camera.
///
/// Pixels of one image column share a horizontal direction, so the floor
/// raster is traversed once per column and each pixel only resolves its
/// vertical slope against that column's occupied spans.
pub fn render(scene: &Scene, pose: &Pose, cam: &CameraModel) -> GroundTruthFrame {
    let n = cam.pixels();
    let mut depth = DepthImage::new(cam.width, cam.height, cam.depth_max as f32);
    let mut category = vec![0u8; n];
    let mut instance = vec![0u16; n];
    let (sn, cs) = pose.heading_rad().sin_cos();
    let f = cam.focal();
    let h = cam.height_m;
    let lz = scene.extents[2];
    let mut spans = Vec::new();
    for col in 0..cam.width {
        let (u, _) = cam.pixel_offset(0, col);
        let lat = -u / f;
        let hn = (1.0 + lat * lat).sqrt();
        let hx = (cs - sn * lat) / hn;
        let hy = (sn + cs * lat) / hn;
        // Horizontal distance per unit of planar depth.
        let s_max = cam.depth_max * hn;
        scene.column_spans(pose.x, pose.y, hx, hy, s_max, &mut spans);
        for row in 0..cam.height {
            let (_, v) = cam.pixel_offset(row, col);
            let k = (-v / f) / hn;
            let s_floor = if k < 0.0 { h / -k } else { f64::INFINITY };
            let s_ceil = if k > 0.0 { (lz - h) / k } else { f64::INFINITY };
            let s_sky = s_floor.min(s_ceil);
            let mut hit: Option<(f64, u16)> = None;
            for sp in &spans {
                if sp.s0 > s_sky {
                    break;
                }
                if sp.code == CODE_WALL {
                    hit = Some((sp.s0, CODE_WALL));
                    break;
                }
                let ob = &scene.objects[(sp.code - 2) as usize];
                let (zb, zt) = (ob.min[2], ob.max[2]);
                let entry = if k == 0.0 {
                    (h >= zb && h <= zt).then_some(sp.s0)
                } else {
                    let a = (zb - h) / k;
                    let b = (zt - h) / k;
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    (hi >= sp.s0 && lo <= sp.s1).then(|| lo.max(sp.s0))
                };
                if let Some(e) = entry {
                    if e <= s_sky {
                        hit = Some((e, sp.code));
                        break;
                    }
                }
            }
            let (s_hit, code) = match hit {
                Some(x) => x,
                None if s_sky.is_finite() => (s_sky, CODE_FREE),
                None => continue,
            };
            if s_hit > s_max {
                continue;
            }
            let idx = row * cam.width + col;
            depth.data[idx] = (s_hit / hn).clamp(cam.depth_min, cam.depth_max) as f32;
            if code >= 2 {
                let ob = &scene.objects[(code - 2) as usize];
                category[idx] = ob.category;
                instance[idx] = ob.instance;
            }
        }
    }
    GroundTruthFrame {
        depth,
        category,
        instance,
    }
}

/// Write depth as a 16-bit binary PGM in millimeters.
pub fn write_depth_pgm(path: &Path, depth: &DepthImage) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n65535\n", depth.width, depth.height).into_bytes();
    for &d in &depth.data {
        let mm = (d as f64 * 1000.0).round().clamp(0.0, 65535.0) as u16;
        buf.extend_from_slice(&mm.to_be_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub const CATEGORY_COLORS: [[u8; 3]; NUM_CATEGORIES + 1] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
];

/// Write a category image as a binary PPM.
pub fn write_semantic_ppm(path: &Path, width: usize, height: usize, category: &[u8]) -> Result<()> {
    let mut buf = format!("P6\n{} {}\n255\n", width, height).into_bytes();
    for &c in category.iter().take(width * height) {
        buf.extend_from_slice(&CATEGORY_COLORS[(c as usize).min(NUM_CATEGORIES)]);
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_room() -> Scene {
        let params = SceneParams {
            num_rooms: 1,
            objects_per_room: 0,
            extents: [6.4, 6.4, 3.2],
        };
        generate_scene(7, &params).unwrap()
    }

    #[test]
    fn deterministic_generation() {
        let p = SceneParams::default();
        let a = generate_scene(11, &p).unwrap().to_json().unwrap();
        let b = generate_scene(11, &p).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let c = generate_scene(12, &p).unwrap().to_json().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_room_has_no_objects() {
        let s = empty_room();
        assert!(s.objects.is_empty());
        assert_eq!(s.walls.len(), 4);
        assert!(s.connectivity() > 0.9);
    }

    #[test]
    fn json_round_trip() {
        let s = generate_scene(3, &SceneParams::default()).unwrap();
        let back = Scene::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back.objects, s.objects);
        assert_eq!(back.footprint, s.footprint);
    }

    #[test]
    fn forward_and_turns() {
        let s = empty_room();
        let st = AgentState {
            pose: Pose::new(2.0, 2.0, 0.0),
            collided_last_step: false,
            step_count: 0,
        };
        let f = step(&s, &st, Action::Forward);
        assert!((f.pose.x - 2.25).abs() < 1e-12 && (f.pose.y - 2.0).abs() < 1e-12);
        assert_eq!(f.step_count, 1);
        let mut t = st;
        for _ in 0..12 {
            t = step(&s, &t, Action::TurnLeft);
        }
        assert_eq!(t.pose.theta, 0.0);
        assert_eq!(t.step_count, 12);
    }

    #[test]
    fn forward_into_wall_is_clamped() {
        let s = empty_room();
        // inner face of the east wall is at 6.3 m; agent edge 0.1 m from it
        let st = AgentState {
            pose: Pose::new(6.1, 3.0, 0.0),
            collided_last_step: false,
            step_count: 0,
        };
        let n = step(&s, &st, Action::Forward);
        assert_eq!(n.pose, st.pose);
        assert!(n.collided_last_step);
    }

    #[test]
    fn wall_one_meter_ahead() {
        let s = empty_room();
        let cam = CameraModel {
            width: 33,
            height: 33,
            ..CameraModel::default()
        };
        let f = render(&s, &Pose::new(5.3, 3.0, 0.0), &cam);
        let c = 16 * 33 + 16;
        assert!((f.depth.data[c] - 1.0).abs() < 1e-6);
        assert_eq!(f.category[c], 0);
    }

    #[test]
    fn reset_faces_east_on_reachable_cell() {
        let s = generate_scene(5, &SceneParams::default()).unwrap();
        let a = reset(&s, 1).unwrap();
        assert_eq!(a.pose.theta, 0.0);
        assert_eq!(a.step_count, 0);
        let (cx, cy) = s.cell_of(a.pose.x, a.pose.y).unwrap();
        assert!(s.is_reachable_cell(cx, cy));
        assert_eq!(reset(&s, 1).unwrap(), a);
    }
}
