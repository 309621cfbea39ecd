//! Poses, the pinhole camera, point clouds and voxel ray traversal.
//!
//! Frames: the agent frame has +x forward, +y left and +z up with the origin
//! on the floor below the agent. The camera sits at `(0, 0, height_m)` and
//! looks along +x. World and map frames share the same axis convention.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SealError};

/// Wrap an angle in degrees into `[0, 360)`.
pub fn normalize_degrees(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Planar agent pose. `theta` is the heading in degrees, counter-clockwise
/// from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_degrees(theta),
        }
    }

    pub fn heading_rad(&self) -> f64 {
        self.theta.to_radians()
    }

    /// Unit heading vector in the horizontal plane.
    pub fn forward(&self) -> [f64; 2] {
        let (s, c) = self.heading_rad().sin_cos();
        [c, s]
    }

    /// Map an agent-frame point into the frame the pose is expressed in.
    pub fn to_parent(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.heading_rad().sin_cos();
        [c * p[0] - s * p[1] + self.x, s * p[0] + c * p[1] + self.y, p[2]]
    }

    /// Inverse of [`Pose::to_parent`].
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.heading_rad().sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy, p[2]]
    }

    /// Express `self` (a pose in the parent frame) relative to `origin`.
    pub fn relative_to(&self, origin: &Pose) -> Pose {
        let p = origin.to_local([self.x, self.y, 0.0]);
        Pose::new(p[0], p[1], self.theta - origin.theta)
    }
}

/// Pinhole depth camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    pub height_m: f64,
    pub depth_min: f64,
    pub depth_max: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            hfov_deg: 90.0,
            height_m: 0.88,
            depth_min: 0.25,
            depth_max: 5.0,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(SealError::Config("camera width and height must be >= 1".into()));
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(SealError::Config(format!("hfov {} outside (0, 180)", self.hfov_deg)));
        }
        if !(self.depth_min >= 0.0 && self.depth_min < self.depth_max && self.depth_max.is_finite()) {
            return Err(SealError::Config("need 0 <= depth_min < depth_max".into()));
        }
        if !self.height_m.is_finite() {
            return Err(SealError::Config("camera height must be finite".into()));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    /// Offsets of a pixel center from the principal point, `(u, v)` with u
    /// growing rightwards and v growing downwards.
    pub fn pixel_offset(&self, row: usize, col: usize) -> (f64, f64) {
        (
            col as f64 + 0.5 - self.width as f64 / 2.0,
            row as f64 + 0.5 - self.height as f64 / 2.0,
        )
    }

    /// Ray through a pixel center in the agent frame, scaled so that its
    /// forward component is 1. Multiplying by planar depth gives the offset
    /// from the camera center.
    pub fn pixel_ray(&self, row: usize, col: usize) -> [f64; 3] {
        let f = self.focal();
        let (u, v) = self.pixel_offset(row, col);
        [1.0, -u / f, -v / f]
    }

    /// Project an agent-frame point to continuous `(col, row)` pixel
    /// coordinates (pixel centers at `k + 0.5`). None behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        let d = p[0];
        if d <= 0.0 {
            return None;
        }
        let f = self.focal();
        let u = -p[1] * f / d;
        let v = -(p[2] - self.height_m) * f / d;
        Some((u + self.width as f64 / 2.0, v + self.height as f64 / 2.0))
    }

    /// Depth readings at or beyond the clamp limits carry no geometry: the
    /// renderer saturates misses to `depth_max` and too-close hits to
    /// `depth_min`.
    pub fn is_valid_depth(&self, d: f32) -> bool {
        let d = d as f64;
        d.is_finite() && d > self.depth_min && d < self.depth_max
    }
}

/// Planar depth (distance along the optical axis) in meters, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, fill: f32) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn check_camera(&self, cam: &CameraModel) -> Result<()> {
        if self.width != cam.width || self.height != cam.height || self.data.len() != cam.pixels() {
            return Err(SealError::DimensionMismatch {
                expected: (cam.height, cam.width),
                found: (self.height, self.width),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub p: [f64; 3],
    /// Row-major index of the source pixel.
    pub pixel: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Back-project valid depth pixels into the agent frame.
pub fn depth_to_pointcloud(depth: &DepthImage, cam: &CameraModel) -> Result<PointCloud> {
    depth.check_camera(cam)?;
    let f = cam.focal();
    let mut points = Vec::with_capacity(depth.data.len());
    for row in 0..cam.height {
        let v = row as f64 + 0.5 - cam.height as f64 / 2.0;
        for col in 0..cam.width {
            let idx = row * cam.width + col;
            let d = depth.data[idx];
            if !cam.is_valid_depth(d) {
                continue;
            }
            let d = d as f64;
            let u = col as f64 + 0.5 - cam.width as f64 / 2.0;
            points.push(CloudPoint {
                p: [d, -d * u / f, cam.height_m - d * v / f],
                pixel: idx as u32,
            });
        }
    }
    Ok(PointCloud { points })
}

pub fn ego_to_geo(cloud: &PointCloud, pose: &Pose) -> PointCloud {
    PointCloud {
        points: cloud
            .points
            .iter()
            .map(|q| CloudPoint {
                p: pose.to_parent(q.p),
                pixel: q.pixel,
            })
            .collect(),
    }
}

pub fn geo_to_ego(cloud: &PointCloud, pose: &Pose) -> PointCloud {
    PointCloud {
        points: cloud
            .points
            .iter()
            .map(|q| CloudPoint {
                p: pose.to_local(q.p),
                pixel: q.pixel,
            })
            .collect(),
    }
}

/// Axis-aligned voxel grid anchored at the coordinate origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub voxel_size: f64,
}

/// One cell visited by a ray with its entry and exit distance in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayCell {
    pub cell: [usize; 3],
    pub t_enter: f64,
    pub t_exit: f64,
}

// Crossings closer than this are merged into a single step so that a ray
// through an edge or corner does not report cells it only grazes.
const TIE_EPS: f64 = 1e-12;

/// Streaming Amanatides-Woo traversal.
#[derive(Debug, Clone)]
pub struct VoxelRay {
    cell: [i64; 3],
    step: [i64; 3],
    t_max: [f64; 3],
    t_delta: [f64; 3],
    t: f64,
    max_dist: f64,
    dims: [i64; 3],
    done: bool,
}

impl VoxelRay {
    /// `origin` in meters, `dir` a unit vector. The ray stops when it leaves
    /// the grid or after `max_dist` meters.
    pub fn new(origin: [f64; 3], dir: [f64; 3], grid: &GridSpec, max_dist: f64) -> Result<Self> {
        let vs = grid.voxel_size;
        let mut cell = [0i64; 3];
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        let dims = [grid.dims[0] as i64, grid.dims[1] as i64, grid.dims[2] as i64];
        let mut inside = true;
        for a in 0..3 {
            let o = origin[a] / vs;
            if !o.is_finite() || o < -1e-9 || o > dims[a] as f64 + 1e-9 {
                return Err(SealError::OriginOutsideGrid(origin));
            }
            let o = o.clamp(0.0, dims[a] as f64);
            let mut c = o.floor();
            // On a face, a ray heading down belongs to the lower cell.
            if o == c && dir[a] < 0.0 {
                c -= 1.0;
            }
            cell[a] = c as i64;
            if dir[a] > 0.0 {
                step[a] = 1;
                t_delta[a] = vs / dir[a];
                t_max[a] = (c + 1.0 - o) * vs / dir[a];
            } else if dir[a] < 0.0 {
                step[a] = -1;
                t_delta[a] = vs / -dir[a];
                t_max[a] = (o - c) * vs / -dir[a];
            }
            if cell[a] < 0 || cell[a] >= dims[a] {
                inside = false;
            }
        }
        Ok(Self {
            cell,
            step,
            t_max,
            t_delta,
            t: 0.0,
            max_dist,
            dims,
            done: !inside || max_dist <= 0.0,
        })
    }
}

impl Iterator for VoxelRay {
    type Item = RayCell;

    fn next(&mut self) -> Option<RayCell> {
        if self.done {
            return None;
        }
        let t_next = self.t_max[0].min(self.t_max[1]).min(self.t_max[2]);
        let out = RayCell {
            cell: [self.cell[0] as usize, self.cell[1] as usize, self.cell[2] as usize],
            t_enter: self.t,
            t_exit: t_next.min(self.max_dist),
        };
        if t_next >= self.max_dist || !t_next.is_finite() {
            self.done = true;
            return Some(out);
        }
        for a in 0..3 {
            if self.t_max[a] <= t_next + TIE_EPS {
                self.cell[a] += self.step[a];
                self.t_max[a] += self.t_delta[a];
                if self.cell[a] < 0 || self.cell[a] >= self.dims[a] {
                    self.done = true;
                }
            }
        }
        self.t = t_next;
        Some(out)
    }
}

/// Ordered list of cells crossed by a ray, from the origin until grid exit or
/// `max_dist`.
pub fn traverse_ray(
    origin: [f64; 3],
    dir: [f64; 3],
    grid: &GridSpec,
    max_dist: f64,
) -> Result<Vec<[usize; 3]>> {
    let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    if (n - 1.0).abs() > 1e-9 {
        return Err(SealError::InvalidArgument(format!("ray direction norm {n} is not 1")));
    }
    Ok(VoxelRay::new(origin, dir, grid, max_dist)?.map(|c| c.cell).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_pixel_on_principal_ray() {
        // Even-sized images have no exact center pixel; a 129-wide camera does.
        let cam = CameraModel {
            width: 129,
            height: 129,
            ..CameraModel::default()
        };
        let mut depth = DepthImage::new(129, 129, 0.0);
        depth.data[64 * 129 + 64] = 2.0;
        let cloud = depth_to_pointcloud(&depth, &cam).unwrap();
        assert_eq!(cloud.len(), 1);
        let p = cloud.points[0].p;
        assert!((p[0] - 2.0).abs() < 1e-12);
        assert!(p[1].abs() < 1e-12);
        assert!((p[2] - 0.88).abs() < 1e-12);
    }

    #[test]
    fn invalid_pixels_are_skipped() {
        let cam = CameraModel::default();
        let depth = DepthImage::new(128, 128, 0.0);
        assert!(depth_to_pointcloud(&depth, &cam).unwrap().is_empty());
        let depth = DepthImage::new(128, 128, 5.0);
        assert!(depth_to_pointcloud(&depth, &cam).unwrap().is_empty());
    }

    #[test]
    fn shape_mismatch() {
        let cam = CameraModel::default();
        let depth = DepthImage::new(64, 128, 1.0);
        assert!(matches!(
            depth_to_pointcloud(&depth, &cam),
            Err(SealError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pose_rotation_example() {
        let cloud = PointCloud {
            points: vec![CloudPoint { p: [3.0, 0.0, 1.0], pixel: 0 }],
        };
        let out = ego_to_geo(&cloud, &Pose::new(1.0, 2.0, 90.0));
        let p = out.points[0].p;
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 5.0).abs() < 1e-12 && p[2] == 1.0);
        let same = ego_to_geo(&cloud, &Pose::new(0.0, 0.0, 0.0));
        assert_eq!(same, cloud);
    }

    #[test]
    fn heading_normalization() {
        assert_eq!(Pose::new(0.0, 0.0, 360.0).theta, 0.0);
        assert_eq!(Pose::new(0.0, 0.0, -30.0).theta, 330.0);
        assert_eq!(normalize_degrees(-1e-18), 0.0);
    }

    #[test]
    fn axis_ray_from_center() {
        let grid = GridSpec { dims: [10, 10, 10], voxel_size: 0.05 };
        let cells = traverse_ray([0.125, 0.125, 0.125], [1.0, 0.0, 0.0], &grid, 10.0).unwrap();
        let xs: Vec<usize> = cells.iter().map(|c| c[0]).collect();
        assert_eq!(xs, (2..10).collect::<Vec<_>>());
        assert!(cells.iter().all(|c| c[1] == 2 && c[2] == 2));
    }

    #[test]
    fn outward_ray_on_face_is_empty() {
        let grid = GridSpec { dims: [10, 10, 10], voxel_size: 0.05 };
        let cells = traverse_ray([0.0, 0.2, 0.2], [-1.0, 0.0, 0.0], &grid, 10.0).unwrap();
        assert!(cells.is_empty());
        let cells = traverse_ray([0.5, 0.2, 0.2], [1.0, 0.0, 0.0], &grid, 10.0).unwrap();
        assert!(cells.is_empty());
    }

    #[test]
    fn origin_outside_is_error() {
        let grid = GridSpec { dims: [10, 10, 10], voxel_size: 0.05 };
        assert!(matches!(
            traverse_ray([-0.1, 0.2, 0.2], [1.0, 0.0, 0.0], &grid, 10.0),
            Err(SealError::OriginOutsideGrid(_))
        ));
    }

    #[test]
    fn diagonal_through_corners_skips_grazed_cells() {
        let grid = GridSpec { dims: [10, 10, 1], voxel_size: 1.0 };
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let cells = traverse_ray([0.5, 0.5, 0.5], [s, s, 0.0], &grid, 100.0).unwrap();
        let expect: Vec<[usize; 3]> = (0..10).map(|i| [i, i, 0]).collect();
        assert_eq!(cells, expect);
    }

    #[test]
    fn diagonal_off_center_alternates() {
        let grid = GridSpec { dims: [6, 6, 1], voxel_size: 1.0 };
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let cells = traverse_ray([0.3, 0.6, 0.5], [s, s, 0.0], &grid, 100.0).unwrap();
        for w in cells.windows(2) {
            let dx = w[1][0] - w[0][0];
            let dy = w[1][1] - w[0][1];
            assert_eq!(dx + dy, 1);
        }
        // y crosses first since it starts closer to its next face
        assert_eq!(cells[1], [0, 1, 0]);
        assert_eq!(cells[2], [1, 1, 0]);
    }
}
