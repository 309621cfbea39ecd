//! Instance labeling of the fused map and label transfer back to frames.

use std::collections::VecDeque;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SealError};
use crate::geometry::{CameraModel, DepthImage, GridSpec, Pose, VoxelRay};
use crate::perception::IGNORE_LABEL;
use crate::semmap::SemanticVoxelMap;

/// Morphology thresholds in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelParams {
    /// Components smaller than this are dropped.
    pub min_object_voxels: usize,
    /// Enclosed cavities smaller than this are filled.
    pub max_hole_voxels: usize,
}

impl LabelParams {
    /// 0.025 m^3 minimum object and 0.25 m^3 maximum hole.
    pub fn for_voxel_size(vs: f64) -> Self {
        let v = vs * vs * vs;
        Self {
            min_object_voxels: (0.025 / v).round() as usize,
            max_hole_voxels: (0.25 / v).round() as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub id: u32,
    pub category: u8,
    pub voxels: usize,
    pub min: [usize; 3],
    pub max: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstanceMap {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: Pose,
    /// Instance id per voxel, x fastest; 0 = unlabeled.
    pub instance: Vec<u32>,
    /// Entry `i` describes instance `i + 1`.
    pub instances: Vec<InstanceInfo>,
    /// Occupancy of the source map, same layout as `instance`.
    pub occupied: Vec<bool>,
}

impl LabeledInstanceMap {
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn instance_at(&self, x: usize, y: usize, z: usize) -> u32 {
        self.instance[self.index(x, y, z)]
    }

    pub fn category_of(&self, id: u32) -> u8 {
        if id == 0 {
            0
        } else {
            self.instances[id as usize - 1].category
        }
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            dims: self.dims,
            voxel_size: self.voxel_size,
        }
    }

    /// Map-frame coordinates of the grid corner.
    pub fn grid_corner(&self) -> [f64; 3] {
        [
            -((self.dims[0] / 2) as f64) * self.voxel_size,
            -((self.dims[1] / 2) as f64) * self.voxel_size,
            0.0,
        ]
    }
}

const N6: [[i64; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

fn n26() -> Vec<[i64; 3]> {
    let mut v = Vec::with_capacity(26);
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                if (dx, dy, dz) != (0, 0, 0) {
                    v.push([dx, dy, dz]);
                }
            }
        }
    }
    v
}

/// Connected components of `mask` on a `d`-shaped box. Labels start at 1 in
/// scan order; returns (labels, sizes indexed by label - 1).
pub fn connected_components(mask: &[bool], d: [usize; 3], offsets: &[[i64; 3]]) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; mask.len()];
    let mut sizes = Vec::new();
    let mut q = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        labels[start] = id;
        q.push_back(start);
        let mut size = 0;
        while let Some(k) = q.pop_front() {
            size += 1;
            let x = (k % d[0]) as i64;
            let y = ((k / d[0]) % d[1]) as i64;
            let z = (k / (d[0] * d[1])) as i64;
            for o in offsets {
                let (nx, ny, nz) = (x + o[0], y + o[1], z + o[2]);
                if nx < 0 || ny < 0 || nz < 0 || nx >= d[0] as i64 || ny >= d[1] as i64 || nz >= d[2] as i64 {
                    continue;
                }
                let n = (nz as usize * d[1] + ny as usize) * d[0] + nx as usize;
                if mask[n] && labels[n] == 0 {
                    labels[n] = id;
                    q.push_back(n);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Per-voxel category: argmax above `s_hat`, lowest index on ties, 0 else.
pub fn classify_voxels(map: &SemanticVoxelMap, s_hat: f32) -> Vec<u8> {
    let n = map.dims.spatial();
    let data = map.data();
    let mut best = vec![0.0f32; n];
    let mut class = vec![0u8; n];
    for c in 1..map.dims.channels {
        let ch = &data[c * n..(c + 1) * n];
        for i in 0..n {
            if ch[i] > best[i] {
                best[i] = ch[i];
                class[i] = c as u8;
            }
        }
    }
    for i in 0..n {
        if best[i] <= s_hat {
            class[i] = 0;
        }
    }
    class
}

pub fn label_map(map: &SemanticVoxelMap, s_hat: f32) -> LabeledInstanceMap {
    label_map_with(map, s_hat, &LabelParams::for_voxel_size(map.voxel_size))
}

pub fn label_map_with(map: &SemanticVoxelMap, s_hat: f32, params: &LabelParams) -> LabeledInstanceMap {
    let class = classify_voxels(map, s_hat);
    let dims = [map.dims.length, map.dims.width, map.dims.height];
    let (instance, instances) = label_classes(&class, dims, map.dims.channels - 1, params);
    LabeledInstanceMap {
        dims,
        voxel_size: map.voxel_size,
        origin: map.origin,
        instance,
        instances,
        occupied: map.data()[..map.dims.spatial()].iter().map(|&v| v > 0.0).collect(),
    }
}

/// Morphological instance labeling of a category volume.
pub fn label_classes(
    class: &[u8],
    dims: [usize; 3],
    categories: usize,
    params: &LabelParams,
) -> (Vec<u32>, Vec<InstanceInfo>) {
    let nb26 = n26();
    let mut instance = vec![0u32; class.len()];
    let mut table: Vec<InstanceInfo> = Vec::new();
    let gidx = |x: usize, y: usize, z: usize| (z * dims[1] + y) * dims[0] + x;

    for cat in 1..=categories as u8 {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (i, &c) in class.iter().enumerate() {
            if c == cat {
                any = true;
                let p = [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])];
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
        }
        if !any {
            continue;
        }
        // Local box with a 2-voxel margin: room for dilation and for the
        // exterior to wrap around the mask.
        const M: usize = 2;
        let d = [hi[0] - lo[0] + 1 + 2 * M, hi[1] - lo[1] + 1 + 2 * M, hi[2] - lo[2] + 1 + 2 * M];
        let n = d[0] * d[1] * d[2];
        let to_global = |k: usize| -> Option<usize> {
            let x = (k % d[0]) as i64 + lo[0] as i64 - M as i64;
            let y = ((k / d[0]) % d[1]) as i64 + lo[1] as i64 - M as i64;
            let z = (k / (d[0] * d[1])) as i64 + lo[2] as i64 - M as i64;
            if x < 0 || y < 0 || z < 0 || x >= dims[0] as i64 || y >= dims[1] as i64 || z >= dims[2] as i64 {
                None
            } else {
                Some(gidx(x as usize, y as usize, z as usize))
            }
        };
        let globals: Vec<Option<usize>> = (0..n).map(to_global).collect();
        let mut mask: Vec<bool> = globals.iter().map(|g| g.is_some_and(|g| class[g] == cat)).collect();

        // Remove small objects.
        let (comp, sizes) = connected_components(&mask, d, &nb26);
        for k in 0..n {
            if mask[k] && sizes[comp[k] as usize - 1] < params.min_object_voxels {
                mask[k] = false;
            }
        }
        if !mask.iter().any(|&m| m) {
            continue;
        }

        // Fill enclosed background cavities bounded by one component.
        let (comp, _) = connected_components(&mask, d, &nb26);
        let outside: Vec<bool> = mask.iter().map(|&m| !m).collect();
        let (holes, hole_sizes) = connected_components(&outside, d, &N6);
        let mut fillable = vec![true; hole_sizes.len()];
        let mut owner: Vec<u32> = vec![0; hole_sizes.len()];
        for k in 0..n {
            let h = holes[k];
            if h == 0 {
                continue;
            }
            let hi_ = h as usize - 1;
            if !fillable[hi_] {
                continue;
            }
            let x = k % d[0];
            let y = (k / d[0]) % d[1];
            let z = k / (d[0] * d[1]);
            let on_border = x == 0 || y == 0 || z == 0 || x + 1 == d[0] || y + 1 == d[1] || z + 1 == d[2];
            let bg = globals[k].is_some_and(|g| class[g] == 0);
            if on_border || !bg || hole_sizes[hi_] >= params.max_hole_voxels {
                fillable[hi_] = false;
                continue;
            }
            for o in &N6 {
                let nk = ((z as i64 + o[2]) as usize * d[1] + (y as i64 + o[1]) as usize) * d[0] + (x as i64 + o[0]) as usize;
                let c = comp[nk];
                if c != 0 {
                    if owner[hi_] == 0 {
                        owner[hi_] = c;
                    } else if owner[hi_] != c {
                        fillable[hi_] = false;
                    }
                }
            }
        }
        for k in 0..n {
            let h = holes[k];
            if h != 0 && fillable[h as usize - 1] {
                mask[k] = true;
            }
        }

        // Dilate for grouping, label with face connectivity.
        let mut dil = mask.clone();
        for k in 0..n {
            if !mask[k] {
                continue;
            }
            let x = (k % d[0]) as i64;
            let y = ((k / d[0]) % d[1]) as i64;
            let z = (k / (d[0] * d[1])) as i64;
            for o in &nb26 {
                let (nx, ny, nz) = (x + o[0], y + o[1], z + o[2]);
                if nx < 0 || ny < 0 || nz < 0 || nx >= d[0] as i64 || ny >= d[1] as i64 || nz >= d[2] as i64 {
                    continue;
                }
                dil[(nz as usize * d[1] + ny as usize) * d[0] + nx as usize] = true;
            }
        }
        let (groups, _) = connected_components(&dil, d, &N6);
        let base = table.len() as u32;
        let mut remap: Vec<u32> = Vec::new();
        for k in 0..n {
            if !mask[k] {
                continue;
            }
            let Some(g) = globals[k] else { continue };
            let grp = groups[k] as usize;
            if remap.len() < grp {
                remap.resize(grp, 0);
            }
            if remap[grp - 1] == 0 {
                table.push(InstanceInfo {
                    id: table.len() as u32 + 1,
                    category: cat,
                    voxels: 0,
                    min: [usize::MAX; 3],
                    max: [0; 3],
                });
                remap[grp - 1] = table.len() as u32;
            }
            let id = remap[grp - 1];
            debug_assert!(id > base);
            instance[g] = id;
            let info = &mut table[id as usize - 1];
            info.voxels += 1;
            let p = [g % dims[0], (g / dims[0]) % dims[1], g / (dims[0] * dims[1])];
            for a in 0..3 {
                info.min[a] = info.min[a].min(p[a]);
                info.max[a] = info.max[a].max(p[a]);
            }
        }
    }
    (instance, table)
}

/// Per-pixel labels transferred from the instance map.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabels {
    pub width: usize,
    pub height: usize,
    pub instance: Vec<u32>,
    pub category: Vec<u8>,
    /// Ray length to the labeled voxel entry, NaN where unlabeled.
    pub hit_distance: Vec<f32>,
    /// Pixels without map support: no valid depth reading, or a surface
    /// outside the map footprint. Their label is unknown rather than
    /// background.
    pub unknown: Vec<bool>,
}

impl FrameLabels {
    /// Per-pixel category with [`IGNORE_LABEL`] where the map has no
    /// coverage.
    pub fn training_labels(&self) -> Vec<u8> {
        self.category
            .iter()
            .zip(&self.unknown)
            .map(|(&c, &o)| if o { IGNORE_LABEL } else { c })
            .collect()
    }
}

/// Half-width of the search window around the measured surface, in voxels.
pub const DEPTH_GUARD_VOXELS: f64 = 2.0;

/// Ray-trace each pixel through the labeled map. A pixel takes the label of
/// the voxel containing its measured surface point; if that voxel was never
/// observed, the first labeled voxel within two voxels of the surface along
/// the ray is used instead. Labels thus never leak through occluders or onto
/// observed background around an object's silhouette. Pixels without a valid depth reading are marked unknown.
pub fn get_labels(labeled: &LabeledInstanceMap, pose: &Pose, depth: &DepthImage, cam: &CameraModel) -> Result<FrameLabels> {
    depth.check_camera(cam)?;
    let n = cam.pixels();
    let mut out = FrameLabels {
        width: cam.width,
        height: cam.height,
        instance: vec![0; n],
        category: vec![0; n],
        hit_distance: vec![f32::NAN; n],
        unknown: vec![false; n],
    };
    let rel = pose.relative_to(&labeled.origin);
    let corner = labeled.grid_corner();
    let cam_map = rel.to_parent([0.0, 0.0, cam.height_m]);
    let origin = [cam_map[0] - corner[0], cam_map[1] - corner[1], cam_map[2] - corner[2]];
    let (s, c) = rel.heading_rad().sin_cos();
    let grid = labeled.grid();
    let guard = DEPTH_GUARD_VOXELS * labeled.voxel_size;
    let extent = [
        grid.dims[0] as f64 * grid.voxel_size,
        grid.dims[1] as f64 * grid.voxel_size,
        grid.dims[2] as f64 * grid.voxel_size,
    ];
    for row in 0..cam.height {
        for col in 0..cam.width {
            let p = row * cam.width + col;
            let dval = depth.data[p];
            if !cam.is_valid_depth(dval) {
                out.unknown[p] = true;
                continue;
            }
            let r = cam.pixel_ray(row, col);
            let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            let dir = [(c * r[0] - s * r[1]) / norm, (s * r[0] + c * r[1]) / norm, r[2] / norm];
            let t_surf = dval as f64 * norm;
            if (0..2).any(|a| {
                let v = origin[a] + dir[a] * t_surf;
                v < 0.0 || v >= extent[a]
            }) {
                out.unknown[p] = true;
                continue;
            }
            if labeled.instances.is_empty() {
                continue;
            }
            // The voxel holding the measured surface decides when the map
            // observed it; the window only bridges unobserved voxels.
            let surf = [origin[0] + dir[0] * t_surf, origin[1] + dir[1] * t_surf, (origin[2] + dir[2] * t_surf).max(0.0)];
            let cell = [
                (surf[0] / labeled.voxel_size).floor() as usize,
                (surf[1] / labeled.voxel_size).floor() as usize,
                ((surf[2] / labeled.voxel_size).floor() as usize).min(labeled.dims[2] - 1),
            ];
            if cell[0] < labeled.dims[0] && cell[1] < labeled.dims[1] {
                let k = labeled.index(cell[0], cell[1], cell[2]);
                let id = labeled.instance[k];
                if id != 0 {
                    out.instance[p] = id;
                    out.category[p] = labeled.category_of(id);
                    out.hit_distance[p] = t_surf as f32;
                    continue;
                }
                if labeled.occupied[k] {
                    continue;
                }
            }
            let t0 = (t_surf - guard).max(0.0);
            let start = [origin[0] + dir[0] * t0, origin[1] + dir[1] * t0, origin[2] + dir[2] * t0];
            if (0..3).any(|a| start[a] < 0.0 || start[a] > extent[a]) {
                continue;
            }
            let Ok(ray) = VoxelRay::new(start, dir, &grid, t_surf + guard - t0) else {
                continue;
            };
            for cell in ray {
                let id = labeled.instance_at(cell.cell[0], cell.cell[1], cell.cell[2]);
                if id != 0 {
                    out.instance[p] = id;
                    out.category[p] = labeled.category_of(id);
                    out.hit_distance[p] = (t0 + cell.t_enter) as f32;
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// One instance in a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u32,
    pub category: u8,
    /// Inclusive pixel bounds `[x0, y0, x1, y1]`.
    pub bbox: [usize; 4],
    /// Sorted row-major pixel indices.
    pub pixels: Vec<u32>,
}

pub const MIN_INSTANCE_PIXELS: usize = 10;

/// Group labeled pixels by instance; instances under `min_pixels` are dropped.
pub fn masks_to_annotations(frame: &FrameLabels, min_pixels: usize) -> Vec<Annotation> {
    let mut by_id: std::collections::BTreeMap<u32, Annotation> = std::collections::BTreeMap::new();
    for (p, &id) in frame.instance.iter().enumerate() {
        if id == 0 {
            continue;
        }
        let (x, y) = (p % frame.width, p / frame.width);
        let a = by_id.entry(id).or_insert(Annotation {
            id,
            category: frame.category[p],
            bbox: [x, y, x, y],
            pixels: Vec::new(),
        });
        a.bbox = [a.bbox[0].min(x), a.bbox[1].min(y), a.bbox[2].max(x), a.bbox[3].max(y)];
        a.pixels.push(p as u32);
    }
    by_id.into_values().filter(|a| a.pixels.len() >= min_pixels).collect()
}

/// Row-major run lengths alternating background and foreground, starting
/// with a (possibly zero) background run.
pub fn rle_encode(pixels: &[u32], width: usize, height: usize) -> Vec<u32> {
    let total = (width * height) as u32;
    let mut counts = Vec::new();
    let mut pos = 0u32;
    let mut i = 0;
    while i < pixels.len() {
        let start = pixels[i];
        let mut end = start + 1;
        i += 1;
        while i < pixels.len() && pixels[i] == end {
            end += 1;
            i += 1;
        }
        counts.push(start - pos);
        counts.push(end - start);
        pos = end;
    }
    if pos < total || counts.is_empty() {
        counts.push(total - pos);
    }
    counts
}

pub fn rle_decode(counts: &[u32], width: usize, height: usize) -> Result<Vec<u32>> {
    let total = (width * height) as u64;
    let mut pixels = Vec::new();
    let mut pos = 0u64;
    for (k, &c) in counts.iter().enumerate() {
        if k % 2 == 1 {
            pixels.extend((pos..pos + c as u64).map(|p| p as u32));
        }
        pos += c as u64;
    }
    if pos != total {
        return Err(SealError::Format(format!("RLE covers {pos} pixels, image has {total}")));
    }
    Ok(pixels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RleMask {
    /// `[height, width]`.
    pub size: [usize; 2],
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: u32,
    pub category: u8,
    #[serde(rename = "box")]
    pub bbox: [usize; 4],
    pub mask: RleMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub frame_index: usize,
    pub pose: Pose,
    pub instances: Vec<InstanceRecord>,
}

impl AnnotationRecord {
    pub fn new(frame_index: usize, pose: Pose, anns: &[Annotation], width: usize, height: usize) -> Self {
        Self {
            frame_index,
            pose,
            instances: anns
                .iter()
                .map(|a| InstanceRecord {
                    id: a.id,
                    category: a.category,
                    bbox: a.bbox,
                    mask: RleMask {
                        size: [height, width],
                        counts: rle_encode(&a.pixels, width, height),
                    },
                })
                .collect(),
        }
    }
}

pub fn write_annotations_jsonl(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
