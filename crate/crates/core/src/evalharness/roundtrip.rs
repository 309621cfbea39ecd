//! Noise-free render, map, label and reproject check.

use std::collections::HashMap;

use rand::Rng;

use crate::envsim::{generate_scene, render, SceneParams, CELL};
use crate::error::Result;
use crate::geometry::{CameraModel, Pose};
use crate::labelprop::{get_labels, label_map};
use crate::perception::{predict, NoiseProfile, PerceptionModel, ViewKey};
use crate::seeding::{rng_for, tags};
use crate::semmap::{new_map, update_map, MapDims};

/// Episode maps are anchored at a spawn-cell center, half a floor cell off
/// the scene raster; the round trip keeps that alignment.
const HALF_CELL: f64 = CELL / 2.0;

/// Instances covering fewer valid pixels than this are not scored.
pub const MIN_SCORED_PIXELS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceIou {
    pub scene_seed: u64,
    pub pose: Pose,
    pub instance: u16,
    pub pixels: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundTripReport {
    pub poses: usize,
    pub instances: Vec<InstanceIou>,
}

impl RoundTripReport {
    pub fn worst(&self) -> Option<&InstanceIou> {
        self.instances.iter().min_by(|a, b| a.iou.total_cmp(&b.iou))
    }
}

/// Map each scene with the perfect oracle from a lattice of reachable
/// positions (every `stride` cells, 12 headings), label the map, then
/// compare reprojected instance masks with ground truth at
/// `poses_per_scene` random poses. The map is centered on the scene so it
/// covers the whole floor plan. Each ground-truth instance is scored
/// against its best-overlapping labeled instance over pixels with valid
/// depth.
pub fn oracle_round_trip(
    scene_seeds: &[u64],
    params: &SceneParams,
    cam: &CameraModel,
    poses_per_scene: usize,
    stride: usize,
) -> Result<RoundTripReport> {
    let noise = NoiseProfile::perfect();
    let model = PerceptionModel::identity(0.5);
    let mut report = RoundTripReport::default();
    for &seed in scene_seeds {
        let scene = generate_scene(seed, params)?;
        let center = Pose::new(params.extents[0] / 2.0 + HALF_CELL, params.extents[1] / 2.0 + HALF_CELL, 0.0);
        let mut map = new_map(MapDims::default())?.with_origin(center);
        let (nx, ny) = scene.grid_size();
        let half = stride / 2;
        for y in (half..ny).step_by(stride.max(1)) {
            for x in (half..nx).step_by(stride.max(1)) {
                if !scene.is_reachable_cell(x, y) {
                    continue;
                }
                let (px, py) = scene.cell_center(x, y);
                for h in 0..12 {
                    let pose = Pose::new(px, py, 30.0 * h as f64);
                    let gt = render(&scene, &pose, cam);
                    let view = ViewKey { scene_seed: seed, pose };
                    let s = predict(&gt, &model, &noise, &view, cam.depth_max);
                    update_map(&mut map, &gt.depth, &s, &pose, cam)?;
                }
            }
        }
        let labeled = label_map(&map, 0.9);

        let mut rng = rng_for(&[seed, tags::EVAL]);
        let mut done = 0;
        while done < poses_per_scene {
            let x = rng.gen_range(0..nx);
            let y = rng.gen_range(0..ny);
            if !scene.is_reachable_cell(x, y) {
                continue;
            }
            let (px, py) = scene.cell_center(x, y);
            let pose = Pose::new(px + rng.gen_range(-0.02..0.02), py + rng.gen_range(-0.02..0.02), rng.gen_range(0.0..360.0));
            let gt = render(&scene, &pose, cam);
            let fl = get_labels(&labeled, &pose, &gt.depth, cam)?;
            let mut pixels: HashMap<u16, Vec<usize>> = HashMap::new();
            for (p, &id) in gt.instance.iter().enumerate() {
                if id != 0 && cam.is_valid_depth(gt.depth.data[p]) {
                    pixels.entry(id).or_default().push(p);
                }
            }
            let mut ids: Vec<u16> = pixels.keys().copied().collect();
            ids.sort_unstable();
            for id in ids {
                let px = &pixels[&id];
                if px.len() < MIN_SCORED_PIXELS {
                    continue;
                }
                let mut overlap: HashMap<u32, usize> = HashMap::new();
                for &p in px {
                    if fl.instance[p] != 0 {
                        *overlap.entry(fl.instance[p]).or_insert(0) += 1;
                    }
                }
                let best = overlap.iter().max_by_key(|(k, v)| (**v, std::cmp::Reverse(**k))).map(|(k, v)| (*k, *v));
                let iou = match best {
                    Some((label, inter)) => {
                        let pred = fl.instance.iter().filter(|&&i| i == label).count();
                        inter as f64 / (px.len() + pred - inter) as f64
                    }
                    None => 0.0,
                };
                report.instances.push(InstanceIou {
                    scene_seed: seed,
                    pose,
                    instance: id,
                    pixels: px.len(),
                    iou,
                });
            }
            done += 1;
        }
        report.poses += done;
    }
    Ok(report)
}
