//! Shared fixtures for the benchmarks.

use seal_core::envsim::{generate_scene, render, reset, GroundTruthFrame, Scene, SceneParams};
use seal_core::geometry::{CameraModel, Pose};
use seal_core::perception::{predict, NoiseProfile, PerceptionModel, ScoreImage, ViewKey};
use seal_core::semmap::{new_map, update_map, MapDims, SemanticVoxelMap};

pub struct Fixture {
    pub scene: Scene,
    pub cam: CameraModel,
    pub pose: Pose,
    pub frame: GroundTruthFrame,
    pub scores: ScoreImage,
}

/// Default scene 0 viewed from its spawn pose.
pub fn fixture() -> Fixture {
    let scene = generate_scene(0, &SceneParams::default()).expect("scene");
    let cam = CameraModel::default();
    let pose = reset(&scene, 0).expect("spawn").pose;
    let frame = render(&scene, &pose, &cam);
    let view = ViewKey { scene_seed: 0, pose };
    let scores = predict(&frame, &PerceptionModel::identity(0.5), &NoiseProfile::perfect(), &view, cam.depth_max);
    Fixture {
        scene,
        cam,
        pose,
        frame,
        scores,
    }
}

/// A map filled from a full turn in place at the spawn point.
pub fn spun_map(f: &Fixture) -> SemanticVoxelMap {
    let mut map = new_map(MapDims::default()).expect("map").with_origin(f.pose);
    for k in 0..12 {
        let pose = Pose::new(f.pose.x, f.pose.y, f.pose.theta + 30.0 * k as f64);
        let gt = render(&f.scene, &pose, &f.cam);
        let view = ViewKey { scene_seed: 0, pose };
        let s = predict(&gt, &PerceptionModel::identity(0.5), &NoiseProfile::perfect(), &view, f.cam.depth_max);
        update_map(&mut map, &gt.depth, &s, &pose, &f.cam).expect("update");
    }
    map
}
