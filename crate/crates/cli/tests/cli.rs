use std::path::Path;
use std::process::{Command, Output};

use seal_core::evalharness::{ExperimentConfig, SeedRange};

fn seal(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seal"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = ExperimentConfig {
        train_seeds: SeedRange { start: 0, count: 1 },
        test_seeds: SeedRange { start: 1000, count: 1 },
        steps: 30,
        eval_images_per_scene: 4,
        weak_k: vec![0, 1],
        ..ExperimentConfig::default()
    };
    cfg.policy_training.episodes = 1;
    cfg.policy_training.steps = 30;
    cfg.finetune.iters = 50;
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn unreadable_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let out = seal(&["generate-scenes"], &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn overlapping_seed_ranges_are_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        train_seeds: SeedRange { start: 0, count: 5 },
        test_seeds: SeedRange { start: 3, count: 5 },
        ..ExperimentConfig::default()
    };
    let path = dir.path().join("overlap.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = seal(&["eval"], &path, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_model_file_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = seal(&["eval", "--model", "/nonexistent/model.json"], &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn generate_scenes_writes_scene_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = seal(&["generate-scenes"], &cfg, &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<String> = std::fs::read_dir(out_dir.join("scenes"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    for want in ["train_0.json", "train_0_depth.pgm", "train_0_semantic.ppm", "test_1000.json"] {
        assert!(names.iter().any(|n| n == want), "{want} missing from {names:?}");
    }
    let scene = std::fs::read_to_string(out_dir.join("scenes/train_0.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&scene).unwrap();
    assert_eq!(v["seed"], 0);
}

#[test]
fn collect_then_labelprop_writes_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = seal(&["--policy", "random", "collect"], &cfg, &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("traces/0.csv").exists());
    assert!(out_dir.join("maps/0.svm1").exists());

    let out = seal(&["labelprop"], &cfg, &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let jsonl = std::fs::read_to_string(out_dir.join("annotations/0.jsonl")).unwrap();
    let lines: Vec<&str> = jsonl.lines().collect();
    assert_eq!(lines.len(), 30);
    for l in lines {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v.get("frame_index").is_some() && v.get("instances").is_some());
    }
}

#[test]
fn labelprop_without_maps_fails_at_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = seal(&["labelprop"], &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(3));
}
