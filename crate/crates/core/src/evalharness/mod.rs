//! Experiment orchestration: dataset collection, fine-tuning, evaluation
//! protocols and AP50 scoring.

pub mod ap;
pub mod detect;
pub mod pipeline;
pub mod roundtrip;
pub mod weak;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envsim::{SceneParams, NUM_CATEGORIES};
use crate::error::{Result, SealError};
use crate::geometry::{CameraModel, Pose};
use crate::perception::{FineTuneConfig, NoiseProfile, PerceptionModel};
use crate::policy::{GlobalPolicyParams, PolicyFile, PolicyKind};
use crate::semmap::MapDims;

pub use ap::{ap50, IouMode, MatchFrame};
pub use detect::{detect, detections_from_scores, ground_truth_regions, Detection, Region};
pub use pipeline::{build_dataset, eval_poses, run_ablations, run_all, run_generalization, run_specialization, run_weak_supervision};
pub use weak::select_weak_frames;

/// Scene seeds `start..start + count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRange {
    pub start: u64,
    pub count: u64,
}

impl SeedRange {
    pub fn seeds(&self) -> Vec<u64> {
        (self.start..self.start + self.count).collect()
    }

    pub fn overlaps(&self, other: &SeedRange) -> bool {
        self.start < other.start + other.count && other.start < self.start + self.count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyTraining {
    /// Total training episodes per learned policy.
    pub episodes: usize,
    pub lr: f64,
    pub baseline_decay: f64,
    /// Episode length during training.
    pub steps: usize,
}

impl Default for PolicyTraining {
    fn default() -> Self {
        Self {
            episodes: 50,
            lr: 0.05,
            baseline_decay: 0.9,
            steps: 300,
        }
    }
}

/// Hyperparameters of the actor-critic setup the linear scorer stands in
/// for. Kept for reference only; nothing reads them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoReference {
    pub threads: usize,
    pub lr: f64,
    pub gamma: f64,
    pub entropy_coef: f64,
}

impl Default for PpoReference {
    fn default() -> Self {
        Self {
            threads: 25,
            lr: 2.5e-5,
            gamma: 0.99,
            entropy_coef: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scene: SceneParams,
    pub train_seeds: SeedRange,
    pub test_seeds: SeedRange,
    pub camera: CameraModel,
    pub noise: NoiseProfile,
    pub map_dims: MapDims,
    /// Confidence threshold for gainful voxels and label propagation.
    pub s_hat: f32,
    /// Lower edge of the mid-confidence band used by waypoint features.
    pub mid_low: f32,
    /// Episode length.
    pub steps: usize,
    pub global_period: usize,
    pub policy: PolicyKind,
    pub policy_init: GlobalPolicyParams,
    pub policy_training: PolicyTraining,
    pub ppo_reference: PpoReference,
    pub finetune: FineTuneConfig,
    /// Detection floor of the pretrained model on every category.
    pub detection_floor: f64,
    pub eval_images_per_scene: usize,
    pub weak_k: Vec<usize>,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneParams::default(),
            train_seeds: SeedRange { start: 0, count: 25 },
            test_seeds: SeedRange { start: 1000, count: 5 },
            camera: CameraModel::default(),
            noise: NoiseProfile::default(),
            map_dims: MapDims::default(),
            s_hat: 0.9,
            mid_low: 0.3,
            steps: 300,
            global_period: 25,
            policy: PolicyKind::Gainful,
            policy_init: GlobalPolicyParams::default(),
            policy_training: PolicyTraining::default(),
            ppo_reference: PpoReference::default(),
            finetune: FineTuneConfig::default(),
            detection_floor: 0.5,
            eval_images_per_scene: 500,
            weak_k: vec![0, 5, 10],
            seed: 0,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SealError::Config(m.to_string()));
        if self.train_seeds.count == 0 || self.test_seeds.count == 0 {
            return bad("train and test seed ranges must be nonempty");
        }
        if self.train_seeds.overlaps(&self.test_seeds) {
            return bad("train and test seed ranges overlap");
        }
        self.camera.validate()?;
        self.noise.validate()?;
        self.policy_init.validate()?;
        if self.map_dims.channels != NUM_CATEGORIES + 1 {
            return bad("map needs one occupancy channel plus one per category");
        }
        if self.map_dims.length < 2 || self.map_dims.width < 2 || self.map_dims.height == 0 {
            return bad("map dimensions too small");
        }
        if !(self.s_hat > 0.0 && self.s_hat <= 1.0) || !(self.mid_low >= 0.0 && self.mid_low < self.s_hat) {
            return bad("need 0 <= mid_low < s_hat <= 1");
        }
        if self.steps == 0 || self.global_period == 0 {
            return bad("steps and global_period must be positive");
        }
        if !(self.detection_floor > 0.0 && self.detection_floor < 1.0) {
            return bad("detection_floor must lie in (0, 1)");
        }
        if self.weak_k.iter().any(|&k| k > self.steps) {
            return bad("weak-supervision k exceeds episode length");
        }
        let f = &self.finetune;
        if !(f.lr >= 0.0 && f.lr.is_finite()) || f.batch_size == 0 || !(f.max_step > 0.0) {
            return bad("fine-tune needs lr >= 0, batch_size > 0, max_step > 0");
        }
        let p = &self.policy_training;
        if !(p.lr >= 0.0 && p.lr.is_finite()) || !(0.0..1.0).contains(&p.baseline_decay) || p.steps == 0 {
            return bad("policy training needs lr >= 0, baseline_decay in [0, 1), steps > 0");
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| SealError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| SealError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn pretrained_model(&self) -> PerceptionModel {
        PerceptionModel::identity(self.detection_floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScore {
    pub scene_seed: u64,
    pub det_ap50: f64,
    pub seg_ap50: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardStats {
    pub episodes: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl RewardStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            episodes: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub eval_frames: usize,
    pub gt_instances: usize,
    pub detections: usize,
    pub training_frames: usize,
}

/// Scores of one method in one setting. AP values are on the 0-100 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub setting: String,
    pub det_ap50: f64,
    pub seg_ap50: f64,
    pub det_per_category: Vec<Option<f64>>,
    pub seg_per_category: Vec<Option<f64>>,
    pub per_scene: Vec<SceneScore>,
    pub reward: Option<RewardStats>,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePoses {
    pub scene_seed: u64,
    pub poses: Vec<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub ap_interpolation: String,
    pub iou_threshold: f64,
    pub detection_rule: String,
    pub weak_entropy_scores: String,
    pub config: ExperimentConfig,
    pub eval_poses: Vec<ScenePoses>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedModel {
    pub name: String,
    pub model: PerceptionModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: ReportMetadata,
    pub results: Vec<MethodResult>,
    pub policies: Vec<PolicyFile>,
    pub models: Vec<NamedModel>,
}

impl EvalReport {
    pub fn find(&self, method: &str, setting: &str) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method && r.setting == setting)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Rows `method, setting, det_AP50, seg_AP50`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["method", "setting", "det_AP50", "seg_AP50"])?;
        for r in &self.results {
            w.write_record([r.method.clone(), r.setting.clone(), format!("{:.2}", r.det_ap50), format!("{:.2}", r.seg_ap50)])?;
        }
        w.flush()?;
        Ok(())
    }
}
