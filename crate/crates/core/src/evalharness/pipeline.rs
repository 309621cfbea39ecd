//! Collection, labeling, fine-tuning and evaluation runs.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envsim::{generate_scene, render, Scene, SceneParams, NUM_CATEGORIES};
use crate::error::Result;
use crate::geometry::Pose;
use crate::labelprop::{get_labels, label_map, FrameLabels, LabeledInstanceMap};
use crate::perception::{annotate_ground_truth, fine_tune, predict_raw, FineTuneConfig, PerceptionModel, ScoreImage, TrainingFrame, ViewKey};
use crate::policy::{
    baseline_policy, run_episode, train_policy, EpisodeConfig, EpisodeResult, ExplorationPolicy, GlobalPolicyParams, Perception, PolicyFile,
    PolicyKind, RewardKind, TrainConfig,
};
use crate::seeding::{derive_seed, rng_for, tags};
use crate::semmap::{new_map, update_map, SemanticVoxelMap};

use super::ap::{ap50, IouMode, MatchFrame};
use super::detect::{detect, ground_truth_regions};
use super::weak::{rank_top_k, frame_entropy};
use super::{Counts, EvalReport, ExperimentConfig, MethodResult, NamedModel, ReportMetadata, RewardStats, SceneScore, ScenePoses};

pub fn generate_scenes(params: &SceneParams, seeds: &[u64]) -> Result<Vec<Scene>> {
    seeds.par_iter().map(|&s| generate_scene(s, params)).collect()
}

/// FNV-1a of a name, for per-method seed streams.
fn name_key(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn episode_config(cfg: &ExperimentConfig, scene: &Scene) -> EpisodeConfig {
    EpisodeConfig {
        steps: cfg.steps,
        map_dims: cfg.map_dims,
        s_hat: cfg.s_hat,
        mid_low: cfg.mid_low,
        global_period: cfg.global_period,
        record_frames: true,
        seed: derive_seed(&[cfg.seed, scene.seed, tags::EPISODE]),
    }
}

pub fn collect_episode(cfg: &ExperimentConfig, scene: &Scene, policy: &ExplorationPolicy, model: &PerceptionModel) -> Result<EpisodeResult> {
    let perception = Perception {
        model,
        noise: &cfg.noise,
    };
    run_episode(scene, policy, perception, &cfg.camera, &episode_config(cfg, scene))
}

/// Label the episode map and project the labels into every frame.
pub fn propagate_labels(cfg: &ExperimentConfig, map: &SemanticVoxelMap, frames: &[(Pose, &crate::geometry::DepthImage)]) -> Result<(LabeledInstanceMap, Vec<FrameLabels>)> {
    let labeled = label_map(map, cfg.s_hat);
    let labels = frames
        .iter()
        .map(|(pose, depth)| get_labels(&labeled, pose, depth, &cfg.camera))
        .collect::<Result<Vec<_>>>()?;
    Ok((labeled, labels))
}

/// Per-pixel labels from a model's own output: the highest calibrated
/// category at or above its floor.
pub fn self_training_labels(model: &PerceptionModel, raw: &ScoreImage) -> Vec<u8> {
    let cal = model.calibrate_image(raw);
    let per_entry: Vec<u8> = (0..cal.palette_len())
        .map(|e| {
            let s = &cal.palette()[e * cal.categories..(e + 1) * cal.categories];
            let mut best = 0u8;
            let mut best_s = f32::NEG_INFINITY;
            for (c, &v) in s.iter().enumerate() {
                if v as f64 >= model.floor[c] && v > best_s {
                    best = c as u8 + 1;
                    best_s = v;
                }
            }
            best
        })
        .collect();
    cal.index().iter().map(|&e| per_entry[e as usize]).collect()
}

/// Episode summary kept in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub scene_seed: u64,
    pub final_reward: u64,
    pub final_coverage: u64,
    pub frames: usize,
    pub labeled_instances: usize,
}

/// Fine-tuning data collected from one set of scenes.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub frames: Vec<TrainingFrame>,
    pub episodes: Vec<EpisodeSummary>,
}

impl Dataset {
    fn extend(&mut self, frames: Vec<TrainingFrame>, summary: Option<EpisodeSummary>) {
        self.frames.extend(frames);
        self.episodes.extend(summary);
    }

    fn rewards(&self) -> Option<RewardStats> {
        RewardStats::of(&self.episodes.iter().map(|e| e.final_reward as f64).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    LabelProp,
    SelfTraining,
}

/// Training sets derived from one episode.
struct Products {
    summary: EpisodeSummary,
    labelprop: Vec<TrainingFrame>,
    self_training: Vec<TrainingFrame>,
    /// (k, propagated labels after replacing k frames, the k frames alone)
    weak: Vec<(usize, Vec<TrainingFrame>, Vec<TrainingFrame>)>,
}

#[derive(Clone, Copy)]
struct Wants<'a> {
    self_training: bool,
    weak_k: &'a [usize],
}

fn rebuild_map(cfg: &ExperimentConfig, ep: &EpisodeResult, model: &PerceptionModel, replaced: &BTreeMap<usize, ScoreImage>) -> Result<SemanticVoxelMap> {
    let mut map = new_map(cfg.map_dims)?.with_origin(ep.map.origin);
    for (i, f) in ep.frames.iter().enumerate() {
        let scores = match replaced.get(&i) {
            Some(s) => s.clone(),
            None => model.calibrate_image(&f.raw),
        };
        update_map(&mut map, &f.depth, &scores, &f.pose, &cfg.camera)?;
    }
    Ok(map)
}

fn training_frames(ep: &EpisodeResult, labels: &[FrameLabels]) -> Result<Vec<TrainingFrame>> {
    ep.frames
        .iter()
        .zip(labels)
        .map(|(f, l)| TrainingFrame::from_labels(&f.raw, &l.training_labels()))
        .collect()
}

fn process_episode(cfg: &ExperimentConfig, scene: &Scene, policy: &ExplorationPolicy, model: &PerceptionModel, wants: Wants) -> Result<Products> {
    let ep = collect_episode(cfg, scene, policy, model)?;
    let views: Vec<(Pose, &crate::geometry::DepthImage)> = ep.frames.iter().map(|f| (f.pose, &f.depth)).collect();
    let (labeled, labels) = propagate_labels(cfg, &ep.map, &views)?;
    let summary = EpisodeSummary {
        scene_seed: scene.seed,
        final_reward: ep.trace.final_reward,
        final_coverage: ep.trace.final_coverage,
        frames: ep.frames.len(),
        labeled_instances: labeled.instances.len(),
    };
    let labelprop = training_frames(&ep, &labels)?;
    drop(labels);
    let self_training = if wants.self_training {
        ep.frames
            .iter()
            .map(|f| TrainingFrame::from_labels(&f.raw, &self_training_labels(model, &f.raw)))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mut weak = Vec::new();
    let max_k = wants.weak_k.iter().copied().max().unwrap_or(0).min(ep.frames.len());
    if max_k > 0 {
        let entropy: Vec<f64> = views
            .iter()
            .map(|(pose, depth)| frame_entropy(&ep.map, pose, depth, &cfg.camera).unwrap_or(0.0))
            .collect();
        let order = rank_top_k(&entropy, max_k);
        for &k in wants.weak_k {
            if k == 0 {
                continue;
            }
            let chosen = &order[..k.min(order.len())];
            let mut replaced = BTreeMap::new();
            let mut naive = Vec::new();
            for &i in chosen {
                let gt = render(scene, &ep.frames[i].pose, &cfg.camera);
                naive.push(TrainingFrame::from_labels(&ep.frames[i].raw, &gt.category)?);
                replaced.insert(i, annotate_ground_truth(&gt));
            }
            let map = rebuild_map(cfg, &ep, model, &replaced)?;
            let (_, labels) = propagate_labels(cfg, &map, &views)?;
            weak.push((k, training_frames(&ep, &labels)?, naive));
        }
    }
    Ok(Products {
        summary,
        labelprop,
        self_training,
        weak,
    })
}

/// One episode per scene, labeled by propagation through the episode map
/// or by the model's own thresholded output.
pub fn build_dataset(cfg: &ExperimentConfig, scenes: &[Scene], policy: &ExplorationPolicy, model: &PerceptionModel, source: LabelSource) -> Result<Dataset> {
    let wants = Wants {
        self_training: source == LabelSource::SelfTraining,
        weak_k: &[],
    };
    let products: Vec<Products> = scenes
        .par_iter()
        .map(|s| process_episode(cfg, s, policy, model, wants))
        .collect::<Result<_>>()?;
    let mut ds = Dataset::default();
    for p in products {
        let frames = match source {
            LabelSource::LabelProp => p.labelprop,
            LabelSource::SelfTraining => p.self_training,
        };
        ds.extend(frames, Some(p.summary));
    }
    Ok(ds)
}

/// Fixed evaluation views of a scene: uniformly drawn reachable cells with
/// a jittered position and a uniform heading. Depends only on the scene.
pub fn eval_poses(scene: &Scene, n: usize) -> Vec<Pose> {
    let (nx, ny) = scene.grid_size();
    let mut cells = Vec::new();
    for y in 0..ny {
        for x in 0..nx {
            if scene.is_reachable_cell(x, y) {
                cells.push((x, y));
            }
        }
    }
    if cells.is_empty() {
        return Vec::new();
    }
    let mut rng = rng_for(&[scene.seed, tags::EVAL]);
    (0..n)
        .map(|_| {
            let (x, y) = cells[rng.gen_range(0..cells.len())];
            let (cx, cy) = scene.cell_center(x, y);
            let jx = rng.gen_range(-0.02..0.02);
            let jy = rng.gen_range(-0.02..0.02);
            Pose::new(cx + jx, cy + jy, rng.gen_range(0.0..360.0))
        })
        .collect()
}

/// Scores of one method over the evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodScores {
    pub det_ap50: f64,
    pub seg_ap50: f64,
    pub det_per_category: Vec<Option<f64>>,
    pub seg_per_category: Vec<Option<f64>>,
    pub per_scene: Vec<SceneScore>,
    pub counts: Counts,
}

/// Evaluate several methods on the same views. `models[m][s]` is the model
/// method `m` uses on test scene `s`.
pub fn evaluate(cfg: &ExperimentConfig, scenes: &[Scene], poses: &[Vec<Pose>], models: &[Vec<PerceptionModel>]) -> Vec<MethodScores> {
    let m = models.len();
    // per scene, per pose: per method (det frame, seg frame), plus gt count
    let per_scene: Vec<Vec<(Vec<(MatchFrame, MatchFrame)>, usize)>> = scenes
        .par_iter()
        .enumerate()
        .map(|(si, scene)| {
            poses[si]
                .par_iter()
                .map(|pose| {
                    let gt = render(scene, pose, &cfg.camera);
                    let raw = predict_raw(&gt, &cfg.noise, &ViewKey { scene_seed: scene.seed, pose: *pose }, cfg.camera.depth_max);
                    let regions = ground_truth_regions(&gt);
                    let frames = (0..m)
                        .map(|mi| {
                            let dets = detect(&models[mi][si], &raw);
                            (MatchFrame::new(&dets, &regions, IouMode::Box), MatchFrame::new(&dets, &regions, IouMode::Mask))
                        })
                        .collect();
                    (frames, regions.len())
                })
                .collect()
        })
        .collect();

    (0..m)
        .map(|mi| {
            let mut all_det = Vec::new();
            let mut all_seg = Vec::new();
            let mut scene_scores = Vec::new();
            let mut counts = Counts::default();
            for (si, frames) in per_scene.iter().enumerate() {
                let det: Vec<MatchFrame> = frames.iter().map(|(f, _)| f[mi].0.clone()).collect();
                let seg: Vec<MatchFrame> = frames.iter().map(|(f, _)| f[mi].1.clone()).collect();
                counts.eval_frames += frames.len();
                counts.gt_instances += frames.iter().map(|(_, g)| g).sum::<usize>();
                counts.detections += det.iter().map(|f| f.detections.len()).sum::<usize>();
                scene_scores.push(SceneScore {
                    scene_seed: scenes[si].seed,
                    det_ap50: 100.0 * ap50(&det, NUM_CATEGORIES).0,
                    seg_ap50: 100.0 * ap50(&seg, NUM_CATEGORIES).0,
                });
                all_det.extend(det);
                all_seg.extend(seg);
            }
            let (d, dc) = ap50(&all_det, NUM_CATEGORIES);
            let (s, sc) = ap50(&all_seg, NUM_CATEGORIES);
            let pct = |v: Vec<Option<f64>>| v.into_iter().map(|x| x.map(|a| 100.0 * a)).collect();
            MethodScores {
                det_ap50: 100.0 * d,
                seg_ap50: 100.0 * s,
                det_per_category: pct(dc),
                seg_per_category: pct(sc),
                per_scene: scene_scores,
                counts,
            }
        })
        .collect()
}

/// Which parts of the protocol to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Plan {
    pub specialization: bool,
    pub ablations: bool,
    pub weak: bool,
}

impl Plan {
    pub const ALL: Plan = Plan {
        specialization: true,
        ablations: true,
        weak: true,
    };
}

struct Method {
    name: String,
    setting: &'static str,
    models: Vec<PerceptionModel>,
    reward: Option<RewardStats>,
    training_frames: usize,
}

fn tune(cfg: &ExperimentConfig, base: &PerceptionModel, frames: &[TrainingFrame], name: &str) -> PerceptionModel {
    let ft = FineTuneConfig {
        seed: derive_seed(&[cfg.seed, tags::FINETUNE, name_key(name)]),
        ..cfg.finetune.clone()
    };
    let (m, report) = fine_tune(base, frames, &ft);
    log::info!(
        "fine-tune {name}: {} frames, loss {:.1} -> {:.1}, a {:?}, b {:?}",
        frames.len(),
        report.initial_loss,
        report.final_loss,
        m.a,
        m.b
    );
    m
}

/// Train the learned exploration policies among `kinds`.
pub fn train_policies(cfg: &ExperimentConfig, scenes: &[Scene], kinds: &[PolicyKind]) -> Result<BTreeMap<PolicyKind, PolicyFile>> {
    let mut out = BTreeMap::new();
    let pretrained = cfg.pretrained_model();
    let perception = Perception {
        model: &pretrained,
        noise: &cfg.noise,
    };
    for &kind in kinds {
        let reward = match kind {
            PolicyKind::Coverage => RewardKind::Coverage,
            PolicyKind::Gainful => RewardKind::GainfulCuriosity,
            PolicyKind::Random | PolicyKind::Frontier => continue,
        };
        let tc = TrainConfig {
            episodes: cfg.policy_training.episodes,
            lr: cfg.policy_training.lr,
            baseline_decay: cfg.policy_training.baseline_decay,
            reward,
            seed: derive_seed(&[cfg.seed, tags::POLICY, name_key(kind.name())]),
        };
        let ec = EpisodeConfig {
            steps: cfg.policy_training.steps,
            map_dims: cfg.map_dims,
            s_hat: cfg.s_hat,
            mid_low: cfg.mid_low,
            global_period: cfg.global_period,
            record_frames: false,
            seed: 0,
        };
        let init = GlobalPolicyParams {
            seed: tc.seed,
            ..cfg.policy_init.clone()
        };
        let (params, log) = train_policy(scenes, &init, &tc, &ec, perception, &cfg.camera)?;
        out.insert(kind, PolicyFile::new(kind, &params, log));
    }
    Ok(out)
}

fn policy_object(kind: PolicyKind, trained: &BTreeMap<PolicyKind, PolicyFile>, cfg: &ExperimentConfig) -> ExplorationPolicy {
    let params = trained.get(&kind).map(|p| p.params()).unwrap_or_else(|| cfg.policy_init.clone());
    baseline_policy(kind, &params)
}

fn label_name(source: LabelSource) -> &'static str {
    match source {
        LabelSource::LabelProp => "labelprop",
        LabelSource::SelfTraining => "self_training",
    }
}

/// Run the generalization protocol and whichever extensions `plan` asks
/// for, scoring every method on one shared evaluation set.
pub fn run_experiment(cfg: &ExperimentConfig, plan: Plan) -> Result<EvalReport> {
    cfg.validate()?;
    let train = generate_scenes(&cfg.scene, &cfg.train_seeds.seeds())?;
    let test = generate_scenes(&cfg.scene, &cfg.test_seeds.seeds())?;
    let poses: Vec<Vec<Pose>> = test.iter().map(|s| eval_poses(s, cfg.eval_images_per_scene)).collect();
    let pretrained = cfg.pretrained_model();
    let n_test = test.len();
    let shared = |m: &PerceptionModel| vec![m.clone(); n_test];

    let kinds: Vec<PolicyKind> = if plan.ablations { PolicyKind::ALL.to_vec() } else { vec![cfg.policy] };
    let trained = train_policies(cfg, &train, &kinds)?;

    let mut methods = vec![Method {
        name: "pretrained".into(),
        setting: "generalization",
        models: shared(&pretrained),
        reward: None,
        training_frames: 0,
    }];

    // Collection on the training scenes, one pass per policy.
    let mut seal = None;
    let mut seal_frames = 0;
    let mut seal_reward = None;
    let mut ablation = Vec::new();
    for &kind in &kinds {
        let policy = policy_object(kind, &trained, cfg);
        let main = kind == cfg.policy;
        let wants = Wants {
            self_training: plan.ablations,
            weak_k: &[],
        };
        let products: Vec<Products> = train
            .par_iter()
            .map(|s| process_episode(cfg, s, &policy, &pretrained, wants))
            .collect::<Result<_>>()?;
        let mut lp = Dataset::default();
        let mut st = Dataset::default();
        for p in products {
            lp.extend(p.labelprop, Some(p.summary.clone()));
            st.extend(p.self_training, Some(p.summary));
        }
        let lp_model = if main {
            let m = tune(cfg, &pretrained, &lp.frames, "seal");
            seal = Some(m.clone());
            seal_frames = lp.frames.len();
            seal_reward = lp.rewards();
            m
        } else {
            tune(cfg, &pretrained, &lp.frames, &format!("{}+labelprop", kind.name()))
        };
        if plan.ablations {
            for (source, ds, model) in [
                (LabelSource::LabelProp, &lp, Some(lp_model)),
                (LabelSource::SelfTraining, &st, None),
            ] {
                let name = format!("{}+{}", kind.name(), label_name(source));
                let model = model.unwrap_or_else(|| tune(cfg, &pretrained, &ds.frames, &name));
                ablation.push(Method {
                    name,
                    setting: "ablation",
                    models: shared(&model),
                    reward: ds.rewards(),
                    training_frames: ds.frames.len(),
                });
            }
        }
    }
    let seal = seal.expect("main policy is always collected");
    methods.push(Method {
        name: "seal".into(),
        setting: "generalization",
        models: shared(&seal),
        reward: seal_reward,
        training_frames: seal_frames,
    });

    // One episode per test scene with the generalization model, shared by
    // specialization and weak supervision.
    if plan.specialization || plan.weak {
        let policy = policy_object(cfg.policy, &trained, cfg);
        let wants = Wants {
            self_training: false,
            weak_k: if plan.weak { &cfg.weak_k } else { &[] },
        };
        let products: Vec<Products> = test
            .par_iter()
            .map(|s| process_episode(cfg, s, &policy, &seal, wants))
            .collect::<Result<_>>()?;
        let rewards = RewardStats::of(&products.iter().map(|p| p.summary.final_reward as f64).collect::<Vec<_>>());
        let specialized: Vec<PerceptionModel> = products
            .iter()
            .map(|p| tune(cfg, &seal, &p.labelprop, &format!("seal_specialized_{}", p.summary.scene_seed)))
            .collect();
        let specialized_frames = products.iter().map(|p| p.labelprop.len()).sum();
        if plan.specialization {
            methods.push(Method {
                name: "seal".into(),
                setting: "specialization",
                models: specialized.clone(),
                reward: rewards.clone(),
                training_frames: specialized_frames,
            });
        }
        if plan.weak {
            for &k in &cfg.weak_k {
                let (seal_k, naive_k, seal_n, naive_n) = if k == 0 {
                    (specialized.clone(), vec![pretrained.clone(); n_test], specialized_frames, 0)
                } else {
                    let mut sm = Vec::new();
                    let mut nm = Vec::new();
                    let (mut sn, mut nn) = (0, 0);
                    for p in &products {
                        let (_, w, n) = p.weak.iter().find(|(kk, _, _)| *kk == k).expect("weak set for every k");
                        let scene = p.summary.scene_seed;
                        sm.push(tune(cfg, &seal, w, &format!("seal_k{k}_{scene}")));
                        nm.push(tune(cfg, &pretrained, n, &format!("naive_gt_k{k}_{scene}")));
                        sn += w.len();
                        nn += n.len();
                    }
                    (sm, nm, sn, nn)
                };
                methods.push(Method {
                    name: format!("seal_k{k}"),
                    setting: "weak_supervision",
                    models: seal_k,
                    reward: rewards.clone(),
                    training_frames: seal_n,
                });
                methods.push(Method {
                    name: format!("naive_gt_k{k}"),
                    setting: "weak_supervision",
                    models: naive_k,
                    reward: None,
                    training_frames: naive_n,
                });
            }
        }
    }
    methods.extend(ablation);

    let model_sets: Vec<Vec<PerceptionModel>> = methods.iter().map(|m| m.models.clone()).collect();
    let scores = evaluate(cfg, &test, &poses, &model_sets);
    let mut models = Vec::new();
    let results = methods
        .into_iter()
        .zip(scores)
        .map(|(m, s)| {
            for (i, model) in m.models.iter().enumerate() {
                let name = if m.models.iter().all(|x| x == &m.models[0]) {
                    if i > 0 {
                        continue;
                    }
                    format!("{}/{}", m.setting, m.name)
                } else {
                    format!("{}/{}/{}", m.setting, m.name, test[i].seed)
                };
                models.push(NamedModel { name, model: model.clone() });
            }
            MethodResult {
                method: m.name,
                setting: m.setting.to_string(),
                det_ap50: s.det_ap50,
                seg_ap50: s.seg_ap50,
                det_per_category: s.det_per_category,
                seg_per_category: s.seg_per_category,
                per_scene: s.per_scene,
                reward: m.reward,
                counts: Counts {
                    training_frames: m.training_frames,
                    ..s.counts
                },
            }
        })
        .collect();
    Ok(EvalReport {
        metadata: ReportMetadata {
            ap_interpolation: "all_point".into(),
            iou_threshold: super::ap::IOU_THRESHOLD,
            detection_rule: "calibrated score >= per-category floor, 4-connected components of >= 10 pixels, confidence = mean score".into(),
            weak_entropy_scores: "calibrated scores stored in the episode map".into(),
            config: cfg.clone(),
            eval_poses: test
                .iter()
                .zip(&poses)
                .map(|(s, p)| ScenePoses {
                    scene_seed: s.seed,
                    poses: p.clone(),
                })
                .collect(),
        },
        results,
        policies: trained.into_values().collect(),
        models,
    })
}

pub fn run_generalization(cfg: &ExperimentConfig) -> Result<EvalReport> {
    run_experiment(cfg, Plan::default())
}

pub fn run_specialization(cfg: &ExperimentConfig) -> Result<EvalReport> {
    run_experiment(
        cfg,
        Plan {
            specialization: true,
            ..Plan::default()
        },
    )
}

pub fn run_ablations(cfg: &ExperimentConfig) -> Result<EvalReport> {
    run_experiment(
        cfg,
        Plan {
            ablations: true,
            ..Plan::default()
        },
    )
}

/// Weak supervision for the given annotation budgets.
pub fn run_weak_supervision(cfg: &ExperimentConfig, ks: &[usize]) -> Result<EvalReport> {
    let cfg = ExperimentConfig {
        weak_k: ks.to_vec(),
        ..cfg.clone()
    };
    run_experiment(
        &cfg,
        Plan {
            weak: true,
            ..Plan::default()
        },
    )
}

pub fn run_all(cfg: &ExperimentConfig) -> Result<EvalReport> {
    run_experiment(cfg, Plan::ALL)
}
