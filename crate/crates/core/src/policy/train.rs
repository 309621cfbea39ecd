//! Episodic REINFORCE on waypoint decisions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envsim::Scene;
use crate::error::{Result, SealError};
use crate::geometry::CameraModel;
use crate::seeding::{derive_seed, tags};

use super::episode::{run_episode, EpisodeConfig, ExplorationPolicy, Perception, RewardKind};
use super::global::{log_prob_gradient, GlobalPolicyParams, NUM_FEATURES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Total training episodes; each update uses one episode per scene.
    pub episodes: usize,
    pub lr: f64,
    /// Decay of the exponential reward baseline.
    pub baseline_decay: f64,
    pub reward: RewardKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 50,
            lr: 0.05,
            baseline_decay: 0.9,
            reward: RewardKind::GainfulCuriosity,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateLog {
    pub update: usize,
    pub mean_reward: f64,
    pub baseline: f64,
    pub weights: [f64; NUM_FEATURES],
}

/// Waypoint decisions of one episode with its terminal reward.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSample {
    pub reward: f64,
    /// (chosen features, expected features) per waypoint decision.
    pub decisions: Vec<([f64; NUM_FEATURES], [f64; NUM_FEATURES])>,
}

/// REINFORCE estimate `mean_e[(R_e - b) / scale * sum_t grad log pi]`.
pub fn policy_gradient(samples: &[EpisodeSample], baseline: f64, scale: f64, temperature: f64) -> [f64; NUM_FEATURES] {
    let mut g = [0.0; NUM_FEATURES];
    if samples.is_empty() {
        return g;
    }
    for s in samples {
        let adv = (s.reward - baseline) / scale;
        for (f, e) in &s.decisions {
            let d = log_prob_gradient(f, e, temperature);
            for k in 0..NUM_FEATURES {
                g[k] += adv * d[k];
            }
        }
    }
    for v in &mut g {
        *v /= samples.len() as f64;
    }
    g
}

pub fn train_policy(
    scenes: &[Scene],
    params0: &GlobalPolicyParams,
    cfg: &TrainConfig,
    episode: &EpisodeConfig,
    perception: Perception,
    cam: &CameraModel,
) -> Result<(GlobalPolicyParams, Vec<UpdateLog>)> {
    if scenes.is_empty() {
        return Err(SealError::Config("policy training needs at least one scene".into()));
    }
    params0.validate()?;
    let mut params = params0.clone();
    let updates = cfg.episodes.div_ceil(scenes.len());
    let mut baseline: Option<f64> = None;
    let mut log = Vec::new();
    for u in 0..updates {
        let policy = ExplorationPolicy::Learned {
            params: params.clone(),
            reward: cfg.reward,
        };
        let samples: Vec<EpisodeSample> = scenes
            .par_iter()
            .enumerate()
            .map(|(i, scene)| {
                let ecfg = EpisodeConfig {
                    record_frames: false,
                    seed: derive_seed(&[cfg.seed, u as u64, i as u64, tags::TRAIN]),
                    ..episode.clone()
                };
                let r = run_episode(scene, &policy, perception, cam, &ecfg)?;
                Ok(EpisodeSample {
                    reward: r.trace.terminal(cfg.reward) as f64,
                    decisions: r.trace.global_steps.iter().map(|g| (g.features, g.expected)).collect(),
                })
            })
            .collect::<Result<_>>()?;
        let mean = samples.iter().map(|s| s.reward).sum::<f64>() / samples.len() as f64;
        let b = baseline.unwrap_or(mean);
        let grad = policy_gradient(&samples, b, b.abs().max(1.0), params.temperature);
        for k in 0..NUM_FEATURES {
            params.weights[k] += cfg.lr * grad[k];
        }
        let nb = cfg.baseline_decay * b + (1.0 - cfg.baseline_decay) * mean;
        baseline = Some(nb);
        log::info!("policy update {u}: mean reward {mean:.1}, weights {:?}", params.weights);
        log.push(UpdateLog {
            update: u,
            mean_reward: mean,
            baseline: nb,
            weights: params.weights,
        });
    }
    Ok((params, log))
}
