//! Exploration: waypoint selection, fast-marching planning, the local
//! controller, episodes and policy training.

pub mod episode;
pub mod fmm;
pub mod global;
pub mod local;
pub mod nav;
pub mod train;

use serde::{Deserialize, Serialize};

pub use episode::{read_trace_poses, run_episode, EpisodeConfig, EpisodeFrame, EpisodeResult, EpisodeTrace, ExplorationPolicy, Perception, RewardKind};
pub use fmm::fmm_distance_field;
pub use global::{select_waypoint, GlobalPolicyParams, WaypointChoice};
pub use local::{local_step, LocalDecision};
pub use train::{train_policy, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    Frontier,
    Coverage,
    Gainful,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [PolicyKind::Random, PolicyKind::Frontier, PolicyKind::Coverage, PolicyKind::Gainful];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Frontier => "frontier",
            PolicyKind::Coverage => "coverage",
            PolicyKind::Gainful => "gainful",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Policy object for a kind. Learned kinds use `params`, which should come
/// from [`train_policy`] with the matching reward.
pub fn baseline_policy(kind: PolicyKind, params: &GlobalPolicyParams) -> ExplorationPolicy {
    match kind {
        PolicyKind::Random => ExplorationPolicy::Random,
        PolicyKind::Frontier => ExplorationPolicy::Frontier,
        PolicyKind::Coverage => ExplorationPolicy::Learned {
            params: params.clone(),
            reward: RewardKind::Coverage,
        },
        PolicyKind::Gainful => ExplorationPolicy::Learned {
            params: params.clone(),
            reward: RewardKind::GainfulCuriosity,
        },
    }
}

/// Serialized policy file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub kind: PolicyKind,
    pub feature_names: Vec<String>,
    pub weights: [f64; global::NUM_FEATURES],
    pub temperature: f64,
    pub seed: u64,
    pub training: Vec<train::UpdateLog>,
}

impl PolicyFile {
    pub fn new(kind: PolicyKind, params: &GlobalPolicyParams, training: Vec<train::UpdateLog>) -> Self {
        Self {
            kind,
            feature_names: global::FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            weights: params.weights,
            temperature: params.temperature,
            seed: params.seed,
            training,
        }
    }

    pub fn params(&self) -> GlobalPolicyParams {
        GlobalPolicyParams {
            weights: self.weights,
            temperature: self.temperature,
            seed: self.seed,
        }
    }
}
