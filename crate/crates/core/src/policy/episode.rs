//! One exploration episode: act, observe, fuse, repeat.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envsim::{render, reset, step, Action, Scene, AGENT_RADIUS};
use crate::error::{Result, SealError};
use crate::geometry::{CameraModel, DepthImage, Pose};
use crate::perception::{predict_raw, NoiseProfile, PerceptionModel, ScoreImage, ViewKey};
use crate::seeding::{rng_for, tags};
use crate::semmap::{new_map, update_map_observed, Grid2, MapDims, SemanticVoxelMap};

use super::fmm::{fmm_solve, Window};
use super::global::{candidates, nearest_frontier, select_from, GlobalPolicyParams, NUM_FEATURES};
use super::local::{local_step, LocalDecision};
use super::nav::{NavGrid, NavState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    GainfulCuriosity,
    Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplorationPolicy {
    /// Uniform random action every step.
    Random,
    /// Head for the geodesically nearest frontier cell.
    Frontier,
    /// Sample waypoints from the linear scorer.
    Learned { params: GlobalPolicyParams, reward: RewardKind },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub steps: usize,
    pub map_dims: MapDims,
    pub s_hat: f32,
    /// Lower edge of the mid-confidence band `(mid_low, s_hat]`.
    pub mid_low: f32,
    /// Local steps between waypoint samples.
    pub global_period: usize,
    pub record_frames: bool,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            map_dims: MapDims::default(),
            s_hat: 0.9,
            mid_low: 0.3,
            global_period: 25,
            record_frames: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    pub pose: Pose,
    pub action: Action,
    pub collided: bool,
    pub reward: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalStepRecord {
    pub step: u32,
    pub waypoint: (usize, usize),
    pub features: [f64; NUM_FEATURES],
    pub expected: [f64; NUM_FEATURES],
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<StepRecord>,
    pub global_steps: Vec<GlobalStepRecord>,
    /// Gainful-curiosity reward after the last update.
    pub final_reward: u64,
    /// Occupied voxels after the last update.
    pub final_coverage: u64,
}

impl EpisodeTrace {
    pub fn terminal(&self, kind: RewardKind) -> u64 {
        match kind {
            RewardKind::GainfulCuriosity => self.final_reward,
            RewardKind::Coverage => self.final_coverage,
        }
    }

    /// CSV with columns step, x, y, theta, action, reward.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "x", "y", "theta", "action", "reward"])?;
        for s in &self.steps {
            w.write_record([
                s.step.to_string(),
                s.pose.x.to_string(),
                s.pose.y.to_string(),
                s.pose.theta.to_string(),
                s.action.name().to_string(),
                s.reward.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Poses from a trace written by [`EpisodeTrace::write_csv`], in step order.
pub fn read_trace_poses(path: &std::path::Path) -> Result<Vec<Pose>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut poses = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| SealError::Format(format!("bad trace row {:?}", rec.position().map(|p| p.line()))))
        };
        poses.push(Pose::new(field(1)?, field(2)?, field(3)?));
    }
    Ok(poses)
}

/// Observation recorded after each action.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeFrame {
    pub pose: Pose,
    pub depth: DepthImage,
    pub raw: ScoreImage,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub trace: EpisodeTrace,
    pub map: SemanticVoxelMap,
    pub frames: Vec<EpisodeFrame>,
}

/// Perception used while exploring.
#[derive(Debug, Clone, Copy)]
pub struct Perception<'a> {
    pub model: &'a PerceptionModel,
    pub noise: &'a NoiseProfile,
}

const FIELD_MARGIN: usize = 40;

struct Navigator {
    waypoint: Option<(usize, usize)>,
    since_global: usize,
    field: Option<Grid2<f64>>,
}

impl Navigator {
    fn field_for(&mut self, nav: &mut NavState, agent: (usize, usize), goal: (usize, usize)) -> &Grid2<f64> {
        if self.field.is_none() || nav.dirty {
            nav.dirty = false;
            let blocked = nav.blocked_grid();
            let (l, w) = (nav.grid.length, nav.grid.width);
            let win = Window {
                x0: agent.0.min(goal.0).saturating_sub(FIELD_MARGIN),
                y0: agent.1.min(goal.1).saturating_sub(FIELD_MARGIN),
                x1: (agent.0.max(goal.0) + FIELD_MARGIN + 1).min(l),
                y1: (agent.1.max(goal.1) + FIELD_MARGIN + 1).min(w),
            };
            let mut f = fmm_solve(&blocked, &[goal], Some(win));
            if !reachable_near(&f, agent) {
                f = fmm_solve(&blocked, &[goal], None);
            }
            self.field = Some(f);
        }
        self.field.as_ref().unwrap()
    }
}

fn reachable_near(f: &Grid2<f64>, c: (usize, usize)) -> bool {
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            let (x, y) = (c.0 as i64 + dx, c.1 as i64 + dy);
            if x >= 0 && y >= 0 && (x as usize) < f.width && (y as usize) < f.height && f.at(x as usize, y as usize).is_finite() {
                return true;
            }
        }
    }
    false
}

fn choose_waypoint(
    policy: &ExplorationPolicy,
    nav: &NavState,
    agent: (usize, usize),
    step: u32,
    rng: &mut impl Rng,
    trace: &mut EpisodeTrace,
) -> Option<(usize, usize)> {
    match policy {
        ExplorationPolicy::Random => None,
        ExplorationPolicy::Frontier => nearest_frontier(nav, agent).or_else(|| {
            let c = candidates(nav, agent);
            if c.cells.is_empty() {
                None
            } else {
                Some(c.cells[rng.gen_range(0..c.cells.len())])
            }
        }),
        ExplorationPolicy::Learned { params, .. } => {
            let c = candidates(nav, agent);
            let choice = select_from(&c, params, rng).ok()?;
            trace.global_steps.push(GlobalStepRecord {
                step,
                waypoint: choice.waypoint,
                features: choice.features,
                expected: choice.expected,
                log_prob: choice.log_prob,
            });
            Some(choice.waypoint)
        }
    }
}

pub fn run_episode(
    scene: &Scene,
    policy: &ExplorationPolicy,
    perception: Perception,
    cam: &CameraModel,
    cfg: &EpisodeConfig,
) -> Result<EpisodeResult> {
    let mut state = reset(scene, cfg.seed)?;
    let mut map = new_map(cfg.map_dims)?.with_origin(state.pose);
    let mut nav = NavState::new(NavGrid::of_map(&map), cfg.s_hat, cfg.mid_low);
    let mut rng = rng_for(&[cfg.seed, scene.seed, tags::EPISODE]);
    let mut trace = EpisodeTrace::default();
    let mut frames = Vec::new();
    let mut navr = Navigator {
        waypoint: None,
        since_global: 0,
        field: None,
    };
    let period = cfg.global_period.max(1);

    for t in 0..cfg.steps {
        let pose_map = state.pose.relative_to(&map.origin);
        nav.record_visit(&pose_map);
        let step_no = t as u32 + 1;
        let agent = nav.grid.cell_of(pose_map.x, pose_map.y);
        let action = match (policy, agent) {
            (ExplorationPolicy::Random, _) | (_, None) => Action::ALL[rng.gen_range(0..3)],
            (_, Some(agent)) => {
                if navr.since_global >= period || navr.waypoint.is_some_and(|w| nav.is_blocked(w.0, w.1)) {
                    navr.waypoint = None;
                }
                let mut act = None;
                for _attempt in 0..2 {
                    if navr.waypoint.is_none() {
                        navr.waypoint = choose_waypoint(policy, &nav, agent, step_no, &mut rng, &mut trace);
                        navr.since_global = 0;
                        navr.field = None;
                    }
                    let Some(goal) = navr.waypoint else { break };
                    let field = navr.field_for(&mut nav, agent, goal);
                    match local_step(field, &nav.grid, goal, &pose_map) {
                        LocalDecision::Act(a) => {
                            act = Some(a);
                            break;
                        }
                        LocalDecision::Reached => navr.waypoint = None,
                    }
                }
                // Nothing left to approach: spin in place to gather views.
                act.unwrap_or(Action::TurnLeft)
            }
        };
        navr.since_global += 1;

        let next = step(scene, &state, action);
        if next.collided_last_step {
            let [fx, fy] = pose_map.forward();
            let ahead = AGENT_RADIUS + 0.05;
            if let Some((x, y)) = nav.grid.cell_of(pose_map.x + ahead * fx, pose_map.y + ahead * fy) {
                nav.mark_obstacle(x, y);
            }
        }
        state = next;

        let gt = render(scene, &state.pose, cam);
        let view = ViewKey {
            scene_seed: scene.seed,
            pose: state.pose,
        };
        let raw = predict_raw(&gt, perception.noise, &view, cam.depth_max);
        let calibrated = perception.model.calibrate_image(&raw);
        update_map_observed(&mut map, &gt.depth, &calibrated, &state.pose, cam, &mut nav)?;
        trace.steps.push(StepRecord {
            step: step_no,
            pose: state.pose,
            action,
            collided: state.collided_last_step,
            reward: nav.gainful,
        });
        if cfg.record_frames {
            frames.push(EpisodeFrame {
                pose: state.pose,
                depth: gt.depth,
                raw,
            });
        }
    }
    trace.final_reward = nav.gainful;
    trace.final_coverage = nav.occupied;
    Ok(EpisodeResult { trace, map, frames })
}
