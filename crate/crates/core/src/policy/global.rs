//! Linear waypoint scorer with softmax sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SealError};
use crate::semmap::Grid2;

use super::fmm::fmm_solve;
use super::local::REACH_CELLS;
use super::nav::{bfs_distance, Integral, NavState};

pub const NUM_FEATURES: usize = 4;
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "frontier_proximity",
    "mid_confidence_count",
    "geodesic_distance",
    "revisit_penalty",
];

/// Candidate lattice stride in cells (0.20 m).
pub const CANDIDATE_STRIDE: usize = 4;
/// Neighborhood half-size for the count features, in cells (1 m).
const NEIGHBORHOOD: usize = 20;
const MID_CONF_SCALE: f64 = 1000.0;
const REVISIT_SCALE: f64 = 25.0;
const GEODESIC_SCALE_M: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPolicyParams {
    pub weights: [f64; NUM_FEATURES],
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GlobalPolicyParams {
    fn default() -> Self {
        Self {
            weights: [1.0, 1.0, -1.0, -1.0],
            temperature: 0.2,
            seed: 0,
        }
    }
}

impl GlobalPolicyParams {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !w.is_finite()) || !(self.temperature > 0.0) {
            return Err(SealError::Config("policy weights must be finite and temperature > 0".into()));
        }
        Ok(())
    }
}

/// Candidate cells with their feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub cells: Vec<(usize, usize)>,
    pub features: Vec<[f64; NUM_FEATURES]>,
}

/// Enumerate reachable unblocked cells on the stride lattice and compute
/// their features. `agent` is the agent's cell.
pub fn candidates(nav: &NavState, agent: (usize, usize)) -> Candidates {
    let mut blocked = nav.blocked_grid();
    // The agent may stand in a cell the dilated obstacles touch after a
    // bump; let planning start from it anyway.
    blocked.set(agent.0, agent.1, false);
    let geo = fmm_solve(&blocked, &[agent], None);
    let (l, w) = (nav.grid.length, nav.grid.width);
    let frontier = nav.frontier();
    let fdist = bfs_distance(&frontier, |_, _| true);
    let mid = Integral::new(&nav.mid_conf);
    let vis = Integral::new(&nav.visits);
    let ln_scale = (1.0 + MID_CONF_SCALE).ln();
    let mut out = Candidates {
        cells: Vec::new(),
        features: Vec::new(),
    };
    for y in (0..w).step_by(CANDIDATE_STRIDE) {
        for x in (0..l).step_by(CANDIDATE_STRIDE) {
            let g = geo.at(x, y);
            if !g.is_finite() || blocked.at(x, y) || (x, y) == agent {
                continue;
            }
            let fd = fdist.at(x, y);
            let f0 = if fd == u32::MAX { 0.0 } else { 1.0 / (1.0 + fd as f64 * nav.grid.cell) };
            let f1 = ((1.0 + mid.window(x, y, NEIGHBORHOOD, w)).ln() / ln_scale).min(1.0);
            let f2 = g * nav.grid.cell / GEODESIC_SCALE_M;
            let f3 = (vis.window(x, y, NEIGHBORHOOD, w) / REVISIT_SCALE).min(1.0);
            out.cells.push((x, y));
            out.features.push([f0, f1, f2, f3]);
        }
    }
    out
}

/// Softmax probabilities of `w . f / temperature`.
pub fn softmax_probs(features: &[[f64; NUM_FEATURES]], params: &GlobalPolicyParams) -> Vec<f64> {
    let logits: Vec<f64> = features
        .iter()
        .map(|f| f.iter().zip(&params.weights).map(|(a, b)| a * b).sum::<f64>() / params.temperature)
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = ex.iter().sum();
    ex.iter().map(|e| e / z).collect()
}

/// Log-probabilities computed stably.
pub fn log_softmax(features: &[[f64; NUM_FEATURES]], params: &GlobalPolicyParams) -> Vec<f64> {
    let logits: Vec<f64> = features
        .iter()
        .map(|f| f.iter().zip(&params.weights).map(|(a, b)| a * b).sum::<f64>() / params.temperature)
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Expected feature vector under the policy.
pub fn expected_features(features: &[[f64; NUM_FEATURES]], probs: &[f64]) -> [f64; NUM_FEATURES] {
    let mut e = [0.0; NUM_FEATURES];
    for (f, p) in features.iter().zip(probs) {
        for k in 0..NUM_FEATURES {
            e[k] += p * f[k];
        }
    }
    e
}

/// Gradient of `log pi(chosen)` with respect to the weights.
pub fn log_prob_gradient(chosen: &[f64; NUM_FEATURES], expected: &[f64; NUM_FEATURES], temperature: f64) -> [f64; NUM_FEATURES] {
    let mut g = [0.0; NUM_FEATURES];
    for k in 0..NUM_FEATURES {
        g[k] = (chosen[k] - expected[k]) / temperature;
    }
    g
}

/// Index drawn from `probs` with one uniform variate.
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointChoice {
    pub waypoint: (usize, usize),
    pub log_prob: f64,
    pub features: [f64; NUM_FEATURES],
    pub expected: [f64; NUM_FEATURES],
    pub candidates: usize,
}

pub fn select_from(cands: &Candidates, params: &GlobalPolicyParams, rng: &mut impl Rng) -> Result<WaypointChoice> {
    if cands.cells.is_empty() {
        return Err(SealError::NoReachableCells);
    }
    let probs = softmax_probs(&cands.features, params);
    let logp = log_softmax(&cands.features, params);
    let i = sample_index(&probs, rng);
    Ok(WaypointChoice {
        waypoint: cands.cells[i],
        log_prob: logp[i],
        features: cands.features[i],
        expected: expected_features(&cands.features, &probs),
        candidates: cands.cells.len(),
    })
}

/// Sample a waypoint for an agent standing in cell `agent`.
pub fn select_waypoint(nav: &NavState, agent: (usize, usize), params: &GlobalPolicyParams, rng: &mut impl Rng) -> Result<WaypointChoice> {
    select_from(&candidates(nav, agent), params, rng)
}

/// Nearest frontier cell by geodesic distance from `agent`.
pub fn nearest_frontier(nav: &NavState, agent: (usize, usize)) -> Option<(usize, usize)> {
    let mut blocked = nav.blocked_grid();
    blocked.set(agent.0, agent.1, false);
    let geo = fmm_solve(&blocked, &[agent], None);
    let frontier = nav.frontier();
    let mut best: Option<(f64, (usize, usize))> = None;
    for y in 0..frontier.height {
        for x in 0..frontier.width {
            if !frontier.at(x, y) || blocked.at(x, y) || (x.abs_diff(agent.0) <= REACH_CELLS && y.abs_diff(agent.1) <= REACH_CELLS) {
                continue;
            }
            let d = geo.at(x, y);
            if d.is_finite() && best.is_none_or(|b| d < b.0) {
                best = Some((d, (x, y)));
            }
        }
    }
    best.map(|b| b.1)
}

/// Grid of candidate scores, mainly for inspection.
pub fn score_grid(nav: &NavState, cands: &Candidates, params: &GlobalPolicyParams) -> Grid2<f64> {
    let mut g = Grid2::new(nav.grid.length, nav.grid.width, f64::NAN);
    for (c, f) in cands.cells.iter().zip(&cands.features) {
        g.set(c.0, c.1, f.iter().zip(&params.weights).map(|(a, b)| a * b).sum());
    }
    g
}
