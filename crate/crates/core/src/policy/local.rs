//! Deterministic low-level controller descending an FMM distance field.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use crate::envsim::{Action, FORWARD_STEP, TURN_DEG};
use crate::geometry::Pose;
use crate::semmap::Grid2;

use super::nav::NavGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalDecision {
    Act(Action),
    /// Within [`REACH_CELLS`] of the goal.
    Reached,
}

/// Chebyshev cell distance at which a goal counts as reached.
pub const REACH_CELLS: usize = 2;
const SEARCH_BUDGET: usize = 6000;
const HEADINGS: usize = 12;

fn heading_index(theta: f64) -> usize {
    ((theta / TURN_DEG).round() as i64).rem_euclid(HEADINGS as i64) as usize
}

fn unit(k: usize) -> (f64, f64) {
    let a = (k as f64 * TURN_DEG).to_radians();
    (a.cos(), a.sin())
}

struct Ctx<'a> {
    field: &'a Grid2<f64>,
    grid: &'a NavGrid,
    goal: (usize, usize),
}

impl Ctx<'_> {
    fn value(&self, x: f64, y: f64) -> f64 {
        match self.grid.cell_of(x, y) {
            Some((i, j)) => self.field.at(i, j),
            None => f64::INFINITY,
        }
    }

    /// Landing point of a forward step if every intermediate sample stays
    /// on cells with a finite distance.
    fn forward(&self, x: f64, y: f64, k: usize) -> Option<(f64, f64)> {
        let (c, s) = unit(k);
        let n = (FORWARD_STEP / self.grid.cell).round().max(1.0) as usize;
        for i in 1..=n {
            let d = FORWARD_STEP * i as f64 / n as f64;
            if !self.value(x + d * c, y + d * s).is_finite() {
                return None;
            }
        }
        Some((x + FORWARD_STEP * c, y + FORWARD_STEP * s))
    }

    fn reached(&self, x: f64, y: f64) -> bool {
        match self.grid.cell_of(x, y) {
            Some((i, j)) => i.abs_diff(self.goal.0) <= REACH_CELLS && j.abs_diff(self.goal.1) <= REACH_CELLS,
            None => false,
        }
    }
}

fn turn_toward(cur: usize, target: usize) -> (Action, usize) {
    let diff = (target + HEADINGS - cur) % HEADINGS;
    if diff == 0 {
        (Action::Forward, 0)
    } else if diff <= HEADINGS / 2 {
        (Action::TurnLeft, diff)
    } else {
        (Action::TurnRight, HEADINGS - diff)
    }
}

/// Next action toward `goal` given a distance field in cells (infinite on
/// blocked or unreachable cells) and the agent pose in the map frame.
pub fn local_step(field: &Grid2<f64>, grid: &NavGrid, goal: (usize, usize), pose: &Pose) -> LocalDecision {
    let ctx = Ctx { field, grid, goal };
    if ctx.reached(pose.x, pose.y) {
        return LocalDecision::Reached;
    }
    if let Some(a) = plan_actions(&ctx, pose) {
        return LocalDecision::Act(a);
    }
    let cur = heading_index(pose.theta);
    let here = ctx.value(pose.x, pose.y);

    // Search budget exhausted: fall back to the best progress per action,
    // the gain of a forward step along heading k divided by the turns
    // needed to face it plus the step itself.
    let mut best: Option<(f64, usize, Action)> = None;
    for k in 0..HEADINGS {
        let Some((lx, ly)) = ctx.forward(pose.x, pose.y, k) else { continue };
        let v = ctx.value(lx, ly);
        let (act, turns) = turn_toward(cur, k);
        let rate = (here - v) / (1 + turns) as f64;
        let better = match best {
            None => true,
            Some((r, t, a)) => {
                rate > r + 1e-12
                    || ((rate - r).abs() <= 1e-12
                        && (turns < t || (turns == t && act == Action::TurnLeft && a == Action::TurnRight)))
            }
        };
        if better {
            best = Some((rate, turns, act));
        }
    }
    match best {
        Some((_, _, a)) => LocalDecision::Act(a),
        None => LocalDecision::Act(Action::TurnLeft),
    }
}

/// Best-first search over exact action kinematics; returns the first action
/// of the cheapest plan found within the budget.
fn plan_actions(ctx: &Ctx, pose: &Pose) -> Option<Action> {
    let key = |x: f64, y: f64, k: usize| ((x * 100.0).round() as i64, (y * 100.0).round() as i64, k);
    let h = |x: f64, y: f64| -> u64 {
        let v = ctx.value(x, y) * ctx.grid.cell;
        // in hundredths of a step so that ties favour fewer actions
        ((v - 0.075).max(0.0) / FORWARD_STEP * 100.0) as u64
    };
    // node: (x, y, heading, cost, first action)
    let mut nodes: Vec<(f64, f64, usize, u64, Option<Action>)> = Vec::new();
    let mut heap = BinaryHeap::new();
    let mut seen: HashMap<(i64, i64, usize), u64> = HashMap::new();
    let k0 = heading_index(pose.theta);
    nodes.push((pose.x, pose.y, k0, 0, None));
    heap.push(Reverse((h(pose.x, pose.y), 0u64, 0usize)));
    seen.insert(key(pose.x, pose.y, k0), 0);
    let mut expanded = 0;
    while let Some(Reverse((_, _, id))) = heap.pop() {
        let (x, y, k, g, first) = nodes[id];
        if ctx.reached(x, y) {
            return first;
        }
        expanded += 1;
        if expanded > SEARCH_BUDGET {
            return None;
        }
        for a in Action::ALL {
            let (nx, ny, nk) = match a {
                Action::Forward => match ctx.forward(x, y, k) {
                    Some((nx, ny)) => (nx, ny, k),
                    None => continue,
                },
                Action::TurnLeft => (x, y, (k + 1) % HEADINGS),
                Action::TurnRight => (x, y, (k + HEADINGS - 1) % HEADINGS),
            };
            let ng = g + 100;
            let kk = key(nx, ny, nk);
            if seen.get(&kk).is_some_and(|&old| old <= ng) {
                continue;
            }
            seen.insert(kk, ng);
            let nid = nodes.len();
            nodes.push((nx, ny, nk, ng, first.or(Some(a))));
            heap.push(Reverse((ng.saturating_add(h(nx, ny)), ng, nid)));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::fmm::fmm_solve;

    fn setup(goal: (usize, usize)) -> (Grid2<f64>, NavGrid) {
        let grid = NavGrid { length: 64, width: 64, cell: 0.05 };
        let blocked = Grid2::new(64, 64, false);
        (fmm_solve(&blocked, &[goal], None), grid)
    }

    #[test]
    fn goal_ahead_goes_forward() {
        let (f, g) = setup((60, 32));
        let d = local_step(&f, &g, (60, 32), &Pose::new(0.025, 0.025, 0.0));
        assert_eq!(d, LocalDecision::Act(Action::Forward));
    }

    #[test]
    fn goal_behind_turns_left() {
        let (f, g) = setup((4, 32));
        let d = local_step(&f, &g, (4, 32), &Pose::new(0.025, 0.025, 0.0));
        assert_eq!(d, LocalDecision::Act(Action::TurnLeft));
    }

    #[test]
    fn at_goal_is_reached() {
        let (f, g) = setup((32, 32));
        assert_eq!(local_step(&f, &g, (32, 32), &Pose::new(0.06, 0.01, 90.0)), LocalDecision::Reached);
    }
}
