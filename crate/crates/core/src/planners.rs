//! Exploration policies and the loop that drives an episode with one.
//!
//! Every policy answers one question per step: which action next, or is
//! there nothing left to explore.

use std::collections::VecDeque;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::dynamics::{apply_action, normalize_angle, ActionId, MotionTable, Pose};
use crate::episode::{CoverageSource, Episode, EpisodeError, Observation, TerminalReason};
use crate::grid::{CellState, Grid2D};
use crate::occupancy::inflate;
use crate::protocol::{Endpoint, FrameChannel, PolicyRequest, PolicyResponse, ProtocolError};
use crate::sensor::SensorConfig;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("external policy: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("unknown planner {0:?}")]
    UnknownKind(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Act(ActionId),
    /// Nothing reachable is left to explore.
    Complete,
}

pub trait Policy: Send {
    fn name(&self) -> &'static str;

    fn decide(&mut self, env: &Episode) -> Result<Decision, PlannerError>;
}

/// A connected group of frontier cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Frontier {
    /// Row-major indices of the member cells, ascending.
    pub cells: Vec<usize>,
    /// Member cell closest to the component's mean position.
    pub centroid: usize,
    /// Grid path length in metres from the robot, once planned.
    pub path_cost: f64,
}

const N4: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

fn is_frontier_cell(map: &Grid2D, x: usize, y: usize) -> bool {
    map.get(x, y) == CellState::Free
        && N4
            .iter()
            .any(|&(dx, dy)| map.get_signed(x as i64 + dx, y as i64 + dy) == Some(CellState::Unknown))
}

/// Free cells with an unknown 4-neighbour, grouped 8-connected.
pub fn detect_frontiers(map: &Grid2D) -> Vec<Frontier> {
    let (w, h) = (map.width(), map.height());
    let mut is_f = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            is_f[y * w + x] = is_frontier_cell(map, x, y);
        }
    }
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !is_f[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut cells = Vec::new();
        while let Some(i) = stack.pop() {
            cells.push(i);
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if is_f[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        cells.sort_unstable();
        let n = cells.len() as f64;
        let mx = cells.iter().map(|&i| (i % w) as f64).sum::<f64>() / n;
        let my = cells.iter().map(|&i| (i / w) as f64).sum::<f64>() / n;
        let centroid = *cells
            .iter()
            .min_by(|&&a, &&b| {
                let da = ((a % w) as f64 - mx).powi(2) + ((a / w) as f64 - my).powi(2);
                let db = ((b % w) as f64 - mx).powi(2) + ((b / w) as f64 - my).powi(2);
                da.total_cmp(&db)
            })
            .expect("component is non-empty");
        out.push(Frontier {
            cells,
            centroid,
            path_cost: f64::INFINITY,
        });
    }
    out
}

pub const UNREACHABLE: u32 = u32::MAX;

/// 4-connected breadth-first distances (in cells) from `start`. The start
/// cell is entered even if it is not passable.
pub fn bfs_distances(passable: &[bool], width: usize, start: usize) -> (Vec<u32>, Vec<usize>) {
    let n = passable.len();
    let mut dist = vec![UNREACHABLE; n];
    let mut parent = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    dist[start] = 0;
    queue.push_back(start);
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % width, i / width);
        let nbrs = [
            (x + 1 < width).then(|| i + 1),
            (x > 0).then(|| i - 1),
            (i + width < n).then(|| i + width),
            (y > 0).then(|| i - width),
        ];
        for j in nbrs.into_iter().flatten() {
            if passable[j] && dist[j] == UNREACHABLE {
                dist[j] = dist[i] + 1;
                parent[j] = i;
                queue.push_back(j);
            }
        }
    }
    (dist, parent)
}

fn trace_path(parent: &[usize], start: usize, goal: usize) -> Vec<usize> {
    let mut path = vec![goal];
    let mut cur = goal;
    while cur != start {
        cur = parent[cur];
        path.push(cur);
    }
    path.reverse();
    path
}

/// Cells the planner may route through: free in the inflated map.
pub fn passable_cells(inflated: &Grid2D) -> Vec<bool> {
    inflated.cells().iter().map(|&c| c == CellState::Free).collect()
}

/// Nearest frontier by path cost (ties to the lower centroid index) and the
/// path to its goal cell, start first. The goal is the centroid when
/// reachable, otherwise the closest reachable member.
pub fn nearest_frontier(inflated: &Grid2D, start: usize) -> Option<(Frontier, Vec<usize>)> {
    let passable = passable_cells(inflated);
    let (dist, parent) = bfs_distances(&passable, inflated.width(), start);
    let res = inflated.resolution();
    let mut best: Option<(u32, usize, Frontier)> = None;
    for mut f in detect_frontiers(inflated) {
        let goal = if dist[f.centroid] != UNREACHABLE {
            f.centroid
        } else {
            match f.cells.iter().copied().filter(|&c| dist[c] != UNREACHABLE).min_by_key(|&c| (dist[c], c)) {
                Some(c) => c,
                None => continue,
            }
        };
        f.path_cost = dist[goal] as f64 * res;
        let key = (dist[goal], f.centroid);
        if best.as_ref().is_none_or(|(d, _, b)| key < (*d, b.centroid)) {
            best = Some((dist[goal], goal, f));
        }
    }
    best.map(|(_, goal, f)| (f, trace_path(&parent, start, goal)))
}

pub const FORWARD_BAND: f64 = 0.35;
pub const TURN_BAND: f64 = 1.0;

/// Heading error (target bearing minus yaw) to an action: straight ahead,
/// forward with a turn, or turn in place. Negative errors turn right.
pub fn action_for_heading_error(err: f64) -> ActionId {
    let a = err.abs();
    if a < FORWARD_BAND {
        ActionId::FORWARD
    } else if a <= TURN_BAND {
        if err < 0.0 {
            ActionId::FORWARD_RIGHT
        } else {
            ActionId::FORWARD_LEFT
        }
    } else if err < 0.0 {
        ActionId::TURN_RIGHT
    } else {
        ActionId::TURN_LEFT
    }
}

/// As [`action_for_heading_error`], but a pure turn keeps the direction of
/// a pure turn just taken, so targets near ±π do not flip it every step.
pub fn action_for_heading(err: f64, last: ActionId) -> ActionId {
    let a = action_for_heading_error(err);
    let turning = |x: ActionId| x == ActionId::TURN_LEFT || x == ActionId::TURN_RIGHT;
    if turning(a) && turning(last) {
        last
    } else {
        a
    }
}

fn bearing_error(pose: &Pose, target: (f64, f64)) -> f64 {
    normalize_angle((target.1 - pose.y).atan2(target.0 - pose.x) - pose.yaw)
}

/// Path-following with a safety shield against the observed map.
#[derive(Clone, Debug)]
pub struct LocalController {
    pub lookahead: usize,
    pub robot_radius_m: f64,
}

impl LocalController {
    pub fn new(robot_radius_m: f64) -> Self {
        Self {
            lookahead: 3,
            robot_radius_m,
        }
    }

    /// Unsafe if the pose's cell is not observed free, or an observed
    /// occupied cell center lies within the robot radius.
    pub fn pose_is_safe(&self, pose: &Pose, observed: &Grid2D) -> bool {
        let (cx, cy) = observed.world_to_cell_signed(pose.x, pose.y);
        if observed.get_signed(cx, cy) != Some(CellState::Free) {
            return false;
        }
        let reach = (self.robot_radius_m / observed.resolution()).ceil() as i64 + 1;
        let r2 = self.robot_radius_m * self.robot_radius_m + 1e-12;
        for y in cy - reach..=cy + reach {
            for x in cx - reach..=cx + reach {
                let (wx, wy) = observed.cell_center(x, y);
                if (wx - pose.x).powi(2) + (wy - pose.y).powi(2) > r2 {
                    continue;
                }
                if matches!(observed.get_signed(x, y), None | Some(CellState::Occupied)) {
                    return false;
                }
            }
        }
        true
    }

    fn action_is_safe(&self, pose: &Pose, action: ActionId, last: ActionId, table: &MotionTable, observed: &Grid2D) -> bool {
        let (p1, _) = apply_action(pose, action, last, table);
        let (p2, _) = apply_action(&p1, ActionId::HOVER, action, table);
        self.pose_is_safe(&p1, observed) && self.pose_is_safe(&p2, observed)
    }

    /// Steer toward `target`, else toward `near` (the next path cell). If
    /// both preferred actions are unsafe, take the safe action that ends
    /// closest to `near` (heading error weighted by 0.3 m/rad); hovering is
    /// the last resort because it never changes the view.
    pub fn steer(
        &self,
        pose: &Pose,
        last: ActionId,
        target: (f64, f64),
        near: (f64, f64),
        table: &MotionTable,
        observed: &Grid2D,
    ) -> ActionId {
        for t in [target, near] {
            let preferred = action_for_heading(bearing_error(pose, t), last);
            if self.action_is_safe(pose, preferred, last, table, observed) {
                return preferred;
            }
        }
        let mut best: Option<(f64, ActionId)> = None;
        for a in ActionId::all().filter(|&a| a != ActionId::HOVER) {
            if !self.action_is_safe(pose, a, last, table, observed) {
                continue;
            }
            let (p1, _) = apply_action(pose, a, last, table);
            let d = ((near.0 - p1.x).powi(2) + (near.1 - p1.y).powi(2)).sqrt();
            let cost = d + 0.3 * bearing_error(&p1, near).abs();
            if best.is_none_or(|(c, _)| cost < c) {
                best = Some((cost, a));
            }
        }
        best.map_or(ActionId::HOVER, |(_, a)| a)
    }

    /// Next action along `path` (cell indices on `observed`, start first).
    pub fn follow(&self, pose: &Pose, last: ActionId, path: &[usize], table: &MotionTable, observed: &Grid2D) -> ActionId {
        let w = observed.width();
        let center = |i: usize| observed.cell_center((i % w) as i64, (i / w) as i64);
        let (target, near) = if path.len() > 1 {
            (center(path[self.lookahead.min(path.len() - 1)]), center(path[1]))
        } else {
            // at the goal: face the unknown side
            let g = path[0];
            let (gx, gy) = ((g % w) as i64, (g / w) as i64);
            let unknown: Vec<(f64, f64)> = N4
                .iter()
                .filter(|&&(dx, dy)| observed.get_signed(gx + dx, gy + dy) == Some(CellState::Unknown))
                .map(|&(dx, dy)| observed.cell_center(gx + dx, gy + dy))
                .collect();
            let t = if unknown.is_empty() {
                center(g)
            } else {
                let n = unknown.len() as f64;
                (
                    unknown.iter().map(|p| p.0).sum::<f64>() / n,
                    unknown.iter().map(|p| p.1).sum::<f64>() / n,
                )
            };
            (t, t)
        };
        self.steer(pose, last, target, near, table, observed)
    }
}

/// One step of nearest-frontier exploration on an observed coarse map.
pub fn plan_nearest_frontier(
    observed: &Grid2D,
    pose: &Pose,
    last: ActionId,
    table: &MotionTable,
    controller: &LocalController,
) -> Decision {
    let inflated = inflate(observed, controller.robot_radius_m);
    let Some((cx, cy)) = observed.world_to_cell(pose.x, pose.y) else {
        return Decision::Complete;
    };
    match nearest_frontier(&inflated, observed.index(cx, cy)) {
        Some((_, path)) => Decision::Act(controller.follow(pose, last, &path, table, observed)),
        None => Decision::Complete,
    }
}

/// Nearest-frontier exploration; coverage is judged on the observed map.
#[derive(Clone, Debug)]
pub struct FrontierPolicy {
    controller: LocalController,
}

impl FrontierPolicy {
    pub fn new(robot_radius_m: f64) -> Self {
        Self {
            controller: LocalController::new(robot_radius_m),
        }
    }
}

impl Policy for FrontierPolicy {
    fn name(&self) -> &'static str {
        "frontier"
    }

    fn decide(&mut self, env: &Episode) -> Result<Decision, PlannerError> {
        Ok(plan_nearest_frontier(
            env.observed_low(),
            &env.pose(),
            env.last_action(),
            env.motion_table(),
            &self.controller,
        ))
    }
}

/// Same goal selection as [`FrontierPolicy`]; the episode scores coverage
/// on the thresholded prediction instead.
#[derive(Clone, Debug)]
pub struct FrontierPredPolicy {
    inner: FrontierPolicy,
}

impl FrontierPredPolicy {
    pub fn new(robot_radius_m: f64) -> Self {
        Self {
            inner: FrontierPolicy::new(robot_radius_m),
        }
    }
}

impl Policy for FrontierPredPolicy {
    fn name(&self) -> &'static str {
        "frontier_pred"
    }

    fn decide(&mut self, env: &Episode) -> Result<Decision, PlannerError> {
        self.inner.decide(env)
    }
}

/// Geometry the greedy look-ahead needs; everything else comes from the
/// observation itself.
#[derive(Clone, Debug, PartialEq)]
pub struct GreedyParams {
    pub high_resolution: f64,
    pub thres_resolution: f64,
    pub fov_rad: f64,
    pub max_range_m: f64,
    pub ray_count: u32,
    pub motion: MotionTable,
}

impl Default for GreedyParams {
    fn default() -> Self {
        let s = SensorConfig::default();
        Self {
            high_resolution: 0.05,
            thres_resolution: 0.2,
            fov_rad: s.fov_rad,
            max_range_m: s.max_range_m,
            ray_count: s.ray_count,
            motion: MotionTable::appendix(),
        }
    }
}

/// Ego cell holding a robot-relative position; the robot sits at the
/// center of the middle cell.
fn ego_cell(grid: &Grid2D, x: f64, y: f64, res: f64) -> (i64, i64) {
    let c = (grid.width() / 2) as f64;
    ((c + 0.5 + x / res).floor() as i64, (c + 0.5 + y / res).floor() as i64)
}

fn ego_blocked(grid: &Grid2D, p: &Pose, res: f64) -> bool {
    let (x, y) = ego_cell(grid, p.x, p.y, res);
    !matches!(grid.get_signed(x, y), Some(CellState::Free | CellState::Unknown))
}

/// Distinct unknown cells of `grid` seen from `pose` by rays that stop at
/// the first occupied cell.
pub fn visible_unknown(grid: &Grid2D, pose: &Pose, params: &GreedyParams) -> usize {
    let res = params.thres_resolution;
    let c = (grid.width() / 2) as f64 + 0.5;
    let (px, py) = (c + pose.x / res, c + pose.y / res);
    let max_t = params.max_range_m / res;
    let mut seen = vec![false; grid.len()];
    let mut count = 0;
    for k in 0..params.ray_count {
        let angle = pose.yaw - params.fov_rad / 2.0 + params.fov_rad * (k as f64 + 0.5) / params.ray_count as f64;
        let (dx, dy) = (angle.cos(), angle.sin());
        let (mut cx, mut cy) = (px.floor() as i64, py.floor() as i64);
        let sx: i64 = if dx > 0.0 { 1 } else { -1 };
        let sy: i64 = if dy > 0.0 { 1 } else { -1 };
        let next = |p: f64, cell: i64, d: f64| {
            if d > 0.0 {
                (cell as f64 + 1.0 - p) / d
            } else if d < 0.0 {
                (cell as f64 - p) / d
            } else {
                f64::INFINITY
            }
        };
        let mut tx = next(px, cx, dx);
        let mut ty = next(py, cy, dy);
        let (ddx, ddy) = (1.0 / dx.abs(), 1.0 / dy.abs());
        loop {
            match grid.get_signed(cx, cy) {
                None | Some(CellState::Occupied) => break,
                Some(CellState::Unknown) => {
                    let i = grid.index(cx as usize, cy as usize);
                    if !seen[i] {
                        seen[i] = true;
                        count += 1;
                    }
                }
                _ => {}
            }
            if tx.min(ty) > max_t {
                break;
            }
            if tx < ty {
                cx += sx;
                tx += ddx;
            } else {
                cy += sy;
                ty += ddy;
            }
        }
    }
    count
}

/// One-step look-ahead on the observation: among actions whose end pose
/// and hover successor avoid blocking cells of `s_high_ego`, pick the one
/// that sees the most unknown cells of `s_thres_ego`. Ties go to the lower
/// action index; if every action is blocked, hover.
pub fn plan_greedy_pred(obs: &Observation, params: &GreedyParams) -> ActionId {
    let origin = Pose {
        x: 0.0,
        y: 0.0,
        yaw: 0.0,
    };
    let mut best: Option<(usize, ActionId)> = None;
    for a in ActionId::all() {
        let (p1, _) = apply_action(&origin, a, obs.a_last, &params.motion);
        let (p2, _) = apply_action(&p1, ActionId::HOVER, a, &params.motion);
        if ego_blocked(&obs.s_high_ego, &p1, params.high_resolution)
            || ego_blocked(&obs.s_high_ego, &p2, params.high_resolution)
        {
            continue;
        }
        let gain = visible_unknown(&obs.s_thres_ego, &p1, params);
        if best.is_none_or(|(g, _)| gain > g) {
            best = Some((gain, a));
        }
    }
    best.map_or(ActionId::HOVER, |(_, a)| a)
}

#[derive(Clone, Debug, Default)]
pub struct GreedyPredPolicy {
    params: GreedyParams,
}

impl GreedyPredPolicy {
    pub fn new(params: GreedyParams) -> Self {
        Self { params }
    }
}

impl Policy for GreedyPredPolicy {
    fn name(&self) -> &'static str {
        "greedy_pred"
    }

    fn decide(&mut self, env: &Episode) -> Result<Decision, PlannerError> {
        Ok(Decision::Act(plan_greedy_pred(&env.observation(), &self.params)))
    }
}

/// Codes sent for each observation grid.
pub fn grid_codes(grid: &Grid2D) -> Vec<i8> {
    grid.cells().iter().map(|c| c.code()).collect()
}

/// Rebuild an observation from a policy request, assuming the default
/// grid resolutions.
pub fn observation_from_request(req: &PolicyRequest, params: &GreedyParams) -> Option<Observation> {
    let grid = |codes: &[i8], res: f64| -> Option<Grid2D> {
        let cells = codes.iter().map(|&v| CellState::from_code(v)).collect::<Option<Vec<_>>>()?;
        Some(Grid2D::from_cells(req.width, req.height, res, [0.0, 0.0], cells))
    };
    Some(Observation {
        s_high_ego: grid(&req.high, params.high_resolution)?,
        s_thres_ego: grid(&req.thres, params.thres_resolution)?,
        a_last: ActionId::new(req.prev_action)?,
    })
}

/// Sends each observation to an external process over PLRQ/PLRS and plays
/// back the returned action.
pub struct ExternalPolicy {
    channel: FrameChannel,
}

impl ExternalPolicy {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, PlannerError> {
        Ok(Self {
            channel: FrameChannel::open(endpoint, timeout)?,
        })
    }
}

impl Policy for ExternalPolicy {
    fn name(&self) -> &'static str {
        "external"
    }

    fn decide(&mut self, env: &Episode) -> Result<Decision, PlannerError> {
        let obs = env.observation();
        let req = PolicyRequest {
            width: obs.s_high_ego.width(),
            height: obs.s_high_ego.height(),
            high: grid_codes(&obs.s_high_ego),
            thres: grid_codes(&obs.s_thres_ego),
            prev_action: obs.a_last.value(),
        };
        let reply = self.channel.request(&req.to_frame()?)?;
        let resp = PolicyResponse::from_frame(&reply)?;
        let action = ActionId::new(resp.action).ok_or(ProtocolError::BadAction(resp.action))?;
        Ok(Decision::Act(action))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    Frontier,
    FrontierPred,
    GreedyPred,
    External(Endpoint),
}

impl PolicyKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Frontier => "frontier",
            Self::FrontierPred => "frontier_pred",
            Self::GreedyPred => "greedy_pred",
            Self::External(_) => "external",
        }
    }

    /// Which map the episode should judge coverage on.
    pub fn coverage_source(&self) -> CoverageSource {
        match self {
            Self::Frontier => CoverageSource::Observed,
            _ => CoverageSource::Predicted,
        }
    }

    pub fn build(&self, robot_radius_m: f64, timeout: Duration) -> Result<Box<dyn Policy>, PlannerError> {
        Ok(match self {
            Self::Frontier => Box::new(FrontierPolicy::new(robot_radius_m)),
            Self::FrontierPred => Box::new(FrontierPredPolicy::new(robot_radius_m)),
            Self::GreedyPred => Box::new(GreedyPredPolicy::default()),
            Self::External(ep) => Box::new(ExternalPolicy::connect(ep, timeout)?),
        })
    }
}

impl FromStr for PolicyKind {
    type Err = PlannerError;

    /// `frontier`, `frontier_pred`, `greedy_pred`, or `external=<endpoint>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "frontier" => Ok(Self::Frontier),
            "frontier_pred" => Ok(Self::FrontierPred),
            "greedy_pred" => Ok(Self::GreedyPred),
            _ => match s.strip_prefix("external=") {
                Some(ep) => ep
                    .parse()
                    .map(Self::External)
                    .map_err(|_| PlannerError::UnknownKind(s.to_string())),
                None => Err(PlannerError::UnknownKind(s.to_string())),
            },
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::External(Endpoint::Tcp(a)) => write!(f, "external=tcp:{a}"),
            Self::External(Endpoint::Command(argv)) => write!(f, "external=cmd:{}", argv.join(" ")),
            k => f.write_str(k.label()),
        }
    }
}

/// Reset if needed, then let `policy` act until the episode ends.
pub fn run_episode(env: &mut Episode, policy: &mut dyn Policy) -> Result<(), RunError> {
    if env.record().rows.is_empty() {
        env.reset_state()?;
    }
    while !env.is_done() {
        match policy.decide(env)? {
            Decision::Act(a) => {
                env.step_state(a)?;
            }
            Decision::Complete => env.finish(TerminalReason::PlannerComplete),
        }
    }
    Ok(())
}
