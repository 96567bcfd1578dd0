//! Global A* planning, pure-pursuit tracking, stuck detection and the
//! recovery cascade.

use crate::costmap::{Costmap, INSCRIBED};
use crate::geometry::{normalize_angle, Pose2D, Twist2D, VelocityLimits};
use crate::grid::GridGeometry;
use crate::mapper::{Confidence, PoseEstimate};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

/// Path cost as `straight + diagonal·√2`, in units of resolution/64.
///
/// Each move contributes `64 + cost(target)`, so sums stay integral and
/// comparisons are exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathCost {
    pub straight: u64,
    pub diagonal: u64,
}

impl PathCost {
    pub const ZERO: PathCost = PathCost { straight: 0, diagonal: 0 };

    pub fn step(cost: u8, diagonal: bool) -> Self {
        let w = 64 + cost as u64;
        if diagonal {
            PathCost { straight: 0, diagonal: w }
        } else {
            PathCost { straight: w, diagonal: 0 }
        }
    }

    /// Value in resolution/64 units.
    pub fn value(&self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * SQRT_2
    }

    /// Value in meters on a lattice of the given resolution.
    pub fn meters(&self, resolution: f64) -> f64 {
        self.value() * resolution / 64.0
    }
}

impl std::ops::Add for PathCost {
    type Output = PathCost;
    fn add(self, o: PathCost) -> PathCost {
        PathCost {
            straight: self.straight + o.straight,
            diagonal: self.diagonal + o.diagonal,
        }
    }
}

impl Ord for PathCost {
    fn cmp(&self, other: &Self) -> Ordering {
        // compare a1 + b1·√2 with a2 + b2·√2 via da against db·√2
        let da = self.straight as i128 - other.straight as i128;
        let db = other.diagonal as i128 - self.diagonal as i128;
        match (da.signum(), db.signum()) {
            (0, 0) => Ordering::Equal,
            (s, t) if s >= 0 && t <= 0 => Ordering::Greater,
            (s, t) if s <= 0 && t >= 0 => Ordering::Less,
            (1, 1) => (da * da).cmp(&(2 * db * db)),
            _ => (2 * db * db).cmp(&(da * da)),
        }
    }
}

impl PartialOrd for PathCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<(f64, f64)>,
    pub cells: Vec<usize>,
    pub total_cost: PathCost,
    pub goal: (f64, f64),
}

impl Path {
    /// Arc length of the waypoint polyline.
    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
            .sum()
    }

    pub fn touches(&self, cells: &[usize]) -> bool {
        cells.iter().any(|c| self.cells.contains(c))
    }

    /// At most `max` waypoints, evenly strided, always keeping both ends.
    pub fn decimated(&self, max: usize) -> Vec<(f64, f64)> {
        let n = self.waypoints.len();
        if n <= max || max < 2 {
            return self.waypoints.clone();
        }
        let stride = (n - 1) as f64 / (max - 1) as f64;
        (0..max)
            .map(|k| self.waypoints[((k as f64 * stride).round() as usize).min(n - 1)])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no path to goal")]
    NoPath,
    #[error("start cell is blocked")]
    StartBlocked,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    h: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f)
            .then(o.h.total_cmp(&self.h))
            .then(o.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

const NEIGHBORS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// A* over cell indices with per-cell costs from `cost`.
pub fn plan_cells(
    geom: &GridGeometry,
    cost: impl Fn(usize) -> u8,
    start: usize,
    goal: usize,
) -> Result<(Vec<usize>, PathCost), PlanError> {
    if cost(start) >= INSCRIBED {
        return Err(PlanError::StartBlocked);
    }
    if cost(goal) >= INSCRIBED {
        return Err(PlanError::NoPath);
    }
    let n = geom.len();
    let (gx, gy) = geom.coords(goal);
    let heuristic = |i: usize| {
        let (x, y) = geom.coords(i);
        64.0 * ((x as f64 - gx as f64).powi(2) + (y as f64 - gy as f64).powi(2)).sqrt()
    };
    let mut g: Vec<Option<PathCost>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g[start] = Some(PathCost::ZERO);
    let h0 = heuristic(start);
    open.push(Open { f: h0, h: h0, idx: start });
    while let Some(Open { idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        if idx == goal {
            break;
        }
        let gi = g[idx].expect("opened cells have a cost");
        let (cx, cy) = geom.coords(idx);
        for (dx, dy) in NEIGHBORS {
            let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
            if !geom.contains_cell(nx, ny) {
                continue;
            }
            let j = geom.index(nx as usize, ny as usize);
            let c = cost(j);
            if c >= INSCRIBED {
                continue;
            }
            let cand = gi + PathCost::step(c, dx != 0 && dy != 0);
            if g[j].is_none_or(|old| cand < old) {
                g[j] = Some(cand);
                parent[j] = idx;
                // a strictly better route reopens a closed cell
                closed[j] = false;
                let h = heuristic(j);
                open.push(Open { f: cand.value() + h, h, idx: j });
            }
        }
    }
    let total = g[goal].ok_or(PlanError::NoPath)?;
    let mut cells = vec![goal];
    while let Some(&last) = cells.last() {
        if last == start {
            break;
        }
        cells.push(parent[last]);
    }
    cells.reverse();
    Ok((cells, total))
}

/// Plans from `start` to `goal` (world coordinates) on the composed costmap.
pub fn plan_global(cm: &Costmap, start: (f64, f64), goal: (f64, f64)) -> Result<Path, PlanError> {
    let geom = cm.geometry();
    let s = geom.index_of(start.0, start.1).ok_or(PlanError::StartBlocked)?;
    let t = geom.index_of(goal.0, goal.1).ok_or(PlanError::NoPath)?;
    let (cells, total_cost) = plan_cells(&geom, |i| cm.planning_cost(i), s, t)?;
    Ok(Path {
        waypoints: cells.iter().map(|&i| geom.center_of_index(i)).collect(),
        cells,
        total_cost,
        goal,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerParams {
    pub lookahead: f64,
    pub goal_tolerance: f64,
    pub slowdown_cost: u8,
    pub min_speed: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            lookahead: 0.6,
            goal_tolerance: 0.3,
            slowdown_cost: 128,
            min_speed: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub twist: Twist2D,
    pub reached: bool,
}

impl TrackOutput {
    fn stop(reached: bool) -> Self {
        Self {
            twist: Twist2D::ZERO,
            reached,
        }
    }
}

/// Waypoint index closest to `(x, y)`.
pub fn closest_waypoint(path: &Path, x: f64, y: f64) -> usize {
    path.waypoints
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let da = (a.1 .0 - x).hypot(a.1 .1 - y);
            let db = (b.1 .0 - x).hypot(b.1 .1 - y);
            da.total_cmp(&db)
        })
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Point `lookahead` meters of arc past waypoint `from`, or the path end.
pub fn lookahead_point(path: &Path, from: usize, lookahead: f64) -> (f64, f64) {
    let mut left = lookahead;
    for w in path.waypoints[from..].windows(2) {
        let seg = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        if seg >= left {
            let t = left / seg;
            return (w[0].0 + t * (w[1].0 - w[0].0), w[0].1 + t * (w[1].1 - w[0].1));
        }
        left -= seg;
    }
    *path.waypoints.last().unwrap_or(&path.goal)
}

/// Linear speed after cost-reactive slowdown.
pub fn slowed_speed(cost: u8, v_max: f64, tp: &TrackerParams) -> f64 {
    if cost <= tp.slowdown_cost {
        return v_max;
    }
    let c = cost.min(INSCRIBED) as f64;
    let lo = tp.slowdown_cost as f64;
    v_max - (c - lo) / (INSCRIBED as f64 - lo) * (v_max - tp.min_speed)
}

/// Pure pursuit toward the lookahead point.
pub fn track_path(path: &Path, est: &PoseEstimate, cm: &Costmap, limits: &VelocityLimits, tp: &TrackerParams) -> TrackOutput {
    if path.waypoints.is_empty() || est.confidence == Confidence::Lost {
        return TrackOutput::stop(false);
    }
    let p = est.pose;
    if p.distance_to(path.goal.0, path.goal.1) <= tp.goal_tolerance {
        return TrackOutput::stop(true);
    }
    let from = closest_waypoint(path, p.x, p.y);
    let mut target = lookahead_point(path, from, tp.lookahead);
    if p.distance_to(target.0, target.1) < 1e-6 {
        target = path.goal;
    }
    let dist = p.distance_to(target.0, target.1);
    if dist < 1e-6 {
        return TrackOutput::stop(false);
    }
    let alpha = normalize_angle((target.1 - p.y).atan2(target.0 - p.x) - p.theta);
    if alpha.abs() > PI / 4.0 {
        return TrackOutput {
            twist: Twist2D::new(0.0, alpha.signum() * limits.w_max),
            reached: false,
        };
    }
    let cost = cm.cost_at(target.0, target.1).unwrap_or(INSCRIBED);
    let mut v = slowed_speed(cost, limits.v_max, tp);
    let curvature = 2.0 * alpha.sin() / dist;
    let mut w = v * curvature;
    if w.abs() > limits.w_max {
        v *= limits.w_max / w.abs();
        w = w.signum() * limits.w_max;
    }
    TrackOutput {
        twist: limits.clamp(Twist2D::new(v, w)),
        reached: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StuckParams {
    pub min_displacement: f64,
    pub window: f64,
}

impl Default for StuckParams {
    fn default() -> Self {
        Self {
            min_displacement: 0.05,
            window: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Progressing,
    Stuck,
}

/// `history` holds `(time, pose)` samples in time order. Stuck iff the history
/// spans the window and no sample inside it is `min_displacement` or more
/// from the window-start pose.
pub fn check_progress(history: &[(f64, Pose2D)], sp: &StuckParams) -> Progress {
    let Some(&(now, _)) = history.last() else {
        return Progress::Progressing;
    };
    if now - history[0].0 < sp.window {
        return Progress::Progressing;
    }
    let start = history.iter().rposition(|&(t, _)| now - t >= sp.window).unwrap_or(0);
    let origin = history[start].1;
    let max = history[start..]
        .iter()
        .map(|(_, p)| origin.distance_to(p.x, p.y))
        .fold(0.0, f64::max);
    if max < sp.min_displacement {
        Progress::Stuck
    } else {
        Progress::Progressing
    }
}

/// Rolling pose history sized to the stuck window.
#[derive(Debug, Clone, Default)]
pub struct ProgressMonitor {
    pub params: StuckParams,
    history: VecDeque<(f64, Pose2D)>,
}

impl ProgressMonitor {
    pub fn new(params: StuckParams) -> Self {
        Self {
            params,
            history: VecDeque::new(),
        }
    }

    pub fn push(&mut self, t: f64, pose: Pose2D) -> Progress {
        self.history.push_back((t, pose));
        while self.history.len() > 2 && t - self.history[1].0 >= self.params.window {
            self.history.pop_front();
        }
        check_progress(self.history.make_contiguous(), &self.params)
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryStage {
    #[default]
    None,
    ConservativeClear,
    #[serde(rename = "rotate_1")]
    Rotate1,
    AggressiveClear,
    #[serde(rename = "rotate_2")]
    Rotate2,
    Aborted,
}

impl RecoveryStage {
    pub fn next(self) -> Self {
        match self {
            RecoveryStage::None => RecoveryStage::ConservativeClear,
            RecoveryStage::ConservativeClear => RecoveryStage::Rotate1,
            RecoveryStage::Rotate1 => RecoveryStage::AggressiveClear,
            RecoveryStage::AggressiveClear => RecoveryStage::Rotate2,
            RecoveryStage::Rotate2 | RecoveryStage::Aborted => RecoveryStage::Aborted,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RecoveryStage::None => "none",
            RecoveryStage::ConservativeClear => "conservative_clear",
            RecoveryStage::Rotate1 => "rotate_1",
            RecoveryStage::AggressiveClear => "aggressive_clear",
            RecoveryStage::Rotate2 => "rotate_2",
            RecoveryStage::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryParams {
    pub enabled: bool,
    pub conservative_radius: f64,
    /// Radius of the in-place rotation disc kept by the aggressive clear.
    pub aggressive_radius: f64,
}

impl Default for RecoveryParams {
    fn default() -> Self {
        Self {
            enabled: true,
            conservative_radius: 3.0,
            aggressive_radius: crate::sim::FOOTPRINT_RADIUS,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RecoveryState {
    pub stage: RecoveryStage,
    pub stage_entered_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecoveryAction {
    /// Dynamic layer was cleared; replan now.
    Cleared { cells_changed: usize },
    /// Rotate in place by `angle` radians, then replan.
    Rotate { angle: f64 },
    /// Goal declared infeasible; notify the user.
    Abort,
}

/// Advances the cascade by one stage and applies its costmap side effects.
pub fn run_recovery(
    rs: RecoveryState,
    cm: &mut Costmap,
    pose: &Pose2D,
    now: f64,
    params: &RecoveryParams,
) -> (RecoveryAction, RecoveryState) {
    let stage = if params.enabled { rs.stage.next() } else { RecoveryStage::Aborted };
    let action = match stage {
        RecoveryStage::ConservativeClear => RecoveryAction::Cleared {
            cells_changed: cm.clear_dynamic_beyond(pose.position(), params.conservative_radius).changed.len(),
        },
        RecoveryStage::AggressiveClear => RecoveryAction::Cleared {
            cells_changed: cm.clear_dynamic_beyond(pose.position(), params.aggressive_radius).changed.len(),
        },
        RecoveryStage::Rotate1 | RecoveryStage::Rotate2 => RecoveryAction::Rotate { angle: 2.0 * PI },
        RecoveryStage::Aborted | RecoveryStage::None => RecoveryAction::Abort,
    };
    let entered = if stage == rs.stage { rs.stage_entered_at } else { now };
    (action, RecoveryState { stage, stage_entered_at: entered })
}
