//! Seeded end-to-end navigation trials: run the full pipeline against a
//! world, record per-trial metrics and write table-style reports.

use crate::arbiter::{JoystickCommand, Mode};
use crate::costmap::Costmap;
use crate::geometry::{normalize_angle, Pose2D, Twist2D};
use crate::mapper::{CellState, OccupancyGrid};
use crate::planner::{closest_waypoint, lookahead_point, plan_global, Path};
use crate::runtime::{Event, GoalRejection, GoalStatus, NavConfig, Navigator};
use crate::sim::{SimConfig, Simulator};
use crate::survey::{surveyed_map, SurveyPlan};
use crate::worldfile::WorldSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path as FsPath;
use std::sync::{Arc, Mutex};
use thiserror::Error;

pub const DEFAULT_TIMEOUT: f64 = 400.0;
/// How close the true pose must end to the goal for a trial to count.
pub const GOAL_TOLERANCE: f64 = 0.3;
/// The tracker stops a little inside the referee's tolerance so estimate
/// error does not turn an arrival into a miss.
pub const TRACKER_TOLERANCE: f64 = 0.2;
/// Footprint-to-wall clearance below which a near-wall remark is logged.
pub const NEAR_WALL: f64 = 0.05;
/// Random goals are at least this far from the spawn point.
pub const RANDOM_GOAL_MIN_DISTANCE: f64 = 5.0;
/// Random goals avoid cells costlier than this.
pub const RANDOM_GOAL_MAX_COST: u8 = 128;
/// Seed of the mapping drive that builds each world's trial map.
pub const MAP_SEED: u64 = 0;

#[derive(Debug, Error)]
pub enum TrialError {
    #[error("unknown goal label `{0}`")]
    UnknownGoal(String),
    #[error("goal ({0}, {1}) lies outside the world")]
    GoalOutOfBounds(f64, f64),
    #[error("no reachable random goal in the map")]
    NoRandomGoal,
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
    #[error("timeout must be positive, got {0}")]
    BadTimeout(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GoalSpec {
    Label(String),
    Point(f64, f64),
    /// Drawn from the map with the trial seed.
    Random,
}

/// Timed joystick input: each entry holds from its time until the next.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapeEntry {
    pub t: f64,
    pub fwd: f64,
    pub turn: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UserModel {
    None,
    Tape(Vec<TapeEntry>),
    /// Steers along the planned path with occasional heading error bursts.
    PathFollower(FollowerParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerParams {
    pub lookahead: f64,
    /// Chance per second of starting a burst.
    pub burst_rate: f64,
    pub burst_heading: f64,
    pub burst_duration: f64,
}

impl Default for FollowerParams {
    fn default() -> Self {
        Self {
            lookahead: 0.8,
            burst_rate: 0.05,
            burst_heading: 0.9,
            burst_duration: 3.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialSpec {
    pub world: Arc<WorldSpec>,
    pub goal: GoalSpec,
    pub mode: Mode,
    pub seed: u64,
    pub timeout: f64,
    pub user_model: UserModel,
    pub dynamic_obstacles: bool,
}

impl TrialSpec {
    pub fn new(world: Arc<WorldSpec>, goal: GoalSpec, seed: u64) -> Self {
        Self {
            world,
            goal,
            mode: Mode::Autonomous,
            seed,
            timeout: DEFAULT_TIMEOUT,
            user_model: UserModel::None,
            dynamic_obstacles: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial_no: u32,
    pub distance: f64,
    /// Simulated seconds to the goal or timeout.
    pub time: f64,
    pub goal_reached: bool,
    pub remarks: Vec<String>,
}

impl TrialRecord {
    pub fn has_remark(&self, tag: &str) -> bool {
        self.remarks.iter().any(|r| r == tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n_trials: usize,
    pub success_rate: f64,
    /// Over successful trials only; absent when none succeeded.
    pub avg_distance: Option<f64>,
    pub avg_time: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LoggedPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl From<Pose2D> for LoggedPose {
    fn from(p: Pose2D) -> Self {
        Self { x: p.x, y: p.y, theta: p.theta }
    }
}

/// One line of the replay log.
#[derive(Debug, Clone, Serialize)]
pub struct TickLogEntry {
    pub tick: u64,
    pub sim_time: f64,
    pub pose: LoggedPose,
    pub estimate: LoggedPose,
    pub authority: String,
    pub reason: String,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone)]
pub struct TrialRun {
    pub record: TrialRecord,
    pub log: Vec<TickLogEntry>,
    pub goal: (f64, f64),
}

impl TrialRun {
    /// JSON-lines rendering of the tick log.
    pub fn log_text(&self) -> String {
        let mut out = String::new();
        for e in &self.log {
            out.push_str(&serde_json::to_string(e).expect("log entries serialize"));
            out.push('\n');
        }
        out
    }
}

/// Maps built once per world and shared between trials.
#[derive(Debug, Default)]
pub struct MapCache {
    maps: Mutex<HashMap<String, Arc<OccupancyGrid>>>,
}

impl MapCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, world: &WorldSpec) -> Arc<OccupancyGrid> {
        let key = world.to_text();
        if let Some(m) = self.maps.lock().expect("map cache lock").get(&key) {
            return m.clone();
        }
        let map = Arc::new(build_trial_map(world));
        self.maps.lock().expect("map cache lock").entry(key).or_insert(map).clone()
    }
}

/// Mapping phase for a world: the survey tour without people, integrated at
/// surveyed poses.
pub fn build_trial_map(world: &WorldSpec) -> OccupancyGrid {
    let config = SimConfig {
        dynamic_obstacles: false,
        ..SimConfig::default()
    };
    surveyed_map(world, &SurveyPlan::tour(world), config, MAP_SEED)
}

/// Draws a goal that is known free, cheap, reachable from spawn and far
/// enough away.
pub fn random_goal(world: &WorldSpec, map: &OccupancyGrid, seed: u64) -> Result<(f64, f64), TrialError> {
    let cm = Costmap::build_static(map, NavConfig::default().inflation);
    let g = map.geometry();
    let spawn = world.spawn.position();
    let candidates: Vec<usize> = (0..g.len())
        .filter(|&i| {
            let (x, y) = g.center_of_index(i);
            map.0.cells[i] == CellState::Free
                && cm.planning_cost(i) < RANDOM_GOAL_MAX_COST
                && (x - spawn.0).hypot(y - spawn.1) >= RANDOM_GOAL_MIN_DISTANCE
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for _ in 0..200 {
        if candidates.is_empty() {
            break;
        }
        let i = candidates[rng.random_range(0..candidates.len())];
        let goal = g.center_of_index(i);
        if plan_global(&cm, spawn, goal).is_ok() {
            return Ok(goal);
        }
    }
    Err(TrialError::NoRandomGoal)
}

pub fn resolve_goal(spec: &TrialSpec, map: &OccupancyGrid) -> Result<(f64, f64), TrialError> {
    let world = &spec.world;
    let goal = match &spec.goal {
        GoalSpec::Label(l) => world.goal(l).ok_or_else(|| TrialError::UnknownGoal(l.clone()))?,
        GoalSpec::Point(x, y) => (*x, *y),
        GoalSpec::Random => random_goal(world, map, spec.seed)?,
    };
    if !world.geometry().contains_point(goal.0, goal.1) {
        return Err(TrialError::GoalOutOfBounds(goal.0, goal.1));
    }
    Ok(goal)
}

struct Follower {
    params: FollowerParams,
    rng: ChaCha8Rng,
    burst: Option<(f64, f64)>,
}

impl Follower {
    fn new(params: FollowerParams, seed: u64) -> Self {
        Self {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xd1b5_4a32_d192_ed03),
            burst: None,
        }
    }

    fn command(&mut self, pose: &Pose2D, path: Option<&Path>, now: f64, dt: f64) -> (f64, f64) {
        let p = self.params;
        match self.burst {
            Some((_, until)) if now >= until => self.burst = None,
            None if self.rng.random::<f64>() < p.burst_rate * dt => {
                let side = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
                self.burst = Some((side * p.burst_heading, now + p.burst_duration));
            }
            _ => {}
        }
        let Some(path) = path else { return (0.0, 0.0) };
        let i = closest_waypoint(path, pose.x, pose.y);
        let target = lookahead_point(path, i, p.lookahead);
        let offset = self.burst.map_or(0.0, |(h, _)| h);
        let alpha = normalize_angle((target.1 - pose.y).atan2(target.0 - pose.x) - pose.theta + offset);
        let fwd = if alpha.abs() < 0.8 { 0.8 } else { 0.1 };
        (fwd, (1.5 * alpha).clamp(-1.0, 1.0))
    }
}

fn tape_command(tape: &[TapeEntry], now: f64) -> (f64, f64) {
    tape.iter()
        .take_while(|e| e.t <= now)
        .last()
        .map_or((0.0, 0.0), |e| (e.fwd, e.turn))
}

fn nav_config(mode: Mode) -> NavConfig {
    let mut c = NavConfig {
        mode,
        ..NavConfig::default()
    };
    c.tracker.goal_tolerance = TRACKER_TOLERANCE;
    c
}

/// Runs one trial tick by tick on a pre-built map.
pub fn run_trial(spec: &TrialSpec, map: &OccupancyGrid, trial_no: u32) -> Result<TrialRun, TrialError> {
    if !(spec.timeout > 0.0) {
        return Err(TrialError::BadTimeout(spec.timeout));
    }
    let goal = resolve_goal(spec, map)?;
    let world = &spec.world;
    let sim_config = SimConfig {
        dynamic_obstacles: spec.dynamic_obstacles,
        ..SimConfig::default()
    };
    let dt = sim_config.dt;
    let mut sim = Simulator::new(world, sim_config, spec.seed);
    let mut nav = Navigator::new(map, nav_config(spec.mode), world.spawn);
    if let Err(GoalRejection::Unreachable) = nav.set_goal(goal.0, goal.1) {
        nav.force_goal(goal.0, goal.1);
    }
    let mut follower = match &spec.user_model {
        UserModel::PathFollower(p) => Some(Follower::new(*p, spec.seed)),
        _ => None,
    };

    let mut remarks = Vec::new();
    let mut log = Vec::new();
    let mut distance = 0.0;
    let mut twist = Twist2D::ZERO;
    let mut near_wall = false;
    let mut reached = false;
    loop {
        let out = sim.step(twist);
        distance += out.travelled;
        let now = sim.sim_time();
        let truth = sim.true_pose();
        let mut events = Vec::new();
        if out.collided_now {
            events.push(Event::Collision);
        }
        let close = sim.wall_clearance(2.0 * NEAR_WALL) < NEAR_WALL;
        if close && !near_wall {
            events.push(Event::NearWall);
        }
        near_wall = close;

        let joystick = match (&spec.user_model, follower.as_mut()) {
            (UserModel::Tape(tape), _) => Some(tape_command(tape, now)),
            (_, Some(f)) => Some(f.command(&truth, nav.path(), now, dt)),
            _ => None,
        };
        if let Some((fwd, turn)) = joystick {
            nav.set_joystick(JoystickCommand::new(fwd, turn, now));
        }
        let result = nav.tick(now, &out.odom_delta, out.scan.as_ref());
        twist = result.decision.twist;
        events.extend(result.events);

        let status = nav.status();
        let timed_out = now >= spec.timeout - 1e-9 && status == GoalStatus::Active;
        if timed_out {
            events.push(Event::Timeout);
        }
        remarks.extend(events.iter().filter(|e| e.is_remark()).map(|e| e.to_string()));
        log.push(TickLogEntry {
            tick: sim.tick(),
            sim_time: now,
            pose: truth.into(),
            estimate: nav.estimate().pose.into(),
            authority: tag(&result.decision.authority),
            reason: tag(&result.decision.reason),
            events,
        });
        match status {
            GoalStatus::Reached => {
                reached = truth.distance_to(goal.0, goal.1) <= GOAL_TOLERANCE;
                break;
            }
            GoalStatus::Aborted | GoalStatus::Idle => break,
            GoalStatus::Active if timed_out => break,
            GoalStatus::Active => {}
        }
    }
    Ok(TrialRun {
        record: TrialRecord {
            trial_no,
            distance,
            time: sim.sim_time(),
            goal_reached: reached,
            remarks,
        },
        log,
        goal,
    })
}

fn tag<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

pub fn summarize(records: &[TrialRecord]) -> Summary {
    let wins: Vec<&TrialRecord> = records.iter().filter(|r| r.goal_reached).collect();
    let n = records.len();
    let avg = |f: fn(&TrialRecord) -> f64| (!wins.is_empty()).then(|| wins.iter().map(|r| f(r)).sum::<f64>() / wins.len() as f64);
    Summary {
        n_trials: n,
        success_rate: if n == 0 { 0.0 } else { wins.len() as f64 / n as f64 },
        avg_distance: avg(|r| r.distance),
        avg_time: avg(|r| r.time),
    }
}

pub const CSV_HEADER: &str = "trial_no,distance_m,time_s,goal_reached,remarks";

fn csv_quote(field: &str) -> String {
    format!("\"{}\"", field.replace('"', "\"\""))
}

pub fn records_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{:.2},{:.2},{},{}",
            r.trial_no,
            r.distance,
            r.time,
            if r.goal_reached { "yes" } else { "no" },
            csv_quote(&r.remarks.join(";"))
        );
    }
    out
}

pub fn summary_text(summary: &Summary) -> String {
    let pct = summary.success_rate * 100.0;
    let mut out = format!(
        "The wheelchair achieved a {pct:.0}% success rate over {} trials.\n",
        summary.n_trials
    );
    match (summary.avg_time, summary.avg_distance) {
        (Some(t), Some(d)) => {
            let _ = writeln!(
                out,
                "It took an average time of {t:.1} seconds (simulated) to reach the goal at an average distance of {d:.2} meters."
            );
        }
        _ => out.push_str("No trial reached the goal, so no averages are reported.\n"),
    }
    out
}

/// Writes `trials.csv` and `summary.txt` into `dir`.
pub fn write_report(summary: &Summary, records: &[TrialRecord], dir: &FsPath) -> Result<(), TrialError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("trials.csv"), records_csv(records))?;
    std::fs::write(dir.join("summary.txt"), summary_text(summary))?;
    Ok(())
}

/// One of the bundled experiment suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Suite {
    pub name: &'static str,
    pub goal: SuiteGoal,
    pub dynamic_obstacles: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteGoal {
    Label(&'static str),
    Random,
}

pub const SUITES: &[Suite] = &[
    Suite { name: "static_goal1", goal: SuiteGoal::Label("goal1"), dynamic_obstacles: false },
    Suite { name: "static_goal2", goal: SuiteGoal::Label("goal2"), dynamic_obstacles: false },
    Suite { name: "static_random", goal: SuiteGoal::Random, dynamic_obstacles: false },
    Suite { name: "dynamic_goal1", goal: SuiteGoal::Label("goal1"), dynamic_obstacles: true },
    Suite { name: "dynamic_goal2", goal: SuiteGoal::Label("goal2"), dynamic_obstacles: true },
    Suite { name: "dynamic_random", goal: SuiteGoal::Random, dynamic_obstacles: true },
];

impl Suite {
    pub fn find(name: &str) -> Result<Suite, TrialError> {
        SUITES
            .iter()
            .find(|s| s.name == name)
            .copied()
            .ok_or_else(|| TrialError::UnknownSuite(name.to_owned()))
    }

    pub fn spec(&self, world: Arc<WorldSpec>, seed: u64, mode: Mode) -> TrialSpec {
        let goal = match self.goal {
            SuiteGoal::Label(l) => GoalSpec::Label(l.to_owned()),
            SuiteGoal::Random => GoalSpec::Random,
        };
        let mut spec = TrialSpec::new(world, goal, seed);
        spec.dynamic_obstacles = self.dynamic_obstacles;
        spec.mode = mode;
        if mode != Mode::Autonomous {
            spec.user_model = UserModel::PathFollower(FollowerParams::default());
        }
        spec
    }

    /// Whether the suite's results meet its acceptance threshold: every
    /// trial clean in static worlds, at least 70% success with people about.
    pub fn passes(&self, records: &[TrialRecord]) -> bool {
        if records.is_empty() {
            return false;
        }
        if self.dynamic_obstacles {
            summarize(records).success_rate >= 0.7
        } else {
            records
                .iter()
                .all(|r| r.goal_reached && !r.has_remark("collision") && r.time < DEFAULT_TIMEOUT)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub suite: Suite,
    pub runs: Vec<TrialRun>,
    pub summary: Summary,
}

impl SuiteRun {
    pub fn records(&self) -> Vec<TrialRecord> {
        self.runs.iter().map(|r| r.record.clone()).collect()
    }

    pub fn passed(&self) -> bool {
        self.suite.passes(&self.records())
    }

    /// Report files plus one JSON-lines tick log per trial.
    pub fn write(&self, dir: &FsPath) -> Result<(), TrialError> {
        write_report(&self.summary, &self.records(), dir)?;
        for run in &self.runs {
            let mut f = std::fs::File::create(dir.join(format!("trial_{:03}.jsonl", run.record.trial_no)))?;
            f.write_all(run.log_text().as_bytes())?;
        }
        Ok(())
    }
}

/// Runs one trial per seed in parallel; trial numbers follow seed order
/// starting at 1.
pub fn run_suite(suite: Suite, world: Arc<WorldSpec>, seeds: &[u64], mode: Mode, cache: &MapCache) -> Result<SuiteRun, TrialError> {
    let map = cache.get(&world);
    let runs = seeds
        .par_iter()
        .enumerate()
        .map(|(k, &seed)| run_trial(&suite.spec(world.clone(), seed, mode), &map, k as u32 + 1))
        .collect::<Result<Vec<_>, _>>()?;
    let records: Vec<TrialRecord> = runs.iter().map(|r| r.record.clone()).collect();
    Ok(SuiteRun {
        suite,
        summary: summarize(&records),
        runs,
    })
}
