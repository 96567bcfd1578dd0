//! Per-tick navigation pipeline shared by the trial harness and the gateway:
//! localize, update the costmap, plan and track, recover, arbitrate.

use crate::arbiter::{
    cross_track_deviation, predict_collision, scale_joystick, Arbiter, ArbiterDecision, ArbiterInputs, Authority,
    JoystickCommand, Mode, Prediction, Reason, SafetyParams,
};
use crate::costmap::{Costmap, InflationParams, INSCRIBED, LETHAL};
use crate::geometry::{normalize_angle, Pose2D, Twist2D, VelocityLimits};
use crate::mapper::{Confidence, MapBelief, MotionPrior, OccupancyGrid, PoseEstimate, ScanMatcher};
use crate::planner::{
    plan_cells, plan_global, run_recovery, track_path, Path, PlanError, Progress, ProgressMonitor, RecoveryAction, RecoveryParams,
    RecoveryStage, RecoveryState, StuckParams, TrackerParams,
};
use crate::sim::DepthScan;
use serde::{Deserialize, Serialize, Serializer};
use std::fmt;

/// Something worth logging that happened during a tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    Collision,
    /// Progress check verdict that precedes a stuck reset.
    Stuck,
    /// Planning failed; precedes recovery.
    NoPath,
    StuckReset,
    Recovery(RecoveryStage),
    Spin,
    NearWall,
    Timeout,
    GoalReached,
    GoalAborted,
    Replanned,
    LoopClosed,
    ModeChanged(Mode),
    AuthorityChanged(Authority, Reason),
}

impl Event {
    /// Whether the event belongs in a trial's remarks column.
    pub fn is_remark(&self) -> bool {
        matches!(
            self,
            Event::Collision | Event::StuckReset | Event::Recovery(_) | Event::Spin | Event::NearWall | Event::Timeout
        )
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Collision => f.write_str("collision"),
            Event::Stuck => f.write_str("stuck"),
            Event::NoPath => f.write_str("no_path"),
            Event::StuckReset => f.write_str("stuck_reset"),
            Event::Recovery(s) => write!(f, "recovery({})", s.name()),
            Event::Spin => f.write_str("spin"),
            Event::NearWall => f.write_str("near_wall"),
            Event::Timeout => f.write_str("timeout"),
            Event::GoalReached => f.write_str("goal_reached"),
            Event::GoalAborted => f.write_str("goal_aborted"),
            Event::Replanned => f.write_str("replanned"),
            Event::LoopClosed => f.write_str("loop_closed"),
            Event::ModeChanged(m) => write!(f, "mode({})", m.name()),
            Event::AuthorityChanged(a, r) => {
                let a = serde_json::to_value(a).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
                let r = serde_json::to_value(r).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
                write!(f, "authority({a}:{r})")
            }
        }
    }
}

impl Serialize for Event {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavConfig {
    pub mode: Mode,
    pub dt: f64,
    pub limits: VelocityLimits,
    pub tracker: TrackerParams,
    pub safety: SafetyParams,
    pub stuck: StuckParams,
    pub recovery: RecoveryParams,
    pub inflation: InflationParams,
    /// Periodic global replan interval in autonomous mode.
    pub replan_period: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Autonomous,
            dt: crate::sim::DEFAULT_DT,
            limits: VelocityLimits::default(),
            tracker: TrackerParams::default(),
            safety: SafetyParams::default(),
            stuck: StuckParams::default(),
            recovery: RecoveryParams::default(),
            inflation: InflationParams::default(),
            replan_period: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalStatus {
    Idle,
    Active,
    Reached,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GoalRejection {
    #[error("goal unreachable")]
    Unreachable,
    #[error("goal outside the map")]
    OutOfBounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickResult {
    pub decision: ArbiterDecision,
    pub events: Vec<Event>,
}

/// Navigation state for one chair on a fixed, pre-built map.
#[derive(Debug, Clone)]
pub struct Navigator {
    pub config: NavConfig,
    map: MapBelief,
    matcher: ScanMatcher,
    /// Estimate at the previous scan, to size the matcher's motion prior.
    last_scan_pose: Pose2D,
    costmap: Costmap,
    estimate: PoseEstimate,
    mode: Mode,
    pending_mode: Option<Mode>,
    goal: Option<(f64, f64)>,
    status: GoalStatus,
    path: Option<Path>,
    last_plan: f64,
    replan_requested: bool,
    recovery: RecoveryState,
    rotation_left: Option<f64>,
    progress: ProgressMonitor,
    arbiter: Arbiter,
    joystick: Option<JoystickCommand>,
    last_decision: ArbiterDecision,
    now: f64,
}

impl Navigator {
    pub fn new(map: &OccupancyGrid, config: NavConfig, start: Pose2D) -> Self {
        let belief = MapBelief::from_occupancy(map);
        Self {
            config,
            matcher: ScanMatcher::new(&belief),
            last_scan_pose: start,
            map: belief,
            costmap: Costmap::build_static(map, config.inflation),
            estimate: PoseEstimate::tracking(start),
            mode: config.mode,
            pending_mode: None,
            goal: None,
            status: GoalStatus::Idle,
            path: None,
            last_plan: f64::NEG_INFINITY,
            replan_requested: false,
            recovery: RecoveryState::default(),
            rotation_left: None,
            progress: ProgressMonitor::new(config.stuck),
            arbiter: Arbiter::new(config.safety, config.limits),
            joystick: None,
            last_decision: ArbiterDecision {
                twist: Twist2D::ZERO,
                authority: Authority::Stopped,
                reason: Reason::NoInput,
            },
            now: 0.0,
        }
    }

    pub fn estimate(&self) -> PoseEstimate {
        self.estimate
    }

    pub fn costmap(&self) -> &Costmap {
        &self.costmap
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_ref()
    }

    pub fn goal(&self) -> Option<(f64, f64)> {
        self.goal
    }

    pub fn status(&self) -> GoalStatus {
        self.status
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn recovery_stage(&self) -> RecoveryStage {
        self.recovery.stage
    }

    pub fn last_decision(&self) -> ArbiterDecision {
        self.last_decision
    }

    pub fn set_joystick(&mut self, cmd: JoystickCommand) {
        self.joystick = Some(cmd);
    }

    /// Re-anchors the estimate (e.g. after a teleport reset).
    pub fn reset_pose(&mut self, pose: Pose2D) {
        self.estimate = PoseEstimate::tracking(pose);
        self.last_scan_pose = pose;
        self.costmap.clear_dynamic();
        self.progress.reset();
    }

    /// Switches mode now, or after recovery finishes. Returns true if queued.
    pub fn set_mode(&mut self, mode: Mode) -> bool {
        if self.in_recovery() {
            self.pending_mode = Some(mode);
            true
        } else {
            self.apply_mode(mode);
            false
        }
    }

    fn apply_mode(&mut self, mode: Mode) {
        self.mode = mode;
        self.arbiter.reset();
        self.progress.reset();
    }

    fn in_recovery(&self) -> bool {
        self.rotation_left.is_some() || self.recovery.stage != RecoveryStage::None
    }

    /// Sets a new goal and plans to it.
    pub fn set_goal(&mut self, x: f64, y: f64) -> Result<&Path, GoalRejection> {
        let g = self.costmap.geometry();
        let cell = g.index_of(x, y).ok_or(GoalRejection::OutOfBounds)?;
        if self.costmap.planning_cost(cell) >= INSCRIBED {
            return Err(GoalRejection::Unreachable);
        }
        let path = self.plan_to((x, y)).map_err(|_| GoalRejection::Unreachable)?;
        self.goal = Some((x, y));
        self.status = GoalStatus::Active;
        self.path = Some(path);
        self.last_plan = self.now;
        self.recovery = RecoveryState::default();
        self.rotation_left = None;
        self.progress.reset();
        self.arbiter.reset();
        Ok(self.path.as_ref().expect("just set"))
    }

    /// Takes a goal the planner cannot reach yet and lets recovery run its
    /// course, ending in an abort if nothing frees a path.
    pub fn force_goal(&mut self, x: f64, y: f64) {
        self.goal = Some((x, y));
        self.status = GoalStatus::Active;
        self.path = None;
        self.recovery = RecoveryState::default();
        self.rotation_left = None;
        self.progress.reset();
        self.arbiter.reset();
    }

    pub fn clear_goal(&mut self) {
        self.goal = None;
        self.path = None;
        self.status = GoalStatus::Idle;
        self.recovery = RecoveryState::default();
        self.rotation_left = None;
    }

    /// Plans from the current estimate; a start inside the inflated ring is
    /// allowed so the chair can drive out of it.
    fn plan_to(&self, goal: (f64, f64)) -> Result<Path, PlanError> {
        let start = self.estimate.pose.position();
        match plan_global(&self.costmap, start, goal) {
            Err(PlanError::StartBlocked) => {
                let g = self.costmap.geometry();
                let s = g.index_of(start.0, start.1).ok_or(PlanError::StartBlocked)?;
                let t = g.index_of(goal.0, goal.1).ok_or(PlanError::NoPath)?;
                let escape = self.config.inflation.inscribed_radius + g.resolution;
                let cost = |i: usize| {
                    let c = self.costmap.planning_cost(i);
                    let (x, y) = g.center_of_index(i);
                    if c != LETHAL && (x - start.0).hypot(y - start.1) <= escape {
                        c.min(INSCRIBED - 1)
                    } else {
                        c
                    }
                };
                let (cells, total_cost) = plan_cells(&g, cost, s, t)?;
                Ok(Path {
                    waypoints: cells.iter().map(|&i| g.center_of_index(i)).collect(),
                    cells,
                    total_cost,
                    goal,
                })
            }
            other => other,
        }
    }

    fn replan(&mut self, events: &mut Vec<Event>) -> bool {
        let Some(goal) = self.goal else { return false };
        self.last_plan = self.now;
        self.replan_requested = false;
        match self.plan_to(goal) {
            Ok(p) => {
                self.path = Some(p);
                events.push(Event::Replanned);
                true
            }
            Err(_) => {
                events.push(Event::NoPath);
                false
            }
        }
    }

    /// Runs recovery stages until one needs time to execute or planning works.
    fn advance_recovery(&mut self, events: &mut Vec<Event>) {
        loop {
            let (action, rs) = run_recovery(self.recovery, &mut self.costmap, &self.estimate.pose, self.now, &self.config.recovery);
            self.recovery = rs;
            events.push(Event::Recovery(rs.stage));
            match action {
                RecoveryAction::Cleared { .. } => {
                    if self.replan(events) {
                        self.finish_recovery();
                        return;
                    }
                }
                RecoveryAction::Rotate { angle } => {
                    self.rotation_left = Some(angle);
                    events.push(Event::Spin);
                    return;
                }
                RecoveryAction::Abort => {
                    self.status = GoalStatus::Aborted;
                    self.path = None;
                    self.rotation_left = None;
                    events.push(Event::GoalAborted);
                    return;
                }
            }
        }
    }

    fn finish_recovery(&mut self) {
        self.recovery = RecoveryState::default();
        self.progress.reset();
    }

    /// One control period. `odom_delta` is the odometry increment since the
    /// previous call; `scan` is present on sensing ticks.
    pub fn tick(&mut self, now: f64, odom_delta: &Pose2D, scan: Option<&DepthScan>) -> TickResult {
        self.now = now;
        let mut events = Vec::new();
        if let Some(m) = self.pending_mode {
            if !self.in_recovery() {
                self.pending_mode = None;
                self.apply_mode(m);
                events.push(Event::ModeChanged(m));
            }
        }

        self.estimate.pose = self.estimate.pose.compose(odom_delta);
        if let Some(scan) = scan {
            let prior = self.estimate.pose;
            let last = self.last_scan_pose;
            self.matcher.prior = MotionPrior::for_motion(last.distance_to(prior.x, prior.y), normalize_angle(prior.theta - last.theta));
            let est = self.matcher.localize(&self.map, prior, scan);
            self.last_scan_pose = est.pose;
            self.estimate = est;
            if est.confidence != Confidence::Lost {
                let pts = Costmap::obstacle_points(&est.pose, scan);
                let change = self.costmap.mark_and_clear(&est.pose, &pts, scan);
                if let Some(p) = &self.path {
                    if p.touches(&change.changed) {
                        self.replan_requested = true;
                    }
                }
            }
        }

        let planner_twist = self.navigate(&mut events);
        let decision = self.arbitrate(planner_twist);
        if decision.authority != self.last_decision.authority {
            events.push(Event::AuthorityChanged(decision.authority, decision.reason));
        }
        self.last_decision = decision;
        TickResult { decision, events }
    }

    fn navigate(&mut self, events: &mut Vec<Event>) -> Option<Twist2D> {
        if self.status != GoalStatus::Active {
            return None;
        }
        let w_max = self.config.limits.w_max;
        if let Some(left) = self.rotation_left {
            let step = w_max * self.config.dt;
            if left > step + 1e-9 {
                self.rotation_left = Some(left - step);
                return Some(Twist2D::new(0.0, w_max));
            }
            self.rotation_left = None;
            if self.replan(events) {
                self.finish_recovery();
            } else {
                self.advance_recovery(events);
                if self.rotation_left.is_some() {
                    return Some(Twist2D::new(0.0, w_max));
                }
                if self.status != GoalStatus::Active {
                    return None;
                }
            }
        }

        let autonomous = self.mode == Mode::Autonomous;
        let blocked = self
            .path
            .as_ref()
            .is_none_or(|p| p.cells.iter().skip(1).any(|&c| self.costmap.planning_cost(c) >= INSCRIBED));
        let due = autonomous && (self.now - self.last_plan >= self.config.replan_period || self.replan_requested);
        if blocked || due {
            if !self.replan(events) {
                if autonomous || self.mode == Mode::SemiAutonomous {
                    self.advance_recovery(events);
                }
                if self.rotation_left.is_some() {
                    return Some(Twist2D::new(0.0, w_max));
                }
                if self.status != GoalStatus::Active {
                    return None;
                }
            }
        }

        if autonomous {
            if self.progress.push(self.now, self.estimate.pose) == Progress::Stuck {
                events.push(Event::Stuck);
                events.push(Event::StuckReset);
                self.progress.reset();
                self.advance_recovery(events);
                if self.rotation_left.is_some() {
                    return Some(Twist2D::new(0.0, w_max));
                }
                if self.status != GoalStatus::Active {
                    return None;
                }
            }
        }

        let path = self.path.as_ref()?;
        let out = track_path(path, &self.estimate, &self.costmap, &self.config.limits, &self.config.tracker);
        if out.reached {
            self.status = GoalStatus::Reached;
            events.push(Event::GoalReached);
        }
        Some(out.twist)
    }

    fn arbitrate(&mut self, planner_twist: Option<Twist2D>) -> ArbiterDecision {
        let sp = self.config.safety;
        let (user_twist, user_active) = match &self.joystick {
            Some(j) if !j.is_stale(self.now, sp.stale_after) => (scale_joystick(j, self.now, &self.config.limits, sp.stale_after), true),
            _ => (Twist2D::ZERO, false),
        };
        let pose = self.estimate.pose;
        let prediction = if self.mode == Mode::Autonomous {
            Prediction::Clear
        } else {
            predict_collision(&pose, &user_twist, &self.costmap, &sp)
        };
        let deviation = self.path.as_ref().map(|p| cross_track_deviation(pose.x, pose.y, p));
        let goal_reached = self.status == GoalStatus::Reached;
        // no goal: nothing for the system to steer toward
        let planner_twist = match self.status {
            GoalStatus::Reached => Some(Twist2D::ZERO),
            _ => planner_twist,
        };
        let inputs = ArbiterInputs {
            mode: self.mode,
            user_twist,
            user_active,
            planner_twist,
            deviation,
            prediction,
            goal_reached,
        };
        self.arbiter.arbitrate(&inputs)
    }
}
