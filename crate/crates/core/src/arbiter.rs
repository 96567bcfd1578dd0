//! Command arbitration between the operator's joystick and the planner.

use crate::costmap::{Costmap, INSCRIBED, LETHAL};
use crate::geometry::{point_segment_distance, Pose2D, Twist2D, VelocityLimits};
use crate::planner::Path;
use crate::sim::step_kinematics;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Manual,
    #[serde(alias = "semi")]
    SemiAutonomous,
    #[serde(alias = "auto")]
    Autonomous,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Manual => "manual",
            Mode::SemiAutonomous => "semi_autonomous",
            Mode::Autonomous => "autonomous",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "manual" => Ok(Mode::Manual),
            "semi" | "semi_autonomous" => Ok(Mode::SemiAutonomous),
            "auto" | "autonomous" => Ok(Mode::Autonomous),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct JoystickCommand {
    pub fwd: f64,
    pub turn: f64,
    pub timestamp: f64,
}

impl JoystickCommand {
    pub fn new(fwd: f64, turn: f64, timestamp: f64) -> Self {
        let c = |x: f64| if x.is_finite() { x.clamp(-1.0, 1.0) } else { 0.0 };
        Self {
            fwd: c(fwd),
            turn: c(turn),
            timestamp,
        }
    }

    pub fn is_stale(&self, now: f64, stale_after: f64) -> bool {
        now - self.timestamp > stale_after
    }

    pub fn is_neutral(&self) -> bool {
        self.fwd == 0.0 && self.turn == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyParams {
    pub deviation_threshold: f64,
    pub deviation_release: f64,
    pub horizon: f64,
    pub safety_margin: u8,
    pub dt: f64,
    /// Joystick commands older than this are read as zero.
    pub stale_after: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self {
            deviation_threshold: 0.5,
            deviation_release: 0.25,
            horizon: 1.5,
            safety_margin: INSCRIBED,
            dt: crate::sim::DEFAULT_DT,
            stale_after: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Authority {
    User,
    System,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Passthrough,
    DeviationCorrection,
    CollisionOverride,
    GoalReached,
    NoInput,
    EmergencyStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArbiterDecision {
    pub twist: Twist2D,
    pub authority: Authority,
    pub reason: Reason,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Clear,
    CollisionAt(f64),
}

impl Prediction {
    pub fn is_clear(&self) -> bool {
        matches!(self, Prediction::Clear)
    }
}

/// Joystick deflection to velocities; stale input reads as zero.
pub fn scale_joystick(cmd: &JoystickCommand, now: f64, limits: &VelocityLimits, stale_after: f64) -> Twist2D {
    if cmd.is_stale(now, stale_after) {
        return Twist2D::ZERO;
    }
    Twist2D::new(cmd.fwd.clamp(-1.0, 1.0) * limits.v_max, cmd.turn.clamp(-1.0, 1.0) * limits.w_max)
}

/// Distance from `(x, y)` to the path polyline.
pub fn cross_track_deviation(x: f64, y: f64, path: &Path) -> f64 {
    match path.waypoints.as_slice() {
        [] => f64::INFINITY,
        [p] => (p.0 - x).hypot(p.1 - y),
        pts => pts
            .windows(2)
            .map(|w| point_segment_distance((x, y), w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Rolls the twist forward over the horizon and reports the first tick whose
/// center cell reaches the safety margin.
///
/// A pose that already sits inside the margin only trips on lethal cells, so
/// the chair can still back out of a tight spot.
pub fn predict_collision(pose: &Pose2D, twist: &Twist2D, cm: &Costmap, sp: &SafetyParams) -> Prediction {
    if twist.is_zero() {
        return Prediction::Clear;
    }
    let cost_at = |p: &Pose2D| cm.cost_at(p.x, p.y).unwrap_or(LETHAL);
    let limit = if cost_at(pose) >= sp.safety_margin { LETHAL } else { sp.safety_margin };
    let steps = (sp.horizon / sp.dt).round() as usize;
    let mut p = *pose;
    for k in 1..=steps {
        p = step_kinematics(p, *twist, sp.dt);
        if cost_at(&p) >= limit {
            return Prediction::CollisionAt(k as f64 * sp.dt);
        }
    }
    Prediction::Clear
}

/// Everything the authority rule looks at in one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArbiterInputs {
    pub mode: Mode,
    pub user_twist: Twist2D,
    /// Joystick is fresh (not stale under the dead-man rule).
    pub user_active: bool,
    pub planner_twist: Option<Twist2D>,
    /// Cross-track deviation from the active path, if any.
    pub deviation: Option<f64>,
    /// Prediction under the user's twist.
    pub prediction: Prediction,
    pub goal_reached: bool,
}

/// Deviation above which the user loses authority, given the latch.
pub fn active_threshold(mode: Mode, latched: bool, sp: &SafetyParams) -> f64 {
    match mode {
        Mode::Manual => f64::INFINITY,
        Mode::SemiAutonomous if latched => sp.deviation_release,
        Mode::SemiAutonomous => sp.deviation_threshold,
        Mode::Autonomous => f64::NEG_INFINITY,
    }
}

/// Updates the deviation latch: set at the threshold, released below release.
pub fn update_latch(latched: bool, deviation: Option<f64>, sp: &SafetyParams) -> bool {
    match deviation {
        None => false,
        Some(d) if latched => d >= sp.deviation_release,
        Some(d) => d >= sp.deviation_threshold,
    }
}

/// Pure authority rule. Returns the decision and the new latch state.
pub fn decide(inp: &ArbiterInputs, latched: bool, sp: &SafetyParams, limits: &VelocityLimits) -> (ArbiterDecision, bool) {
    let latched = if inp.mode == Mode::SemiAutonomous { update_latch(latched, inp.deviation, sp) } else { false };
    let stop = |reason| ArbiterDecision {
        twist: Twist2D::ZERO,
        authority: Authority::Stopped,
        reason,
    };
    let system = |reason| match inp.planner_twist {
        Some(t) => ArbiterDecision {
            twist: limits.clamp(t),
            authority: Authority::System,
            reason,
        },
        None => stop(reason),
    };
    let user = |reason| ArbiterDecision {
        twist: limits.clamp(inp.user_twist),
        authority: Authority::User,
        reason,
    };
    let d = match inp.mode {
        Mode::Manual => {
            if !inp.prediction.is_clear() {
                stop(Reason::CollisionOverride)
            } else if !inp.user_active {
                user(Reason::NoInput)
            } else {
                user(Reason::Passthrough)
            }
        }
        Mode::SemiAutonomous => {
            if inp.goal_reached {
                stop(Reason::GoalReached)
            } else if !inp.prediction.is_clear() {
                system(Reason::CollisionOverride)
            } else if latched {
                system(Reason::DeviationCorrection)
            } else if !inp.user_active {
                user(Reason::NoInput)
            } else {
                user(Reason::Passthrough)
            }
        }
        Mode::Autonomous => {
            if inp.user_active && !inp.user_twist.is_zero() {
                stop(Reason::EmergencyStop)
            } else if inp.goal_reached {
                stop(Reason::GoalReached)
            } else {
                system(Reason::Passthrough)
            }
        }
    };
    (d, latched)
}

/// Stateful wrapper holding the hysteresis latch.
#[derive(Debug, Clone, Default)]
pub struct Arbiter {
    pub params: SafetyParams,
    pub limits: VelocityLimits,
    latched: bool,
}

impl Arbiter {
    pub fn new(params: SafetyParams, limits: VelocityLimits) -> Self {
        Self {
            params,
            limits,
            latched: false,
        }
    }

    pub fn latched(&self) -> bool {
        self.latched
    }

    pub fn reset(&mut self) {
        self.latched = false;
    }

    pub fn arbitrate(&mut self, inp: &ArbiterInputs) -> ArbiterDecision {
        let (d, l) = decide(inp, self.latched, &self.params, &self.limits);
        self.latched = l;
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmap::InflationParams;
    use crate::grid::{Grid, GridGeometry};
    use crate::mapper::{CellState, OccupancyGrid};
    use crate::planner::PathCost;

    fn line_path(pts: Vec<(f64, f64)>) -> Path {
        Path {
            goal: *pts.last().unwrap(),
            waypoints: pts,
            cells: vec![],
            total_cost: PathCost::ZERO,
        }
    }

    #[test]
    fn joystick_scaling() {
        let l = VelocityLimits::default();
        assert_eq!(scale_joystick(&JoystickCommand::new(1.0, 0.0, 0.0), 0.1, &l, 0.5), Twist2D::new(0.5, 0.0));
        assert_eq!(scale_joystick(&JoystickCommand::new(0.0, -1.0, 0.0), 0.1, &l, 0.5), Twist2D::new(0.0, -1.5));
        assert_eq!(scale_joystick(&JoystickCommand::new(1.0, 0.0, 0.0), 0.6, &l, 0.5), Twist2D::ZERO);
        assert_eq!(JoystickCommand::new(3.0, f64::NAN, 0.0).fwd, 1.0);
    }

    #[test]
    fn deviation_examples() {
        let straight = line_path(vec![(0.0, 0.0), (5.0, 0.0)]);
        assert_eq!(cross_track_deviation(3.0, 0.7, &straight), 0.7);
        assert_eq!(cross_track_deviation(5.0, 0.0, &straight), 0.0);
        let l = line_path(vec![(0.0, 0.0), (2.0, 0.0), (2.0, 2.0)]);
        let (x, y) = (2.4, -0.3);
        // sample the polyline at 1 mm
        let mut best = f64::INFINITY;
        for k in 0..=4000 {
            let s = k as f64 * 0.001;
            let (px, py) = if s <= 2.0 { (s, 0.0) } else { (2.0, s - 2.0) };
            best = best.min((px - x).hypot(py - y));
        }
        assert!((cross_track_deviation(x, y, &l) - best).abs() < 1e-9);
    }

    fn walled(dist_ahead: f64) -> (Costmap, Pose2D) {
        let g = GridGeometry::new(0.05, 100, 60);
        let mut grid = OccupancyGrid(Grid::filled(g, CellState::Free));
        let wall_x = 1.0 + dist_ahead;
        for cy in 0..60 {
            for cx in 0..100 {
                if (cx as f64) * 0.05 >= wall_x {
                    grid.0.set(cx, cy, CellState::Occupied);
                }
            }
        }
        (Costmap::build_static(&grid, InflationParams::default()), Pose2D::new(1.0, 1.5, 0.0))
    }

    #[test]
    fn collision_prediction() {
        let (cm, pose) = walled(0.5);
        let sp = SafetyParams::default();
        assert_eq!(predict_collision(&pose, &Twist2D::ZERO, &cm, &sp), Prediction::Clear);
        // tick-wise oracle: first k with center cell inside the inscribed ring
        let wall_center = 1.5 + 0.025;
        let mut expect = None;
        for k in 1..=30 {
            let x = 1.0 + 0.5 * 0.05 * k as f64;
            let cell_center = (x / 0.05).floor() * 0.05 + 0.025;
            if wall_center - cell_center <= 0.35 + 1e-9 {
                expect = Some(k as f64 * 0.05);
                break;
            }
        }
        let got = predict_collision(&pose, &Twist2D::new(0.5, 0.0), &cm, &sp);
        assert_eq!(got, Prediction::CollisionAt(expect.unwrap()));
        if let Prediction::CollisionAt(t) = got {
            assert!((t - 0.3).abs() <= 0.1);
        }
        let (open, _) = walled(4.0);
        assert_eq!(predict_collision(&Pose2D::new(1.5, 1.5, 0.0), &Twist2D::new(0.0, 1.5), &open, &sp), Prediction::Clear);
    }

    fn inputs(mode: Mode, deviation: f64, pred: Prediction) -> ArbiterInputs {
        ArbiterInputs {
            mode,
            user_twist: Twist2D::new(0.3, 0.1),
            user_active: true,
            planner_twist: Some(Twist2D::new(0.5, -0.2)),
            deviation: Some(deviation),
            prediction: pred,
            goal_reached: false,
        }
    }

    #[test]
    fn semi_examples() {
        let sp = SafetyParams::default();
        let l = VelocityLimits::default();
        let (d, _) = decide(&inputs(Mode::SemiAutonomous, 0.2, Prediction::Clear), false, &sp, &l);
        assert_eq!((d.authority, d.reason), (Authority::User, Reason::Passthrough));
        assert_eq!(d.twist, Twist2D::new(0.3, 0.1));
        let (d, latched) = decide(&inputs(Mode::SemiAutonomous, 0.7, Prediction::Clear), false, &sp, &l);
        assert_eq!((d.authority, d.reason), (Authority::System, Reason::DeviationCorrection));
        assert!(latched);
        let (d, _) = decide(&inputs(Mode::SemiAutonomous, 0.1, Prediction::CollisionAt(0.4)), false, &sp, &l);
        assert_eq!((d.authority, d.reason), (Authority::System, Reason::CollisionOverride));
    }

    #[test]
    fn manual_and_autonomous() {
        let sp = SafetyParams::default();
        let l = VelocityLimits::default();
        let (d, _) = decide(&inputs(Mode::Manual, 3.0, Prediction::Clear), false, &sp, &l);
        assert_eq!(d.authority, Authority::User);
        let (d, _) = decide(&inputs(Mode::Manual, 0.0, Prediction::CollisionAt(0.2)), false, &sp, &l);
        assert_eq!((d.authority, d.twist), (Authority::Stopped, Twist2D::ZERO));
        let mut a = inputs(Mode::Autonomous, 0.0, Prediction::Clear);
        let (d, _) = decide(&a, false, &sp, &l);
        assert_eq!((d.authority, d.reason), (Authority::Stopped, Reason::EmergencyStop));
        a.user_twist = Twist2D::ZERO;
        let (d, _) = decide(&a, false, &sp, &l);
        assert_eq!((d.authority, d.twist), (Authority::System, Twist2D::new(0.5, -0.2)));
        a.goal_reached = true;
        assert_eq!(decide(&a, false, &sp, &l).0.reason, Reason::GoalReached);
    }

    #[test]
    fn hysteresis_ramp_has_two_transitions() {
        let mut arb = Arbiter::default();
        let mut prev = None;
        let mut transitions = 0;
        let ramp = (0..=100).map(|k| k as f64 * 0.01).chain((0..=100).rev().map(|k| k as f64 * 0.01));
        for dev in ramp {
            let d = arb.arbitrate(&inputs(Mode::SemiAutonomous, dev, Prediction::Clear));
            if prev.is_some_and(|p| p != d.authority) {
                transitions += 1;
            }
            prev = Some(d.authority);
        }
        assert_eq!(transitions, 2);
    }
}
