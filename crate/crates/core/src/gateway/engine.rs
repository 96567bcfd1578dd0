//! The single simulation context behind the gateway: owns the simulator and
//! either a navigator on a finished map or a mapping session, applies client
//! commands and produces state messages.

use super::protocol::{
    CommandMessage, Layer, Phase, RejectCode, Role, Snapshot, StateMessage, WireObstacle, WirePoint, WirePose,
    WireTwist, MAX_PATH_POINTS,
};
use crate::arbiter::{cross_track_deviation, scale_joystick, Authority, JoystickCommand, Mode, Reason, SafetyParams};
use crate::geometry::{Pose2D, Twist2D};
use crate::mapper::{save_map, MappingSession, OccupancyGrid, PoseEstimate};
use crate::runtime::{Event, GoalRejection, GoalStatus, NavConfig, Navigator};
use crate::sim::{SimConfig, Simulator};
use crate::trials::{LoggedPose, TickLogEntry};
use crate::worldfile::WorldSpec;
use base64::Engine as _;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub world: WorldSpec,
    /// Start navigating on this map; without one the engine starts mapping.
    pub map: Option<OccupancyGrid>,
    /// Named goals beyond the world's own (e.g. from a map sidecar).
    pub extra_goals: Vec<(String, f64, f64)>,
    pub mode: Mode,
    pub seed: u64,
    pub sim: SimConfig,
    /// Where finish_mapping writes the map.
    pub map_out: PathBuf,
    /// Emit a state message every this many ticks.
    pub state_every: u64,
}

impl EngineConfig {
    pub fn new(world: WorldSpec) -> Self {
        let map_out = PathBuf::from(format!("{}.map", world.name));
        Self {
            world,
            map: None,
            extra_goals: Vec::new(),
            mode: Mode::SemiAutonomous,
            seed: 0,
            sim: SimConfig::default(),
            map_out,
            state_every: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub code: RejectCode,
    pub reason: String,
}

impl Rejection {
    fn new(code: RejectCode, reason: impl Into<String>) -> Self {
        Self {
            code,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Ack(Option<String>),
    Snapshot(Snapshot),
}

enum Running {
    Navigation(Box<Navigator>),
    Mapping(Box<MappingSession>),
}

pub struct Engine {
    config: EngineConfig,
    sim: Simulator,
    running: Running,
    /// Map the navigator runs on (the last saved one while mapping).
    map: Option<OccupancyGrid>,
    goals: BTreeMap<String, (f64, f64)>,
    mode: Mode,
    twist: Twist2D,
    joystick: Option<JoystickCommand>,
    authority: (Authority, Reason),
    events: Vec<Event>,
    record: Option<Box<dyn Write + Send>>,
}

fn nav_config(mode: Mode) -> NavConfig {
    NavConfig {
        mode,
        ..NavConfig::default()
    }
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        let sim = Simulator::new(&config.world, config.sim, config.seed);
        let spawn = config.world.spawn;
        let running = match &config.map {
            Some(m) => Running::Navigation(Box::new(Navigator::new(m, nav_config(config.mode), spawn))),
            None => Running::Mapping(Box::new(MappingSession::new(config.world.geometry(), spawn))),
        };
        let mut goals: BTreeMap<String, (f64, f64)> =
            config.world.named_goals.iter().map(|g| (g.label.clone(), (g.x, g.y))).collect();
        goals.extend(config.extra_goals.iter().map(|(l, x, y)| (l.clone(), (*x, *y))));
        Self {
            map: config.map.clone(),
            mode: config.mode,
            sim,
            running,
            goals,
            twist: Twist2D::ZERO,
            joystick: None,
            authority: (Authority::Stopped, Reason::NoInput),
            events: Vec::new(),
            record: None,
            config,
        }
    }

    /// Appends a JSON line per tick to `sink`.
    pub fn record_to(&mut self, sink: Box<dyn Write + Send>) {
        self.record = Some(sink);
    }

    pub fn tick(&self) -> u64 {
        self.sim.tick()
    }

    pub fn phase(&self) -> Phase {
        match self.running {
            Running::Navigation(_) => Phase::Navigation,
            Running::Mapping(_) => Phase::Mapping,
        }
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn navigator(&self) -> Option<&Navigator> {
        match &self.running {
            Running::Navigation(n) => Some(n),
            Running::Mapping(_) => None,
        }
    }

    fn estimate(&self) -> PoseEstimate {
        match &self.running {
            Running::Navigation(n) => n.estimate(),
            Running::Mapping(s) => s.estimate(),
        }
    }

    /// Applies one command from a client holding `role`.
    pub fn handle(&mut self, role: Role, cmd: &CommandMessage) -> Result<Reply, Rejection> {
        if cmd.needs_driver() && role != Role::Driver {
            return Err(Rejection::new(RejectCode::Role, "only the driver may send this command"));
        }
        let now = self.sim.sim_time();
        match cmd {
            CommandMessage::Joystick { fwd, turn } => {
                let j = JoystickCommand::new(*fwd, *turn, now);
                self.joystick = Some(j);
                if let Running::Navigation(n) = &mut self.running {
                    n.set_joystick(j);
                }
                Ok(Reply::Ack(None))
            }
            CommandMessage::SetMode { mode } => {
                self.mode = *mode;
                match &mut self.running {
                    Running::Navigation(n) => {
                        if n.set_mode(*mode) {
                            Ok(Reply::Ack(Some("queued until recovery ends".into())))
                        } else {
                            self.events.push(Event::ModeChanged(*mode));
                            Ok(Reply::Ack(None))
                        }
                    }
                    Running::Mapping(_) => Ok(Reply::Ack(Some("applies when mapping finishes".into()))),
                }
            }
            CommandMessage::SetGoal { x, y, label } => {
                let target = match (x, y, label) {
                    (_, _, Some(l)) => *self
                        .goals
                        .get(l)
                        .ok_or_else(|| Rejection::new(RejectCode::UnknownGoal, format!("unknown goal `{l}`")))?,
                    (Some(x), Some(y), None) => (*x, *y),
                    _ => return Err(Rejection::new(RejectCode::UnknownGoal, "set_goal needs x and y or a label")),
                };
                let Running::Navigation(n) = &mut self.running else {
                    return Err(Rejection::new(RejectCode::WrongPhase, "goals are not available while mapping"));
                };
                match n.set_goal(target.0, target.1) {
                    Ok(_) => Ok(Reply::Ack(None)),
                    Err(e @ GoalRejection::Unreachable) => Err(Rejection::new(RejectCode::Unreachable, e.to_string())),
                    Err(e @ GoalRejection::OutOfBounds) => Err(Rejection::new(RejectCode::OutOfBounds, e.to_string())),
                }
            }
            CommandMessage::StartMapping => {
                if matches!(self.running, Running::Mapping(_)) {
                    return Err(Rejection::new(RejectCode::WrongPhase, "already mapping"));
                }
                let start = self.estimate().pose;
                self.running = Running::Mapping(Box::new(MappingSession::new(self.config.world.geometry(), start)));
                Ok(Reply::Ack(None))
            }
            CommandMessage::FinishMapping => self.finish_mapping(),
            CommandMessage::Reset => {
                let spawn = self.config.world.spawn;
                self.sim.reset_pose(spawn);
                self.twist = Twist2D::ZERO;
                self.joystick = None;
                match &mut self.running {
                    Running::Navigation(n) => {
                        n.clear_goal();
                        n.reset_pose(spawn);
                    }
                    Running::Mapping(s) => **s = MappingSession::new(self.config.world.geometry(), spawn),
                }
                Ok(Reply::Ack(None))
            }
            CommandMessage::RequestMap { layer } => Ok(Reply::Snapshot(self.snapshot(*layer))),
        }
    }

    fn finish_mapping(&mut self) -> Result<Reply, Rejection> {
        let Running::Mapping(session) = &mut self.running else {
            return Err(Rejection::new(RejectCode::WrongPhase, "not mapping"));
        };
        let closed = session.close_loop();
        let map = session.map.to_occupancy();
        let pose = session.estimate().pose;
        let goals: Vec<(String, f64, f64)> = self.goals.iter().map(|(l, &(x, y))| (l.clone(), x, y)).collect();
        save_map(&self.config.map_out, &map, &goals).map_err(|e| Rejection::new(RejectCode::Io, e.to_string()))?;
        let mut detail = format!("map written to {}", self.config.map_out.display());
        match closed {
            Ok(_) => self.events.push(Event::LoopClosed),
            Err(e) => detail.push_str(&format!("; {e}")),
        }
        let mut nav = Navigator::new(&map, nav_config(self.mode), pose);
        if let Some(j) = self.joystick {
            nav.set_joystick(j);
        }
        self.running = Running::Navigation(Box::new(nav));
        self.map = Some(map);
        Ok(Reply::Ack(Some(detail)))
    }

    /// Current map, or the in-progress one while mapping.
    pub fn map(&self) -> OccupancyGrid {
        match &self.running {
            Running::Mapping(s) => s.map.to_occupancy(),
            Running::Navigation(_) => self.map.clone().expect("navigation always has a map"),
        }
    }

    pub fn snapshot(&self, layer: Layer) -> Snapshot {
        let (geom, bytes) = match (layer, &self.running) {
            (Layer::Costmap, Running::Navigation(n)) => (n.costmap().geometry(), n.costmap().to_bytes()),
            _ => {
                let m = self.map();
                (m.geometry(), m.to_bytes())
            }
        };
        Snapshot {
            layer,
            tick: self.sim.tick(),
            resolution: geom.resolution,
            width: geom.width,
            height: geom.height,
            encoding: "base64".into(),
            data: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    /// Advances one control period; returns a state message on emitting ticks.
    pub fn step(&mut self) -> Option<StateMessage> {
        let out = self.sim.step(self.twist);
        let now = self.sim.sim_time();
        if out.collided_now {
            self.events.push(Event::Collision);
        }
        match &mut self.running {
            Running::Navigation(n) => {
                let r = n.tick(now, &out.odom_delta, out.scan.as_ref());
                self.twist = r.decision.twist;
                self.authority = (r.decision.authority, r.decision.reason);
                self.events.extend(r.events);
            }
            Running::Mapping(s) => {
                s.propagate(&out.odom_delta);
                if let Some(scan) = out.scan {
                    s.add_scan(self.sim.tick(), scan);
                }
                let stale = SafetyParams::default().stale_after;
                self.twist = match &self.joystick {
                    Some(j) if !j.is_stale(now, stale) => scale_joystick(j, now, &self.config.sim.limits, stale),
                    _ => Twist2D::ZERO,
                };
                self.authority = if self.twist == Twist2D::ZERO {
                    (Authority::Stopped, Reason::NoInput)
                } else {
                    (Authority::User, Reason::Passthrough)
                };
            }
        }
        self.write_record();
        if self.sim.tick() % self.config.state_every.max(1) != 0 {
            return None;
        }
        Some(self.state())
    }

    fn write_record(&mut self) {
        let Some(sink) = self.record.as_mut() else { return };
        let entry = TickLogEntry {
            tick: self.sim.tick(),
            sim_time: self.sim.sim_time(),
            pose: LoggedPose::from(self.sim.true_pose()),
            estimate: LoggedPose::from(match &self.running {
                Running::Navigation(n) => n.estimate().pose,
                Running::Mapping(s) => s.estimate().pose,
            }),
            authority: tag(&self.authority.0),
            reason: tag(&self.authority.1),
            events: self.events.clone(),
        };
        let line = serde_json::to_string(&entry).expect("log entries serialize");
        if writeln!(sink, "{line}").is_err() {
            tracing::warn!("tick log write failed; recording stopped");
            self.record = None;
        }
    }

    /// Snapshot of the current state; drains pending events.
    pub fn state(&mut self) -> StateMessage {
        let est = self.estimate();
        let p = est.pose;
        let (mode, goal, goal_status, path, deviation) = match &self.running {
            Running::Navigation(n) => (
                n.mode(),
                n.goal().map(|(x, y)| WirePoint { x, y }),
                n.status(),
                n.path().map(|path| path.decimated(MAX_PATH_POINTS).into_iter().map(|(x, y)| [x, y]).collect()),
                n.path().map(|path| cross_track_deviation(p.x, p.y, path)),
            ),
            Running::Mapping(_) => (Mode::Manual, None, GoalStatus::Idle, None, None),
        };
        StateMessage {
            tick: self.sim.tick(),
            sim_time: self.sim.sim_time(),
            phase: self.phase(),
            pose: WirePose {
                x: p.x,
                y: p.y,
                theta: p.theta,
                confidence: est.confidence,
            },
            twist: WireTwist {
                v: self.twist.v,
                w: self.twist.w,
            },
            mode,
            authority: self.authority.0,
            reason: self.authority.1,
            deviation,
            goal,
            goal_status,
            path,
            events: self.events.drain(..).map(|e| e.to_string()).collect(),
            obstacles: self
                .sim
                .obstacles()
                .iter()
                .map(|o| WireObstacle {
                    x: o.x,
                    y: o.y,
                    radius: o.radius,
                })
                .collect(),
        }
    }

    pub fn true_pose(&self) -> Pose2D {
        self.sim.true_pose()
    }
}

fn tag<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trials::build_trial_map;
    use crate::worldfile::{bundled_world, parse_world};

    fn home_engine() -> Engine {
        let world = parse_world(bundled_world("home").unwrap()).unwrap();
        let mut cfg = EngineConfig::new(world.clone());
        cfg.map = Some(build_trial_map(&world));
        Engine::new(cfg)
    }

    #[test]
    fn observers_cannot_drive() {
        let mut e = home_engine();
        let r = e.handle(Role::Observer, &CommandMessage::Joystick { fwd: 1.0, turn: 0.0 });
        assert_eq!(r.unwrap_err().code, RejectCode::Role);
        assert!(e.handle(Role::Observer, &CommandMessage::RequestMap { layer: Layer::Map }).is_ok());
    }

    #[test]
    fn goal_in_wall_is_rejected() {
        let mut e = home_engine();
        let r = e.handle(Role::Driver, &CommandMessage::SetGoal { x: Some(0.01), y: Some(0.01), label: None });
        let rej = r.unwrap_err();
        assert_eq!(rej.code, RejectCode::Unreachable);
        assert_eq!(rej.reason, "goal unreachable");
    }

    #[test]
    fn state_every_second_tick() {
        let mut e = home_engine();
        let emitted: Vec<u64> = (0..10).filter_map(|_| e.step()).map(|s| s.tick).collect();
        assert_eq!(emitted, vec![2, 4, 6, 8, 10]);
    }
}
