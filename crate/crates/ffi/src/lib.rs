//! C ABI for the sharednav stack.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `sn_*_new`/`sn_*_load` function and released by the matching `sn_*_free`.
//! Functions return an [`SnStatus`]; on anything but `SN_STATUS_OK` a message is
//! available from [`sn_last_error`] on the same thread. Panics are caught and
//! reported as `SN_STATUS_PANIC` rather than unwinding into C.
//!
//! Handles are not synchronized: use each one from a single thread at a time.

use sharednav::arbiter::{Authority, Mode};
use sharednav::gateway::protocol::{Phase, RejectCode, Role};
use sharednav::gateway::{CommandMessage, Engine, EngineConfig, Rejection, StateMessage};
use sharednav::geometry::{Pose2D, Twist2D};
use sharednav::mapper::{load_map, Confidence};
use sharednav::runtime::GoalStatus;
use sharednav::sim::{SimConfig, Simulator};
use sharednav::trials::{build_trial_map, run_trial, GoalSpec, TrialSpec, UserModel};
use sharednav::worldfile::{parse_world, resolve_world, WorldSpec};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    NotFound = 3,
    /// The command was understood but refused (unreachable goal, wrong phase...).
    Rejected = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnMode {
    Manual = 0,
    SemiAutonomous = 1,
    Autonomous = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnAuthority {
    User = 0,
    System = 1,
    Stopped = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnGoalStatus {
    Idle = 0,
    Active = 1,
    Reached = 2,
    Aborted = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SnPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Result of one raw simulator tick.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SnStep {
    /// Noisy odometry increment in the robot frame.
    pub odom: SnPose,
    pub scanned: bool,
    pub collided_now: bool,
    pub blocked: bool,
    pub travelled: f64,
}

/// Flattened view of a session after a tick.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnState {
    pub tick: u64,
    pub sim_time: f64,
    /// Estimated pose (what the chair believes).
    pub estimate: SnPose,
    /// Ground truth.
    pub pose: SnPose,
    pub v: f64,
    pub w: f64,
    pub mode: SnMode,
    pub authority: SnAuthority,
    pub goal_status: SnGoalStatus,
    pub mapping: bool,
    pub localization_lost: bool,
    /// Negative when there is no path.
    pub deviation: f64,
    pub collided: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SnTrialRecord {
    pub distance: f64,
    pub time: f64,
    pub goal_reached: bool,
    pub collided: bool,
}

pub struct SnWorld {
    spec: Arc<WorldSpec>,
}

pub struct SnSim {
    sim: Simulator,
}

pub struct SnSession {
    engine: Engine,
    last: Option<StateMessage>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

struct Fail(SnStatus, String);

impl Fail {
    fn new(status: SnStatus, msg: impl Into<String>) -> Self {
        Fail(status, msg.into())
    }
}

impl From<Rejection> for Fail {
    fn from(r: Rejection) -> Self {
        let status = match r.code {
            RejectCode::UnknownGoal => SnStatus::NotFound,
            RejectCode::Io => SnStatus::Io,
            RejectCode::Decode => SnStatus::InvalidArgument,
            _ => SnStatus::Rejected,
        };
        Fail(status, r.reason)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SnStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            SnStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(SnStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::new(SnStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn obj<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail::new(SnStatus::NullArgument, format!("{name} is null")))
}

unsafe fn obj_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail::new(SnStatus::NullArgument, format!("{name} is null")))
}

fn finite(values: &[f64], what: &str) -> Result<(), Fail> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Fail::new(SnStatus::InvalidArgument, format!("{what} must be finite")))
    }
}

fn pose(p: Pose2D) -> SnPose {
    SnPose {
        x: p.x,
        y: p.y,
        theta: p.theta,
    }
}

fn mode_from(m: SnMode) -> Mode {
    match m {
        SnMode::Manual => Mode::Manual,
        SnMode::SemiAutonomous => Mode::SemiAutonomous,
        SnMode::Autonomous => Mode::Autonomous,
    }
}

fn mode_to(m: Mode) -> SnMode {
    match m {
        Mode::Manual => SnMode::Manual,
        Mode::SemiAutonomous => SnMode::SemiAutonomous,
        Mode::Autonomous => SnMode::Autonomous,
    }
}

/// Message for the last failed call on this thread; empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn sn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a bundled world by name (`hospital`, `home`, `loop`) or a `.world` file.
///
/// # Safety
/// `name_or_path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sn_world_load(name_or_path: *const c_char, out: *mut *mut SnWorld) -> SnStatus {
    guard(|| {
        let name = str_arg(name_or_path, "name_or_path")?;
        let out = obj_mut(out, "out")?;
        let spec = resolve_world(name).map_err(|e| Fail::new(SnStatus::NotFound, e.to_string()))?;
        *out = Box::into_raw(Box::new(SnWorld { spec: Arc::new(spec) }));
        Ok(())
    })
}

/// Parses world text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sn_world_parse(text: *const c_char, out: *mut *mut SnWorld) -> SnStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = obj_mut(out, "out")?;
        let spec = parse_world(text).map_err(|e| Fail::new(SnStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(SnWorld { spec: Arc::new(spec) }));
        Ok(())
    })
}

/// World extent in meters.
///
/// # Safety
/// `world` must be live; `width` and `height` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sn_world_size(world: *const SnWorld, width: *mut f64, height: *mut f64) -> SnStatus {
    guard(|| {
        let w = obj(world, "world")?;
        *obj_mut(width, "width")? = w.spec.world_width();
        *obj_mut(height, "height")? = w.spec.world_height();
        Ok(())
    })
}

/// # Safety
/// `world` must come from `sn_world_load`/`sn_world_parse` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sn_world_free(world: *mut SnWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Bare simulator: ground truth, sensing and odometry without navigation.
///
/// # Safety
/// `world` must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sn_sim_new(
    world: *const SnWorld,
    seed: u64,
    dynamic_obstacles: bool,
    out: *mut *mut SnSim,
) -> SnStatus {
    guard(|| {
        let w = obj(world, "world")?;
        let out = obj_mut(out, "out")?;
        let config = SimConfig {
            dynamic_obstacles,
            ..SimConfig::default()
        };
        *out = Box::into_raw(Box::new(SnSim {
            sim: Simulator::new(&w.spec, config, seed),
        }));
        Ok(())
    })
}

/// Advances one tick under the commanded twist (clamped to the chair's limits).
///
/// # Safety
/// `sim` must be live; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn sn_sim_step(sim: *mut SnSim, v: f64, w: f64, out: *mut SnStep) -> SnStatus {
    guard(|| {
        let s = obj_mut(sim, "sim")?;
        finite(&[v, w], "twist")?;
        let r = s.sim.step(Twist2D { v, w });
        if let Some(out) = out.as_mut() {
            *out = SnStep {
                odom: pose(r.odom_delta),
                scanned: r.scan.is_some(),
                collided_now: r.collided_now,
                blocked: r.blocked,
                travelled: r.travelled,
            };
        }
        Ok(())
    })
}

/// True pose of the chair.
///
/// # Safety
/// `sim` must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sn_sim_pose(sim: *const SnSim, out: *mut SnPose) -> SnStatus {
    guard(|| {
        let s = obj(sim, "sim")?;
        *obj_mut(out, "out")? = pose(s.sim.true_pose());
        Ok(())
    })
}

/// # Safety
/// `sim` must be live; `tick` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sn_sim_tick(sim: *const SnSim, tick: *mut u64) -> SnStatus {
    guard(|| {
        *obj_mut(tick, "tick")? = obj(sim, "sim")?.sim.tick();
        Ok(())
    })
}

/// # Safety
/// `sim` must come from `sn_sim_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sn_sim_free(sim: *mut SnSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Full navigation session. With `map_path` null the map is surveyed from
/// the world first; otherwise the given map file is loaded.
///
/// # Safety
/// `world` must be live; `map_path` null or NUL-terminated; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sn_session_new(
    world: *const SnWorld,
    map_path: *const c_char,
    mode: SnMode,
    seed: u64,
    out: *mut *mut SnSession,
) -> SnStatus {
    guard(|| {
        let w = obj(world, "world")?;
        let map_path = opt_str_arg(map_path, "map_path")?;
        let out = obj_mut(out, "out")?;
        let mut config = EngineConfig::new((*w.spec).clone());
        config.mode = mode_from(mode);
        config.seed = seed;
        config.state_every = 1;
        match map_path {
            Some(p) => {
                let (map, goals) = load_map(Path::new(p)).map_err(|e| Fail::new(SnStatus::Io, e.to_string()))?;
                if map.geometry() != w.spec.geometry() {
                    return Err(Fail::new(SnStatus::InvalidArgument, "map does not match the world's grid"));
                }
                config.map = Some(map);
                config.extra_goals = goals;
            }
            None => config.map = Some(build_trial_map(&w.spec)),
        }
        *out = Box::into_raw(Box::new(SnSession {
            engine: Engine::new(config),
            last: None,
        }));
        Ok(())
    })
}

fn command(s: &mut SnSession, cmd: CommandMessage) -> Result<(), Fail> {
    s.engine.handle(Role::Driver, &cmd)?;
    Ok(())
}

/// # Safety
/// `session` must be live.
#[no_mangle]
pub unsafe extern "C" fn sn_session_set_goal(session: *mut SnSession, x: f64, y: f64) -> SnStatus {
    guard(|| {
        let s = obj_mut(session, "session")?;
        finite(&[x, y], "goal")?;
        command(
            s,
            CommandMessage::SetGoal {
                x: Some(x),
                y: Some(y),
                label: None,
            },
        )
    })
}

/// # Safety
/// `session` must be live; `label` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sn_session_set_goal_label(session: *mut SnSession, label: *const c_char) -> SnStatus {
    guard(|| {
        let s = obj_mut(session, "session")?;
        let label = str_arg(label, "label")?.to_owned();
        command(
            s,
            CommandMessage::SetGoal {
                x: None,
                y: None,
                label: Some(label),
            },
        )
    })
}

/// Joystick axes in [-1, 1]; goes stale after half a second of sim time.
///
/// # Safety
/// `session` must be live.
#[no_mangle]
pub unsafe extern "C" fn sn_session_joystick(session: *mut SnSession, fwd: f64, turn: f64) -> SnStatus {
    guard(|| {
        let s = obj_mut(session, "session")?;
        finite(&[fwd, turn], "joystick axes")?;
        command(s, CommandMessage::Joystick { fwd, turn })
    })
}

/// # Safety
/// `session` must be live.
#[no_mangle]
pub unsafe extern "C" fn sn_session_set_mode(session: *mut SnSession, mode: SnMode) -> SnStatus {
    guard(|| {
        let s = obj_mut(session, "session")?;
        command(s, CommandMessage::SetMode { mode: mode_from(mode) })
    })
}

/// Returns the chair to its spawn pose and clears the goal.
///
/// # Safety
/// `session` must be live.
#[no_mangle]
pub unsafe extern "C" fn sn_session_reset(session: *mut SnSession) -> SnStatus {
    guard(|| command(obj_mut(session, "session")?, CommandMessage::Reset))
}

/// Advances one control period and fills `out` (may be null).
///
/// # Safety
/// `session` must be live.
#[no_mangle]
pub unsafe extern "C" fn sn_session_step(session: *mut SnSession, out: *mut SnState) -> SnStatus {
    guard(|| {
        let s = obj_mut(session, "session")?;
        let msg = s.engine.step().expect("state every tick");
        if let Some(out) = out.as_mut() {
            let sim = s.engine.simulator();
            *out = SnState {
                tick: msg.tick,
                sim_time: msg.sim_time,
                estimate: SnPose {
                    x: msg.pose.x,
                    y: msg.pose.y,
                    theta: msg.pose.theta,
                },
                pose: pose(sim.true_pose()),
                v: msg.twist.v,
                w: msg.twist.w,
                mode: mode_to(msg.mode),
                authority: match msg.authority {
                    Authority::User => SnAuthority::User,
                    Authority::System => SnAuthority::System,
                    Authority::Stopped => SnAuthority::Stopped,
                },
                goal_status: match msg.goal_status {
                    GoalStatus::Idle => SnGoalStatus::Idle,
                    GoalStatus::Active => SnGoalStatus::Active,
                    GoalStatus::Reached => SnGoalStatus::Reached,
                    GoalStatus::Aborted => SnGoalStatus::Aborted,
                },
                mapping: msg.phase == Phase::Mapping,
                localization_lost: msg.pose.confidence == Confidence::Lost,
                deviation: msg.deviation.unwrap_or(-1.0),
                collided: sim.state().collided,
            };
        }
        s.last = Some(msg);
        Ok(())
    })
}

/// The last tick's full state as JSON (the gateway's `state` message,
/// including events and the planned path). Free with `sn_string_free`.
///
/// # Safety
/// `session` must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sn_session_state_json(session: *mut SnSession, out: *mut *mut c_char) -> SnStatus {
    guard(|| {
        let s = obj_mut(session, "session")?;
        let out = obj_mut(out, "out")?;
        let msg = match &s.last {
            Some(m) => m.clone(),
            None => s.engine.state(),
        };
        let text = serde_json::to_string(&msg).expect("state serializes");
        *out = CString::new(text).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `session` must come from `sn_session_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sn_session_free(session: *mut SnSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Runs one seeded trial to completion. `goal_label` null picks a random
/// goal from the seed. Non-autonomous modes drive with the scripted follower.
/// `remarks` (may be null) receives a `;`-joined list; free it with
/// `sn_string_free`.
///
/// # Safety
/// `world` must be live; `goal_label` null or NUL-terminated; `out` valid;
/// `remarks` null or valid.
#[no_mangle]
pub unsafe extern "C" fn sn_trial_run(
    world: *const SnWorld,
    goal_label: *const c_char,
    mode: SnMode,
    seed: u64,
    dynamic_obstacles: bool,
    out: *mut SnTrialRecord,
    remarks: *mut *mut c_char,
) -> SnStatus {
    guard(|| {
        let w = obj(world, "world")?;
        let label = opt_str_arg(goal_label, "goal_label")?;
        let out = obj_mut(out, "out")?;
        let goal = match label {
            Some(l) => {
                if w.spec.goal(l).is_none() {
                    return Err(Fail::new(SnStatus::NotFound, format!("unknown goal `{l}`")));
                }
                GoalSpec::Label(l.to_owned())
            }
            None => GoalSpec::Random,
        };
        let mut spec = TrialSpec::new(w.spec.clone(), goal, seed);
        spec.mode = mode_from(mode);
        spec.dynamic_obstacles = dynamic_obstacles;
        if spec.mode != Mode::Autonomous {
            spec.user_model = UserModel::PathFollower(Default::default());
        }
        let map = build_trial_map(&w.spec);
        let run = run_trial(&spec, &map, 1).map_err(|e| Fail::new(SnStatus::Rejected, e.to_string()))?;
        let r = &run.record;
        *out = SnTrialRecord {
            distance: r.distance,
            time: r.time,
            goal_reached: r.goal_reached,
            collided: r.has_remark("collision"),
        };
        if let Some(dst) = remarks.as_mut() {
            *dst = CString::new(r.remarks.join(";")).unwrap_or_default().into_raw();
        }
        Ok(())
    })
}
