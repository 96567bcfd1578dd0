//! Scripted mapping drive: an operator who can see the world steers the chair
//! through a list of waypoints while the mapper builds a map from sensors.

use crate::costmap::{Costmap, InflationParams};
use crate::geometry::{normalize_angle, Pose2D, Twist2D};
use crate::grid::Grid;
use crate::mapper::{CellState, LoopClosure, MapBelief, MappingSession, OccupancyGrid, PoseEstimate};
use crate::planner::{closest_waypoint, lookahead_point, plan_global, Path};
use crate::sim::{DepthScan, SimConfig, Simulator};
use crate::worldfile::{GroundTruthGrid, WorldSpec};
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurveyStop {
    pub x: f64,
    pub y: f64,
    /// Turn a full circle on arrival.
    pub spin: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyPlan {
    pub stops: Vec<SurveyStop>,
    pub speed: f64,
    pub spin_rate: f64,
    pub max_ticks: u64,
}

impl SurveyPlan {
    /// Spin at spawn, visit every named goal in order with a spin, return to spawn.
    pub fn tour(world: &WorldSpec) -> Self {
        let mut stops = vec![SurveyStop { x: world.spawn.x, y: world.spawn.y, spin: true }];
        stops.extend(world.named_goals.iter().map(|g| SurveyStop { x: g.x, y: g.y, spin: true }));
        stops.push(SurveyStop { x: world.spawn.x, y: world.spawn.y, spin: false });
        Self::through(stops)
    }

    pub fn through(stops: Vec<SurveyStop>) -> Self {
        Self {
            stops,
            speed: 0.4,
            spin_rate: 1.0,
            max_ticks: 40_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SurveyResult {
    pub map: OccupancyGrid,
    pub session: MappingSession,
    pub closure: Option<LoopClosure>,
    pub true_final: Pose2D,
    /// Scan-matched estimate before loop closure.
    pub matched_final: Pose2D,
    /// Pure odometry integration.
    pub dead_reckoned_final: Pose2D,
    /// True pose at each scan, aligned with the session trajectory.
    pub true_trajectory: Vec<Pose2D>,
    pub ticks: u64,
}

/// Occupancy as a perfect observer would map it; used to plan the drive.
pub fn truth_occupancy(grid: &GroundTruthGrid) -> OccupancyGrid {
    OccupancyGrid(Grid {
        geometry: grid.geometry(),
        cells: grid
            .0
            .cells
            .iter()
            .map(|&o| if o { CellState::Occupied } else { CellState::Free })
            .collect(),
    })
}

enum Phase {
    Spin(f64),
    /// Path plus the spin owed on arrival.
    Drive(Path, f64),
}

/// Drives the plan and returns the resulting map, closing the loop if the
/// drive ends back in the start region.
pub fn run_survey(world: &WorldSpec, plan: &SurveyPlan, config: SimConfig, seed: u64) -> SurveyResult {
    let mut session = MappingSession::new(world.geometry(), world.spawn);
    let mut true_trajectory = Vec::new();
    let sim = drive(world, plan, config, seed, |tick, odom, scan, truth| {
        if let Some(d) = odom {
            session.propagate(d);
        }
        if let Some(scan) = scan {
            session.add_scan(tick, scan);
            true_trajectory.push(truth);
        }
    });

    let matched_final = session.estimate().pose;
    let dead_reckoned_final = session.odom_pose();
    let closure = session.close_loop().ok();
    SurveyResult {
        map: session.map.to_occupancy(),
        true_final: sim.true_pose(),
        matched_final,
        dead_reckoned_final,
        true_trajectory,
        ticks: sim.tick(),
        closure,
        session,
    }
}

/// Drives the plan and integrates every scan at the true pose it was taken
/// from, as a surveyor with perfect localization would.
pub fn surveyed_map(world: &WorldSpec, plan: &SurveyPlan, config: SimConfig, seed: u64) -> OccupancyGrid {
    let mut belief = MapBelief::new(world.geometry());
    drive(world, plan, config, seed, |_, _, scan, truth| {
        if let Some(scan) = scan {
            belief.integrate_scan(&truth, &scan);
        }
    });
    belief.to_occupancy()
}

/// Runs the operator through the plan. `on_step` sees the tick, the odometry
/// increment, the scan if one was taken and the true pose; the priming scan
/// before the first step arrives with no odometry.
fn drive(
    world: &WorldSpec,
    plan: &SurveyPlan,
    config: SimConfig,
    seed: u64,
    mut on_step: impl FnMut(u64, Option<&Pose2D>, Option<DepthScan>, Pose2D),
) -> Simulator {
    let mut sim = Simulator::new(world, config, seed);
    let truth_cm = Costmap::build_static(&truth_occupancy(sim.ground_truth()), InflationParams::default());
    let dt = config.dt;

    let first = sim.sense();
    on_step(0, None, Some(first), sim.true_pose());

    let mut stops = plan.stops.iter();
    let mut phase: Option<Phase> = None;
    let mut twist = Twist2D::ZERO;
    while sim.tick() < plan.max_ticks {
        let out = sim.step(twist);
        let pose = sim.true_pose();
        on_step(sim.tick(), Some(&out.odom_delta), out.scan, pose);
        if phase.is_none() {
            let Some(stop) = stops.next() else { break };
            let spin = if stop.spin { TAU } else { 0.0 };
            phase = Some(if pose.distance_to(stop.x, stop.y) < 0.3 {
                Phase::Spin(spin)
            } else {
                match plan_global(&truth_cm, pose.position(), (stop.x, stop.y)) {
                    Ok(p) => Phase::Drive(p, spin),
                    Err(_) => continue,
                }
            });
        }
        twist = match &mut phase {
            Some(Phase::Spin(left)) if *left <= 0.0 => {
                phase = None;
                Twist2D::ZERO
            }
            Some(Phase::Spin(left)) => {
                *left -= plan.spin_rate * dt;
                Twist2D::new(0.0, plan.spin_rate)
            }
            Some(Phase::Drive(path, spin)) => {
                if pose.distance_to(path.goal.0, path.goal.1) < 0.15 {
                    phase = Some(Phase::Spin(*spin));
                    Twist2D::ZERO
                } else if yield_to_people(&sim, path, &pose, plan.speed) {
                    Twist2D::ZERO
                } else {
                    follow(path, &pose, plan.speed, config.limits.w_max)
                }
            }
            None => Twist2D::ZERO,
        };
    }
    sim
}

/// Holds still while anyone would come close to the chair over the next few
/// seconds of its drive along `path`.
fn yield_to_people(sim: &Simulator, path: &Path, pose: &Pose2D, speed: f64) -> bool {
    let start = closest_waypoint(path, pose.x, pose.y);
    let reach = sim.config.footprint_radius + YIELD_MARGIN;
    (0..=YIELD_STEPS).any(|k| {
        let t = k as f64 * YIELD_STEP;
        let ahead = lookahead_point(path, start, speed * t);
        sim.obstacles_at(sim.sim_time() + t)
            .iter()
            .any(|o| (ahead.0 - o.x).hypot(ahead.1 - o.y) < reach + o.radius)
    })
}

const YIELD_STEP: f64 = 0.25;
const YIELD_STEPS: usize = 16;
const YIELD_MARGIN: f64 = 0.3;

fn follow(path: &Path, pose: &Pose2D, speed: f64, w_max: f64) -> Twist2D {
    let i = closest_waypoint(path, pose.x, pose.y);
    let target = lookahead_point(path, i, 0.5);
    let alpha = normalize_angle((target.1 - pose.y).atan2(target.0 - pose.x) - pose.theta);
    if alpha.abs() > 0.8 {
        return Twist2D::new(0.0, alpha.signum() * w_max.min(1.0));
    }
    let l = pose.distance_to(target.0, target.1).max(0.05);
    let w = (speed * 2.0 * alpha.sin() / l).clamp(-w_max, w_max);
    Twist2D::new(speed, w)
}

impl SurveyResult {
    pub fn estimate(&self) -> PoseEstimate {
        self.session.estimate()
    }
}
