use sharednav::arbiter::Mode;
use sharednav::runtime::Event;
use sharednav::sim::SimConfig;
use sharednav::trials::{run_suite, run_trial, GoalSpec, MapCache, Suite, TapeEntry, TrialError, TrialRun, TrialSpec, UserModel};
use sharednav::worldfile::resolve_world;
use std::sync::{Arc, OnceLock};

fn hospital() -> Arc<sharednav::worldfile::WorldSpec> {
    Arc::new(resolve_world("hospital").unwrap())
}

fn cache() -> &'static MapCache {
    static CACHE: OnceLock<MapCache> = OnceLock::new();
    CACHE.get_or_init(MapCache::new)
}

fn dynamic_runs() -> &'static [TrialRun] {
    static RUNS: OnceLock<Vec<TrialRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let suite = Suite::find("dynamic_random").unwrap();
        run_suite(suite, hospital(), &[1, 2, 3, 4], Mode::SemiAutonomous, cache()).unwrap().runs
    })
}

fn first_tick_with(run: &TrialRun, pred: impl Fn(&Event) -> bool) -> Option<usize> {
    run.log.iter().position(|e| e.events.iter().any(&pred))
}

#[test]
fn log_is_one_entry_per_tick() {
    let dt = SimConfig::default().dt;
    for run in dynamic_runs() {
        for (k, e) in run.log.iter().enumerate() {
            assert_eq!(e.tick, k as u64 + 1);
            assert!((e.sim_time - e.tick as f64 * dt).abs() < 1e-9);
        }
        let last = run.log.last().unwrap();
        assert_eq!(run.record.time, last.sim_time);
    }
}

#[test]
fn distance_is_at_least_the_straight_line() {
    for run in dynamic_runs().iter().filter(|r| r.record.goal_reached) {
        let start = &run.log[0].pose;
        let direct = (run.goal.0 - start.x).hypot(run.goal.1 - start.y);
        // the chair stops within tolerance of the goal
        assert!(run.record.distance >= direct - 0.3, "{} < {direct}", run.record.distance);
    }
}

#[test]
fn resets_and_recoveries_have_a_cause() {
    for run in dynamic_runs() {
        if let Some(reset) = first_tick_with(run, |e| *e == Event::StuckReset) {
            let stuck = first_tick_with(run, |e| *e == Event::Stuck).expect("reset without a stuck verdict");
            assert!(stuck <= reset);
        }
        if let Some(rec) = first_tick_with(run, |e| matches!(e, Event::Recovery(_))) {
            let cause = first_tick_with(run, |e| matches!(e, Event::NoPath | Event::Stuck)).expect("recovery without a cause");
            assert!(cause <= rec);
        }
    }
}

#[test]
fn remarks_mirror_the_log() {
    for run in dynamic_runs() {
        let from_log: Vec<String> = run
            .log
            .iter()
            .flat_map(|e| e.events.iter().filter(|ev| ev.is_remark()).map(|ev| ev.to_string()))
            .collect();
        assert_eq!(run.record.remarks, from_log);
    }
}

#[test]
fn rerunning_a_seed_reproduces_it() {
    let world = hospital();
    let map = cache().get(&world);
    let spec = Suite::find("dynamic_random").unwrap().spec(world, 2, Mode::SemiAutonomous);
    let again = run_trial(&spec, &map, 2).unwrap();
    let first = &dynamic_runs()[1];
    assert_eq!(first.record, again.record);
    assert_eq!(first.log_text(), again.log_text());
}

#[test]
fn short_timeout_is_remarked() {
    let world = hospital();
    let map = cache().get(&world);
    let mut spec = TrialSpec::new(world, GoalSpec::Label("goal2".into()), 1);
    spec.timeout = 2.0;
    let run = run_trial(&spec, &map, 1).unwrap();
    assert!(!run.record.goal_reached);
    assert!(run.record.has_remark("timeout"));
    assert!((run.record.time - 2.0).abs() < 1e-6);
}

#[test]
fn manual_tape_drives_without_the_planner() {
    let world = hospital();
    let map = cache().get(&world);
    let mut spec = TrialSpec::new(world, GoalSpec::Label("goal1".into()), 1);
    spec.mode = Mode::Manual;
    spec.timeout = 3.0;
    spec.user_model = UserModel::Tape(vec![
        TapeEntry { t: 0.0, fwd: 0.0, turn: 0.0 },
        TapeEntry { t: 1.0, fwd: 0.5, turn: 0.0 },
    ]);
    let run = run_trial(&spec, &map, 1).unwrap();
    let moved = |e: &sharednav::trials::TickLogEntry| e.pose.x.hypot(e.pose.y);
    let at_one = run.log.iter().find(|e| e.sim_time >= 0.95).unwrap();
    assert!((moved(at_one) - moved(&run.log[0])).abs() < 0.05);
    assert!(run.log.iter().all(|e| e.authority == "user"), "{:?}", run.log[0].authority);
    assert!(run.record.distance > 0.3);
}

#[test]
fn bad_trial_specs_are_errors() {
    let world = hospital();
    let map = cache().get(&world);
    let spec = TrialSpec::new(world.clone(), GoalSpec::Label("attic".into()), 1);
    assert!(matches!(run_trial(&spec, &map, 1), Err(TrialError::UnknownGoal(_))));
    let spec = TrialSpec::new(world.clone(), GoalSpec::Point(-5.0, 1.0), 1);
    assert!(matches!(run_trial(&spec, &map, 1), Err(TrialError::GoalOutOfBounds(..))));
    let mut spec = TrialSpec::new(world, GoalSpec::Random, 1);
    spec.timeout = f64::NAN;
    assert!(matches!(run_trial(&spec, &map, 1), Err(TrialError::BadTimeout(_))));
    assert!(matches!(Suite::find("nope"), Err(TrialError::UnknownSuite(_))));
}
