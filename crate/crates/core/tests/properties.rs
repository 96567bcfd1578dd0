use proptest::prelude::*;
use rand::SeedableRng;
use sharednav::arbiter::{decide, scale_joystick, ArbiterInputs, Authority, JoystickCommand, Mode, Prediction, Reason, SafetyParams};
use sharednav::costmap::{Costmap, InflationParams, INSCRIBED, LETHAL};
use sharednav::geometry::{normalize_angle, Pose2D, Twist2D, VelocityLimits};
use sharednav::grid::{Grid, GridGeometry};
use sharednav::mapper::{localize, CellState, MapBelief, OccupancyGrid, PoseEstimate, L_MAX, L_MIN, SEARCH_THETA, SEARCH_XY};
use sharednav::planner::{plan_global, track_path, TrackerParams};
use sharednav::sim::{sense_depth, step_kinematics, Beam, DepthScan, SensorModel, SimConfig, Simulator};
use sharednav::worldfile::{parse_world, rasterize, resolve_world, DynamicObstacleSpec, NamedGoal, Shape, WorldSpec};

fn room(w: usize, h: usize) -> OccupancyGrid {
    let geom = GridGeometry::new(0.05, w, h);
    let mut g = OccupancyGrid(Grid::filled(geom, CellState::Free));
    for cx in 0..w {
        g.0.set(cx, 0, CellState::Occupied);
        g.0.set(cx, h - 1, CellState::Occupied);
    }
    for cy in 0..h {
        g.0.set(0, cy, CellState::Occupied);
        g.0.set(w - 1, cy, CellState::Occupied);
    }
    g
}

fn world_strategy() -> impl Strategy<Value = WorldSpec> {
    let rect = (0.5f64..9.0, 0.5f64..7.0, 0.1f64..2.0, 0.1f64..2.0)
        .prop_map(|(x, y, w, h)| Shape::rect(x, y, (x + w).min(9.5), (y + h).min(7.5)));
    let wall = (0.5f64..9.5, 0.5f64..7.5, 0.5f64..9.5, 0.5f64..7.5, 0.05f64..0.4)
        .prop_map(|(x0, y0, x1, y1, t)| Shape::Wall { x0, y0, x1, y1, thickness: t });
    let dyn_obs = (0.1f64..0.4, 0.1f64..1.0, any::<bool>(), proptest::collection::vec((1.0f64..9.0, 1.0f64..7.0), 2..4))
        .prop_map(|(radius, speed, looped, waypoints)| DynamicObstacleSpec { radius, speed, looped, waypoints });
    (
        proptest::collection::vec(prop_oneof![rect, wall], 0..6),
        proptest::collection::vec(dyn_obs, 0..3),
        proptest::collection::vec((1.0f64..9.0, 1.0f64..7.0), 0..3),
    )
        .prop_map(|(shapes, dynamic, goals)| WorldSpec {
            name: "generated".into(),
            resolution: 0.05,
            width: 200,
            height: 160,
            static_shapes: shapes,
            dynamic_obstacles: dynamic,
            spawn: Pose2D::new(0.3, 0.3, 0.0),
            named_goals: goals
                .into_iter()
                .enumerate()
                .map(|(k, (x, y))| NamedGoal { label: format!("g{k}"), x, y })
                .collect(),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn world_text_round_trips(spec in world_strategy()) {
        // spawn near the corner stays clear of generated shapes
        prop_assume!(!spec.static_shapes.iter().any(|s| s.covers(0.3, 0.3)));
        // parsing adds the closing boundary walls, so compare from the first parse on
        let once = parse_world(&spec.to_text()).unwrap();
        let twice = parse_world(&once.to_text()).unwrap();
        prop_assert_eq!(&twice, &once);
        prop_assert_eq!(rasterize(&once), rasterize(&spec));
    }

    #[test]
    fn zero_twist_fixes_pose(x in -50.0f64..50.0, y in -50.0f64..50.0, t in -3.1f64..3.1, dt in 0.0f64..1.0) {
        let p = Pose2D::new(x, y, t);
        prop_assert_eq!(step_kinematics(p, Twist2D::ZERO, dt), p);
    }

    #[test]
    fn simulator_is_deterministic_and_clamped(seed in 0u64..1000, cmds in proptest::collection::vec((-2.0f64..2.0, -4.0f64..4.0), 1..120)) {
        let world = resolve_world("home").unwrap();
        let mut a = Simulator::new(&world, SimConfig::default(), seed);
        let mut b = Simulator::new(&world, SimConfig::default(), seed);
        let limits = SimConfig::default().limits;
        let mut latched = false;
        for (k, &(v, w)) in cmds.iter().enumerate() {
            let oa = a.step(Twist2D::new(v, w));
            let ob = b.step(Twist2D::new(v, w));
            prop_assert_eq!(&oa, &ob);
            prop_assert_eq!(a.state(), b.state());
            let s = a.state();
            prop_assert_eq!(s.sim_time, (k as u64 + 1) as f64 * SimConfig::default().dt);
            prop_assert!(limits.contains(&s.commanded_twist));
            prop_assert!(!latched || s.collided);
            latched = s.collided;
        }
    }

    #[test]
    fn noiseless_ranges_match_the_analytic_wall(x in 1.0f64..9.0, y in 1.0f64..7.0, theta in -3.1f64..3.1) {
        // empty box; only the boundary walls return
        let world = parse_world("name box\nresolution 0.05\nsize 10 8\nspawn 1 1 0\n").unwrap();
        let grid = rasterize(&world);
        let model = SensorModel::noiseless();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let scan = sense_depth(Pose2D::new(x, y, theta), &grid, &[], &model, 0.0, &mut rng);
        prop_assert_eq!(scan.beams.len(), model.beam_count);
        // inner faces of the one-cell border
        let (lo_x, hi_x, lo_y, hi_y) = (0.05, 9.95, 0.05, 7.95);
        for b in &scan.beams {
            let a = theta + b.bearing;
            let (c, s) = (a.cos(), a.sin());
            let tx = if c > 1e-12 { (hi_x - x) / c } else if c < -1e-12 { (lo_x - x) / c } else { f64::INFINITY };
            let ty = if s > 1e-12 { (hi_y - y) / s } else if s < -1e-12 { (lo_y - y) / s } else { f64::INFINITY };
            let truth = tx.min(ty);
            match b.range {
                Some(r) => {
                    prop_assert!(r >= model.min_range && r <= model.max_range);
                    prop_assert!((r - truth).abs() <= 0.05 * std::f64::consts::SQRT_2 + 1e-9, "range {} vs {}", r, truth);
                }
                None => prop_assert!(truth > model.max_range - 0.05 * std::f64::consts::SQRT_2),
            }
        }
    }

    #[test]
    fn composed_cost_never_below_static(marks in proptest::collection::vec(0usize..3600, 0..30), clear_r in 0.0f64..3.0) {
        let mut cm = Costmap::build_static(&room(60, 60), InflationParams::default());
        for &m in &marks {
            cm.mark_cell(m);
        }
        let n = cm.geometry().len();
        prop_assert!((0..n).all(|i| cm.cost(i) >= cm.static_cost(i)));
        cm.clear_dynamic_beyond((1.5, 1.5), clear_r);
        prop_assert!((0..n).all(|i| cm.cost(i) >= cm.static_cost(i)));
        cm.clear_dynamic();
        prop_assert!((0..n).all(|i| cm.cost(i) == cm.static_cost(i)));
    }

    #[test]
    fn mark_then_clear_restores_static(x in 0.8f64..2.2, y in 0.8f64..2.2, theta in -3.1f64..3.1,
                                       ranges in proptest::collection::vec(0.3f64..2.4, 8)) {
        let mut cm = Costmap::build_static(&room(60, 60), InflationParams::default());
        let pose = Pose2D::new(x, y, theta);
        let bearings: Vec<f64> = (0..8).map(|k| -0.7 + 0.2 * k as f64).collect();
        let hits = DepthScan {
            timestamp: 0.0,
            max_range: 3.0,
            beams: bearings.iter().zip(&ranges).map(|(&bearing, &r)| Beam { bearing, range: Some(r) }).collect(),
        };
        let pts = Costmap::obstacle_points(&pose, &hits);
        cm.mark_and_clear(&pose, &pts, &hits);
        let misses = DepthScan {
            timestamp: 0.1,
            max_range: 3.0,
            beams: bearings.iter().map(|&bearing| Beam { bearing, range: None }).collect(),
        };
        cm.mark_and_clear(&pose, &[], &misses);
        prop_assert!((0..cm.geometry().len()).all(|i| cm.cost(i) == cm.static_cost(i)));
    }

    #[test]
    fn scan_counts_commute(x in 1.0f64..2.0, y in 1.0f64..2.0, t1 in -3.1f64..3.1, t2 in -3.1f64..3.1) {
        let world = parse_world("name box\nresolution 0.05\nsize 3 3\nrect 1.2 2.2 1.8 2.5\nspawn 1 1 0\n").unwrap();
        let grid = rasterize(&world);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let model = SensorModel::default();
        let a = sense_depth(Pose2D::new(x, y, t1), &grid, &[], &model, 0.0, &mut rng);
        let b = sense_depth(Pose2D::new(x, y, t2), &grid, &[], &model, 0.2, &mut rng);
        let geom = grid.geometry();
        let mut ab = MapBelief::new(geom);
        ab.integrate_scan(&Pose2D::new(x, y, t1), &a);
        ab.integrate_scan(&Pose2D::new(x, y, t2), &b);
        let mut ba = MapBelief::new(geom);
        ba.integrate_scan(&Pose2D::new(x, y, t2), &b);
        ba.integrate_scan(&Pose2D::new(x, y, t1), &a);
        prop_assert_eq!(&ab.hits, &ba.hits);
        prop_assert_eq!(&ab.misses, &ba.misses);
        prop_assert!(ab.log_odds.iter().all(|&l| (L_MIN..=L_MAX).contains(&l)));
    }

    #[test]
    fn localize_stays_in_the_search_window(dx in -0.5f64..0.5, dy in -0.5f64..0.5, dth in -0.4f64..0.4) {
        let world = resolve_world("home").unwrap();
        let grid = rasterize(&world);
        let truth = Pose2D::new(4.0, 2.0, 0.4);
        let map = MapBelief::from_occupancy(&sharednav::survey::truth_occupancy(&grid));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let scan = sense_depth(truth, &grid, &[], &SensorModel::default(), 0.0, &mut rng);
        let prior = Pose2D::new(truth.x + dx, truth.y + dy, truth.theta + dth);
        let est = localize(&map, prior, &scan);
        prop_assert!((est.pose.x - prior.x).abs() <= SEARCH_XY + 1e-9);
        prop_assert!((est.pose.y - prior.y).abs() <= SEARCH_XY + 1e-9);
        prop_assert!(normalize_angle(est.pose.theta - prior.theta).abs() <= SEARCH_THETA + 1e-9);
    }

    #[test]
    fn tracker_output_within_limits(x in 0.5f64..5.0, y in 0.5f64..2.5, theta in -3.1f64..3.1) {
        let cm = Costmap::build_static(&room(120, 60), InflationParams::default());
        let path = plan_global(&cm, (0.6, 1.5), (5.3, 1.5)).unwrap();
        let limits = VelocityLimits::default();
        let est = PoseEstimate::tracking(Pose2D::new(x, y, theta));
        let out = track_path(&path, &est, &cm, &limits, &TrackerParams::default());
        prop_assert!(limits.contains(&out.twist));
    }

    #[test]
    fn replanning_is_stable(sx in 0.5f64..5.5, sy in 0.5f64..2.5, gx in 0.5f64..5.5, gy in 0.5f64..2.5) {
        let cm = Costmap::build_static(&room(120, 60), InflationParams::default());
        let a = plan_global(&cm, (sx, sy), (gx, gy));
        let b = plan_global(&cm, (sx, sy), (gx, gy));
        prop_assert_eq!(&a, &b);
        if let Ok(p) = a {
            prop_assert!(p.cells.iter().all(|&c| cm.planning_cost(c) < INSCRIBED));
        }
    }

    #[test]
    fn inflation_slope_is_low(cx in 20usize..40, cy in 20usize..40) {
        let mut g = OccupancyGrid(Grid::filled(GridGeometry::new(0.05, 60, 60), CellState::Free));
        g.0.set(cx, cy, CellState::Occupied);
        g.0.set(cx + 3, cy + 1, CellState::Occupied);
        let cm = Costmap::build_static(&g, InflationParams::default());
        let geom = cm.geometry();
        for i in 0..geom.len() {
            let (x, y) = geom.coords(i);
            if x + 1 >= 60 || y + 1 >= 60 {
                continue;
            }
            for j in [geom.index(x + 1, y), geom.index(x, y + 1)] {
                let (a, b) = (cm.cost(i), cm.cost(j));
                // the curve is cut to zero at the inflation radius; the slope bound is about the decay
                if (1..INSCRIBED).contains(&a) && (1..INSCRIBED).contains(&b) {
                    prop_assert!(a.abs_diff(b) < 60, "{} vs {}", a, b);
                }
            }
        }
    }

    #[test]
    fn manual_mode_never_drives_the_planner(fwd in -1.5f64..1.5, turn in -1.5f64..1.5, dev in 0.0f64..2.0,
                                            clear in any::<bool>(), latch in any::<bool>()) {
        let sp = SafetyParams::default();
        let limits = VelocityLimits::default();
        let user = scale_joystick(&JoystickCommand::new(fwd, turn, 0.0), 0.0, &limits, sp.stale_after);
        let inp = ArbiterInputs {
            mode: Mode::Manual,
            user_twist: user,
            user_active: true,
            planner_twist: Some(Twist2D::new(0.37, -0.21)),
            deviation: Some(dev),
            prediction: if clear { Prediction::Clear } else { Prediction::CollisionAt(0.5) },
            goal_reached: false,
        };
        let (d, _) = decide(&inp, latch, &sp, &limits);
        prop_assert!(d.authority != Authority::System);
        prop_assert!(d.twist == user || d.twist == Twist2D::ZERO);
        prop_assert!(limits.contains(&d.twist));
        if d.authority == Authority::User {
            prop_assert_eq!(d.twist, user);
        }
        if !clear {
            prop_assert_eq!(d.reason, Reason::CollisionOverride);
        }
    }

    #[test]
    fn joystick_is_clamped_and_goes_stale(fwd in -5.0f64..5.0, turn in -5.0f64..5.0, age in 0.0f64..2.0) {
        let sp = SafetyParams::default();
        let limits = VelocityLimits::default();
        let t = scale_joystick(&JoystickCommand::new(fwd, turn, 0.0), age, &limits, sp.stale_after);
        prop_assert!(limits.contains(&t));
        if age > sp.stale_after {
            prop_assert_eq!(t, Twist2D::ZERO);
        }
    }
}

#[test]
fn lethal_cells_stay_lethal() {
    let g = room(40, 40);
    let cm = Costmap::build_static(&g, InflationParams::default());
    for i in 0..cm.geometry().len() {
        assert_eq!(cm.cost(i) == LETHAL, g.0.cells[i] == CellState::Occupied);
    }
}
