use sharednav_ffi::*;
use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

fn last_error() -> String {
    unsafe { CStr::from_ptr(sn_last_error()) }.to_string_lossy().into_owned()
}

fn load(name: &str) -> *mut SnWorld {
    let name = CString::new(name).unwrap();
    let mut w = ptr::null_mut();
    assert_eq!(unsafe { sn_world_load(name.as_ptr(), &mut w) }, SnStatus::Ok);
    w
}

#[test]
fn null_and_bad_arguments_are_reported() {
    unsafe {
        let mut w = ptr::null_mut();
        assert_eq!(sn_world_load(ptr::null(), &mut w), SnStatus::NullArgument);
        assert!(last_error().contains("name_or_path"));
        let bogus = CString::new("atlantis").unwrap();
        assert_eq!(sn_world_load(bogus.as_ptr(), &mut w), SnStatus::NotFound);
        assert!(w.is_null());
        let garbage = CString::new("size 1 1\nrect a b c d\n").unwrap();
        assert_eq!(sn_world_parse(garbage.as_ptr(), &mut w), SnStatus::InvalidArgument);
        assert!(!last_error().is_empty());

        let mut pose = SnPose::default();
        assert_eq!(sn_sim_pose(ptr::null(), &mut pose), SnStatus::NullArgument);
        assert_eq!(sn_session_step(ptr::null_mut(), ptr::null_mut()), SnStatus::NullArgument);

        // freeing null is a no-op
        sn_world_free(ptr::null_mut());
        sn_sim_free(ptr::null_mut());
        sn_session_free(ptr::null_mut());
        sn_string_free(ptr::null_mut());
    }
}

#[test]
fn raw_simulator_drives_and_is_seeded() {
    let world = load("home");
    let run = |seed| unsafe {
        let mut sim = ptr::null_mut();
        assert_eq!(sn_sim_new(world, seed, false, &mut sim), SnStatus::Ok);
        let mut step = SnStep::default();
        let mut scans = 0;
        for _ in 0..40 {
            assert_eq!(sn_sim_step(sim, 0.5, 0.1, &mut step), SnStatus::Ok);
            scans += step.scanned as u32;
        }
        assert_eq!(sn_sim_step(sim, f64::NAN, 0.0, ptr::null_mut()), SnStatus::InvalidArgument);
        let mut pose = SnPose::default();
        let mut tick = 0;
        sn_sim_pose(sim, &mut pose);
        sn_sim_tick(sim, &mut tick);
        sn_sim_free(sim);
        (pose, tick, scans, step.odom)
    };
    let (a, tick, scans, odom_a) = run(3);
    assert_eq!(tick, 40);
    assert_eq!(scans, 10);
    assert!(a.x > 1.5);
    let (b, _, _, odom_b) = run(3);
    assert_eq!(a, b);
    assert_eq!(odom_a, odom_b);
    let (_, _, _, odom_c) = run(4);
    assert_ne!(odom_a, odom_c);
    unsafe { sn_world_free(world) };
}

#[test]
fn session_navigates_to_a_named_goal() {
    let world = load("home");
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(sn_session_new(world, ptr::null(), SnMode::Autonomous, 1, &mut s), SnStatus::Ok);
        assert_eq!(sn_session_set_goal(s, 3.1, 3.0), SnStatus::Rejected);
        assert_eq!(last_error(), "goal unreachable");
        let attic = CString::new("attic").unwrap();
        assert_eq!(sn_session_set_goal_label(s, attic.as_ptr()), SnStatus::NotFound);
        let sofa = CString::new("sofa").unwrap();
        assert_eq!(sn_session_set_goal_label(s, sofa.as_ptr()), SnStatus::Ok);

        let mut st: SnState = std::mem::zeroed();
        let mut ticks = 0;
        while st.goal_status != SnGoalStatus::Reached {
            assert_eq!(sn_session_step(s, &mut st), SnStatus::Ok);
            assert!(!st.mapping);
            ticks += 1;
            assert!(ticks < 2000, "no arrival: {st:?}");
        }
        assert!(!st.collided);
        assert!((st.pose.x - 2.2).hypot(st.pose.y - 5.6) < 0.3);

        let mut json = ptr::null_mut();
        assert_eq!(sn_session_state_json(s, &mut json), SnStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(v["goal_status"], "reached");
        sn_string_free(json);

        assert_eq!(sn_session_reset(s), SnStatus::Ok);
        assert_eq!(sn_session_step(s, &mut st), SnStatus::Ok);
        assert_eq!(st.goal_status, SnGoalStatus::Idle);
        sn_session_free(s);
        sn_world_free(world);
    }
}

#[test]
fn trial_through_the_abi() {
    let world = load("home");
    unsafe {
        let label = CString::new("kitchen").unwrap();
        let mut rec = SnTrialRecord::default();
        let mut remarks = ptr::null_mut();
        let st = sn_trial_run(world, label.as_ptr(), SnMode::Autonomous, 2, false, &mut rec, &mut remarks);
        assert_eq!(st, SnStatus::Ok, "{}", last_error());
        assert!(rec.goal_reached);
        assert!(!rec.collided);
        assert!(rec.distance > 5.0 && rec.time > 0.0);
        assert_eq!(CStr::from_ptr(remarks).to_str().unwrap(), "");
        sn_string_free(remarks);
        sn_world_free(world);
    }
}

fn target_dir() -> PathBuf {
    // <target>/<profile>/deps/abi-<hash>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libsharednav_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let out = tempfile_path("smoke");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&out).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("moved"));
    let _ = std::fs::remove_file(out);
}

fn tempfile_path(stem: &str) -> PathBuf {
    std::env::temp_dir().join(format!("sharednav-{stem}-{}", std::process::id()))
}
