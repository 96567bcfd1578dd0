use std::process::{Command, Output};

fn sharednav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sharednav")).args(args).output().unwrap()
}

#[test]
fn world_check_lists_the_bundled_worlds() {
    let out = sharednav(&["world", "check"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["hospital", "home", "loop"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{name}:"))), "{text}");
    }
}

#[test]
fn trial_run_writes_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = sharednav(&["trial", "run", "--world", "home", "--suite", "static_random", "--seeds", "1", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.starts_with("The wheelchair achieved a 100% success rate over 1 trials."), "{summary}");
    let log = std::fs::read_to_string(out_dir.join("trial_001.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["tick"], 1);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    for args in [
        vec!["trial", "run", "--suite", "bogus", "--out", out_dir],
        vec!["trial", "run", "--suite", "static_goal1", "--seeds", "3..1", "--out", out_dir],
        vec!["world", "check", "/nonexistent/x.world"],
    ] {
        let out = sharednav(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert!(err.starts_with("error: "), "{err}");
    }
}

#[test]
fn map_build_saves_a_loadable_map() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("home.map");
    let out = sharednav(&["map", "build", "--world", "home", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (map, _) = sharednav::mapper::load_map(&path).unwrap();
    assert_eq!((map.geometry().width, map.geometry().height), (240, 180));
}
