use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pcit::model::{Instance, RunStatus};
use pcit::runner::Backend;
use pcit::space::{Parameter, ParameterSpace};
use pcit::wrapper::WrapperBackend;

/// A wrapper whose behaviour is chosen by `--mode`:
/// fast solves at once, slow sleeps past any cutoff used here,
/// silent prints no result line.
const SCRIPT: &str = r#"#!/bin/sh
instance="$1"; seed="$2"; cutoff="$3"; shift 3
mode=fast
while [ $# -gt 0 ]; do
  case "$1" in
    --mode) mode="$2"; shift 2 ;;
    *) shift 2 ;;
  esac
done
echo "c instance=$instance seed=$seed cutoff=$cutoff"
case "$mode" in
  fast) echo "RESULT: SAT, 0.25" ;;
  slow) sleep 30; echo "RESULT: SAT, 30" ;;
  silent) echo "no result" ;;
esac
"#;

fn wrapper(dir: &Path) -> PathBuf {
    let path = dir.join("wrapper.sh");
    fs::write(&path, SCRIPT).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path
}

fn space() -> ParameterSpace {
    ParameterSpace::new(
        vec![Parameter::categorical("mode", &["fast", "slow", "silent"], "fast")],
        vec![],
        None,
    )
    .unwrap()
}

#[test]
fn statuses_follow_the_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let backend = WrapperBackend::new(wrapper(dir.path()).to_str().unwrap()).unwrap();
    let space = space();
    let inst = Instance::new("i0", vec![]).with_path("/data/i0.cnf");

    let fast = backend.run(&space.parse_config("mode=fast").unwrap(), &inst, 5.0, 1).unwrap();
    assert_eq!(fast.status, RunStatus::Solved);
    assert!((fast.runtime - 0.25).abs() < 1e-12);

    let silent = backend.run(&space.parse_config("mode=silent").unwrap(), &inst, 5.0, 1).unwrap();
    assert_eq!(silent.status, RunStatus::Crashed);

    let start = Instant::now();
    let slow = backend.run(&space.parse_config("mode=slow").unwrap(), &inst, 0.5, 1).unwrap();
    assert_eq!(slow.status, RunStatus::Timeout);
    assert_eq!(slow.runtime, 0.5);
    // Killed at the cutoff plus the grace period, not after the full sleep.
    assert!(start.elapsed().as_secs_f64() < 5.0, "{:?}", start.elapsed());
}

#[test]
fn race_stops_losers_once_one_solves() {
    let dir = tempfile::tempdir().unwrap();
    let backend = WrapperBackend::new(wrapper(dir.path()).to_str().unwrap()).unwrap();
    let space = space();
    let components = vec![
        space.parse_config("mode=slow").unwrap(),
        space.parse_config("mode=fast").unwrap(),
    ];
    let inst = Instance::new("i1", vec![]);
    let start = Instant::now();
    let race = backend.race(&components, &inst, 20.0, 3).unwrap();
    assert!(race.outcome.is_solved());
    assert_eq!(race.components[1].status, RunStatus::Solved);
    assert_ne!(race.components[0].status, RunStatus::Solved);
    assert!(start.elapsed().as_secs_f64() < 10.0, "{:?}", start.elapsed());
}

#[test]
fn missing_program_is_a_spawn_error() {
    let backend = WrapperBackend::new("/nonexistent/wrapper --flag").unwrap();
    let space = space();
    let err = backend
        .run(&space.default_config(), &Instance::new("i", vec![]), 1.0, 0)
        .unwrap_err();
    assert!(matches!(err, pcit::Error::Spawn { .. }), "{err}");
}
