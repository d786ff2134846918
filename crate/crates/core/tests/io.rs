use std::path::Path;

use sampling_mpc::io::experiment::ResultBundle;
use sampling_mpc::io::export::{read_bundle, read_run_summary, read_trajectory_csv, seed_dir};
use sampling_mpc::io::{parse_config, parse_config_str, run_experiment};
use sampling_mpc::Error;

#[test]
fn malformed_fixtures_are_rejected() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/malformed");
    let mut count = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        match parse_config(&path) {
            Err(Error::Config(msg)) => assert!(msg.contains(path.to_str().unwrap()), "{msg}"),
            Err(Error::InvalidArgument(_)) => {}
            other => panic!("{} was accepted or failed oddly: {other:?}", path.display()),
        }
        count += 1;
    }
    assert!(count >= 10);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

const CROSSING: &str = r#"
[scenario]
name = "narrow_crossing3"

[optimizer]
perspective = "tsallis"
r = 2.0
elite_fraction = 0.2
samples = 24
iterations = 2

[admm]
iterations = 2

[run]
mode = "distributed"
steps = 6
seeds = [3, 9]
"#;

#[test]
fn exports_reproduce_the_bundle() {
    let exp = parse_config_str(CROSSING).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bundle = run_experiment(&exp, 0, Some(dir.path())).unwrap();

    let read = read_bundle(dir.path()).unwrap();
    assert_eq!(read, bundle);

    let runs = bundle
        .runs
        .iter()
        .map(|r| read_run_summary(&seed_dir(dir.path(), r.seed).join("summary.json")).unwrap())
        .collect();
    let again = ResultBundle::from_runs(bundle.scenario.clone(), exp.run.mode, bundle.num_agents, runs, bundle.timing.clone());
    assert_eq!(again, bundle);

    let traj = read_trajectory_csv(&seed_dir(dir.path(), 3).join("trajectory.csv"), 3).unwrap();
    assert_eq!(traj.num_agents, 3);
    assert_eq!(traj.controls.len(), 6);
}

#[test]
fn records_match_their_exports() {
    let exp = parse_config_str(CROSSING).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&exp, 0, Some(dir.path())).unwrap();
    let mut cfg = exp.run.clone();
    cfg.seed = 9;
    let record = sampling_mpc::runtime::run(&cfg).unwrap();
    let traj = read_trajectory_csv(&seed_dir(dir.path(), 9).join("trajectory.csv"), 3).unwrap();
    assert_eq!(traj.controls, record.controls);
    for t in 0..record.controls.len() {
        assert_eq!(traj.states.col(t), record.states.col(t + 1));
    }
}
